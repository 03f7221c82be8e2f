// Copyright 2026 The riskdiff Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef RISKDIFF_MLP_HPP_
#define RISKDIFF_MLP_HPP_

#include <vector>

#include <Eigen/Core>

#include "riskdiff/rng.hpp"

namespace riskdiff {

// Fully connected network with SiLU activations between layers and a linear
// output. Batches are column-major: one sample per column.
class Mlp {
 public:
  struct Layer {
    Eigen::MatrixXf weight;  // out x in
    Eigen::VectorXf bias;
  };

  Mlp() = default;
  // dims = {in, hidden..., out}. Weights use the Kaiming-uniform bound
  // sqrt(6 / fan_in) scaled for SiLU; biases start at zero.
  Mlp(const std::vector<int>& dims, Rng& rng);

  int input_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.front().weight.cols()); }
  int output_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.back().weight.rows()); }
  std::vector<int> dims() const;
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

  Eigen::MatrixXf forward(const Eigen::MatrixXf& x) const;

  // Forward pass that keeps activations for backward().
  const Eigen::MatrixXf& forward_train(const Eigen::MatrixXf& x);
  // Gradients of sum(grad_out .* output) w.r.t. every parameter, in layer order.
  std::vector<Layer> backward(const Eigen::MatrixXf& grad_out) const;

 private:
  std::vector<Layer> layers_;
  // Cached for backward: inputs to each layer and pre-activations.
  std::vector<Eigen::MatrixXf> inputs_;
  std::vector<Eigen::MatrixXf> preact_;
  Eigen::MatrixXf output_;
};

// Adam:
//   m <- b1 m + (1 - b1) g
//   v <- b2 v + (1 - b2) g^2
//   p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
class Adam {
 public:
  explicit Adam(const Mlp& net, float lr = 1e-3f, float beta1 = 0.9f, float beta2 = 0.999f,
                float eps = 1e-8f);
  void step(Mlp& net, const std::vector<Mlp::Layer>& grads);

 private:
  float lr_, beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<Mlp::Layer> m_, v_;
};

}  // namespace riskdiff

#endif  // RISKDIFF_MLP_HPP_
