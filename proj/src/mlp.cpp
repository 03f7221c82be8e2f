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

#include "riskdiff/mlp.hpp"

#include <cmath>
#include <stdexcept>

namespace riskdiff {

namespace {

Eigen::MatrixXf silu(const Eigen::MatrixXf& z) {
  return z.array() / (1.0f + (-z.array()).exp());
}

Eigen::MatrixXf silu_grad(const Eigen::MatrixXf& z) {
  const Eigen::ArrayXXf s = 1.0f / (1.0f + (-z.array()).exp());
  return (s * (1.0f + z.array() * (1.0f - s))).matrix();
}

}  // namespace

Mlp::Mlp(const std::vector<int>& dims, Rng& rng) {
  if (dims.size() < 2) throw std::invalid_argument("mlp needs at least input and output dims");
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int in = dims[l], out = dims[l + 1];
    Layer layer{Eigen::MatrixXf(out, in), Eigen::VectorXf::Zero(out)};
    const double bound = std::sqrt(6.0 / in) * (l + 2 == dims.size() ? 0.5 : 1.0);
    for (int c = 0; c < in; ++c)
      for (int r = 0; r < out; ++r) layer.weight(r, c) = static_cast<float>(rng.uniform(-bound, bound));
    layers_.push_back(std::move(layer));
  }
}

std::vector<int> Mlp::dims() const {
  std::vector<int> d;
  if (layers_.empty()) return d;
  d.push_back(input_dim());
  for (const Layer& l : layers_) d.push_back(static_cast<int>(l.weight.rows()));
  return d;
}

Eigen::MatrixXf Mlp::forward(const Eigen::MatrixXf& x) const {
  Eigen::MatrixXf h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::MatrixXf z = layers_[l].weight * h;
    z.colwise() += layers_[l].bias;
    h = (l + 1 < layers_.size()) ? silu(z) : std::move(z);
  }
  return h;
}

const Eigen::MatrixXf& Mlp::forward_train(const Eigen::MatrixXf& x) {
  inputs_.resize(layers_.size());
  preact_.resize(layers_.size());
  Eigen::MatrixXf h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    inputs_[l] = h;
    preact_[l] = layers_[l].weight * h;
    preact_[l].colwise() += layers_[l].bias;
    h = (l + 1 < layers_.size()) ? silu(preact_[l]) : preact_[l];
  }
  output_ = std::move(h);
  return output_;
}

std::vector<Mlp::Layer> Mlp::backward(const Eigen::MatrixXf& grad_out) const {
  std::vector<Layer> grads(layers_.size());
  Eigen::MatrixXf g = grad_out;  // d loss / d preactivation of the current layer
  for (std::size_t l = layers_.size(); l-- > 0;) {
    grads[l].weight = g * inputs_[l].transpose();
    grads[l].bias = g.rowwise().sum();
    if (l > 0) {
      Eigen::MatrixXf gh = layers_[l].weight.transpose() * g;
      g = gh.cwiseProduct(silu_grad(preact_[l - 1]));
    }
  }
  return grads;
}

Adam::Adam(const Mlp& net, float lr, float beta1, float beta2, float eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& l : net.layers()) {
    m_.push_back({Eigen::MatrixXf::Zero(l.weight.rows(), l.weight.cols()), Eigen::VectorXf::Zero(l.bias.size())});
    v_.push_back(m_.back());
  }
}

void Adam::step(Mlp& net, const std::vector<Mlp::Layer>& grads) {
  ++t_;
  const float c1 = 1.0f - std::pow(beta1_, static_cast<float>(t_));
  const float c2 = 1.0f - std::pow(beta2_, static_cast<float>(t_));
  auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
    m = beta1_ * m + (1.0f - beta1_) * g;
    v = beta2_ * v + (1.0f - beta2_) * g.cwiseProduct(g);
    p.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
  };
  auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    update(layers[l].weight, grads[l].weight, m_[l].weight, v_[l].weight);
    update(layers[l].bias, grads[l].bias, m_[l].bias, v_[l].bias);
  }
}

}  // namespace riskdiff
