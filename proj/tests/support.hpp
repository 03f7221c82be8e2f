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

#ifndef RISKDIFF_TESTS_SUPPORT_HPP_
#define RISKDIFF_TESTS_SUPPORT_HPP_

#include <filesystem>
#include <string>
#include <vector>

#include "riskdiff/diffusion.hpp"
#include "riskdiff/risk.hpp"

namespace testing {

using namespace riskdiff;

// Risk map with every cell at `value`.
inline risk::RiskMap uniform_map(int w, int h, double res, float value) {
  risk::RiskMap m;
  m.spec = GridSpec{w, h, res, 0.0, 0.0};
  m.rho.assign(m.spec.cell_count(), value);
  return m;
}

inline void set_rho(risk::RiskMap& m, int x, int y, float v) { m.rho[m.spec.index(Cell{x, y})] = v; }

// Untrained policy with the identity normalizer.
inline diffusion::Policy random_policy(std::uint64_t seed, int steps = 50) {
  Rng rng(seed);
  diffusion::Policy p;
  p.denoiser = diffusion::Denoiser({32, 32}, rng);
  p.normalizer.mean = Eigen::VectorXd::Zero(diffusion::Denoiser::kActionDim);
  p.normalizer.scale = Eigen::VectorXd::Ones(diffusion::Denoiser::kActionDim);
  p.schedule = diffusion::make_linear_schedule(steps);
  return p;
}

inline ActionSequence straight(double spacing, double lateral = 0.0) {
  ActionSequence u(2, diffusion::kWaypoints);
  for (int k = 0; k < u.cols(); ++k) {
    u(0, k) = spacing * (k + 1);
    u(1, k) = lateral * (k + 1);
  }
  return u;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("riskdiff_" + tag + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  std::string str() const { return path_.string(); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace testing

#endif  // RISKDIFF_TESTS_SUPPORT_HPP_
