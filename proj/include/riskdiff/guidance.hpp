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

#ifndef RISKDIFF_GUIDANCE_HPP_
#define RISKDIFF_GUIDANCE_HPP_

#include <stdexcept>
#include <string>
#include <variant>

#include "riskdiff/diffusion.hpp"
#include "riskdiff/risk.hpp"

namespace riskdiff::guidance {

struct Unguided {};

// eps = eps_theta + eta * grad c_risk.
struct Classifier {
  double eta = 1.0;
};

// Projection ladder, selected by diffusion step t:
//   t > t2       : redraw the sampler noise (rejection)
//   t1 < t <= t2 : pull the candidate toward the current iterate u^t
//   t <= t1      : shrink the candidate toward the zero action
// Each rung that exhausts its cap falls through to the next one, and the
// last rung always terminates when the current pose is safe.
struct Projection {
  int t1 = 10;
  int t2 = 30;
  double beta_mix = 0.5;
  int max_rejections = 20;
  int max_projections = 50;

  // Defaults scaled to a schedule with T steps: t2 = 0.6 T, t1 = 0.2 T.
  static Projection defaults_for(int steps);
  void validate(int steps) const;
};

using GuidanceMode = std::variant<Unguided, Classifier, Projection>;

std::string describe(const GuidanceMode& mode);

// Risk information available during one sampling call.
struct GuidanceEnv {
  const risk::SafeSet* safe_set = nullptr;
  const risk::RiskSurrogate* surrogate = nullptr;
  Pose pose;
};

class GuidanceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StepStats {
  int rejections = 0;
  int previous_projections = 0;
  int small_action_projections = 0;
};

// Classifier-like risk guidance. `eps_pred` is eps_theta at u_t; the
// c_risk gradient is evaluated at u_t (meters) and mapped to normalized
// coordinates by the chain rule. eta == 0 takes exactly the unguided path.
Eigen::VectorXd classifier_step(const diffusion::Policy& policy, const Eigen::VectorXd& u_t, int t,
                                const Eigen::VectorXd& eps_pred, const GuidanceEnv& env, double eta,
                                Rng& rng);

// Projection-guided reverse step; always returns a candidate that passes
// risk::is_safe. Throws GuidanceError only when the current pose is unsafe.
Eigen::VectorXd projection_step(const diffusion::Policy& policy, const Eigen::VectorXd& u_t, int t,
                                const Eigen::VectorXd& eps_pred, const GuidanceEnv& env,
                                const Projection& mode, Rng& rng, StepStats* stats = nullptr);

// Small-action rung on its own: u <- (1 - beta_mix) u in meters until safe.
// Returns the number of shrink iterations.
int shrink_to_safe(ActionSequence& u, const risk::SafeSet& safe_set, const Pose& pose, double beta_mix);

// Longest prefix of u whose waypoints and connecting segments (starting at
// the pose) are all safe. May be empty.
ActionSequence safety_filter(const ActionSequence& u, const risk::SafeSet& safe_set, const Pose& pose);

}  // namespace riskdiff::guidance

namespace riskdiff::diffusion {

// Reverse chain T -> 1 for `batch` independent elements. Element i draws
// from its own stream derive_seed(seed, i); the denoiser is evaluated on the
// whole batch at once. Outputs are unnormalized to meters.
std::vector<ActionSequence> sample(const Policy& policy, const Context& ctx,
                                   const guidance::GuidanceMode& mode, const guidance::GuidanceEnv& env,
                                   std::uint64_t seed, int batch, guidance::StepStats* stats = nullptr);

}  // namespace riskdiff::diffusion

#endif  // RISKDIFF_GUIDANCE_HPP_
