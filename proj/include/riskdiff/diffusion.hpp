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

#ifndef RISKDIFF_DIFFUSION_HPP_
#define RISKDIFF_DIFFUSION_HPP_

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "riskdiff/grid.hpp"
#include "riskdiff/mlp.hpp"
#include "riskdiff/risk.hpp"
#include "riskdiff/rng.hpp"

namespace riskdiff::diffusion {

inline constexpr int kWaypoints = 8;        // N_u
inline constexpr double kWaypointSpacing = 0.2;  // meters
inline constexpr int kPatchSize = 5;        // risk patch is kPatchSize x kPatchSize
inline constexpr double kPatchSpacing = 0.4;  // meters between patch samples
inline constexpr double kPatchRiskScale = 3.0;  // rho mapped to [0, 1] by min(rho, scale) / scale
inline constexpr double kGoalFeatureRange = 3.0;  // goal offsets beyond this are clipped
inline constexpr int kTimeEmbedding = 32;
inline constexpr double kMaxBeta = 0.999;

// Indices run 1..T; entry 0 is the clean state (alpha_bar = 1, sigma = 0).
struct NoiseSchedule {
  int steps = 0;  // T
  std::vector<double> beta;
  std::vector<double> alpha;      // 1 - beta
  std::vector<double> alpha_bar;  // cumulative product
  std::vector<double> sigma;      // reverse-step noise scale, sigma[1] = 0
};

// Linear beta on a 1000-step reference grid, rescaled to `steps` steps so
// the total corruption stays comparable: beta runs from
// beta_start * 1000 / T to beta_end * 1000 / T, capped at kMaxBeta for
// short chains (T <= 20). sigma^t is the DDPM
// posterior standard deviation sqrt(beta_t (1 - abar_{t-1}) / (1 - abar_t)).
NoiseSchedule make_linear_schedule(int steps = 50, double beta_start = 1e-4, double beta_end = 0.02);
// Derives alpha, alpha_bar and sigma from beta[1..T]. Throws
// std::invalid_argument unless every beta lies in (0, 1).
NoiseSchedule schedule_from_betas(const std::vector<double>& betas);

// Hand-built stand-in for an image latent: goal offset in the robot frame,
// heading, and a coarse window of the risk map ahead of the robot.
struct Context {
  Vec2 goal = Vec2::Zero();  // meters, robot frame
  double sin_heading = 0.0;
  double cos_heading = 1.0;
  std::vector<float> patch = std::vector<float>(kPatchSize * kPatchSize, 0.0f);

  static constexpr int kDim = 4 + kPatchSize * kPatchSize;
  Eigen::VectorXf features() const;
};

// Patch cell (r, c) sits at robot-frame offset (r * spacing, (c - 2) * spacing)
// and holds the max rho over the cells within half a spacing of it; off-grid
// cells count as maximal risk.
Context make_context(const risk::RiskMap& map, const Pose& pose, const Vec2& goal_world);

// Per-coordinate affine normalization of flattened action sequences
// (x0, y0, x1, y1, ...).
struct Normalizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;

  static constexpr double kMinScale = 1e-2;

  Eigen::VectorXd normalize(const ActionSequence& u) const;
  ActionSequence unnormalize(const Eigen::VectorXd& v) const;
};

// Mean and standard deviation per coordinate, scale floored at kMinScale.
Normalizer fit_normalizer(const std::vector<ActionSequence>& actions);

struct Dataset {
  std::vector<Context> contexts;
  std::vector<ActionSequence> actions;
  Normalizer normalizer;

  std::size_t size() const { return actions.size(); }
};

Eigen::VectorXf time_embedding(int t);

// eps_theta(u^t, t | z): MLP on flatten(u^t) ++ embed(t) ++ context.
class Denoiser {
 public:
  Denoiser() = default;
  Denoiser(const std::vector<int>& hidden, Rng& rng);
  explicit Denoiser(Mlp net);

  static constexpr int kActionDim = 2 * kWaypoints;
  static constexpr int kInputDim = kActionDim + kTimeEmbedding + Context::kDim;

  // u: kActionDim x B normalized iterates sharing one t and context.
  Eigen::MatrixXf predict(const Eigen::MatrixXf& u, int t, const Eigen::VectorXf& context) const;
  static Eigen::MatrixXf assemble(const Eigen::MatrixXf& u, const std::vector<int>& t,
                                  const Eigen::MatrixXf& contexts);

  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }

 private:
  Mlp net_;
};

struct Policy {
  Denoiser denoiser;
  Normalizer normalizer;
  NoiseSchedule schedule;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// u^t = sqrt(abar_t) u^0 + sqrt(1 - abar_t) eps. Throws std::out_of_range
// unless 0 <= t <= T.
Eigen::VectorXd forward_noise(const Eigen::VectorXd& u0, int t, const Eigen::VectorXd& eps,
                              const NoiseSchedule& schedule);

struct TrainConfig {
  int epochs = 150;
  int batch_size = 128;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  std::vector<int> hidden = {128, 128, 128};
};

struct TrainResult {
  Policy policy;
  std::vector<double> loss_trace;  // mean batch loss per epoch
};

// Minimizes E ||eps - eps_theta(u^t, t | z)||^2 with t uniform on {1..T}.
// Throws TrainingError if the loss becomes non-finite.
TrainResult train(const Dataset& data, const NoiseSchedule& schedule, const TrainConfig& config);

// Mean squared eps-prediction error at a fixed t over the dataset.
double eps_mse(const Policy& policy, const Dataset& data, int t, std::uint64_t seed);

// Posterior mean of the reverse step, (u^t - beta_t / sqrt(1 - abar_t) * eps) / sqrt(alpha_t).
Eigen::VectorXd posterior_mean(const Eigen::VectorXd& u_t, int t, const Eigen::VectorXd& eps,
                               const NoiseSchedule& schedule);

// One DDPM reverse step: posterior_mean(...) + sigma_t w, w ~ N(0, I).
Eigen::VectorXd ddpm_step(const Eigen::VectorXd& u_t, int t, const Eigen::VectorXd& eps_pred,
                          const NoiseSchedule& schedule, Rng& rng);
Eigen::VectorXd ddpm_step(const Policy& policy, const Eigen::VectorXd& u_t, int t, const Context& ctx, Rng& rng);

Eigen::VectorXd predict_eps(const Policy& policy, const Eigen::VectorXd& u_t, int t, const Context& ctx);

Eigen::VectorXd standard_normal(Rng& rng, int dim);

// Versioned little-endian checkpoint:
//   "RDCKPT01" | u32 n_waypoints | u32 context_dim | u32 T | f64 beta[T]
//   | u32 n_dims | u32 dims[n_dims] | per layer: f32 weight (row-major), f32 bias
//   | f64 normalizer mean[2 N_u] | f64 normalizer scale[2 N_u]
void save_checkpoint(const Policy& policy, const std::string& path);
Policy load_checkpoint(const std::string& path);

}  // namespace riskdiff::diffusion

#endif  // RISKDIFF_DIFFUSION_HPP_
