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

#include <doctest.h>

#include <cmath>

#include "riskdiff/guidance.hpp"
#include "support.hpp"

using namespace riskdiff;
using namespace riskdiff::guidance;

namespace {

// Random map with unsafe cells at `density`, keeping the 3x3 block around
// `pose` safe.
risk::RiskMap random_map(Rng& rng, int n, double density, const Pose& pose) {
  risk::RiskMap m = testing::uniform_map(n, n, 0.1, 0.0f);
  const Cell c = *m.spec.locate(pose.position());
  for (std::size_t i = 0; i < m.rho.size(); ++i) {
    const Cell k = m.spec.cell_at(i);
    const bool near = std::abs(k.x - c.x) <= 1 && std::abs(k.y - c.y) <= 1;
    m.rho[i] = static_cast<float>(!near && rng.uniform() < density ? 1.5 : rng.uniform(0.0, 0.9));
  }
  return m;
}

// Distance from p to the nearest unsafe cell (or to the grid border).
double clearance(const risk::SafeSet& safe, const Vec2& p) {
  const GridSpec& g = safe.map().spec;
  double best = std::min({p.x() - g.origin_x, g.origin_x + g.width * g.resolution - p.x(), p.y() - g.origin_y,
                          g.origin_y + g.height * g.resolution - p.y()});
  for (std::size_t i = 0; i < g.cell_count(); ++i) {
    const Cell c = g.cell_at(i);
    if (safe.safe(c)) continue;
    const double x0 = g.origin_x + c.x * g.resolution, y0 = g.origin_y + c.y * g.resolution;
    const double dx = std::max({x0 - p.x(), 0.0, p.x() - (x0 + g.resolution)});
    const double dy = std::max({y0 - p.y(), 0.0, p.y() - (y0 + g.resolution)});
    best = std::min(best, std::hypot(dx, dy));
  }
  return best;
}

ActionSequence random_actions(Rng& rng, double scale) {
  ActionSequence u(2, diffusion::kWaypoints);
  for (int k = 0; k < u.cols(); ++k) u.col(k) = Vec2(scale * rng.normal(), scale * rng.normal());
  return u;
}

Pose random_pose(Rng& rng, double lo, double hi) {
  return Pose{rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(-3.14, 3.14)};
}

GuidanceEnv env_for(const risk::SafeSet& safe, const Pose& pose) { return GuidanceEnv{&safe, nullptr, pose}; }

}  // namespace

TEST_CASE("projection parameters") {
  const Projection p = Projection::defaults_for(50);
  CHECK(p.t2 == 30);
  CHECK(p.t1 == 10);
  CHECK_NOTHROW(p.validate(50));
  Projection bad = p;
  bad.t1 = 40;
  CHECK_THROWS_AS(bad.validate(50), std::invalid_argument);
  bad = p;
  bad.beta_mix = 1.0;
  CHECK_THROWS_AS(bad.validate(50), std::invalid_argument);
  bad = p;
  bad.t2 = 60;
  CHECK_THROWS_AS(bad.validate(50), std::invalid_argument);
}

TEST_CASE("classifier step with eta = 0 is bitwise the ddpm step") {
  const auto policy = testing::random_policy(3);
  Rng rng(5);
  for (int t : {1, 17, 50}) {
    const Eigen::VectorXd ut = diffusion::standard_normal(rng, 16);
    const Eigen::VectorXd eps = diffusion::standard_normal(rng, 16);
    Rng a(t), b(t);
    // No surrogate needed: eta = 0 never touches it.
    const Eigen::VectorXd g = classifier_step(policy, ut, t, eps, GuidanceEnv{}, 0.0, a);
    const Eigen::VectorXd d = diffusion::ddpm_step(ut, t, eps, policy.schedule, b);
    CHECK((g.array() == d.array()).all());
  }
}

TEST_CASE("far below the risk tolerance, classifier guidance changes nothing") {
  const auto policy = testing::random_policy(4);
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const Pose pose{5.0, 5.0, rng.uniform(-3.0, 3.0)};
    risk::RiskMap m = testing::uniform_map(100, 100, 0.1, 0.0f);
    for (float& v : m.rho) v = static_cast<float>(rng.uniform(0.0, 0.2));
    const risk::RiskSurrogate sur(m, 3.0);
    GuidanceEnv env{nullptr, &sur, pose};
    const Eigen::VectorXd ut = diffusion::standard_normal(rng, 16);
    const Eigen::VectorXd eps = diffusion::standard_normal(rng, 16);
    Rng a(trial), b(trial);
    const Eigen::VectorXd g = classifier_step(policy, ut, 20, eps, env, 1.0, a);
    const Eigen::VectorXd d = diffusion::ddpm_step(ut, 20, eps, policy.schedule, b);
    CHECK((g - d).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("classifier guidance pushes the step away from risk") {
  // Risk grows with x; the guided step should end up with smaller x.
  const auto policy = testing::random_policy(7);
  risk::RiskMap m = testing::uniform_map(60, 60, 0.1, 0.0f);
  for (std::size_t i = 0; i < m.rho.size(); ++i) m.rho[i] = static_cast<float>(0.05 * m.spec.cell_at(i).x);
  const risk::RiskSurrogate sur(m, 1.0);
  GuidanceEnv env{nullptr, &sur, Pose{3.0, 3.0, 0.0}};
  const Eigen::VectorXd ut = Eigen::Map<const Eigen::VectorXd>(testing::straight(0.2).data(), 16);
  const Eigen::VectorXd eps = Eigen::VectorXd::Zero(16);
  Rng a(1), b(1);
  const Eigen::VectorXd g = classifier_step(policy, ut, 30, eps, env, 5.0, a);
  const Eigen::VectorXd d = diffusion::ddpm_step(ut, 30, eps, policy.schedule, b);
  for (int k = 0; k < 8; ++k) CHECK(g(2 * k) < d(2 * k));
  CHECK_THROWS_AS(classifier_step(policy, ut, 30, eps, GuidanceEnv{}, 1.0, a), std::invalid_argument);
}

TEST_CASE("projection leaves an already safe step untouched") {
  const auto policy = testing::random_policy(9);
  const risk::RiskMap m = testing::uniform_map(200, 200, 0.1, 0.5f);
  const risk::SafeSet safe(m, 1.0);
  GuidanceEnv env{&safe, nullptr, Pose{10.0, 10.0, 0.4}};
  Rng rng(2);
  for (int t = 50; t >= 1; --t) {
    const Eigen::VectorXd ut = diffusion::standard_normal(rng, 16);
    const Eigen::VectorXd eps = diffusion::standard_normal(rng, 16);
    Rng a(t), b(t);
    StepStats stats;
    const Eigen::VectorXd p = projection_step(policy, ut, t, eps, env, Projection::defaults_for(50), a, &stats);
    const Eigen::VectorXd d = diffusion::ddpm_step(ut, t, eps, policy.schedule, b);
    CHECK((p.array() == d.array()).all());
    CHECK(stats.rejections + stats.previous_projections + stats.small_action_projections == 0);
  }
}

TEST_CASE("shrink_to_safe meets the geometric iteration bound") {
  Rng rng(13);
  int shrunk = 0;
  for (int trial = 0; trial < 150; ++trial) {
    const Pose pose = random_pose(rng, 1.0, 2.0);
    const risk::RiskMap m = random_map(rng, 30, 0.05, pose);
    const risk::SafeSet safe(m, 1.0);
    ActionSequence u = random_actions(rng, 0.8);
    const double beta = rng.uniform(0.1, 0.9);
    const double eps = clearance(safe, pose.position());
    const double reach = u.colwise().norm().maxCoeff();
    const int bound = reach < eps ? 0 : static_cast<int>(std::ceil(std::log(eps / reach) / std::log(1.0 - beta)));
    const ActionSequence before = u;
    const int k = shrink_to_safe(u, safe, pose, beta);
    CHECK(k <= bound);
    CHECK(risk::is_safe(safe, u, pose));
    CHECK((u - std::pow(1.0 - beta, k) * before).norm() < 1e-9);
    shrunk += k > 0;
  }
  CHECK(shrunk > 50);

  risk::RiskMap m = testing::uniform_map(10, 10, 0.1, 0.0f);
  testing::set_rho(m, 5, 5, 2.0f);
  ActionSequence u = testing::straight(0.1);
  CHECK_THROWS_AS(shrink_to_safe(u, risk::SafeSet(m, 1.0), Pose{0.55, 0.55, 0.0}, 0.5), GuidanceError);
}

TEST_CASE("previous projection follows the blend closed form") {
  const auto policy = testing::random_policy(21);
  const Projection mode = Projection::defaults_for(50);
  Rng rng(3);
  int checked = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const Pose pose = random_pose(rng, 1.5, 2.5);
    const risk::RiskMap m = random_map(rng, 40, 0.08, pose);
    const risk::SafeSet safe(m, 1.0);
    ActionSequence prev = 0.05 * random_actions(rng, 1.0);
    if (!risk::is_safe(safe, prev, pose)) continue;
    const Eigen::VectorXd ut = Eigen::Map<const Eigen::VectorXd>(prev.data(), 16);
    const Eigen::VectorXd eps = diffusion::standard_normal(rng, 16);
    const int t = mode.t1 + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(mode.t2 - mode.t1)));

    Rng a(trial), b(trial);
    StepStats stats;
    const Eigen::VectorXd out = projection_step(policy, ut, t, eps, env_for(safe, pose), mode, a, &stats);
    CHECK(stats.rejections == 0);
    const Eigen::VectorXd cand = diffusion::ddpm_step(ut, t, eps, policy.schedule, b);
    const int k = stats.previous_projections;
    if (k == 0 || stats.small_action_projections > 0) continue;
    const double w = std::pow(1.0 - mode.beta_mix, k);
    CHECK((out - (w * cand + (1.0 - w) * ut)).norm() < 1e-9);
    // k is the first blend that is safe.
    for (int j = 0; j < k; ++j) {
      const double wj = std::pow(1.0 - mode.beta_mix, j);
      const Eigen::VectorXd bj = wj * cand + (1.0 - wj) * ut;
      CHECK_FALSE(risk::is_safe(safe, policy.normalizer.unnormalize(bj), pose));
    }
    ++checked;
  }
  CHECK(checked > 20);
}

TEST_CASE("projection rungs follow the diffusion step") {
  const auto policy = testing::random_policy(22);
  const Projection mode = Projection::defaults_for(50);
  // Narrow safe strip around the pose: almost every noisy candidate fails.
  risk::RiskMap m = testing::uniform_map(40, 40, 0.1, 2.0f);
  for (int x = 0; x < 40; ++x) testing::set_rho(m, x, 20, 0.1f);
  const risk::SafeSet safe(m, 1.0);
  const Pose pose{2.05, 2.05, 0.0};
  Rng rng(8);
  for (int t = 50; t >= 1; --t) {
    const Eigen::VectorXd ut = diffusion::standard_normal(rng, 16);
    const Eigen::VectorXd eps = diffusion::standard_normal(rng, 16);
    Rng a(t);
    StepStats s;
    const Eigen::VectorXd out = projection_step(policy, ut, t, eps, env_for(safe, pose), mode, a, &s);
    CHECK(risk::is_safe(safe, policy.normalizer.unnormalize(out), pose));
    if (t <= mode.t2) CHECK(s.rejections == 0);
    if (t <= mode.t1) CHECK(s.previous_projections == 0);
    // Later rungs only run after the earlier one is exhausted.
    if (s.previous_projections > 0 && t > mode.t2) CHECK(s.rejections == mode.max_rejections);
    if (s.small_action_projections > 0 && t > mode.t1) CHECK(s.previous_projections == mode.max_projections);
  }
}

TEST_CASE("degenerate phase boundaries skip rungs and keep the guarantee") {
  const auto policy = testing::random_policy(23, 20);
  risk::RiskMap m = testing::uniform_map(40, 40, 0.1, 2.0f);
  for (int x = 0; x < 40; ++x) testing::set_rho(m, x, 20, 0.1f);
  const risk::SafeSet safe(m, 1.0);
  const Pose pose{2.05, 2.05, 0.0};

  Projection no_reject = Projection::defaults_for(20);
  no_reject.t2 = 20;
  StepStats a;
  for (const auto& u : diffusion::sample(policy, diffusion::Context{}, no_reject, env_for(safe, pose), 1, 8, &a))
    CHECK(risk::is_safe(safe, u, pose));
  CHECK(a.rejections == 0);

  // With t1 = 0 the previous-iterate rung converges to u_t, which is safe
  // after the first step, so the last rung is never needed.
  Projection no_shrink = Projection::defaults_for(20);
  no_shrink.t1 = 0;
  no_shrink.max_projections = 200;
  Rng rng(4);
  for (int t = no_shrink.t2; t >= 1; --t) {
    const ActionSequence prev = testing::straight(0.05);  // along the safe strip
    const Eigen::VectorXd ut = Eigen::Map<const Eigen::VectorXd>(prev.data(), 16);
    const Eigen::VectorXd eps = diffusion::standard_normal(rng, 16);
    StepStats b;
    Rng r(t);
    const Eigen::VectorXd out = projection_step(policy, ut, t, eps, env_for(safe, pose), no_shrink, r, &b);
    CHECK(risk::is_safe(safe, policy.normalizer.unnormalize(out), pose));
    CHECK(b.small_action_projections == 0);
  }
  StepStats c;
  for (const auto& u : diffusion::sample(policy, diffusion::Context{}, no_shrink, env_for(safe, pose), 2, 8, &c))
    CHECK(risk::is_safe(safe, u, pose));
}

TEST_CASE("projection-guided sampling always returns safe plans") {
  Rng rng(99);
  int hard = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const auto policy = testing::random_policy(rng.next(), 20);
    const Pose pose = random_pose(rng, 1.0, 2.0);
    const risk::RiskMap m = random_map(rng, 30, rng.uniform(0.05, 0.5), pose);
    const risk::SafeSet safe(m, 1.0);
    StepStats stats;
    const auto out = diffusion::sample(policy, diffusion::Context{}, Projection::defaults_for(20),
                                       env_for(safe, pose), rng.next(), 8, &stats);
    for (const auto& u : out) CHECK(risk::is_safe(safe, u, pose));
    hard += stats.small_action_projections > 0;
  }
  CHECK(hard > 5);
}

TEST_CASE("projection from an unsafe pose is an error") {
  const auto policy = testing::random_policy(1);
  const risk::RiskMap m = testing::uniform_map(10, 10, 0.1, 2.0f);
  const risk::SafeSet safe(m, 1.0);
  Rng rng(1);
  const Eigen::VectorXd z = Eigen::VectorXd::Zero(16);
  CHECK_THROWS_AS(projection_step(policy, z, 10, z, env_for(safe, Pose{0.5, 0.5, 0.0}),
                                  Projection::defaults_for(50), rng),
                  GuidanceError);
}

TEST_CASE("safety filter keeps the longest safe prefix") {
  Rng rng(17);
  int partial = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const Pose pose = random_pose(rng, 1.0, 2.0);
    const risk::RiskMap m = random_map(rng, 30, 0.1, pose);
    const risk::SafeSet safe(m, 1.0);
    const ActionSequence u = random_actions(rng, 0.6);
    const ActionSequence f = safety_filter(u, safe, pose);
    int oracle = 0;
    for (int l = 1; l <= u.cols(); ++l)
      if (risk::is_safe(safe, ActionSequence(u.leftCols(l)), pose)) oracle = l;
      else break;
    CHECK(f.cols() == oracle);
    CHECK(f == u.leftCols(f.cols()));
    partial += f.cols() > 0 && f.cols() < u.cols();
  }
  CHECK(partial > 20);

  risk::RiskMap m = testing::uniform_map(10, 10, 0.1, 2.0f);
  CHECK(safety_filter(testing::straight(0.1), risk::SafeSet(m, 1.0), Pose{0.5, 0.5, 0.0}).cols() == 0);
}

TEST_CASE("describe") {
  CHECK(describe(Unguided{}) == "none");
  CHECK(describe(Classifier{2.5}) == "classifier(eta=2.5)");
  CHECK(describe(Projection::defaults_for(50)) == "projection(t1=10,t2=30,beta_mix=0.5)");
}
