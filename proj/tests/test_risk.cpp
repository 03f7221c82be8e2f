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

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "riskdiff/risk.hpp"
#include "riskdiff/terrain.hpp"
#include "support.hpp"

using namespace riskdiff;
using namespace riskdiff::risk;

namespace {

// Rockafellar-Uryasev: min_z z + E[(R - z)_+] / (1 - alpha). The objective is
// convex and piecewise linear with kinks at the samples, so the minimum sits
// at one of them.
double ru_cvar(const std::vector<double>& s, double alpha) {
  double best = std::numeric_limits<double>::infinity();
  for (double z : s) {
    double e = 0.0;
    for (double r : s) e += std::max(0.0, r - z);
    best = std::min(best, z + e / static_cast<double>(s.size()) / (1.0 - alpha));
  }
  return best;
}

terrain::ElevationBelief plane_belief(double gx, double gy, float stddev) {
  terrain::ElevationBelief b;
  b.spec = GridSpec{20, 20, 0.1, 0.0, 0.0};
  b.mean.resize(b.spec.cell_count());
  b.stddev.assign(b.spec.cell_count(), stddev);
  for (std::size_t i = 0; i < b.mean.size(); ++i) {
    const Vec2 p = b.spec.center(b.spec.cell_at(i));
    b.mean[i] = static_cast<float>(gx * p.x() + gy * p.y());
  }
  return b;
}

}  // namespace

TEST_CASE("cvar on hand-computed cases") {
  const std::vector<double> s = {4.0, 1.0, 3.0, 2.0};
  CHECK(cvar(s, 0.5) == doctest::Approx(3.5));
  CHECK(cvar(s, 0.75) == doctest::Approx(4.0));
  CHECK(cvar(s, 1.0) == 4.0);
  // Fractional boundary: tail mass 1.5 samples = 4 + 0.5 * 3.
  CHECK(cvar(s, 0.625) == doctest::Approx((4.0 + 0.5 * 3.0) / 1.5));
  // Near zero alpha, the mean.
  CHECK(cvar(s, 1e-9) == doctest::Approx(2.5));
  CHECK_THROWS_AS(cvar(std::vector<double>{}, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(cvar(s, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(cvar(s, 1.5), std::invalid_argument);
}

TEST_CASE("cvar agrees with the Rockafellar-Uryasev minimum") {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(60));
    std::vector<double> s(static_cast<std::size_t>(n));
    for (double& v : s) v = rng.uniform() < 0.3 ? rng.uniform(0, 10) : rng.normal();
    const double alpha = rng.uniform(0.01, 0.99);
    CHECK(cvar(s, alpha) == doctest::Approx(ru_cvar(s, alpha)).epsilon(1e-9));
  }
}

TEST_CASE("footprint is a disc") {
  const auto f = footprint_offsets(0.1, 0.2);
  CHECK(f.size() == 13);  // |d| <= 2 cells
  for (const Cell& c : f) CHECK(c.x * c.x + c.y * c.y <= 4);
}

TEST_CASE("traversability cost of a plane") {
  const CostParams p;
  SUBCASE("flat ground costs nothing") {
    const auto b = plane_belief(0.0, 0.0, 0.0f);
    CHECK(mean_cost(b, p, {10, 10}) == 0.0);
  }
  SUBCASE("tilted plane: slope plus elevation range") {
    const double k = 0.2;
    const auto b = plane_belief(k, 0.0, 0.0f);
    const double expected = std::atan(k) / p.slope_critical + k * 0.4 / p.step_critical;
    CHECK(mean_cost(b, p, {10, 10}) == doctest::Approx(expected).epsilon(1e-5));
    Rng rng(1);
    CHECK(cost_sample(b, p, {10, 10}, rng) == doctest::Approx(expected).epsilon(1e-5));
  }
  SUBCASE("out of bounds") {
    const auto b = plane_belief(0.0, 0.0, 0.0f);
    Rng rng(1);
    CHECK_THROWS_AS(cost_sample(b, p, {20, 3}, rng), std::out_of_range);
    CHECK_THROWS_AS(mean_cost(b, p, {-1, 3}), std::out_of_range);
  }
}

TEST_CASE("risk map: deterministic, worker-independent, uncertainty raises risk") {
  terrain::TerrainRecipe r;
  r.seed = 5;
  r.grid = GridSpec{30, 30, 0.1, 0.0, 0.0};
  r.roughness = 0.03;
  r.std_floor = 0.01;
  r.edge_uncertainty = 0.05;
  r.hazards.push_back({terrain::HazardShape::kStep, 1.5, 1.5, 0.8, 0.8, 0.3});
  const auto b = terrain::generate_terrain(r);
  RiskConfig cfg;
  cfg.seed = 9;
  const RiskMap a = build_risk_map(b, CostParams{}, cfg, 1);
  const RiskMap c = build_risk_map(b, CostParams{}, cfg, 3);
  CHECK(a.rho == c.rho);
  // The step rim is unsafe, open ground is not.
  CHECK(a.at(*a.spec.locate({1.9, 1.5})) > cfg.gamma);
  CHECK(a.at(*a.spec.locate({0.3, 0.3})) < cfg.gamma);
  // More elevation uncertainty, more risk.
  auto noisy = b;
  for (float& s : noisy.stddev) s *= 3.0f;
  const RiskMap n = build_risk_map(noisy, CostParams{}, cfg, 1);
  const Cell open = *a.spec.locate({0.3, 0.3});
  CHECK(n.at(open) > a.at(open));
}

TEST_CASE("risk map files round trip") {
  testing::TempDir dir("risk");
  RiskMap m = testing::uniform_map(7, 5, 0.1, 0.25f);
  m.config.alpha = 0.8;
  m.config.seed = 77;
  testing::set_rho(m, 3, 2, 4.5f);
  save_risk_map(m, dir.file("r.grid"));
  const RiskMap back = load_risk_map(dir.file("r.grid"));
  CHECK(back.spec == m.spec);
  CHECK(back.rho == m.rho);
  CHECK(back.config.alpha == 0.8);
  CHECK(back.config.seed == 77);
}

TEST_CASE("is_safe checks the pose, the waypoints and the segments between them") {
  RiskMap m = testing::uniform_map(30, 30, 0.1, 0.2f);
  const SafeSet safe(m, 1.0);
  const Pose pose{0.55, 1.55, 0.0};
  const ActionSequence u = testing::straight(0.2);  // reaches x = 2.15
  CHECK(is_safe(safe, u, pose));
  CHECK(hard_margin(safe, u, pose) <= 0.0);

  // An unsafe cell between two waypoints is caught by the segment check.
  testing::set_rho(m, 10, 15, 2.0f);  // x in [1.0, 1.1)
  CHECK_FALSE(is_safe(safe, u, pose));
  CHECK(hard_margin(safe, u, pose) == doctest::Approx(1.0));

  // Off the grid.
  testing::set_rho(m, 10, 15, 0.2f);
  CHECK_FALSE(is_safe(safe, testing::straight(0.4), pose));
  CHECK(std::isinf(hard_margin(safe, testing::straight(0.4), pose)));

  // Unsafe pose.
  testing::set_rho(m, 5, 15, 2.0f);
  CHECK_FALSE(is_safe(safe, ActionSequence::Zero(2, 8), pose));
}

TEST_CASE("is_safe and hard_margin agree on random maps") {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    RiskMap m = testing::uniform_map(25, 25, 0.1, 0.0f);
    for (float& v : m.rho) v = static_cast<float>(rng.uniform() < 0.1 ? 2.0 : rng.uniform(0.0, 0.9));
    const SafeSet safe(m, 1.0);
    const Pose pose{rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0), rng.uniform(-3.0, 3.0)};
    ActionSequence u(2, 8);
    for (int k = 0; k < 8; ++k) u.col(k) = Vec2(rng.uniform(-0.5, 1.0), rng.uniform(-0.5, 0.5));
    CHECK(is_safe(safe, u, pose) == (hard_margin(safe, u, pose) <= 0.0));
  }
}

TEST_CASE("c_risk sign") {
  SUBCASE("all cells below gamma -> c <= 0") {
    RiskMap m = testing::uniform_map(30, 30, 0.1, 0.7f);
    const RiskSurrogate s(m, 1.0);
    CHECK(c_risk(s, testing::straight(0.15), Pose{1.0, 1.5, 0.0}).value <= 0.0);
  }
  SUBCASE("deep inside an unsafe region -> c > 0") {
    RiskMap m = testing::uniform_map(30, 30, 0.1, 3.0f);
    const RiskSurrogate s(m, 1.0);
    CHECK(c_risk(s, testing::straight(0.15), Pose{1.0, 1.5, 0.0}).value > 0.0);
  }
  SUBCASE("leaving the grid is penalized") {
    RiskMap m = testing::uniform_map(30, 30, 0.1, 0.0f);
    const RiskSurrogate s(m, 1.0);
    CHECK(c_risk(s, testing::straight(0.5), Pose{2.5, 1.5, 0.0}).value > 0.0);
  }
}

TEST_CASE("c_risk gradient matches central differences") {
  Rng rng(8);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    RiskMap m = testing::uniform_map(30, 30, 0.1, 0.0f);
    for (float& v : m.rho) v = static_cast<float>(rng.uniform(0.0, 2.0));
    const RiskSurrogate s(m, 1.0, 0.1);
    const Pose pose{rng.uniform(1.0, 2.0), rng.uniform(1.0, 2.0), rng.uniform(-3.0, 3.0)};
    ActionSequence u(2, 8);
    for (int k = 0; k < 8; ++k) u.col(k) = Vec2(rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8));
    const CRiskResult r = c_risk(s, u, pose);
    Eigen::Matrix2Xd fd(2, 8);
    const double h = 1e-6;
    for (int k = 0; k < 8; ++k)
      for (int d = 0; d < 2; ++d) {
        ActionSequence up = u, dn = u;
        up(d, k) += h;
        dn(d, k) -= h;
        fd(d, k) = (c_risk(s, up, pose).value - c_risk(s, dn, pose).value) / (2 * h);
      }
    worst = std::max(worst, (r.gradient - fd).norm() / std::max(fd.norm(), 1e-8));
  }
  CHECK(worst < 1e-4);
}
