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
#include <sstream>

#include "riskdiff/sim.hpp"
#include "support.hpp"

using namespace riskdiff;
using namespace riskdiff::sim;

namespace {

SimConfig small_sim() {
  SimConfig s;
  s.batch = 6;
  s.risk.mc_samples = 8;
  return s;
}

// Re-executes the logged actions up to the first unsafe or goal point and
// returns the visited points.
std::vector<Vec2> reexecute(const EpisodeResult& r, const EpisodeConfig& cfg, const risk::SafeSet& safe) {
  const double res = safe.map().spec.resolution;
  std::vector<Vec2> out{cfg.start.position()};
  Pose pose = cfg.start;
  for (const ActionSequence& a : r.actions) {
    if (a.cols() == 0) continue;
    const auto pts = check_points(pose, a.leftCols(std::min<Eigen::Index>(cfg.replan_horizon, a.cols())), res);
    double heading = pose.heading;
    for (std::size_t k = 1; k < pts.size(); ++k) {
      const Vec2 d = pts[k] - pts[k - 1];
      if (d.norm() > 1e-12) heading = std::atan2(d.y(), d.x());
      out.push_back(pts[k]);
      if (!safe.safe(pts[k]) || (pts[k] - cfg.goal).norm() <= cfg.tolerance) return out;
    }
    pose = Pose{pts.back().x(), pts.back().y(), heading};
  }
  return out;
}

std::vector<Method> all_methods(int steps) {
  return {Method::parse("vanilla", steps), Method::parse("classifier:5", steps), Method::parse("filter", steps),
          Method::parse("projection", steps)};
}

}  // namespace

TEST_CASE("method parsing") {
  CHECK(Method::parse("none").kind == MethodKind::kVanilla);
  const Method c = Method::parse("classifier:2.5");
  CHECK(c.kind == MethodKind::kClassifier);
  CHECK(c.eta == 2.5);
  CHECK(Method::parse("classifier").eta == 10.0);
  const Method p = Method::parse("projection", 20);
  CHECK(p.projection.t2 == 12);
  CHECK(p.projection.t1 == 4);
  CHECK_THROWS_AS(Method::parse("classifier:-1"), std::invalid_argument);
  CHECK_THROWS_AS(Method::parse("classifier:x"), std::invalid_argument);
  CHECK_THROWS_AS(Method::parse("filter:3"), std::invalid_argument);
  CHECK_THROWS_AS(Method::parse("magic"), std::invalid_argument);
}

TEST_CASE("starting inside the goal tolerance succeeds without a cycle") {
  EpisodeConfig cfg;
  cfg.recipe.grid = GridSpec{30, 30, 0.1, 0.0, 0.0};
  cfg.start = Pose{1.5, 1.5, 0.0};
  cfg.goal = Vec2(1.6, 1.6);
  const SimConfig sim = small_sim();
  const auto map = episode_risk_map(cfg, sim);
  const auto r = run_episode(cfg, testing::random_policy(1), Method::parse("vanilla"), map, sim);
  CHECK(r.outcome == Outcome::kGoalSuccess);
  CHECK(r.cycles == 0);
  CHECK(r.trajectory.size() == 1);
}

TEST_CASE("an unsafe start is rejected") {
  EpisodeConfig cfg;
  cfg.recipe.grid = GridSpec{30, 30, 0.1, 0.0, 0.0};
  cfg.start = Pose{1.5, 1.5, 0.0};
  cfg.goal = Vec2(2.5, 2.5);
  risk::RiskMap m = testing::uniform_map(30, 30, 0.1, 2.0f);
  CHECK_THROWS_AS(run_episode(cfg, testing::random_policy(1), Method::parse("vanilla"), m, small_sim()),
                  std::invalid_argument);
  cfg.replan_horizon = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("episodes on hazard terrain: logs, outcomes and the projection guarantee") {
  const SimConfig sim = small_sim();
  const auto suite = make_suite(expert::RecipeFamily::pit_suite(), 4, 31, sim);
  REQUIRE(suite.size() == 4);
  Rng rng(2);
  int sf_seen = 0;
  for (const auto& base : suite) {
    const auto map = episode_risk_map(base, sim);
    const risk::SafeSet safe(map, sim.risk.gamma);
    for (int rep = 0; rep < 2; ++rep) {
      EpisodeConfig cfg = base;
      cfg.max_cycles = 8;
      cfg.seed = rng.next();
      const auto policy = testing::random_policy(rng.next(), 20);
      for (const Method& m : all_methods(20)) {
        const auto r = run_episode(cfg, policy, m, map, sim);
        CHECK(replay_outcome(r, cfg, safe) == r.outcome);
        const auto pts = reexecute(r, cfg, safe);
        REQUIRE(pts.size() == r.trajectory.size());
        for (std::size_t k = 0; k < pts.size(); ++k) CHECK((pts[k] - r.trajectory[k].position()).norm() < 1e-12);
        CHECK(r.cycles <= cfg.max_cycles);
        CHECK(static_cast<int>(r.actions.size()) == r.cycles);
        if (m.kind == MethodKind::kProjection || m.kind == MethodKind::kFilter)
          CHECK(r.outcome != Outcome::kSafetyFailure);
        sf_seen += r.outcome == Outcome::kSafetyFailure;
      }
    }
  }
  // The untrained policy wanders into hazards without a safety layer.
  CHECK(sf_seen > 0);
}

TEST_CASE("evaluation is deterministic and independent of the worker count") {
  const SimConfig sim = small_sim();
  auto suite = make_suite(expert::RecipeFamily::training(), 3, 8, sim, 2);
  for (auto& e : suite) e.max_cycles = 5;
  const auto policy = testing::random_policy(5, 20);
  const auto methods = all_methods(20);
  const auto a = evaluate(policy, methods, suite, sim, 1);
  const auto b = evaluate(policy, methods, suite, sim, 3);
  CHECK(metrics_csv(a) == metrics_csv(b));
  CHECK(episodes_csv(a) == episodes_csv(b));
  REQUIRE(a.episodes.size() == suite.size() * methods.size());
  CHECK(a.episodes[1].episode == 0);
  CHECK(a.episodes[1].method == methods[1].name);
  for (const auto& m : a.methods) {
    CHECK(m.episodes == 3);
    CHECK(m.goal_success + m.safety_failure + m.timeout == m.episodes);
    CHECK(m.gs_rate() + m.sf_rate() + m.timeout_rate() == doctest::Approx(100.0));
  }
  CHECK_THROWS_AS(a.at("nope"), std::out_of_range);

  std::istringstream csv(metrics_csv(a));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "method,episodes,gs_percent,sf_percent,timeout_percent,goal_success,safety_failure,timeout");
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 4);
}

TEST_CASE("suite JSON") {
  const SimConfig sim = small_sim();
  const auto suite = make_suite(expert::RecipeFamily::pit_suite(), 2, 4, sim);
  const std::string text = suite_to_json_text(suite);
  const auto back = suite_from_json_text(text, sim);
  REQUIRE(back.size() == suite.size());
  CHECK(suite_to_json_text(back) == text);

  const auto drawn = suite_from_json_text(R"({"schema_version": 1, "family": "pit_suite", "count": 2, "seed": 4})", sim);
  CHECK(suite_to_json_text(drawn) == text);
  CHECK_THROWS(suite_from_json_text(R"({"schema_version": 2, "episodes": []})", sim));
  CHECK_THROWS(suite_from_json_text(R"({"schema_version": 1, "episodes": [], "extra": 0})", sim));
  CHECK_THROWS(suite_from_json_text("not json", sim));
}
