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

#ifndef RISKDIFF_SIM_HPP_
#define RISKDIFF_SIM_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "riskdiff/diffusion.hpp"
#include "riskdiff/expert.hpp"
#include "riskdiff/guidance.hpp"
#include "riskdiff/risk.hpp"
#include "riskdiff/terrain.hpp"

namespace riskdiff::sim {

struct EpisodeConfig {
  terrain::TerrainRecipe recipe;
  Pose start;
  Vec2 goal = Vec2::Zero();
  double tolerance = 0.3;  // meters
  int max_cycles = 30;
  int replan_horizon = 4;  // waypoints executed per cycle
  std::uint64_t seed = 0;

  void validate() const;
};

enum class Outcome { kGoalSuccess, kSafetyFailure, kTimeout };
const char* to_string(Outcome o);

enum class MethodKind { kVanilla, kClassifier, kFilter, kProjection };

struct Method {
  std::string name;
  MethodKind kind = MethodKind::kVanilla;
  double eta = 10.0;  // classifier only
  guidance::Projection projection;  // projection only; t1/t2 rescaled to the policy's T when unset

  // "vanilla", "classifier", "classifier:<eta>", "filter", "projection".
  static Method parse(const std::string& text, int steps = 50);
};

struct SimConfig {
  int batch = 16;
  risk::CostParams cost;
  risk::RiskConfig risk;
  double surrogate_margin = 0.1;
};

struct EpisodeResult {
  Outcome outcome = Outcome::kTimeout;
  // Every executed check point, in order, starting with the start pose. The
  // heading is the direction of travel.
  std::vector<Pose> trajectory;
  std::vector<ActionSequence> actions;  // selected (and, for the filter, truncated) sequence per cycle
  int cycles = 0;
  double path_length = 0.0;
};

// Risk map of an episode's terrain; the Monte-Carlo seed is derived from the
// recipe seed so every method sees the same map.
risk::RiskMap episode_risk_map(const EpisodeConfig& config, const SimConfig& sim, int workers = 1);

// Closed loop: sample `batch` candidates with cycle seed derive_seed(seed,
// cycle), select the one whose final waypoint is nearest the goal (safe
// candidates only for filter and projection), execute the first
// replan_horizon waypoints point by point. Leaving the grid or touching a
// cell with rho > gamma ends the episode as a safety failure. Throws
// std::invalid_argument when the start pose is unsafe.
EpisodeResult run_episode(const EpisodeConfig& config, const diffusion::Policy& policy, const Method& method,
                          const risk::RiskMap& map, const SimConfig& sim);

struct EpisodeRecord {
  int episode = 0;
  std::string method;
  Outcome outcome = Outcome::kTimeout;
  int cycles = 0;
  double path_length = 0.0;
};

struct MethodMetrics {
  std::string method;
  int episodes = 0;
  int goal_success = 0;
  int safety_failure = 0;
  int timeout = 0;

  double gs_rate() const { return episodes ? 100.0 * goal_success / episodes : 0.0; }
  double sf_rate() const { return episodes ? 100.0 * safety_failure / episodes : 0.0; }
  double timeout_rate() const { return episodes ? 100.0 * timeout / episodes : 0.0; }
};

struct MetricsReport {
  std::vector<MethodMetrics> methods;  // in the order requested
  std::vector<EpisodeRecord> episodes;  // episode-major, then method order

  const MethodMetrics& at(const std::string& method) const;
};

MetricsReport evaluate(const diffusion::Policy& policy, const std::vector<Method>& methods,
                       const std::vector<EpisodeConfig>& suite, const SimConfig& sim, int workers = 1);

std::string metrics_csv(const MetricsReport& report);
std::string episodes_csv(const MetricsReport& report);
std::string format_table(const MetricsReport& report);

// Re-derives the outcome from a trajectory log alone.
Outcome replay_outcome(const EpisodeResult& result, const EpisodeConfig& config, const risk::SafeSet& safe);

// Suites: draws tasks from a family, keeping those whose start and goal are
// safe and connected in the risk map.
std::vector<EpisodeConfig> make_suite(const expert::RecipeFamily& family, int count, std::uint64_t seed,
                                      const SimConfig& sim, int workers = 1);

// {"schema_version": 1, "episodes": [...]} or
// {"schema_version": 1, "family": "pit_suite"|"training"|{...}, "count": n, "seed": s}
std::vector<EpisodeConfig> suite_from_json_text(const std::string& text, const SimConfig& sim, int workers = 1);
std::string suite_to_json_text(const std::vector<EpisodeConfig>& suite);
std::vector<EpisodeConfig> load_suite(const std::string& path, const SimConfig& sim, int workers = 1);

}  // namespace riskdiff::sim

#endif  // RISKDIFF_SIM_HPP_
