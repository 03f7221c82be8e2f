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

#ifndef RISKDIFF_EXPERT_HPP_
#define RISKDIFF_EXPERT_HPP_

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "riskdiff/diffusion.hpp"
#include "riskdiff/risk.hpp"
#include "riskdiff/terrain.hpp"

namespace riskdiff::expert {

class NoPath : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PlanResult {
  std::vector<Vec2> polyline;  // world frame, start first
  std::vector<Cell> cells;     // raw 8-connected cell path
  double grid_cost = 0.0;      // in cells: 1 per straight move, sqrt(2) per diagonal
};

// Uniform-cost search over safe cells (8-connected, no corner cutting),
// ties broken by (cost, row-major cell index), followed by line-of-sight
// removal of redundant vertices with the segment safety check. Throws
// std::invalid_argument when start or goal is unsafe and NoPath when the
// goal is unreachable.
PlanResult plan_path(const risk::RiskMap& map, double gamma, const Vec2& start, const Vec2& goal);

inline constexpr double kDefaultAngleThreshold = 0.5235987755982988;  // 30 degrees

// Samples every `spacing` meters of arc length. A vertex whose heading change
// exceeds `angle_threshold` is emitted itself and restarts the spacing, so
// gaps never exceed `spacing`. The final polyline point is always kept.
std::vector<Vec2> resample_waypoints(const std::vector<Vec2>& polyline, double spacing = 0.2,
                                     double angle_threshold = kDefaultAngleThreshold);

struct DemoEpisode {
  std::uint64_t recipe_seed = 0;
  Pose start;
  Vec2 goal = Vec2::Zero();
  std::vector<Vec2> path;       // planner polyline
  std::vector<Vec2> waypoints;  // resampled path
  std::vector<double> headings;  // direction of arrival at each waypoint
  std::vector<diffusion::Context> contexts;  // context at each waypoint
};

// Context at each resampled point. The robot faces the way it arrived, the
// way a closed-loop run leaves it; at the first point it faces
// `start_heading`.
DemoEpisode make_demo_episode(const risk::RiskMap& map, const PlanResult& plan, const Vec2& goal,
                              double start_heading, double angle_threshold = kDefaultAngleThreshold);

// Windows of n_waypoints points starting at indices 0, stride, ... while a
// full window fits. The base pose is the window's first point; actions are
// the following n_waypoints points in that robot frame, padded with the final
// point (the robot stops at the goal).
std::vector<std::pair<diffusion::Context, ActionSequence>> episode_pairs(const DemoEpisode& ep, int n_waypoints,
                                                                          int stride);

struct DatasetBuild {
  diffusion::Dataset dataset;
  int skipped = 0;  // episodes shorter than n_waypoints
};
DatasetBuild make_dataset(const std::vector<DemoEpisode>& episodes, int n_waypoints, int stride);

// Random terrain families used for data generation and evaluation suites.
struct HazardRange {
  terrain::HazardShape shape = terrain::HazardShape::kStep;
  int min_count = 0;
  int max_count = 1;
  double min_size = 0.6;
  double max_size = 1.2;
  double min_height = 0.2;
  double max_height = 0.4;
  // Fraction of these hazards centred on the straight start-goal route.
  double on_route = 0.0;
};

struct RecipeFamily {
  GridSpec grid{64, 64, 0.1, 0.0, 0.0};
  double roughness = 0.02;
  double roughness_spacing = 0.8;
  double std_floor = 0.005;
  double edge_uncertainty = 0.05;
  std::vector<HazardRange> hazards;
  double min_distance = 3.5;  // start-goal distance, meters
  double border = 0.6;        // keep start/goal this far from the map edge

  static RecipeFamily training();    // steps, ramps, rock fields; no pits
  static RecipeFamily pit_suite();   // pits across the route plus training hazards
};

struct Task {
  terrain::TerrainRecipe recipe;
  Pose start;
  Vec2 goal = Vec2::Zero();
};

// Draws start/goal and a recipe from the family (start heading points at the goal).
Task draw_task(const RecipeFamily& family, Rng& rng);

struct DataGenConfig {
  RecipeFamily family = RecipeFamily::training();
  risk::CostParams cost;
  risk::RiskConfig risk;
  double angle_threshold = kDefaultAngleThreshold;
  int episodes = 500;
  int max_attempts_per_episode = 20;
  std::uint64_t seed = 0;
  int workers = 1;
};

// Episodes for which start and goal are safe and a path exists. Episode i
// uses seed derive_seed(config.seed, i) so generation parallelizes without
// changing results.
std::vector<DemoEpisode> generate_episodes(const DataGenConfig& config);

// Dataset directory: one `episode_NNNNN.bin` per episode plus manifest.json.
//   episode file: "RDEPIS01" | u32 n_waypoints | u32 context_dim | u32 pairs
//                 | per pair: f64 goal[2] f64 sin f64 cos f32 patch[25] f64 action[2 N_u]
void save_dataset(const std::string& dir, const std::vector<DemoEpisode>& episodes, int n_waypoints, int stride,
                  const std::string& extra_manifest_json = "{}");
diffusion::Dataset load_dataset(const std::string& dir);

std::string family_to_json_text(const RecipeFamily& f);
RecipeFamily family_from_json_text(const std::string& text);

}  // namespace riskdiff::expert

#endif  // RISKDIFF_EXPERT_HPP_
