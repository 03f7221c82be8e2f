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

#ifndef RISKDIFF_RISK_HPP_
#define RISKDIFF_RISK_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "riskdiff/grid.hpp"
#include "riskdiff/rng.hpp"
#include "riskdiff/terrain.hpp"

namespace riskdiff::risk {

// Parameters of the traversability cost. The cost is a slope + step-height
// stand-in for a full physics model:
//
//   cost = slope_weight * (max slope / slope_critical)
//        + step_weight  * (max step  / step_critical)
//
// evaluated on one elevation draw over the robot footprint. "max slope" is
// the inclination of the least-squares plane through the footprint, "max
// step" the elevation range inside it.
struct CostParams {
  double slope_weight = 1.0;
  double step_weight = 1.0;
  double slope_critical = 0.35;  // radians
  double step_critical = 0.15;   // meters
  double footprint_radius = 0.2;  // meters

  void validate() const;
};

struct RiskConfig {
  double alpha = 0.9;   // risk probability level, (0, 1]
  double gamma = 1.0;   // risk tolerance
  int mc_samples = 32;  // map draws per cell
  std::uint64_t seed = 0;

  void validate() const;
};

// Per-cell CVaR of the traversability cost.
struct RiskMap {
  GridSpec spec;
  std::vector<float> rho;
  RiskConfig config;

  float at(Cell c) const { return rho[spec.index(c)]; }
};

// Cells with rho <= gamma. Off-grid points are unsafe.
class SafeSet {
 public:
  SafeSet(const RiskMap& map, double gamma) : map_(&map), gamma_(gamma) {}
  explicit SafeSet(const RiskMap& map) : SafeSet(map, map.config.gamma) {}

  const RiskMap& map() const { return *map_; }
  double gamma() const { return gamma_; }
  bool safe(Cell c) const { return map_->spec.contains(c) && map_->at(c) <= gamma_; }
  bool safe(const Vec2& p) const;

 private:
  const RiskMap* map_;
  double gamma_;
};

// Smooth constraint c_risk(u) <= 0 over a risk map; see c_risk().
struct RiskSurrogate {
  const RiskMap* map = nullptr;
  double gamma = 1.0;
  double margin = 0.1;        // softening width delta
  int subdivisions = 4;       // fixed points per segment, keeps c_risk continuous
  double outside_gain = 10.0;  // rho increase per meter outside the grid

  RiskSurrogate() = default;
  RiskSurrogate(const RiskMap& m, double g, double delta = 0.1) : map(&m), gamma(g), margin(delta) {}
};

// Offsets (in cells) of the circular robot footprint.
std::vector<Cell> footprint_offsets(double resolution, double radius);

// One draw of the traversability cost at `cell`. Throws std::out_of_range.
double cost_sample(const terrain::ElevationBelief& belief, const CostParams& params, Cell cell, Rng& rng);
// The cost of the mean elevation (no sampling).
double mean_cost(const terrain::ElevationBelief& belief, const CostParams& params, Cell cell);

// Empirical CVaR_alpha: the mean of the worst (1 - alpha) probability tail,
// with the boundary sample weighted fractionally. This is the exact minimum
// of z + E[(R - z)_+] / (1 - alpha) for an empirical distribution. alpha = 1
// returns the maximum. Throws std::invalid_argument on empty input or alpha
// outside (0, 1].
double cvar(std::span<const double> samples, double alpha);

RiskMap build_risk_map(const terrain::ElevationBelief& belief, const CostParams& params,
                       const RiskConfig& config, int workers = 1);

// Single-channel `.grid` files with kind "risk".
void save_risk_map(const RiskMap& map, const std::string& path);
RiskMap load_risk_map(const std::string& path);

bool is_safe(const SafeSet& safe_set, const ActionSequence& u, const Pose& pose);

// max over check points of (rho(cell) - gamma); +inf when any point is off-grid.
double hard_margin(const SafeSet& safe_set, const ActionSequence& u, const Pose& pose);

struct InterpResult {
  double value = 0.0;
  Vec2 gradient = Vec2::Zero();  // d rho / d point, per meter
};

// Bilinear interpolation of rho between cell centres, clamped at the border
// plus a linear penalty for points outside the grid.
InterpResult interpolate_risk(const RiskSurrogate& s, const Vec2& p);

struct CRiskResult {
  double value = 0.0;
  Eigen::Matrix2Xd gradient;  // d c_risk / d u, robot frame, meters
};

// c_risk = smoothmax_j [ delta * softplus((rho_j - gamma) / delta) - delta * log 2 ]
// over the pose and `subdivisions` points per segment, where rho_j is the
// interpolated risk and smoothmax is the log-mean-exp with temperature delta.
// Each term is <= 0 exactly when rho_j <= gamma, and log-mean-exp never
// exceeds the max, so c_risk <= 0 whenever every point is below gamma.
CRiskResult c_risk(const RiskSurrogate& surrogate, const ActionSequence& u, const Pose& pose);

}  // namespace riskdiff::risk

#endif  // RISKDIFF_RISK_HPP_
