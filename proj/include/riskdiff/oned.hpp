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

#ifndef RISKDIFF_ONED_HPP_
#define RISKDIFF_ONED_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "riskdiff/guidance.hpp"

// One-dimensional toy: annealed Langevin sampling of a Gaussian mixture with
// a forbidden interval, unguided, with a risk penalty, and with projection.
namespace riskdiff::oned {

struct Component {
  double weight = 0.5;
  double mean = 0.0;
  double stddev = 1.0;
};

struct OneDTarget {
  std::vector<Component> components = {{0.5, -2.0, 0.4}, {0.5, 2.0, 0.4}};
  double a = -0.5;
  double b = 1.5;  // a == b means no constraint

  void validate() const;
  bool forbidden(double x) const { return a < b && x >= a && x <= b; }
};

// log of the mixture convolved with N(0, noise^2).
double log_density(const OneDTarget& target, double x, double noise = 0.0);
double analytic_score(const OneDTarget& target, double x, double noise = 0.0);
// Exact probability of [a, b] under the target.
double forbidden_mass(const OneDTarget& target);

// Penalty c(x) = delta * softplus(m(x) / delta) - delta * log 2 with the
// signed depth m(x) = min(x - a, b - x); c <= 0 exactly outside (a, b).
double penalty(const OneDTarget& target, double x, double delta);
double penalty_gradient(const OneDTarget& target, double x, double delta);

std::vector<double> geometric_levels(double first, double last, int count);

struct LangevinConfig {
  // Step at level i is step_size * (sigma_i / sigma_last)^2.
  double step_size = 5e-5;
  int steps_per_level = 100;
  std::vector<double> noise_levels = geometric_levels(1.0, 0.01, 10);
  int samples = 10000;
  double penalty_margin = 0.1;
  std::uint64_t seed = 0;
  int workers = 1;

  void validate() const;
  int total_steps() const { return steps_per_level * static_cast<int>(noise_levels.size()); }
};

struct RunStats {
  long rejections = 0;
  long previous_projections = 0;
  long small_action_projections = 0;
};

// Chain i starts at N(0, sigma_1^2) and draws from derive_seed(seed, i).
// Classifier mode adds -eta * c'(x) to the score. Projection mode applies
// the rejection / previous-iterate / boundary-shrink ladder with the step
// index t = total_steps - k + 1 playing the role of the diffusion step.
std::vector<double> langevin_run(const OneDTarget& target, const LangevinConfig& config,
                                 const guidance::GuidanceMode& mode, RunStats* stats = nullptr);

struct RunSummary {
  std::string label;
  int samples = 0;
  int violations = 0;
  double violation_fraction = 0.0;
  std::vector<double> mode_mass;  // share nearest to each component mean
  double dominant_mass = 0.0;
  double band_mass = 0.0;  // share within `band` outside either end of [a, b]
};

RunSummary summarize(const OneDTarget& target, const std::string& label, const std::vector<double>& samples,
                     double band);

// Two-sample Kolmogorov-Smirnov statistic and its asymptotic 5% critical value.
double ks_statistic(std::vector<double> x, std::vector<double> y);
double ks_critical_5pct(std::size_t n, std::size_t m);

struct DemoRun {
  std::string label;
  guidance::GuidanceMode mode;
  std::vector<double> samples;
  RunStats stats;
};

// Unguided, classifier for every eta, projection.
std::vector<DemoRun> run_demo(const OneDTarget& target, const LangevinConfig& config, const std::vector<double>& etas);

// Writes runs.csv, histograms.csv and histograms.svg into `dir`. The band
// width for boundary mass is two of the smallest noise levels.
void emit_demo_report(const OneDTarget& target, const LangevinConfig& config, const std::vector<DemoRun>& runs,
                      const std::string& dir, int bins = 80);

}  // namespace riskdiff::oned

#endif  // RISKDIFF_ONED_HPP_
