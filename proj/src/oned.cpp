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

#include "riskdiff/oned.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace riskdiff::oned {

void OneDTarget::validate() const {
  if (components.empty()) throw std::invalid_argument("oned target: no components");
  double total = 0.0;
  for (const auto& c : components) {
    if (!(c.weight > 0.0)) throw std::invalid_argument("oned target: weights must be > 0");
    if (!(c.stddev > 0.0)) throw std::invalid_argument("oned target: stds must be > 0");
    if (!std::isfinite(c.mean)) throw std::invalid_argument("oned target: non-finite mean");
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("oned target: weights must sum to 1");
  if (!(a <= b)) throw std::invalid_argument("oned target: need a <= b");
}

namespace {

// Per-component log(w_k N(x; mu_k, v_k)) with v_k = std_k^2 + noise^2.
std::vector<double> log_terms(const OneDTarget& t, double x, double noise) {
  std::vector<double> out;
  out.reserve(t.components.size());
  for (const auto& c : t.components) {
    const double v = c.stddev * c.stddev + noise * noise;
    const double d = x - c.mean;
    out.push_back(std::log(c.weight) - 0.5 * std::log(2.0 * std::numbers::pi * v) - 0.5 * d * d / v);
  }
  return out;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

double log_density(const OneDTarget& target, double x, double noise) {
  const auto lt = log_terms(target, x, noise);
  const double m = *std::max_element(lt.begin(), lt.end());
  double s = 0.0;
  for (double v : lt) s += std::exp(v - m);
  return m + std::log(s);
}

double analytic_score(const OneDTarget& target, double x, double noise) {
  const auto lt = log_terms(target, x, noise);
  const double m = *std::max_element(lt.begin(), lt.end());
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < lt.size(); ++k) {
    const auto& c = target.components[k];
    const double r = std::exp(lt[k] - m);
    num += r * (-(x - c.mean) / (c.stddev * c.stddev + noise * noise));
    den += r;
  }
  return num / den;
}

double forbidden_mass(const OneDTarget& target) {
  if (!(target.a < target.b)) return 0.0;
  double p = 0.0;
  for (const auto& c : target.components)
    p += c.weight * (normal_cdf((target.b - c.mean) / c.stddev) - normal_cdf((target.a - c.mean) / c.stddev));
  return p;
}

double penalty(const OneDTarget& target, double x, double delta) {
  if (!(target.a < target.b)) return 0.0;
  const double m = std::min(x - target.a, target.b - x);
  return delta * softplus(m / delta) - delta * std::numbers::ln2;
}

double penalty_gradient(const OneDTarget& target, double x, double delta) {
  if (!(target.a < target.b)) return 0.0;
  const double left = x - target.a, right = target.b - x;
  const double m = std::min(left, right);
  return sigmoid(m / delta) * (left < right ? 1.0 : -1.0);
}

std::vector<double> geometric_levels(double first, double last, int count) {
  if (count < 1 || !(first > 0.0) || !(last > 0.0)) throw std::invalid_argument("geometric_levels: bad arguments");
  std::vector<double> out(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i)
    out[static_cast<std::size_t>(i)] = count == 1 ? first : first * std::pow(last / first, static_cast<double>(i) / (count - 1));
  return out;
}

void LangevinConfig::validate() const {
  if (!(step_size > 0.0)) throw std::invalid_argument("langevin: step size must be > 0");
  if (steps_per_level < 1) throw std::invalid_argument("langevin: steps per level must be >= 1");
  if (noise_levels.empty()) throw std::invalid_argument("langevin: need at least one noise level");
  for (double s : noise_levels)
    if (!(s > 0.0)) throw std::invalid_argument("langevin: noise levels must be > 0");
  if (samples < 1) throw std::invalid_argument("langevin: samples must be >= 1");
  if (!(penalty_margin > 0.0)) throw std::invalid_argument("langevin: penalty margin must be > 0");
}

namespace {

double one_chain(const OneDTarget& target, const LangevinConfig& cfg, const guidance::GuidanceMode& mode, Rng& rng,
                 RunStats& st) {
  const double last = cfg.noise_levels.back();
  const int total = cfg.total_steps();
  const auto* cls = std::get_if<guidance::Classifier>(&mode);
  const auto* proj = std::get_if<guidance::Projection>(&mode);
  const double eta = cls ? cls->eta : 0.0;
  // Boundary points just outside the interval, the targets of the last rung.
  const double nudge = 1e-4 * (target.b - target.a);

  double x = cfg.noise_levels.front() * rng.normal();
  int k = 0;
  for (double sigma : cfg.noise_levels) {
    const double eps = cfg.step_size * (sigma / last) * (sigma / last);
    const double root = std::sqrt(eps);
    for (int s = 0; s < cfg.steps_per_level; ++s) {
      ++k;
      double drift = analytic_score(target, x, sigma);
      if (eta != 0.0) drift -= eta * penalty_gradient(target, x, cfg.penalty_margin);
      const double mean = x + 0.5 * eps * drift;
      double cand = mean + root * rng.normal();
      if (proj && target.forbidden(cand)) {
        const int t = total - k + 1;
        if (t > proj->t2) {
          // Rejection sample
          for (int r = 0; r < proj->max_rejections && target.forbidden(cand); ++r) {
            cand = mean + root * rng.normal();
            ++st.rejections;
          }
        }
        if (target.forbidden(cand) && t > proj->t1) {
          // Previous projection
          for (int p = 0; p < proj->max_projections && target.forbidden(cand); ++p) {
            cand = (1.0 - proj->beta_mix) * cand + proj->beta_mix * x;
            ++st.previous_projections;
          }
        }
        if (target.forbidden(cand)) {
          // Small-action projection toward the nearest safe boundary point.
          const double anchor = cand - target.a < target.b - cand ? target.a - nudge : target.b + nudge;
          while (target.forbidden(cand)) {
            cand = (1.0 - proj->beta_mix) * cand + proj->beta_mix * anchor;
            ++st.small_action_projections;
          }
        }
      }
      x = cand;
    }
  }
  return x;
}

}  // namespace

std::vector<double> langevin_run(const OneDTarget& target, const LangevinConfig& config,
                                 const guidance::GuidanceMode& mode, RunStats* stats) {
  target.validate();
  config.validate();
  if (const auto* p = std::get_if<guidance::Projection>(&mode)) p->validate(config.total_steps());
  if (const auto* c = std::get_if<guidance::Classifier>(&mode); c && !(c->eta >= 0.0))
    throw std::invalid_argument("classifier guidance: eta must be >= 0");

  const int n = config.samples;
  const int w = std::clamp(config.workers, 1, 64);
  std::vector<double> out(static_cast<std::size_t>(n));
  std::vector<RunStats> per(static_cast<std::size_t>(w));
  auto work = [&](int t) {
    for (int i = t; i < n; i += w) {
      Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(i)));
      out[static_cast<std::size_t>(i)] = one_chain(target, config, mode, rng, per[static_cast<std::size_t>(t)]);
    }
  };
  if (w == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < w; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }
  if (stats) {
    *stats = {};
    for (const auto& s : per) {
      stats->rejections += s.rejections;
      stats->previous_projections += s.previous_projections;
      stats->small_action_projections += s.small_action_projections;
    }
  }
  return out;
}

RunSummary summarize(const OneDTarget& target, const std::string& label, const std::vector<double>& samples,
                     double band) {
  RunSummary s;
  s.label = label;
  s.samples = static_cast<int>(samples.size());
  s.mode_mass.assign(target.components.size(), 0.0);
  int in_band = 0;
  for (double x : samples) {
    if (target.forbidden(x)) ++s.violations;
    std::size_t best = 0;
    for (std::size_t k = 1; k < target.components.size(); ++k)
      if (std::abs(x - target.components[k].mean) < std::abs(x - target.components[best].mean)) best = k;
    s.mode_mass[best] += 1.0;
    if (target.a < target.b && ((x < target.a && x >= target.a - band) || (x > target.b && x <= target.b + band)))
      ++in_band;
  }
  if (s.samples > 0) {
    s.violation_fraction = static_cast<double>(s.violations) / s.samples;
    for (double& m : s.mode_mass) m /= s.samples;
    s.band_mass = static_cast<double>(in_band) / s.samples;
  }
  s.dominant_mass = *std::max_element(s.mode_mass.begin(), s.mode_mass.end());
  return s;
}

double ks_statistic(std::vector<double> x, std::vector<double> y) {
  if (x.empty() || y.empty()) throw std::invalid_argument("ks_statistic: empty sample");
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double n = static_cast<double>(x.size()), m = static_cast<double>(y.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < x.size() && j < y.size()) {
    const double v = std::min(x[i], y[j]);
    while (i < x.size() && x[i] == v) ++i;
    while (j < y.size() && y[j] == v) ++j;
    d = std::max(d, std::abs(i / n - j / m));
  }
  return d;
}

double ks_critical_5pct(std::size_t n, std::size_t m) {
  const double a = static_cast<double>(n), b = static_cast<double>(m);
  return 1.358 * std::sqrt((a + b) / (a * b));
}

std::vector<DemoRun> run_demo(const OneDTarget& target, const LangevinConfig& config, const std::vector<double>& etas) {
  std::vector<DemoRun> runs;
  auto add = [&](std::string label, guidance::GuidanceMode mode) {
    DemoRun r{std::move(label), mode, {}, {}};
    r.samples = langevin_run(target, config, mode, &r.stats);
    runs.push_back(std::move(r));
  };
  add("unguided", guidance::Unguided{});
  for (double eta : etas) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "classifier_eta_%g", eta);
    add(buf, guidance::Classifier{eta});
  }
  add("projection", guidance::Projection::defaults_for(config.total_steps()));
  return runs;
}

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

void emit_demo_report(const OneDTarget& target, const LangevinConfig& config, const std::vector<DemoRun>& runs,
                      const std::string& dir, int bins) {
  if (runs.empty()) throw std::invalid_argument("demo report: no runs");
  if (bins < 1) throw std::invalid_argument("demo report: bins must be >= 1");
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const double band = 2.0 * config.noise_levels.back();

  std::ofstream csv(fs::path(dir) / "runs.csv");
  csv << "run,mode,samples,violations,violation_fraction,analytic_forbidden_mass";
  for (std::size_t k = 0; k < target.components.size(); ++k) csv << ",mode" << k << "_mass";
  csv << ",dominant_mass,boundary_band_mass,rejections,previous_projections,small_action_projections\n";
  for (const auto& r : runs) {
    const RunSummary s = summarize(target, r.label, r.samples, band);
    csv << r.label << ',' << guidance::describe(r.mode) << ',' << s.samples << ',' << s.violations << ','
        << num(s.violation_fraction) << ',' << num(forbidden_mass(target));
    for (double m : s.mode_mass) csv << ',' << num(m);
    csv << ',' << num(s.dominant_mass) << ',' << num(s.band_mass) << ',' << r.stats.rejections << ','
        << r.stats.previous_projections << ',' << r.stats.small_action_projections << '\n';
  }
  if (!csv) throw std::runtime_error("cannot write runs.csv in " + dir);

  // Shared bin edges over every sample so each histogram sums to its count.
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& r : runs)
    for (double x : r.samples) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  if (!(hi > lo)) hi = lo + 1.0;
  const double width = (hi - lo) / bins;
  std::vector<std::vector<int>> counts(runs.size(), std::vector<int>(static_cast<std::size_t>(bins), 0));
  for (std::size_t r = 0; r < runs.size(); ++r)
    for (double x : runs[r].samples) {
      const int b = std::clamp(static_cast<int>((x - lo) / width), 0, bins - 1);
      ++counts[r][static_cast<std::size_t>(b)];
    }

  std::ofstream hcsv(fs::path(dir) / "histograms.csv");
  hcsv << "run,bin,lo,hi,count\n";
  for (std::size_t r = 0; r < runs.size(); ++r)
    for (int b = 0; b < bins; ++b)
      hcsv << runs[r].label << ',' << b << ',' << num(lo + b * width) << ',' << num(lo + (b + 1) * width) << ','
           << counts[r][static_cast<std::size_t>(b)] << '\n';
  if (!hcsv) throw std::runtime_error("cannot write histograms.csv in " + dir);

  const int pw = 640, ph = 120, margin = 30;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << pw + 2 * margin << "\" height=\""
      << runs.size() * (ph + margin) + margin << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  auto sx = [&](double x) { return margin + (x - lo) / (hi - lo) * pw; };
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const double top = margin + r * (ph + margin);
    const int peak = std::max(1, *std::max_element(counts[r].begin(), counts[r].end()));
    svg << "<text x=\"" << margin << "\" y=\"" << top - 6 << "\">" << runs[r].label << "</text>\n";
    if (target.a < target.b)
      svg << "<rect x=\"" << num(sx(target.a)) << "\" y=\"" << top << "\" width=\"" << num(sx(target.b) - sx(target.a))
          << "\" height=\"" << ph << "\" fill=\"#f4c7c3\"/>\n";
    for (int b = 0; b < bins; ++b) {
      const double h = static_cast<double>(counts[r][static_cast<std::size_t>(b)]) / peak * ph;
      svg << "<rect x=\"" << num(sx(lo + b * width)) << "\" y=\"" << num(top + ph - h) << "\" width=\""
          << num(pw / static_cast<double>(bins)) << "\" height=\"" << num(h) << "\" fill=\"#4a78b5\"/>\n";
    }
    svg << "<line x1=\"" << margin << "\" y1=\"" << top + ph << "\" x2=\"" << margin + pw << "\" y2=\"" << top + ph
        << "\" stroke=\"black\"/>\n";
  }
  svg << "</svg>\n";
  std::ofstream(fs::path(dir) / "histograms.svg") << svg.str();
}

}  // namespace riskdiff::oned
