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

#include "riskdiff/risk.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

namespace riskdiff::risk {

void CostParams::validate() const {
  if (!(slope_weight >= 0.0) || !(step_weight >= 0.0))
    throw std::invalid_argument("cost params: weights must be >= 0");
  if (!(slope_critical > 0.0) || !(step_critical > 0.0))
    throw std::invalid_argument("cost params: critical values must be > 0");
  if (!(footprint_radius > 0.0)) throw std::invalid_argument("cost params: footprint radius must be > 0");
}

void RiskConfig::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("risk config: alpha must be in (0, 1]");
  if (!(gamma >= 0.0)) throw std::invalid_argument("risk config: gamma must be >= 0");
  if (mc_samples < 1) throw std::invalid_argument("risk config: mc_samples must be >= 1");
}

bool SafeSet::safe(const Vec2& p) const {
  const auto c = map_->spec.locate(p);
  return c && safe(*c);
}

std::vector<Cell> footprint_offsets(double resolution, double radius) {
  const int r = static_cast<int>(std::floor(radius / resolution));
  const double r2 = (radius / resolution) * (radius / resolution) + 1e-9;
  std::vector<Cell> out;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx)
      if (dx * dx + dy * dy <= r2) out.push_back({dx, dy});
  return out;
}

namespace {

// Cost of one elevation realization over the footprint cells.
double footprint_cost(const std::vector<Vec2>& xy, const std::vector<double>& z, const CostParams& p) {
  const double zmax = *std::max_element(z.begin(), z.end());
  const double zmin = *std::min_element(z.begin(), z.end());
  const double step = zmax - zmin;

  double slope = 0.0;
  if (xy.size() >= 3) {
    const double n = static_cast<double>(xy.size());
    double mx = 0, my = 0, mz = 0;
    for (std::size_t k = 0; k < xy.size(); ++k) {
      mx += xy[k].x();
      my += xy[k].y();
      mz += z[k];
    }
    mx /= n;
    my /= n;
    mz /= n;
    double sxx = 0, sxy = 0, syy = 0, sxz = 0, syz = 0;
    for (std::size_t k = 0; k < xy.size(); ++k) {
      const double dx = xy[k].x() - mx, dy = xy[k].y() - my, dz = z[k] - mz;
      sxx += dx * dx;
      sxy += dx * dy;
      syy += dy * dy;
      sxz += dx * dz;
      syz += dy * dz;
    }
    const double det = sxx * syy - sxy * sxy;
    if (det > 1e-12 * std::max(1.0, sxx * syy)) {
      const double gx = (syy * sxz - sxy * syz) / det;
      const double gy = (sxx * syz - sxy * sxz) / det;
      slope = std::atan(std::hypot(gx, gy));
    }
  }
  const double cost = p.slope_weight * slope / p.slope_critical + p.step_weight * step / p.step_critical;
  return std::max(0.0, cost);
}

struct Footprint {
  std::vector<Vec2> xy;
  std::vector<std::size_t> idx;
};

Footprint gather(const GridSpec& g, const std::vector<Cell>& offsets, Cell cell) {
  Footprint f;
  f.xy.reserve(offsets.size());
  f.idx.reserve(offsets.size());
  for (const Cell& o : offsets) {
    const Cell c{cell.x + o.x, cell.y + o.y};
    if (!g.contains(c)) continue;
    f.xy.emplace_back(o.x * g.resolution, o.y * g.resolution);
    f.idx.push_back(g.index(c));
  }
  return f;
}

double sample_with(const terrain::ElevationBelief& b, const CostParams& p, const Footprint& f,
                   std::vector<double>& z, Rng& rng) {
  z.resize(f.idx.size());
  for (std::size_t k = 0; k < f.idx.size(); ++k)
    z[k] = b.mean[f.idx[k]] + static_cast<double>(b.stddev[f.idx[k]]) * rng.normal();
  return footprint_cost(f.xy, z, p);
}

}  // namespace

double cost_sample(const terrain::ElevationBelief& belief, const CostParams& params, Cell cell, Rng& rng) {
  if (!belief.spec.contains(cell)) throw std::out_of_range("cost_sample: cell out of bounds");
  params.validate();
  const Footprint f = gather(belief.spec, footprint_offsets(belief.spec.resolution, params.footprint_radius), cell);
  std::vector<double> z;
  return sample_with(belief, params, f, z, rng);
}

double mean_cost(const terrain::ElevationBelief& belief, const CostParams& params, Cell cell) {
  if (!belief.spec.contains(cell)) throw std::out_of_range("mean_cost: cell out of bounds");
  const Footprint f = gather(belief.spec, footprint_offsets(belief.spec.resolution, params.footprint_radius), cell);
  std::vector<double> z(f.idx.size());
  for (std::size_t k = 0; k < f.idx.size(); ++k) z[k] = belief.mean[f.idx[k]];
  return footprint_cost(f.xy, z, params);
}

double cvar(std::span<const double> samples, double alpha) {
  if (samples.empty()) throw std::invalid_argument("cvar: empty sample set");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("cvar: alpha must be in (0, 1]");
  std::vector<double> s(samples.begin(), samples.end());
  std::sort(s.begin(), s.end());
  const double n = static_cast<double>(s.size());
  if (alpha >= 1.0) return s.back();

  // Probability mass 1/n per sample; keep the top (1 - alpha) of it. The
  // sample straddling the alpha-quantile contributes its partial mass.
  const double tail = (1.0 - alpha) * n;  // tail mass in units of samples
  double acc = 0.0;
  double remaining = tail;
  for (std::size_t k = s.size(); k-- > 0 && remaining > 0.0;) {
    const double w = std::min(1.0, remaining);
    acc += w * s[k];
    remaining -= w;
  }
  return acc / tail;
}

RiskMap build_risk_map(const terrain::ElevationBelief& belief, const CostParams& params,
                       const RiskConfig& config, int workers) {
  belief.validate();
  params.validate();
  config.validate();
  const GridSpec& g = belief.spec;
  const auto offsets = footprint_offsets(g.resolution, params.footprint_radius);

  RiskMap map{g, std::vector<float>(g.cell_count()), config};
  auto run = [&](std::size_t begin, std::size_t end) {
    std::vector<double> costs(static_cast<std::size_t>(config.mc_samples));
    std::vector<double> z;
    for (std::size_t idx = begin; idx < end; ++idx) {
      const Footprint f = gather(g, offsets, g.cell_at(idx));
      Rng rng(derive_seed(config.seed, idx));
      for (double& c : costs) c = sample_with(belief, params, f, z, rng);
      map.rho[idx] = static_cast<float>(cvar(costs, config.alpha));
    }
  };

  const std::size_t n = g.cell_count();
  const std::size_t w = static_cast<std::size_t>(std::clamp(workers, 1, 64));
  if (w == 1) {
    run(0, n);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < w; ++t) pool.emplace_back(run, n * t / w, n * (t + 1) / w);
    for (auto& th : pool) th.join();
  }
  return map;
}

void save_risk_map(const RiskMap& map, const std::string& path) {
  GridFile f;
  f.kind = "risk";
  f.spec = map.spec;
  f.channels = {map.rho};
  f.extra["alpha"] = format_double(map.config.alpha);
  f.extra["gamma"] = format_double(map.config.gamma);
  f.extra["mc_samples"] = std::to_string(map.config.mc_samples);
  f.extra["seed"] = std::to_string(map.config.seed);
  write_grid_file(path, f);
}

RiskMap load_risk_map(const std::string& path) {
  GridFile f = read_grid_file(path);
  if (f.kind != "risk") throw FormatError("expected a risk grid, got '" + f.kind + "'");
  if (f.channels.size() != 1) throw FormatError("risk grid needs exactly one channel");
  RiskMap m;
  m.spec = f.spec;
  m.rho = std::move(f.channels[0]);
  for (float r : m.rho)
    if (r < 0.0f) throw FormatError("negative risk in " + path);
  try {
    if (f.extra.count("alpha")) m.config.alpha = parse_double(f.extra["alpha"]);
    if (f.extra.count("gamma")) m.config.gamma = parse_double(f.extra["gamma"]);
    if (f.extra.count("mc_samples")) m.config.mc_samples = std::stoi(f.extra["mc_samples"]);
    if (f.extra.count("seed")) m.config.seed = std::stoull(f.extra["seed"]);
    m.config.validate();
  } catch (const std::logic_error& e) {
    throw FormatError(std::string("bad risk header: ") + e.what());
  }
  return m;
}

bool is_safe(const SafeSet& safe_set, const ActionSequence& u, const Pose& pose) {
  const double res = safe_set.map().spec.resolution;
  if (!safe_set.safe(pose.position())) return false;
  if (u.cols() == 0) return true;
  const Eigen::Matrix2Xd w = to_world(pose, u);
  std::vector<Vec2> pts;
  Vec2 prev = pose.position();
  for (Eigen::Index i = 0; i < w.cols(); ++i) {
    pts.clear();
    const Vec2 next = w.col(i);
    append_segment_points(prev, next, res, pts);
    for (const Vec2& p : pts)
      if (!safe_set.safe(p)) return false;
    prev = next;
  }
  return true;
}

double hard_margin(const SafeSet& safe_set, const ActionSequence& u, const Pose& pose) {
  const RiskMap& m = safe_set.map();
  double worst = -std::numeric_limits<double>::infinity();
  for (const Vec2& p : check_points(pose, u, m.spec.resolution)) {
    const auto c = m.spec.locate(p);
    if (!c) return std::numeric_limits<double>::infinity();
    worst = std::max(worst, static_cast<double>(m.at(*c)) - safe_set.gamma());
  }
  return worst;
}

InterpResult interpolate_risk(const RiskSurrogate& s, const Vec2& p) {
  const RiskMap& m = *s.map;
  const GridSpec& g = m.spec;
  InterpResult r;

  // Continuous cell-centre coordinates.
  const double gx = (p.x() - g.origin_x) / g.resolution - 0.5;
  const double gy = (p.y() - g.origin_y) / g.resolution - 0.5;
  const double cx = std::clamp(gx, 0.0, static_cast<double>(g.width - 1));
  const double cy = std::clamp(gy, 0.0, static_cast<double>(g.height - 1));
  const int i0 = std::min(static_cast<int>(cx), std::max(0, g.width - 2));
  const int j0 = std::min(static_cast<int>(cy), std::max(0, g.height - 2));
  const int i1 = std::min(i0 + 1, g.width - 1);
  const int j1 = std::min(j0 + 1, g.height - 1);
  const double fx = cx - i0, fy = cy - j0;
  const double r00 = m.at({i0, j0}), r10 = m.at({i1, j0});
  const double r01 = m.at({i0, j1}), r11 = m.at({i1, j1});
  r.value = (1 - fy) * ((1 - fx) * r00 + fx * r10) + fy * ((1 - fx) * r01 + fx * r11);
  if (gx == cx && i1 != i0) r.gradient.x() = ((1 - fy) * (r10 - r00) + fy * (r11 - r01)) / g.resolution;
  if (gy == cy && j1 != j0) r.gradient.y() = ((1 - fx) * (r01 - r00) + fx * (r11 - r10)) / g.resolution;

  // Outside the grid the risk keeps growing with distance from its edge.
  const double x0 = g.origin_x, x1 = g.origin_x + g.extent_x();
  const double y0 = g.origin_y, y1 = g.origin_y + g.extent_y();
  const double ox = p.x() < x0 ? x0 - p.x() : (p.x() > x1 ? p.x() - x1 : 0.0);
  const double oy = p.y() < y0 ? y0 - p.y() : (p.y() > y1 ? p.y() - y1 : 0.0);
  const double d = std::hypot(ox, oy);
  if (d > 0.0) {
    r.value += s.outside_gain * d;
    const double sx = p.x() < x0 ? -1.0 : 1.0, sy = p.y() < y0 ? -1.0 : 1.0;
    r.gradient.x() += s.outside_gain * sx * ox / d;
    r.gradient.y() += s.outside_gain * sy * oy / d;
  }
  return r;
}

namespace {

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

CRiskResult c_risk(const RiskSurrogate& s, const ActionSequence& u, const Pose& pose) {
  if (s.map == nullptr) throw std::invalid_argument("c_risk: surrogate has no risk map");
  const double delta = s.margin;
  const int sub = std::max(1, s.subdivisions);
  const double c = std::cos(pose.heading), sn = std::sin(pose.heading);
  const Eigen::Matrix2Xd w = to_world(pose, u);

  // Check points with their dependence on the waypoints:
  // p = (1 - f) * w[i-1] + f * w[i], where w[-1] is the pose.
  struct Pt {
    double value;
    Vec2 grad;  // d v / d p
    Eigen::Index seg;
    double f;
  };
  std::vector<Pt> pts;
  pts.reserve(1 + static_cast<std::size_t>(sub * u.cols()));
  auto term = [&](const Vec2& p, Eigen::Index seg, double f) {
    const InterpResult ir = interpolate_risk(s, p);
    const double x = (ir.value - s.gamma) / delta;
    pts.push_back({delta * softplus(x) - delta * std::log(2.0), sigmoid(x) * ir.gradient, seg, f});
  };
  term(pose.position(), -1, 0.0);
  Vec2 prev = pose.position();
  for (Eigen::Index i = 0; i < w.cols(); ++i) {
    const Vec2 next = w.col(i);
    for (int k = 1; k <= sub; ++k) {
      const double f = static_cast<double>(k) / sub;
      term(prev + f * (next - prev), i, f);
    }
    prev = next;
  }

  double vmax = -std::numeric_limits<double>::infinity();
  for (const Pt& p : pts) vmax = std::max(vmax, p.value);
  double z = 0.0;
  for (const Pt& p : pts) z += std::exp((p.value - vmax) / delta);
  CRiskResult out;
  out.value = vmax + delta * std::log(z / static_cast<double>(pts.size()));
  out.gradient = Eigen::Matrix2Xd::Zero(2, u.cols());
  for (const Pt& p : pts) {
    if (p.seg < 0) continue;
    const double weight = std::exp((p.value - vmax) / delta) / z;
    // World-frame gradient rotated back into the robot frame.
    const Vec2 gw = weight * p.grad;
    const Vec2 gr(c * gw.x() + sn * gw.y(), -sn * gw.x() + c * gw.y());
    out.gradient.col(p.seg) += p.f * gr;
    if (p.seg > 0) out.gradient.col(p.seg - 1) += (1.0 - p.f) * gr;
  }
  return out;
}

}  // namespace riskdiff::risk
