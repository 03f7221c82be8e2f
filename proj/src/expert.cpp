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

#include "riskdiff/expert.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <queue>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace riskdiff::expert {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Every stride-1 training window paired with its base waypoint index.
std::vector<std::pair<std::size_t, std::pair<diffusion::Context, ActionSequence>>> indexed_pairs(const DemoEpisode& ep) {
  std::vector<std::pair<std::size_t, std::pair<diffusion::Context, ActionSequence>>> out;
  std::size_t i = 0;
  for (auto& p : episode_pairs(ep, diffusion::kWaypoints, 1)) out.emplace_back(i++, std::move(p));
  return out;
}

bool segment_safe(const risk::SafeSet& safe, const Vec2& a, const Vec2& b) {
  std::vector<Vec2> pts;
  append_segment_points(a, b, safe.map().spec.resolution, pts);
  for (const Vec2& p : pts)
    if (!safe.safe(p)) return false;
  return true;
}

}  // namespace

PlanResult plan_path(const risk::RiskMap& map, double gamma, const Vec2& start, const Vec2& goal) {
  const GridSpec& g = map.spec;
  const risk::SafeSet safe(map, gamma);
  const auto sc = g.locate(start);
  const auto gc = g.locate(goal);
  if (!sc || !safe.safe(*sc)) throw std::invalid_argument("plan_path: start is not in a safe cell");
  if (!gc || !safe.safe(*gc)) throw std::invalid_argument("plan_path: goal is not in a safe cell");

  const std::size_t n = g.cell_count();
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> parent(n, n);
  std::vector<char> done(n, 0);
  using Item = std::pair<double, std::size_t>;  // (cost, index) -> lexicographic tie-break
  std::priority_queue<Item, std::vector<Item>, std::greater<>> open;
  const std::size_t s_idx = g.index(*sc), g_idx = g.index(*gc);
  dist[s_idx] = 0.0;
  open.push({0.0, s_idx});
  constexpr int kDx[8] = {1, -1, 0, 0, 1, 1, -1, -1};
  constexpr int kDy[8] = {0, 0, 1, -1, 1, -1, 1, -1};
  while (!open.empty()) {
    const auto [d, idx] = open.top();
    open.pop();
    if (done[idx]) continue;
    done[idx] = 1;
    if (idx == g_idx) break;
    const Cell c = g.cell_at(idx);
    for (int k = 0; k < 8; ++k) {
      const Cell nb{c.x + kDx[k], c.y + kDy[k]};
      if (!safe.safe(nb)) continue;
      const bool diag = kDx[k] != 0 && kDy[k] != 0;
      if (diag && (!safe.safe(Cell{c.x + kDx[k], c.y}) || !safe.safe(Cell{c.x, c.y + kDy[k]}))) continue;
      const double nd = d + (diag ? std::sqrt(2.0) : 1.0);
      const std::size_t ni = g.index(nb);
      if (nd < dist[ni] || (nd == dist[ni] && idx < parent[ni] && !done[ni])) {
        dist[ni] = nd;
        parent[ni] = idx;
        open.push({nd, ni});
      }
    }
  }
  if (!done[g_idx]) throw NoPath("plan_path: goal unreachable through the safe set");

  PlanResult r;
  r.grid_cost = dist[g_idx];
  for (std::size_t i = g_idx; i != n; i = parent[i]) r.cells.push_back(g.cell_at(i));
  std::reverse(r.cells.begin(), r.cells.end());

  // Raw vertices: start, interior cell centres, goal.
  std::vector<Vec2> raw{start};
  for (std::size_t i = 1; i + 1 < r.cells.size(); ++i) raw.push_back(g.center(r.cells[i]));
  if (goal != start) raw.push_back(goal);

  // Line-of-sight shortcutting.
  r.polyline.push_back(raw.front());
  std::size_t i = 0;
  while (i + 1 < raw.size()) {
    std::size_t j = raw.size() - 1;
    while (j > i + 1 && !segment_safe(safe, raw[i], raw[j])) --j;
    r.polyline.push_back(raw[j]);
    i = j;
  }
  return r;
}

std::vector<Vec2> resample_waypoints(const std::vector<Vec2>& polyline, double spacing, double angle_threshold) {
  if (polyline.empty()) throw std::invalid_argument("resample_waypoints: empty polyline");
  if (!(spacing > 0.0)) throw std::invalid_argument("resample_waypoints: spacing must be > 0");
  // Drop repeated vertices so headings are defined.
  std::vector<Vec2> v{polyline.front()};
  for (std::size_t i = 1; i < polyline.size(); ++i)
    if ((polyline[i] - v.back()).norm() > 1e-12) v.push_back(polyline[i]);

  std::vector<Vec2> out{v.front()};
  double since_last = 0.0;  // arc length since the last emitted sample
  constexpr double kEps = 1e-9;
  for (std::size_t i = 0; i + 1 < v.size(); ++i) {
    const Vec2 a = v[i], b = v[i + 1];
    const double len = (b - a).norm();
    const Vec2 dir = (b - a) / len;
    double s = spacing - since_last;  // position of the next sample on this segment
    while (s <= len + kEps) {
      const double sc = std::min(s, len);
      out.push_back(a + sc * dir);
      s += spacing;
    }
    since_last = len - (s - spacing);
    if (since_last < kEps) since_last = 0.0;
    if (i + 2 < v.size()) {
      const Vec2 next_dir = (v[i + 2] - b).normalized();
      const double turn = std::acos(std::clamp(dir.dot(next_dir), -1.0, 1.0));
      if (turn > angle_threshold && since_last > 0.0) {
        out.push_back(b);
        since_last = 0.0;
      }
    }
  }
  if ((out.back() - v.back()).norm() > kEps) out.push_back(v.back());
  return out;
}

DemoEpisode make_demo_episode(const risk::RiskMap& map, const PlanResult& plan, const Vec2& goal,
                              double start_heading, double angle_threshold) {
  DemoEpisode ep;
  ep.path = plan.polyline;
  ep.goal = goal;
  ep.waypoints = resample_waypoints(plan.polyline, diffusion::kWaypointSpacing, angle_threshold);
  const std::size_t n = ep.waypoints.size();
  ep.headings.resize(n, start_heading);
  for (std::size_t i = 1; i < n; ++i) {
    const Vec2 d = ep.waypoints[i] - ep.waypoints[i - 1];
    ep.headings[i] = std::atan2(d.y(), d.x());
  }
  ep.start = Pose{ep.waypoints[0].x(), ep.waypoints[0].y(), start_heading};
  for (std::size_t i = 0; i < n; ++i)
    ep.contexts.push_back(
        diffusion::make_context(map, Pose{ep.waypoints[i].x(), ep.waypoints[i].y(), ep.headings[i]}, goal));
  return ep;
}

std::vector<std::pair<diffusion::Context, ActionSequence>> episode_pairs(const DemoEpisode& ep, int n_waypoints,
                                                                          int stride) {
  if (n_waypoints < 1 || stride < 1) throw std::invalid_argument("episode_pairs: n_waypoints and stride must be >= 1");
  std::vector<std::pair<diffusion::Context, ActionSequence>> out;
  const int len = static_cast<int>(ep.waypoints.size());
  for (int i = 0; i + n_waypoints <= len; i += stride) {
    const Vec2 base = ep.waypoints[static_cast<std::size_t>(i)];
    const double h = ep.headings[static_cast<std::size_t>(i)];
    const double c = std::cos(h), s = std::sin(h);
    ActionSequence u(2, n_waypoints);
    for (int k = 0; k < n_waypoints; ++k) {
      const int j = std::min(i + 1 + k, len - 1);
      const Vec2 d = ep.waypoints[static_cast<std::size_t>(j)] - base;
      u(0, k) = c * d.x() + s * d.y();
      u(1, k) = -s * d.x() + c * d.y();
    }
    out.emplace_back(ep.contexts[static_cast<std::size_t>(i)], std::move(u));
  }
  return out;
}

DatasetBuild make_dataset(const std::vector<DemoEpisode>& episodes, int n_waypoints, int stride) {
  if (episodes.empty()) throw std::invalid_argument("make_dataset: no episodes");
  DatasetBuild b;
  for (const DemoEpisode& ep : episodes) {
    if (static_cast<int>(ep.waypoints.size()) < n_waypoints) {
      ++b.skipped;
      continue;
    }
    for (auto& [ctx, u] : episode_pairs(ep, n_waypoints, stride)) {
      b.dataset.contexts.push_back(std::move(ctx));
      b.dataset.actions.push_back(std::move(u));
    }
  }
  if (b.dataset.actions.empty()) throw std::invalid_argument("make_dataset: every episode was too short");
  b.dataset.normalizer = diffusion::fit_normalizer(b.dataset.actions);
  return b;
}

RecipeFamily RecipeFamily::training() {
  using terrain::HazardShape;
  RecipeFamily f;
  f.hazards = {
      {HazardShape::kStep, 1, 2, 0.6, 1.4, 0.25, 0.45, 0.5},
      {HazardShape::kRockField, 0, 2, 0.6, 1.2, 0.2, 0.35, 0.5},
      {HazardShape::kRamp, 0, 1, 0.8, 1.4, 0.3, 0.6, 0.0},
  };
  return f;
}

RecipeFamily RecipeFamily::pit_suite() {
  using terrain::HazardShape;
  RecipeFamily f;
  f.hazards = {
      {HazardShape::kPit, 1, 1, 1.0, 1.6, 0.3, 0.5, 1.0},
      {HazardShape::kStep, 0, 1, 0.6, 1.0, 0.25, 0.45, 0.0},
  };
  return f;
}

Task draw_task(const RecipeFamily& f, Rng& rng) {
  f.grid.validate();
  const double ex = f.grid.extent_x(), ey = f.grid.extent_y();
  Task task;
  Vec2 s, g;
  for (int tries = 0;; ++tries) {
    s = Vec2(f.grid.origin_x + rng.uniform(f.border, ex - f.border), f.grid.origin_y + rng.uniform(f.border, ey - f.border));
    g = Vec2(f.grid.origin_x + rng.uniform(f.border, ex - f.border), f.grid.origin_y + rng.uniform(f.border, ey - f.border));
    if ((g - s).norm() >= f.min_distance) break;
    if (tries > 10000) throw std::invalid_argument("recipe family: min_distance unreachable on this grid");
  }
  const Vec2 dir = (g - s).normalized();
  const Vec2 normal(-dir.y(), dir.x());
  task.start = Pose{s.x(), s.y(), std::atan2(dir.y(), dir.x())};
  task.goal = g;

  terrain::TerrainRecipe& r = task.recipe;
  r.seed = rng.next();
  r.grid = f.grid;
  r.roughness = f.roughness;
  r.roughness_spacing = f.roughness_spacing;
  r.std_floor = f.std_floor;
  r.edge_uncertainty = f.edge_uncertainty;
  const double x0 = f.grid.origin_x, y0 = f.grid.origin_y;
  for (const HazardRange& hr : f.hazards) {
    const int count = hr.min_count + static_cast<int>(rng.below(static_cast<std::uint64_t>(hr.max_count - hr.min_count + 1)));
    for (int k = 0; k < count; ++k) {
      for (int tries = 0; tries < 50; ++tries) {
        terrain::Hazard h;
        h.shape = hr.shape;
        h.size_x = rng.uniform(hr.min_size, hr.max_size);
        h.size_y = rng.uniform(hr.min_size, hr.max_size);
        h.height = rng.uniform(hr.min_height, hr.max_height);
        Vec2 c;
        if (rng.uniform() < hr.on_route) {
          c = s + rng.uniform(0.35, 0.65) * (g - s) + 0.15 * rng.normal() * normal;
        } else {
          c = Vec2(x0 + rng.uniform(0.0, ex), y0 + rng.uniform(0.0, ey));
        }
        h.center_x = std::clamp(c.x(), x0 + 0.5 * h.size_x, x0 + ex - 0.5 * h.size_x);
        h.center_y = std::clamp(c.y(), y0 + 0.5 * h.size_y, y0 + ey - 0.5 * h.size_y);
        // Keep start and goal clear of the hazard (plus footprint and edge halo).
        auto clear = [&](const Vec2& p) {
          return std::abs(p.x() - h.center_x) > 0.5 * h.size_x + 0.5 ||
                 std::abs(p.y() - h.center_y) > 0.5 * h.size_y + 0.5;
        };
        if (clear(s) && clear(g)) {
          r.hazards.push_back(h);
          break;
        }
      }
    }
  }
  return task;
}

std::vector<DemoEpisode> generate_episodes(const DataGenConfig& config) {
  config.cost.validate();
  config.risk.validate();
  const int n = config.episodes;
  std::vector<std::optional<DemoEpisode>> slots(static_cast<std::size_t>(std::max(0, n)));

  auto one = [&](int i) -> std::optional<DemoEpisode> {
    Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(i)));
    for (int attempt = 0; attempt < config.max_attempts_per_episode; ++attempt) {
      const Task task = draw_task(config.family, rng);
      const auto belief = terrain::generate_terrain(task.recipe);
      risk::RiskConfig rc = config.risk;
      rc.seed = derive_seed(task.recipe.seed, 1);
      const risk::RiskMap map = risk::build_risk_map(belief, config.cost, rc);
      const risk::SafeSet safe(map, rc.gamma);
      if (!safe.safe(task.start.position()) || !safe.safe(task.goal)) continue;
      PlanResult plan;
      try {
        plan = plan_path(map, rc.gamma, task.start.position(), task.goal);
      } catch (const NoPath&) {
        continue;
      }
      // Chords across gentle corners can clip an unsafe cell; fall back to
      // keeping every vertex before giving up on the attempt.
      for (double thr : {config.angle_threshold, 0.0}) {
        DemoEpisode ep = make_demo_episode(map, plan, task.goal, task.start.heading, thr);
        bool ok = true;
        for (const auto& [base_idx, pair] : indexed_pairs(ep)) {
          const Pose base{ep.waypoints[base_idx].x(), ep.waypoints[base_idx].y(), ep.headings[base_idx]};
          if (!risk::is_safe(safe, pair.second, base)) {
            ok = false;
            break;
          }
        }
        if (ok) {
          ep.recipe_seed = task.recipe.seed;
          return ep;
        }
      }
    }
    return std::nullopt;
  };

  const int w = std::clamp(config.workers, 1, 64);
  if (w == 1) {
    for (int i = 0; i < n; ++i) slots[static_cast<std::size_t>(i)] = one(i);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < w; ++t)
      pool.emplace_back([&, t] {
        for (int i = t; i < n; i += w) slots[static_cast<std::size_t>(i)] = one(i);
      });
    for (auto& th : pool) th.join();
  }
  std::vector<DemoEpisode> out;
  for (auto& s : slots)
    if (s) out.push_back(std::move(*s));
  return out;
}

namespace {

constexpr char kEpisodeMagic[8] = {'R', 'D', 'E', 'P', 'I', 'S', '0', '1'};

template <class T>
void put(std::ostream& out, T v) {
  static_assert(std::endian::native == std::endian::little, "dataset I/O assumes a little-endian host");
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError("truncated episode file");
  return v;
}

std::string episode_name(std::size_t i) {
  std::ostringstream os;
  os << "episode_" << std::setw(5) << std::setfill('0') << i << ".bin";
  return os.str();
}

json normalizer_json(const diffusion::Normalizer& n) {
  json j;
  j["mean"] = std::vector<double>(n.mean.data(), n.mean.data() + n.mean.size());
  j["scale"] = std::vector<double>(n.scale.data(), n.scale.data() + n.scale.size());
  return j;
}

}  // namespace

void save_dataset(const std::string& dir, const std::vector<DemoEpisode>& episodes, int n_waypoints, int stride,
                  const std::string& extra_manifest_json) {
  const DatasetBuild build = make_dataset(episodes, n_waypoints, stride);
  fs::create_directories(dir);
  std::size_t written = 0;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    if (static_cast<int>(episodes[e].waypoints.size()) < n_waypoints) continue;
    const auto pairs = episode_pairs(episodes[e], n_waypoints, stride);
    std::ofstream out(fs::path(dir) / episode_name(written++), std::ios::binary);
    if (!out) throw std::runtime_error("cannot write episode file in " + dir);
    out.write(kEpisodeMagic, sizeof(kEpisodeMagic));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(n_waypoints));
    put<std::uint32_t>(out, diffusion::Context::kDim);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(pairs.size()));
    for (const auto& [ctx, u] : pairs) {
      put<double>(out, ctx.goal.x());
      put<double>(out, ctx.goal.y());
      put<double>(out, ctx.sin_heading);
      put<double>(out, ctx.cos_heading);
      for (float p : ctx.patch) put<float>(out, p);
      for (Eigen::Index k = 0; k < u.size(); ++k) put<double>(out, u.data()[k]);
    }
  }
  json m;
  m["schema_version"] = 1;
  m["n_waypoints"] = n_waypoints;
  m["context_dim"] = diffusion::Context::kDim;
  m["stride"] = stride;
  m["episodes"] = written;
  m["pairs"] = build.dataset.size();
  m["skipped_short_episodes"] = build.skipped;
  m["normalizer"] = normalizer_json(build.dataset.normalizer);
  m["generation"] = json::parse(extra_manifest_json);
  std::ofstream(fs::path(dir) / "manifest.json") << m.dump(2) << '\n';
}

diffusion::Dataset load_dataset(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw std::runtime_error("dataset manifest missing in " + dir);
  const json m = json::parse(mf);
  if (m.at("schema_version").get<int>() != 1) throw FormatError("unsupported dataset schema");
  const int nw = m.at("n_waypoints").get<int>();
  if (nw != diffusion::kWaypoints) throw FormatError("dataset waypoint count does not match the model");
  if (m.at("context_dim").get<int>() != diffusion::Context::kDim) throw FormatError("dataset context layout mismatch");
  const auto episodes = m.at("episodes").get<std::size_t>();

  diffusion::Dataset d;
  const auto mean = m.at("normalizer").at("mean").get<std::vector<double>>();
  const auto scale = m.at("normalizer").at("scale").get<std::vector<double>>();
  if (mean.size() != 2u * nw || scale.size() != 2u * nw) throw FormatError("normalizer size mismatch");
  d.normalizer.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  d.normalizer.scale = Eigen::Map<const Eigen::VectorXd>(scale.data(), static_cast<Eigen::Index>(scale.size()));
  for (std::size_t e = 0; e < episodes; ++e) {
    const fs::path p = fs::path(dir) / episode_name(e);
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("missing episode file " + p.string());
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kEpisodeMagic, 8) != 0) throw FormatError("bad episode file " + p.string());
    if (get<std::uint32_t>(in) != static_cast<std::uint32_t>(nw)) throw FormatError("episode waypoint count mismatch");
    if (get<std::uint32_t>(in) != diffusion::Context::kDim) throw FormatError("episode context layout mismatch");
    const auto pairs = get<std::uint32_t>(in);
    for (std::uint32_t k = 0; k < pairs; ++k) {
      diffusion::Context c;
      c.goal.x() = get<double>(in);
      c.goal.y() = get<double>(in);
      c.sin_heading = get<double>(in);
      c.cos_heading = get<double>(in);
      for (float& v : c.patch) v = get<float>(in);
      ActionSequence u(2, nw);
      for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] = get<double>(in);
      d.contexts.push_back(std::move(c));
      d.actions.push_back(std::move(u));
    }
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing data in " + p.string());
  }
  if (d.actions.size() != m.at("pairs").get<std::size_t>()) throw FormatError("pair count disagrees with manifest");
  return d;
}

std::string family_to_json_text(const RecipeFamily& f) {
  json j;
  j["grid"] = {{"width", f.grid.width}, {"height", f.grid.height}, {"resolution", f.grid.resolution},
               {"origin", {f.grid.origin_x, f.grid.origin_y}}};
  j["roughness"] = f.roughness;
  j["roughness_spacing"] = f.roughness_spacing;
  j["std_floor"] = f.std_floor;
  j["edge_uncertainty"] = f.edge_uncertainty;
  j["min_distance"] = f.min_distance;
  j["border"] = f.border;
  j["hazards"] = json::array();
  for (const auto& h : f.hazards) {
    j["hazards"].push_back({{"shape", terrain::to_string(h.shape)},
                            {"count", {h.min_count, h.max_count}},
                            {"size", {h.min_size, h.max_size}},
                            {"height", {h.min_height, h.max_height}},
                            {"on_route", h.on_route}});
  }
  return j.dump(2);
}

RecipeFamily family_from_json_text(const std::string& text) {
  const json j = json::parse(text);
  static const std::vector<std::string> kKeys = {"grid", "roughness", "roughness_spacing", "std_floor", "edge_uncertainty",
                                                 "min_distance", "border", "hazards"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(kKeys.begin(), kKeys.end(), it.key()) == kKeys.end())
      throw std::invalid_argument("recipe family: unknown key '" + it.key() + "'");
  RecipeFamily f;
  f.hazards.clear();
  if (j.contains("grid")) {
    const json& g = j["grid"];
    f.grid.width = g.at("width").get<int>();
    f.grid.height = g.at("height").get<int>();
    f.grid.resolution = g.at("resolution").get<double>();
    if (g.contains("origin")) {
      f.grid.origin_x = g["origin"].at(0).get<double>();
      f.grid.origin_y = g["origin"].at(1).get<double>();
    }
  }
  f.roughness = j.value("roughness", f.roughness);
  f.roughness_spacing = j.value("roughness_spacing", f.roughness_spacing);
  f.std_floor = j.value("std_floor", f.std_floor);
  f.edge_uncertainty = j.value("edge_uncertainty", f.edge_uncertainty);
  f.min_distance = j.value("min_distance", f.min_distance);
  f.border = j.value("border", f.border);
  for (const json& h : j.value("hazards", json::array())) {
    HazardRange r;
    r.shape = terrain::hazard_shape_from_string(h.at("shape").get<std::string>());
    r.min_count = h.at("count").at(0).get<int>();
    r.max_count = h.at("count").at(1).get<int>();
    r.min_size = h.at("size").at(0).get<double>();
    r.max_size = h.at("size").at(1).get<double>();
    r.min_height = h.at("height").at(0).get<double>();
    r.max_height = h.at("height").at(1).get<double>();
    r.on_route = h.value("on_route", 0.0);
    if (r.min_count < 0 || r.max_count < r.min_count) throw std::invalid_argument("recipe family: bad hazard count range");
    f.hazards.push_back(r);
  }
  f.grid.validate();
  return f;
}

}  // namespace riskdiff::expert
