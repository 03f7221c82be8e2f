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

#include "riskdiff/terrain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "riskdiff/rng.hpp"

namespace riskdiff::terrain {

using nlohmann::json;

void ElevationBelief::validate() const {
  spec.validate();
  const std::size_t n = spec.cell_count();
  if (mean.size() != n || stddev.size() != n)
    throw std::invalid_argument("elevation belief: array size does not match grid");
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(mean[i]) || !std::isfinite(stddev[i]))
      throw std::invalid_argument("elevation belief: non-finite value");
    if (stddev[i] < 0.0f) throw std::invalid_argument("elevation belief: negative std");
  }
}

const char* to_string(HazardShape s) {
  switch (s) {
    case HazardShape::kRamp: return "ramp";
    case HazardShape::kStep: return "step";
    case HazardShape::kRockField: return "rock-field";
    case HazardShape::kPit: return "pit";
  }
  return "?";
}

HazardShape hazard_shape_from_string(const std::string& s) {
  if (s == "ramp") return HazardShape::kRamp;
  if (s == "step") return HazardShape::kStep;
  if (s == "rock-field") return HazardShape::kRockField;
  if (s == "pit") return HazardShape::kPit;
  throw std::invalid_argument("unknown hazard shape '" + s + "'");
}

void TerrainRecipe::validate() const {
  grid.validate();
  if (!(roughness >= 0.0) || !(std_floor >= 0.0) || !(edge_uncertainty >= 0.0))
    throw std::invalid_argument("recipe: amplitudes must be >= 0");
  if (!(roughness_spacing > 0.0)) throw std::invalid_argument("recipe: roughness_spacing must be > 0");
  const double x0 = grid.origin_x, y0 = grid.origin_y;
  const double x1 = x0 + grid.extent_x(), y1 = y0 + grid.extent_y();
  for (const Hazard& h : hazards) {
    if (!(h.size_x > 0.0) || !(h.size_y > 0.0) || !(h.height >= 0.0))
      throw std::invalid_argument("recipe: hazard sizes must be > 0 and height >= 0");
    const double hx = 0.5 * h.size_x, hy = 0.5 * h.size_y;
    if (h.center_x - hx < x0 || h.center_x + hx > x1 || h.center_y - hy < y0 || h.center_y + hy > y1)
      throw std::invalid_argument(std::string("recipe: ") + to_string(h.shape) +
                                  " hazard exceeds grid bounds");
  }
}

namespace {

// Bilinear value noise on a lattice with the given spacing, values in [-amp, amp].
std::vector<double> value_noise(const GridSpec& g, double amp, double spacing, Rng& rng) {
  const int nx = static_cast<int>(std::ceil(g.extent_x() / spacing)) + 2;
  const int ny = static_cast<int>(std::ceil(g.extent_y() / spacing)) + 2;
  std::vector<double> lattice(static_cast<std::size_t>(nx) * ny);
  for (double& v : lattice) v = rng.uniform(-amp, amp);
  std::vector<double> out(g.cell_count());
  for (int j = 0; j < g.height; ++j) {
    for (int i = 0; i < g.width; ++i) {
      const double gx = (i + 0.5) * g.resolution / spacing;
      const double gy = (j + 0.5) * g.resolution / spacing;
      const int ix = static_cast<int>(gx), iy = static_cast<int>(gy);
      const double fx = gx - ix, fy = gy - iy;
      auto at = [&](int a, int b) { return lattice[static_cast<std::size_t>(b) * nx + a]; };
      out[g.index({i, j})] = (1 - fy) * ((1 - fx) * at(ix, iy) + fx * at(ix + 1, iy)) +
                             fy * ((1 - fx) * at(ix, iy + 1) + fx * at(ix + 1, iy + 1));
    }
  }
  return out;
}

bool in_rect(const Vec2& p, const Hazard& h) {
  return std::abs(p.x() - h.center_x) <= 0.5 * h.size_x && std::abs(p.y() - h.center_y) <= 0.5 * h.size_y;
}

void apply_hazard(const GridSpec& g, const Hazard& h, std::vector<double>& z, Rng& rng) {
  switch (h.shape) {
    case HazardShape::kStep:
      for (std::size_t k = 0; k < z.size(); ++k)
        if (in_rect(g.center(g.cell_at(k)), h)) z[k] += h.height;
      break;
    case HazardShape::kRamp: {
      const double x_start = h.center_x - 0.5 * h.size_x;
      for (std::size_t k = 0; k < z.size(); ++k) {
        const Vec2 p = g.center(g.cell_at(k));
        if (in_rect(p, h)) z[k] += h.height * (p.x() - x_start) / h.size_x;
      }
      break;
    }
    case HazardShape::kPit: {
      const double rx = 0.5 * h.size_x, ry = 0.5 * h.size_y;
      for (std::size_t k = 0; k < z.size(); ++k) {
        const Vec2 p = g.center(g.cell_at(k));
        const double ex = (p.x() - h.center_x) / rx, ey = (p.y() - h.center_y) / ry;
        if (ex * ex + ey * ey <= 1.0) z[k] -= h.height;
      }
      break;
    }
    case HazardShape::kRockField: {
      const double area = h.size_x * h.size_y;
      const int rocks = std::max(1, static_cast<int>(std::lround(area / 0.1)));
      std::vector<double> layer(z.size(), 0.0);
      for (int r = 0; r < rocks; ++r) {
        const double rx = h.center_x + rng.uniform(-0.5, 0.5) * h.size_x;
        const double ry = h.center_y + rng.uniform(-0.5, 0.5) * h.size_y;
        const double radius = rng.uniform(0.06, 0.15);
        const double height = rng.uniform(0.5, 1.0) * h.height;
        for (std::size_t k = 0; k < z.size(); ++k) {
          const Vec2 p = g.center(g.cell_at(k));
          if (!in_rect(p, h)) continue;
          if ((p - Vec2(rx, ry)).norm() <= radius) layer[k] = std::max(layer[k], height);
        }
      }
      for (std::size_t k = 0; k < z.size(); ++k) z[k] += layer[k];
      break;
    }
  }
}

}  // namespace

ElevationBelief generate_terrain(const TerrainRecipe& recipe) {
  recipe.validate();
  const GridSpec& g = recipe.grid;
  Rng rng(recipe.seed);

  std::vector<double> z = recipe.roughness > 0.0
                              ? value_noise(g, recipe.roughness, recipe.roughness_spacing, rng)
                              : std::vector<double>(g.cell_count(), 0.0);
  for (const Hazard& h : recipe.hazards) apply_hazard(g, h, z, rng);

  ElevationBelief b;
  b.spec = g;
  b.mean.resize(z.size());
  b.stddev.resize(z.size());
  for (std::size_t k = 0; k < z.size(); ++k) b.mean[k] = static_cast<float>(z[k]);

  // Central differences, one-sided at the border.
  auto dz = [&](int i, int j, int di, int dj) {
    const int i0 = std::max(0, i - di), j0 = std::max(0, j - dj);
    const int i1 = std::min(g.width - 1, i + di), j1 = std::min(g.height - 1, j + dj);
    const int span = (i1 - i0) + (j1 - j0);
    if (span == 0) return 0.0;
    return (z[g.index({i1, j1})] - z[g.index({i0, j0})]) / (span * g.resolution);
  };
  for (int j = 0; j < g.height; ++j) {
    for (int i = 0; i < g.width; ++i) {
      const double gx = dz(i, j, 1, 0), gy = dz(i, j, 0, 1);
      const double s = recipe.std_floor + recipe.edge_uncertainty * std::hypot(gx, gy);
      b.stddev[g.index({i, j})] = static_cast<float>(s);
    }
  }
  return b;
}

void save_grid(const ElevationBelief& belief, const std::string& path) {
  belief.validate();
  GridFile f;
  f.kind = "elevation";
  f.spec = belief.spec;
  f.channels = {belief.mean, belief.stddev};
  write_grid_file(path, f);
}

ElevationBelief load_grid(const std::string& path) {
  GridFile f = read_grid_file(path);
  if (f.kind != "elevation") throw FormatError("expected an elevation grid, got '" + f.kind + "'");
  if (f.channels.size() != 2) throw FormatError("elevation grid needs 2 channels (mean, std)");
  ElevationBelief b{f.spec, std::move(f.channels[0]), std::move(f.channels[1])};
  for (float s : b.stddev)
    if (s < 0.0f) throw FormatError("negative std in " + path);
  return b;
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw std::invalid_argument(where + ": unknown key '" + it.key() + "'");
}

}  // namespace

TerrainRecipe recipe_from_json_text(const std::string& text) {
  const json j = json::parse(text);
  reject_unknown(j,
                 {"seed", "grid", "roughness", "roughness_spacing", "std_floor", "edge_uncertainty",
                  "hazards"},
                 "recipe");
  TerrainRecipe r;
  r.seed = j.value("seed", std::uint64_t{0});
  const json& g = j.at("grid");
  reject_unknown(g, {"width", "height", "resolution", "origin"}, "recipe.grid");
  r.grid.width = g.at("width").get<int>();
  r.grid.height = g.at("height").get<int>();
  r.grid.resolution = g.at("resolution").get<double>();
  if (g.contains("origin")) {
    r.grid.origin_x = g["origin"].at(0).get<double>();
    r.grid.origin_y = g["origin"].at(1).get<double>();
  }
  r.roughness = j.value("roughness", 0.0);
  r.roughness_spacing = j.value("roughness_spacing", 0.8);
  r.std_floor = j.value("std_floor", 0.01);
  r.edge_uncertainty = j.value("edge_uncertainty", 0.0);
  if (j.contains("hazards")) {
    for (const json& h : j["hazards"]) {
      reject_unknown(h, {"shape", "center", "size", "height"}, "recipe.hazards[]");
      Hazard hz;
      hz.shape = hazard_shape_from_string(h.at("shape").get<std::string>());
      hz.center_x = h.at("center").at(0).get<double>();
      hz.center_y = h.at("center").at(1).get<double>();
      hz.size_x = h.at("size").at(0).get<double>();
      hz.size_y = h.at("size").at(1).get<double>();
      hz.height = h.at("height").get<double>();
      r.hazards.push_back(hz);
    }
  }
  r.validate();
  return r;
}

std::string recipe_to_json_text(const TerrainRecipe& r) {
  json j;
  j["seed"] = r.seed;
  j["grid"] = {{"width", r.grid.width},
               {"height", r.grid.height},
               {"resolution", r.grid.resolution},
               {"origin", {r.grid.origin_x, r.grid.origin_y}}};
  j["roughness"] = r.roughness;
  j["roughness_spacing"] = r.roughness_spacing;
  j["std_floor"] = r.std_floor;
  j["edge_uncertainty"] = r.edge_uncertainty;
  j["hazards"] = json::array();
  for (const Hazard& h : r.hazards) {
    j["hazards"].push_back({{"shape", to_string(h.shape)},
                            {"center", {h.center_x, h.center_y}},
                            {"size", {h.size_x, h.size_y}},
                            {"height", h.height}});
  }
  return j.dump(2);
}

TerrainRecipe load_recipe(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open recipe: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return recipe_from_json_text(ss.str());
}

ElevationBelief load_terrain(const std::string& path) {
  if (path.size() >= 5 && path.compare(path.size() - 5, 5, ".grid") == 0) return load_grid(path);
  return generate_terrain(load_recipe(path));
}

}  // namespace riskdiff::terrain
