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

#ifndef RISKDIFF_TERRAIN_HPP_
#define RISKDIFF_TERRAIN_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "riskdiff/grid.hpp"

namespace riskdiff::terrain {

// 2.5-D map belief: independent Gaussian elevation per cell.
struct ElevationBelief {
  GridSpec spec;
  std::vector<float> mean;  // meters, row-major
  std::vector<float> stddev;  // meters, >= 0

  float mean_at(Cell c) const { return mean[spec.index(c)]; }
  float std_at(Cell c) const { return stddev[spec.index(c)]; }

  // Throws std::invalid_argument when sizes mismatch, values are non-finite
  // or a std is negative.
  void validate() const;
};

enum class HazardShape { kRamp, kStep, kRockField, kPit };

const char* to_string(HazardShape s);
HazardShape hazard_shape_from_string(const std::string& s);

// Axis-aligned hazard footprint centred at (center_x, center_y).
//  - ramp: elevation rises linearly along +x from 0 to `height` (sides are steps)
//  - step: rectangular plateau raised by `height`
//  - rock-field: random blocky rocks up to `height` scattered in the rectangle
//  - pit: elliptical depression of depth `height`
struct Hazard {
  HazardShape shape = HazardShape::kStep;
  double center_x = 0.0;
  double center_y = 0.0;
  double size_x = 1.0;
  double size_y = 1.0;
  double height = 0.3;
};

struct TerrainRecipe {
  std::uint64_t seed = 0;
  GridSpec grid;
  double roughness = 0.0;          // value-noise amplitude, meters
  double roughness_spacing = 0.8;  // lattice spacing of the value noise, meters
  double std_floor = 0.01;         // meters
  double edge_uncertainty = 0.0;   // k in std = floor + k * |grad mean|, meters
  std::vector<Hazard> hazards;

  // Throws std::invalid_argument for negative amplitudes or hazards that
  // leave the grid.
  void validate() const;
};

ElevationBelief generate_terrain(const TerrainRecipe& recipe);

void save_grid(const ElevationBelief& belief, const std::string& path);
// Throws FormatError on malformed files, negative std or a wrong kind.
ElevationBelief load_grid(const std::string& path);

// JSON recipe files (see README for the schema).
TerrainRecipe recipe_from_json_text(const std::string& text);
std::string recipe_to_json_text(const TerrainRecipe& recipe);
TerrainRecipe load_recipe(const std::string& path);

// `--terrain` accepts a `.grid` file or a JSON recipe.
ElevationBelief load_terrain(const std::string& path);

}  // namespace riskdiff::terrain

#endif  // RISKDIFF_TERRAIN_HPP_
