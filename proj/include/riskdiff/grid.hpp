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

#ifndef RISKDIFF_GRID_HPP_
#define RISKDIFF_GRID_HPP_

#include <cstddef>
#include <stdexcept>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace riskdiff {

using Vec2 = Eigen::Vector2d;

// N_u planar waypoints in the robot frame, one per column. Waypoints are
// cumulative positions relative to the robot, not deltas.
using ActionSequence = Eigen::Matrix2Xd;

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;  // radians, world frame

  Vec2 position() const { return {x, y}; }
};

struct Cell {
  int x = 0;
  int y = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

// Discretization of the map domain. Cell (i, j) covers
// [origin_x + i*res, origin_x + (i+1)*res) x [origin_y + j*res, ...).
struct GridSpec {
  int width = 1;
  int height = 1;
  double resolution = 0.1;
  double origin_x = 0.0;
  double origin_y = 0.0;

  // Throws std::invalid_argument on width/height < 1 or resolution <= 0.
  void validate() const;

  std::size_t cell_count() const {
    return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  }
  bool contains(Cell c) const {
    return c.x >= 0 && c.y >= 0 && c.x < width && c.y < height;
  }
  std::size_t index(Cell c) const {
    return static_cast<std::size_t>(c.y) * static_cast<std::size_t>(width) +
           static_cast<std::size_t>(c.x);
  }
  Cell cell_at(std::size_t idx) const {
    return {static_cast<int>(idx % static_cast<std::size_t>(width)),
            static_cast<int>(idx / static_cast<std::size_t>(width))};
  }
  // Cell containing p; std::nullopt when p is off the grid.
  std::optional<Cell> locate(const Vec2& p) const;
  Vec2 center(Cell c) const {
    return {origin_x + (c.x + 0.5) * resolution, origin_y + (c.y + 0.5) * resolution};
  }
  double extent_x() const { return width * resolution; }
  double extent_y() const { return height * resolution; }

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

// Robot-frame waypoints -> world frame.
Eigen::Matrix2Xd to_world(const Pose& pose, const ActionSequence& u);

// Points checked for safety along pose -> u_0 -> u_1 -> ... : the pose itself,
// then every segment subdivided into ceil(len / (0.5 * resolution)) equal steps
// (at least one). The simulator executes exactly these points, so safety
// checks and execution never disagree.
std::vector<Vec2> check_points(const Pose& pose, const ActionSequence& u, double resolution);

// Same subdivision for one world-frame segment, excluding its start point.
void append_segment_points(const Vec2& a, const Vec2& b, double resolution,
                           std::vector<Vec2>& out);

// On-disk `.grid` container: a plain-text header followed by row-major
// little-endian float32 channels.
//
//   RISKDIFF_GRID 1
//   kind <elevation|risk>
//   width <int>
//   height <int>
//   resolution <double>
//   origin <double> <double>
//   channels <int>
//   <extra key> <value>       (optional, kind-specific)
//   end
//   <channels * width * height float32 values>
struct GridFile {
  std::string kind;
  GridSpec spec;
  std::vector<std::vector<float>> channels;
  std::map<std::string, std::string> extra;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_grid_file(const std::string& path, const GridFile& file);
// Throws FormatError on malformed header, truncated payload, trailing data
// or non-finite values.
GridFile read_grid_file(const std::string& path);

// Shortest round-trip decimal form of a double.
std::string format_double(double v);
double parse_double(const std::string& s);

}  // namespace riskdiff

#endif  // RISKDIFF_GRID_HPP_
