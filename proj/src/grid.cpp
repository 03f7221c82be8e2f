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

#include "riskdiff/grid.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace riskdiff {

namespace {

constexpr const char* kMagic = "RISKDIFF_GRID";
constexpr int kVersion = 1;

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
  return v;
}

}  // namespace

void GridSpec::validate() const {
  if (width < 1 || height < 1) throw std::invalid_argument("grid: width and height must be >= 1");
  if (!(resolution > 0.0) || !std::isfinite(resolution))
    throw std::invalid_argument("grid: resolution must be > 0");
  if (!std::isfinite(origin_x) || !std::isfinite(origin_y))
    throw std::invalid_argument("grid: origin must be finite");
}

std::optional<Cell> GridSpec::locate(const Vec2& p) const {
  const double gx = std::floor((p.x() - origin_x) / resolution);
  const double gy = std::floor((p.y() - origin_y) / resolution);
  if (!(gx >= 0.0 && gy >= 0.0 && gx < width && gy < height)) return std::nullopt;
  return Cell{static_cast<int>(gx), static_cast<int>(gy)};
}

Eigen::Matrix2Xd to_world(const Pose& pose, const ActionSequence& u) {
  const double c = std::cos(pose.heading);
  const double s = std::sin(pose.heading);
  Eigen::Matrix2Xd w(2, u.cols());
  for (Eigen::Index i = 0; i < u.cols(); ++i) {
    w(0, i) = pose.x + c * u(0, i) - s * u(1, i);
    w(1, i) = pose.y + s * u(0, i) + c * u(1, i);
  }
  return w;
}

void append_segment_points(const Vec2& a, const Vec2& b, double resolution,
                           std::vector<Vec2>& out) {
  const double len = (b - a).norm();
  const double step = 0.5 * resolution;
  // Long excursions of early diffusion iterates are capped so a wild sample
  // cannot stall the checker; such segments leave any practical grid anyway.
  const double n_real = std::min(std::ceil(len / step), 1.0e5);
  const int n = std::max(1, static_cast<int>(n_real));
  for (int k = 1; k <= n; ++k) {
    const double f = static_cast<double>(k) / n;
    out.push_back(a + f * (b - a));
  }
}

std::vector<Vec2> check_points(const Pose& pose, const ActionSequence& u, double resolution) {
  std::vector<Vec2> pts;
  pts.reserve(1 + 8 * static_cast<std::size_t>(u.cols()));
  pts.push_back(pose.position());
  if (u.cols() == 0) return pts;
  const Eigen::Matrix2Xd w = to_world(pose, u);
  Vec2 prev = pose.position();
  for (Eigen::Index i = 0; i < w.cols(); ++i) {
    const Vec2 next = w.col(i);
    append_segment_points(prev, next, resolution, pts);
    prev = next;
  }
  return pts;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw FormatError("not a number: '" + s + "'");
  return v;
}

namespace {

int parse_int(const std::string& s) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw FormatError("not an integer: '" + s + "'");
  return v;
}

}  // namespace

void write_grid_file(const std::string& path, const GridFile& file) {
  file.spec.validate();
  const std::size_t n = file.spec.cell_count();
  for (const auto& ch : file.channels) {
    if (ch.size() != n) throw std::invalid_argument("grid: channel size does not match spec");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << kMagic << ' ' << kVersion << '\n'
      << "kind " << file.kind << '\n'
      << "width " << file.spec.width << '\n'
      << "height " << file.spec.height << '\n'
      << "resolution " << format_double(file.spec.resolution) << '\n'
      << "origin " << format_double(file.spec.origin_x) << ' ' << format_double(file.spec.origin_y)
      << '\n'
      << "channels " << file.channels.size() << '\n';
  for (const auto& [k, v] : file.extra) out << k << ' ' << v << '\n';
  out << "end\n";
  for (const auto& ch : file.channels) {
    for (float f : ch) {
      const std::uint32_t bits = to_little(std::bit_cast<std::uint32_t>(f));
      out.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

GridFile read_grid_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);

  GridFile file;
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty grid file");
  {
    std::istringstream ls(line);
    std::string magic;
    int version = 0;
    if (!(ls >> magic >> version) || magic != kMagic) throw FormatError("bad magic in " + path);
    if (version != kVersion) throw FormatError("unsupported grid version " + std::to_string(version));
  }

  bool have_w = false, have_h = false, have_res = false, have_origin = false, have_ch = false;
  int channels = 0;
  bool ended = false;
  while (std::getline(in, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) throw FormatError("blank header line");
    std::vector<std::string> vals;
    for (std::string v; ls >> v;) vals.push_back(v);
    auto one = [&]() -> const std::string& {
      if (vals.size() != 1) throw FormatError("header key '" + key + "' expects one value");
      return vals[0];
    };
    if (key == "kind") {
      file.kind = one();
    } else if (key == "width") {
      file.spec.width = parse_int(one());
      have_w = true;
    } else if (key == "height") {
      file.spec.height = parse_int(one());
      have_h = true;
    } else if (key == "resolution") {
      file.spec.resolution = parse_double(one());
      have_res = true;
    } else if (key == "origin") {
      if (vals.size() != 2) throw FormatError("origin expects two values");
      file.spec.origin_x = parse_double(vals[0]);
      file.spec.origin_y = parse_double(vals[1]);
      have_origin = true;
    } else if (key == "channels") {
      channels = parse_int(one());
      have_ch = true;
    } else {
      file.extra[key] = one();
    }
  }
  if (!ended) throw FormatError("grid header not terminated");
  if (!(have_w && have_h && have_res && have_origin && have_ch) || file.kind.empty())
    throw FormatError("grid header incomplete");
  try {
    file.spec.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what());
  }
  if (channels < 1 || channels > 16) throw FormatError("bad channel count");

  const std::size_t n = file.spec.cell_count();
  file.channels.assign(static_cast<std::size_t>(channels), std::vector<float>(n));
  for (auto& ch : file.channels) {
    for (float& f : ch) {
      std::uint32_t bits = 0;
      if (!in.read(reinterpret_cast<char*>(&bits), sizeof(bits)))
        throw FormatError("truncated grid payload in " + path);
      f = std::bit_cast<float>(to_little(bits));
      if (!std::isfinite(f)) throw FormatError("non-finite value in grid payload");
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing data after grid payload");
  return file;
}

}  // namespace riskdiff
