/*
 * Copyright 2026 The HetLoc Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace hetloc {

inline constexpr double kPi = 3.141592653589793238462643383279502884;
inline constexpr double kTwoPi = 2.0 * kPi;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

// ---------------------------------------------------------------------------
// Error taxonomy. The CLI maps these onto its exit-code contract.
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// A caller broke an API contract (shape mismatch, empty batch, ...).
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(what) {}
};

class IoError : public DataError {
 public:
  explicit IoError(const std::string& what) : DataError(what) {}
};

class MissingFileError : public IoError {
 public:
  explicit MissingFileError(const std::string& what) : IoError(what) {}
};

class ChecksumError : public IoError {
 public:
  explicit ChecksumError(const std::string& what) : IoError(what) {}
};

class VersionError : public IoError {
 public:
  explicit VersionError(const std::string& what) : IoError(what) {}
};

class GenerationError : public DataError {
 public:
  explicit GenerationError(const std::string& what) : DataError(what) {}
};

class QueryError : public DataError {
 public:
  explicit QueryError(const std::string& what) : DataError(what) {}
};

class EstimationError : public NumericError {
 public:
  explicit EstimationError(const std::string& what) : NumericError(what) {}
};

// ---------------------------------------------------------------------------
// Planar geometry
// ---------------------------------------------------------------------------

// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  double r = std::fmod(a + kPi, kTwoPi);
  if (r <= 0.0) r += kTwoPi;
  return r - kPi;
}

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double cross(const Vec2& o) const { return x * o.y - y * o.x; }
  double norm() const { return std::hypot(x, y); }
};

struct PoseOffset {
  double dx = 0.0;
  double dy = 0.0;
  double dtheta = 0.0;  // always stored wrapped to (-pi, pi]

  static PoseOffset make(double dx, double dy, double dtheta) {
    return {dx, dy, wrap_angle(dtheta)};
  }
};

// Planar robot pose. theta is kept wrapped to (-pi, pi] by all operations.
struct Pose2D {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;

  static Pose2D make(double x, double y, double theta) {
    return {x, y, wrap_angle(theta)};
  }

  Vec2 position() const { return {x, y}; }
};

inline Pose2D identity_pose() { return {0.0, 0.0, 0.0}; }

// a (+) b: b expressed in a's frame, mapped to the global frame.
inline Pose2D compose(const Pose2D& a, const Pose2D& b) {
  const double c = std::cos(a.theta);
  const double s = std::sin(a.theta);
  return Pose2D::make(a.x + c * b.x - s * b.y, a.y + s * b.x + c * b.y,
                      a.theta + b.theta);
}

inline Pose2D inverse(const Pose2D& p) {
  const double c = std::cos(p.theta);
  const double s = std::sin(p.theta);
  return Pose2D::make(-(c * p.x + s * p.y), -(-s * p.x + c * p.y), -p.theta);
}

inline Pose2D offset_to_pose(const PoseOffset& o) {
  return Pose2D::make(o.dx, o.dy, o.dtheta);
}

inline PoseOffset pose_to_offset(const Pose2D& p) {
  return PoseOffset::make(p.x, p.y, p.theta);
}

// Offset o such that compose(a, o) == b.
inline PoseOffset relative_offset(const Pose2D& a, const Pose2D& b) {
  return pose_to_offset(compose(inverse(a), b));
}

// Maps a point given in pose's local frame to the global frame.
inline Vec2 transform_point(const Pose2D& pose, const Vec2& local) {
  const double c = std::cos(pose.theta);
  const double s = std::sin(pose.theta);
  return {pose.x + c * local.x - s * local.y,
          pose.y + s * local.x + c * local.y};
}

inline double euclidean_distance(const Pose2D& a, const Pose2D& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

// ---------------------------------------------------------------------------
// Raster grid geometry
// ---------------------------------------------------------------------------

// origin is the pose of the center of cell (col=0, row=0). Cell (c, r) center
// sits at origin (+) (c * resolution, r * resolution).
struct GridSpec {
  int width_cells = 0;
  int height_cells = 0;
  double resolution = 0.0;  // meters per cell
  Pose2D origin;

  void validate() const {
    if (width_cells <= 0 || height_cells <= 0)
      throw ConfigError("GridSpec: cell counts must be positive");
    if (!(resolution > 0.0))
      throw ConfigError("GridSpec: resolution must be positive");
  }

  // Grid centered on the local frame origin, axis aligned: cell
  // (width/2, height/2) center lands exactly on (0, 0).
  static GridSpec centered(int width_cells, int height_cells,
                           double resolution) {
    GridSpec g;
    g.width_cells = width_cells;
    g.height_cells = height_cells;
    g.resolution = resolution;
    g.origin = Pose2D::make(-(width_cells / 2) * resolution,
                            -(height_cells / 2) * resolution, 0.0);
    g.validate();
    return g;
  }

  Vec2 cell_center_local(int col, int row) const {
    return {origin.x + col * resolution, origin.y + row * resolution};
  }

  // Continuous cell coordinates of a local-frame point (origin.theta == 0).
  Vec2 local_to_cell(const Vec2& p) const {
    return {(p.x - origin.x) / resolution, (p.y - origin.y) / resolution};
  }

  bool contains(int col, int row) const {
    return col >= 0 && col < width_cells && row >= 0 && row < height_cells;
  }

  std::size_t index(int col, int row) const {
    return static_cast<std::size_t>(row) * width_cells + col;
  }
};

// ---------------------------------------------------------------------------
// Deterministic pseudo randomness
// ---------------------------------------------------------------------------

// Counter-based generator: draw i of a stream seeded with s is
//   mix64(s + (i + 1) * 0x9E3779B97F4A7C15)
// where mix64 is the SplitMix64 finalizer (Steele et al.). Streams are a pure
// function of (seed, counter), so they are identical across platforms and can
// be split without locking.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() {
    ++counter_;
    return mix64(seed_ + counter_ * 0x9E3779B97F4A7C15ULL);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    // Modulo bias is < 2^-40 for n below 2^24; fine for index draws.
    return n == 0 ? 0 : next_u64() % n;
  }

  // Standard normal via Box-Muller; one u64 pair per draw.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
  }

  double normal(double sigma) { return sigma == 0.0 ? 0.0 : sigma * normal(); }

  // Independent child stream; advances this stream by one draw.
  Rng split() { return Rng(next_u64() ^ 0xA02BDBF7BB3C0A7ULL); }

  static std::uint64_t mix64(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
  }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace hetloc
