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

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hetloc/core.hpp"
#include "hetloc/io.hpp"

namespace hetloc {

using Json = nlohmann::ordered_json;

enum class Modality { kLidar, kRadar };

inline std::string to_string(Modality m) {
  return m == Modality::kLidar ? "lidar" : "radar";
}

inline Modality modality_from_string(const std::string& s) {
  if (s == "lidar") return Modality::kLidar;
  if (s == "radar") return Modality::kRadar;
  throw ConfigError("unknown modality: " + s);
}

// ---------------------------------------------------------------------------
// World geometry
// ---------------------------------------------------------------------------

struct Segment {
  Vec2 a;
  Vec2 b;
};

struct Rect {
  Vec2 min;
  Vec2 max;

  bool contains(const Vec2& p, double margin = 0.0) const {
    return p.x >= min.x - margin && p.x <= max.x + margin &&
           p.y >= min.y - margin && p.y <= max.y + margin;
  }
};

inline double point_segment_distance(const Vec2& p, const Segment& s) {
  const Vec2 d = s.b - s.a;
  const double len2 = d.dot(d);
  double t = len2 > 0.0 ? (p - s.a).dot(d) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const Vec2 closest = s.a + d * t;
  return (p - closest).norm();
}

// Distance along the ray (origin, angle) to the segment, or +inf.
inline double ray_segment_distance(const Vec2& origin, double angle,
                                   const Segment& seg) {
  const Vec2 dir{std::cos(angle), std::sin(angle)};
  const Vec2 r = seg.b - seg.a;
  const double denom = dir.cross(r);
  if (std::abs(denom) < 1e-12) return std::numeric_limits<double>::infinity();
  const Vec2 w = seg.a - origin;
  const double t = w.cross(r) / denom;
  const double s = w.cross(dir) / denom;
  if (t < 0.0 || s < 0.0 || s > 1.0)
    return std::numeric_limits<double>::infinity();
  return t;
}

struct World {
  std::vector<Segment> walls;
  std::vector<Rect> boxes;
  Rect bounds;
  std::uint64_t seed = 0;

  // Walls plus box edges, cached for ray casting.
  std::vector<Segment> all_segments;

  void rebuild_segments() {
    all_segments = walls;
    for (const auto& r : boxes) {
      all_segments.push_back({{r.min.x, r.min.y}, {r.max.x, r.min.y}});
      all_segments.push_back({{r.max.x, r.min.y}, {r.max.x, r.max.y}});
      all_segments.push_back({{r.max.x, r.max.y}, {r.min.x, r.max.y}});
      all_segments.push_back({{r.min.x, r.max.y}, {r.min.x, r.min.y}});
    }
  }

  // Nearest obstacle hit along the ray, or +inf. World bounds are not solid.
  double cast_ray(const Vec2& origin, double angle) const {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& seg : all_segments)
      best = std::min(best, ray_segment_distance(origin, angle, seg));
    return best;
  }

  bool in_bounds(const Vec2& p, double margin = 0.0) const {
    return p.x >= bounds.min.x + margin && p.x <= bounds.max.x - margin &&
           p.y >= bounds.min.y + margin && p.y <= bounds.max.y - margin;
  }

  // True when p is inside or within `margin` of any obstacle.
  bool blocked(const Vec2& p, double margin) const {
    for (const auto& r : boxes)
      if (r.contains(p, margin)) return true;
    for (const auto& s : walls)
      if (point_segment_distance(p, s) <= margin) return true;
    return false;
  }
};

struct WorldParams {
  double half_extent = 100.0;  // bounds = [-half, +half]^2
  int obstacles_min = 30;
  int obstacles_max = 80;
  double wall_length_min = 5.0;
  double wall_length_max = 30.0;
  double box_side_min = 2.0;
  double box_side_max = 15.0;
  double box_fraction = 0.5;

  void validate() const {
    if (half_extent <= 0.0) throw ConfigError("world: half_extent must be > 0");
    if (obstacles_min < 0 || obstacles_max < obstacles_min)
      throw ConfigError("world: bad obstacle count range");
    if (wall_length_min <= 0 || wall_length_max < wall_length_min)
      throw ConfigError("world: bad wall length range");
    if (box_side_min <= 0 || box_side_max < box_side_min)
      throw ConfigError("world: bad box side range");
    if (box_fraction < 0.0 || box_fraction > 1.0)
      throw ConfigError("world: box_fraction must be in [0,1]");
  }
};

inline World generate_world(std::uint64_t seed, const WorldParams& params) {
  params.validate();
  Rng rng(seed);
  World world;
  world.seed = seed;
  world.bounds = {{-params.half_extent, -params.half_extent},
                  {params.half_extent, params.half_extent}};
  const int count =
      params.obstacles_min +
      static_cast<int>(rng.uniform_int(
          static_cast<std::uint64_t>(params.obstacles_max -
                                     params.obstacles_min + 1)));
  for (int i = 0; i < count; ++i) {
    if (rng.uniform() < params.box_fraction) {
      const double w = rng.uniform(params.box_side_min, params.box_side_max);
      const double h = rng.uniform(params.box_side_min, params.box_side_max);
      const double cx = rng.uniform(world.bounds.min.x + w / 2 + 1.0,
                                    world.bounds.max.x - w / 2 - 1.0);
      const double cy = rng.uniform(world.bounds.min.y + h / 2 + 1.0,
                                    world.bounds.max.y - h / 2 - 1.0);
      world.boxes.push_back({{cx - w / 2, cy - h / 2}, {cx + w / 2, cy + h / 2}});
    } else {
      const double len =
          rng.uniform(params.wall_length_min, params.wall_length_max);
      const double ang = rng.uniform(0.0, kTwoPi);
      const Vec2 dir{std::cos(ang), std::sin(ang)};
      const double m = len / 2 + 1.0;
      const Vec2 center{rng.uniform(world.bounds.min.x + m, world.bounds.max.x - m),
                        rng.uniform(world.bounds.min.y + m, world.bounds.max.y - m)};
      world.walls.push_back(
          {center - dir * (len / 2), center + dir * (len / 2)});
    }
  }
  world.rebuild_segments();
  return world;
}

// ---------------------------------------------------------------------------
// Sensor models
// ---------------------------------------------------------------------------

struct SensorParams {
  Modality modality = Modality::kLidar;
  int beams = 360;
  double max_range = 50.0;
  int range_bins = 0;  // radar only
  double range_noise_sigma = 0.0;
  double dropout_prob = 0.0;
  double speckle_sigma = 0.0;   // radar only
  double multipath_prob = 0.0;  // radar only
  double angular_jitter_sigma = 0.0;

  void validate() const {
    if (beams < 8) throw ConfigError("sensor: beams must be >= 8");
    if (!(max_range > 0.0)) throw ConfigError("sensor: max_range must be > 0");
    if (modality == Modality::kRadar && range_bins < 2)
      throw ConfigError("sensor: radar needs range_bins >= 2");
    for (double p : {dropout_prob, multipath_prob})
      if (p < 0.0 || p > 1.0)
        throw ConfigError("sensor: probabilities must be in [0,1]");
    if (range_noise_sigma < 0.0 || speckle_sigma < 0.0 ||
        angular_jitter_sigma < 0.0)
      throw ConfigError("sensor: noise sigmas must be >= 0");
  }

  static SensorParams default_lidar() {
    SensorParams p;
    p.modality = Modality::kLidar;
    p.beams = 360;
    p.max_range = 50.0;
    p.range_noise_sigma = 0.03;
    p.dropout_prob = 0.01;
    p.angular_jitter_sigma = 0.001;
    return p;
  }

  static SensorParams default_radar() {
    SensorParams p;
    p.modality = Modality::kRadar;
    p.beams = 64;
    p.max_range = 50.0;
    p.range_bins = 128;
    p.range_noise_sigma = 0.25;
    p.dropout_prob = 0.02;
    p.speckle_sigma = 0.05;
    p.multipath_prob = 0.25;
    p.angular_jitter_sigma = 0.002;
    return p;
  }
};

// One sweep. Lidar stores a range per beam (max_range encodes "no return");
// radar stores an intensity in [0,1] per (beam, range bin), row-major.
struct PolarScan {
  Modality modality = Modality::kLidar;
  std::vector<double> beam_angles;  // sensor frame, radians
  double max_range = 0.0;
  int range_bins = 0;
  std::vector<float> data;

  float range(int beam) const { return data[static_cast<std::size_t>(beam)]; }
  float intensity(int beam, int bin) const {
    return data[static_cast<std::size_t>(beam) * range_bins + bin];
  }
  float& intensity(int beam, int bin) {
    return data[static_cast<std::size_t>(beam) * range_bins + bin];
  }
};

inline std::vector<double> uniform_beam_angles(int beams) {
  std::vector<double> angles(beams);
  for (int k = 0; k < beams; ++k) angles[k] = kTwoPi * k / beams;
  return angles;
}

inline PolarScan render_lidar_scan(const World& world, const Pose2D& pose,
                                   const SensorParams& params, Rng& rng) {
  if (params.modality != Modality::kLidar)
    throw UsageError("render_lidar_scan: params.modality must be lidar");
  params.validate();
  PolarScan scan;
  scan.modality = Modality::kLidar;
  scan.beam_angles = uniform_beam_angles(params.beams);
  scan.max_range = params.max_range;
  scan.data.resize(params.beams);
  for (int k = 0; k < params.beams; ++k) {
    const double jitter = rng.normal(params.angular_jitter_sigma);
    const double ang = pose.theta + scan.beam_angles[k] + jitter;
    const double hit = world.cast_ray(pose.position(), ang);
    const bool dropout =
        params.dropout_prob > 0.0 && rng.uniform() < params.dropout_prob;
    double r = params.max_range;
    if (!dropout && hit <= params.max_range)
      r = std::clamp(hit + rng.normal(params.range_noise_sigma), 0.01,
                     params.max_range);
    scan.data[k] = static_cast<float>(r);
  }
  return scan;
}

// Radar echo model: a Gaussian ridge at the true range (width follows
// range_noise_sigma, floored at 3/4 bin), amplitude mildly attenuated with
// range, an optional multipath ghost at 1.5-2x range with 40% amplitude,
// plus additive speckle. Intensities are clipped to [0,1].
inline PolarScan render_radar_scan(const World& world, const Pose2D& pose,
                                   const SensorParams& params, Rng& rng) {
  if (params.modality != Modality::kRadar)
    throw UsageError("render_radar_scan: params.modality must be radar");
  params.validate();
  PolarScan scan;
  scan.modality = Modality::kRadar;
  scan.beam_angles = uniform_beam_angles(params.beams);
  scan.max_range = params.max_range;
  scan.range_bins = params.range_bins;
  scan.data.assign(
      static_cast<std::size_t>(params.beams) * params.range_bins, 0.0f);

  const double bin_w = params.max_range / params.range_bins;
  const double sigma = std::max(params.range_noise_sigma, 0.75 * bin_w);
  auto add_peak = [&](int beam, double range, double amplitude) {
    const int lo = std::max(0, static_cast<int>((range - 4 * sigma) / bin_w));
    const int hi = std::min(params.range_bins - 1,
                            static_cast<int>((range + 4 * sigma) / bin_w));
    for (int bin = lo; bin <= hi; ++bin) {
      const double c = (bin + 0.5) * bin_w;
      const double v = amplitude * std::exp(-(c - range) * (c - range) /
                                            (2 * sigma * sigma));
      scan.intensity(beam, bin) += static_cast<float>(v);
    }
  };

  for (int k = 0; k < params.beams; ++k) {
    const double jitter = rng.normal(params.angular_jitter_sigma);
    const double ang = pose.theta + scan.beam_angles[k] + jitter;
    const double hit = world.cast_ray(pose.position(), ang);
    const bool dropout =
        params.dropout_prob > 0.0 && rng.uniform() < params.dropout_prob;
    if (!dropout && hit <= params.max_range) {
      const double amplitude = 1.0 - 0.3 * hit / params.max_range;
      add_peak(k, hit, amplitude);
      if (params.multipath_prob > 0.0 && rng.uniform() < params.multipath_prob) {
        const double ghost = hit * rng.uniform(1.5, 2.0);
        if (ghost <= params.max_range) add_peak(k, ghost, 0.4 * amplitude);
      }
    }
    if (params.speckle_sigma > 0.0)
      for (int bin = 0; bin < params.range_bins; ++bin)
        scan.intensity(k, bin) +=
            static_cast<float>(rng.normal(params.speckle_sigma));
  }
  for (auto& v : scan.data) v = std::clamp(v, 0.0f, 1.0f);
  return scan;
}

inline PolarScan render_scan(const World& world, const Pose2D& pose,
                             const SensorParams& params, Rng& rng) {
  return params.modality == Modality::kLidar
             ? render_lidar_scan(world, pose, params, rng)
             : render_radar_scan(world, pose, params, rng);
}

// ---------------------------------------------------------------------------
// Trajectories and sessions
// ---------------------------------------------------------------------------

// Collision-free smooth trajectory; heading is tangent to motion and
// consecutive poses are exactly `step` apart.
inline std::vector<Pose2D> generate_trajectory(const World& world,
                                               std::uint64_t seed, int length,
                                               double step) {
  if (length < 2) throw UsageError("generate_trajectory: length must be >= 2");
  if (!(step > 0.0)) throw UsageError("generate_trajectory: step must be > 0");
  Rng rng(seed);
  const double clearance = 1.0;
  const double bounds_margin = 2.0;
  // Turn offsets tried in order when the preferred heading is blocked.
  static const double kTurns[] = {0.0,  0.15, -0.15, 0.3,  -0.3, 0.5,  -0.5,
                                  0.8,  -0.8, 1.2,   -1.2, 1.7,  -1.7, 2.3,
                                  -2.3, 3.0,  -3.0};

  for (int attempt = 0; attempt < 40; ++attempt) {
    Pose2D start;
    bool have_start = false;
    for (int i = 0; i < 400 && !have_start; ++i) {
      start.x = rng.uniform(world.bounds.min.x + 5.0, world.bounds.max.x - 5.0);
      start.y = rng.uniform(world.bounds.min.y + 5.0, world.bounds.max.y - 5.0);
      start.theta = rng.uniform(-kPi, kPi);
      have_start = !world.blocked(start.position(), 2.0);
    }
    if (!have_start) break;

    std::vector<Pose2D> poses{start};
    poses.reserve(length);
    double kappa = 0.0;
    bool stuck = false;
    for (int t = 1; t < length && !stuck; ++t) {
      kappa = 0.85 * kappa + rng.normal(0.08);
      const Pose2D& prev = poses.back();
      bool placed = false;
      for (double turn : kTurns) {
        const double theta = wrap_angle(prev.theta + kappa + turn);
        const Vec2 p{prev.x + step * std::cos(theta),
                     prev.y + step * std::sin(theta)};
        if (world.in_bounds(p, bounds_margin) && !world.blocked(p, clearance)) {
          poses.push_back(Pose2D::make(p.x, p.y, theta));
          placed = true;
          break;
        }
      }
      stuck = !placed;
    }
    if (!stuck) {
      poses[0].theta = poses[1].theta;
      return poses;
    }
  }
  throw GenerationError(
      "generate_trajectory: could not place a collision-free trajectory "
      "(world too crowded?)");
}

// Re-traversal of `base` with a smooth lateral offset bounded by max_lateral
// and jittered headings; used to emulate revisiting places across sessions.
inline std::vector<Pose2D> perturb_trajectory(const World& world,
                                              const std::vector<Pose2D>& base,
                                              double max_lateral,
                                              double heading_sigma, Rng& rng) {
  std::vector<Pose2D> out;
  out.reserve(base.size());
  Vec2 offset{0.0, 0.0};
  for (const auto& pose : base) {
    offset.x = 0.9 * offset.x + rng.normal(0.2 * max_lateral);
    offset.y = 0.9 * offset.y + rng.normal(0.2 * max_lateral);
    const double n = offset.norm();
    if (n > max_lateral) offset = offset * (max_lateral / n);
    Vec2 o = offset;
    for (int i = 0; i < 8 && world.blocked({pose.x + o.x, pose.y + o.y}, 0.5);
         ++i)
      o = o * 0.5;
    if (world.blocked({pose.x + o.x, pose.y + o.y}, 0.5)) o = {0.0, 0.0};
    out.push_back(Pose2D::make(pose.x + o.x, pose.y + o.y,
                               pose.theta + rng.normal(heading_sigma)));
  }
  return out;
}

struct OdomNoise {
  double trans_sigma = 0.0;  // meters per step, each axis
  double rot_sigma = 0.0;    // radians per step
};

// One traversal: ground-truth poses, noisy odometry between consecutive
// poses, and one scan per pose.
struct Session {
  std::string session_id;
  Modality modality = Modality::kLidar;
  SensorParams sensor;
  std::vector<Pose2D> poses;
  std::vector<PoseOffset> odometry;  // size N-1
  std::vector<PolarScan> scans;
};

inline Session make_session(const World& world,
                            const std::vector<Pose2D>& trajectory,
                            const SensorParams& params,
                            const OdomNoise& odom_noise, Rng& rng,
                            std::string session_id = {}) {
  if (trajectory.empty())
    throw UsageError("make_session: trajectory must be nonempty");
  params.validate();
  Session s;
  s.session_id = std::move(session_id);
  s.modality = params.modality;
  s.sensor = params;
  s.poses = trajectory;
  s.scans.reserve(trajectory.size());
  for (const auto& pose : trajectory)
    s.scans.push_back(render_scan(world, pose, params, rng));
  s.odometry.reserve(trajectory.size() - 1);
  for (std::size_t t = 0; t + 1 < trajectory.size(); ++t) {
    PoseOffset o = relative_offset(trajectory[t], trajectory[t + 1]);
    o.dx += rng.normal(odom_noise.trans_sigma);
    o.dy += rng.normal(odom_noise.trans_sigma);
    o.dtheta = wrap_angle(o.dtheta + rng.normal(odom_noise.rot_sigma));
    s.odometry.push_back(o);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Dataset persistence
// ---------------------------------------------------------------------------
//
// A dataset is a directory: manifest.json plus one flat little-endian float32
// file per array (poses [T,3], odometry [T-1,3], beam_angles [B], scan data
// [T,B] for lidar or [T,B,R] for radar), with a CRC-32 per file recorded in
// the manifest. External data can be imported by writing the same layout.

inline constexpr int kDatasetVersion = 1;

inline Json sensor_to_json(const SensorParams& p) {
  return Json{{"modality", to_string(p.modality)},
              {"beams", p.beams},
              {"max_range", p.max_range},
              {"range_bins", p.range_bins},
              {"range_noise_sigma", p.range_noise_sigma},
              {"dropout_prob", p.dropout_prob},
              {"speckle_sigma", p.speckle_sigma},
              {"multipath_prob", p.multipath_prob},
              {"angular_jitter_sigma", p.angular_jitter_sigma}};
}

inline SensorParams sensor_from_json(const Json& j) {
  SensorParams p;
  p.modality = modality_from_string(j.at("modality").get<std::string>());
  p.beams = j.at("beams").get<int>();
  p.max_range = j.at("max_range").get<double>();
  p.range_bins = j.at("range_bins").get<int>();
  p.range_noise_sigma = j.at("range_noise_sigma").get<double>();
  p.dropout_prob = j.at("dropout_prob").get<double>();
  p.speckle_sigma = j.at("speckle_sigma").get<double>();
  p.multipath_prob = j.at("multipath_prob").get<double>();
  p.angular_jitter_sigma = j.at("angular_jitter_sigma").get<double>();
  return p;
}

namespace detail {

inline Json write_array(const std::filesystem::path& dir,
                        const std::string& file, std::vector<float> values,
                        std::vector<std::int64_t> shape) {
  write_f32(dir / file, values);
  return Json{{"file", file}, {"shape", shape}, {"crc32", crc32_f32(values)}};
}

inline std::vector<float> read_array(const std::filesystem::path& dir,
                                     const Json& entry,
                                     std::vector<std::int64_t> expected_shape) {
  const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
  if (shape != expected_shape)
    throw DataError("array shape mismatch in manifest for " +
                    entry.at("file").get<std::string>());
  std::size_t count = 1;
  for (auto d : shape) count *= static_cast<std::size_t>(d);
  return read_f32(dir / entry.at("file").get<std::string>(), count,
                  entry.at("crc32").get<std::uint32_t>());
}

}  // namespace detail

inline void save_dataset(const std::filesystem::path& dir,
                         const std::vector<Session>& sessions,
                         const Json& extra = Json::object()) {
  std::filesystem::create_directories(dir);
  Json manifest;
  manifest["format"] = "hetloc-dataset";
  manifest["version"] = kDatasetVersion;
  manifest["sessions"] = Json::array();
  for (const auto& s : sessions) {
    const auto T = static_cast<std::int64_t>(s.poses.size());
    const auto B = static_cast<std::int64_t>(s.sensor.beams);

    std::vector<float> poses;
    poses.reserve(3 * s.poses.size());
    for (const auto& p : s.poses) {
      poses.push_back(static_cast<float>(p.x));
      poses.push_back(static_cast<float>(p.y));
      poses.push_back(static_cast<float>(p.theta));
    }
    std::vector<float> odom;
    odom.reserve(3 * s.odometry.size());
    for (const auto& o : s.odometry) {
      odom.push_back(static_cast<float>(o.dx));
      odom.push_back(static_cast<float>(o.dy));
      odom.push_back(static_cast<float>(o.dtheta));
    }
    std::vector<float> angles;
    if (!s.scans.empty())
      angles.assign(s.scans[0].beam_angles.begin(),
                    s.scans[0].beam_angles.end());
    std::vector<float> scan_data;
    std::vector<std::int64_t> scan_shape{T, B};
    if (s.modality == Modality::kRadar)
      scan_shape.push_back(s.sensor.range_bins);
    for (const auto& scan : s.scans)
      scan_data.insert(scan_data.end(), scan.data.begin(), scan.data.end());

    Json arrays;
    arrays["poses"] =
        detail::write_array(dir, s.session_id + "_poses.f32", poses, {T, 3});
    arrays["odometry"] = detail::write_array(
        dir, s.session_id + "_odometry.f32", odom, {T - 1, 3});
    arrays["beam_angles"] = detail::write_array(
        dir, s.session_id + "_beam_angles.f32", angles, {B});
    arrays["scan"] = detail::write_array(dir, s.session_id + "_scan.f32",
                                         scan_data, scan_shape);
    manifest["sessions"].push_back(Json{{"id", s.session_id},
                                        {"modality", to_string(s.modality)},
                                        {"count", T},
                                        {"sensor", sensor_to_json(s.sensor)},
                                        {"arrays", arrays}});
  }
  for (auto it = extra.begin(); it != extra.end(); ++it)
    manifest[it.key()] = it.value();
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

struct Dataset {
  std::vector<Session> sessions;
  Json manifest;

  const Session& session(const std::string& id) const {
    for (const auto& s : sessions)
      if (s.session_id == id) return s;
    throw DataError("dataset has no session '" + id + "'");
  }
};

inline Dataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path))
    throw MissingFileError("missing manifest: " + manifest_path.string());
  Json manifest;
  try {
    manifest = Json::parse(read_text_file(manifest_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("manifest parse error: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "hetloc-dataset")
    throw VersionError("not a hetloc dataset: " + manifest_path.string());
  if (manifest.value("version", -1) != kDatasetVersion)
    throw VersionError("unsupported dataset version " +
                       manifest.value("version", Json()).dump() +
                       " (supported: " + std::to_string(kDatasetVersion) + ")");

  Dataset ds;
  ds.manifest = manifest;
  for (const auto& js : manifest.at("sessions")) {
    Session s;
    s.session_id = js.at("id").get<std::string>();
    s.modality = modality_from_string(js.at("modality").get<std::string>());
    s.sensor = sensor_from_json(js.at("sensor"));
    const auto T = js.at("count").get<std::int64_t>();
    const auto B = static_cast<std::int64_t>(s.sensor.beams);
    const auto& arrays = js.at("arrays");

    const auto poses = detail::read_array(dir, arrays.at("poses"), {T, 3});
    for (std::int64_t t = 0; t < T; ++t)
      s.poses.push_back(
          Pose2D::make(poses[3 * t], poses[3 * t + 1], poses[3 * t + 2]));
    const auto odom =
        detail::read_array(dir, arrays.at("odometry"), {T - 1, 3});
    for (std::int64_t t = 0; t + 1 < T; ++t)
      s.odometry.push_back(PoseOffset::make(odom[3 * t], odom[3 * t + 1],
                                            odom[3 * t + 2]));
    const auto angles =
        detail::read_array(dir, arrays.at("beam_angles"), {B});
    std::vector<std::int64_t> scan_shape{T, B};
    if (s.modality == Modality::kRadar)
      scan_shape.push_back(s.sensor.range_bins);
    const auto scan_data = detail::read_array(dir, arrays.at("scan"), scan_shape);
    const std::size_t per_scan =
        static_cast<std::size_t>(B) *
        (s.modality == Modality::kRadar ? s.sensor.range_bins : 1);
    for (std::int64_t t = 0; t < T; ++t) {
      PolarScan scan;
      scan.modality = s.modality;
      scan.beam_angles.assign(angles.begin(), angles.end());
      scan.max_range = s.sensor.max_range;
      scan.range_bins = s.modality == Modality::kRadar ? s.sensor.range_bins : 0;
      scan.data.assign(scan_data.begin() + t * per_scan,
                       scan_data.begin() + (t + 1) * per_scan);
      s.scans.push_back(std::move(scan));
    }
    ds.sessions.push_back(std::move(s));
  }
  return ds;
}

}  // namespace hetloc
