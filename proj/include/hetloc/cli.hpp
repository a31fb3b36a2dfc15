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

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "hetloc/placerec.hpp"
#include "hetloc/simworld.hpp"
#include "hetloc/tracking.hpp"

namespace hetloc::cli {

namespace fs = std::filesystem;

// Exit-code contract: 0 ok, 2 config, 3 data, 4 numeric, 5 tracking lost.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;
inline constexpr int kExitTrackingLost = 5;

inline Json load_config(const fs::path& path) {
  if (!fs::exists(path))
    throw ConfigError("config file not found: " + path.string());
  try {
    return Json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config parse error in " + path.string() + ": " +
                      e.what());
  }
}

inline void echo_config(const fs::path& out_dir, const Json& config) {
  fs::create_directories(out_dir);
  write_text_file(out_dir / "config.json", config.dump(2) + "\n");
}

namespace detail {

inline SensorParams sensor_overrides(SensorParams base, const Json& j) {
  if (j.contains("beams")) base.beams = j.at("beams").get<int>();
  if (j.contains("max_range")) base.max_range = j.at("max_range").get<double>();
  if (j.contains("range_bins")) base.range_bins = j.at("range_bins").get<int>();
  if (j.contains("range_noise_sigma"))
    base.range_noise_sigma = j.at("range_noise_sigma").get<double>();
  if (j.contains("dropout_prob"))
    base.dropout_prob = j.at("dropout_prob").get<double>();
  if (j.contains("speckle_sigma"))
    base.speckle_sigma = j.at("speckle_sigma").get<double>();
  if (j.contains("multipath_prob"))
    base.multipath_prob = j.at("multipath_prob").get<double>();
  if (j.contains("angular_jitter_sigma"))
    base.angular_jitter_sigma = j.at("angular_jitter_sigma").get<double>();
  base.validate();
  return base;
}

inline WorldParams world_params_from(const Json& j) {
  WorldParams p;
  p.half_extent = j.value("half_extent", 100.0);
  p.obstacles_min = j.value("obstacles_min", 30);
  p.obstacles_max = j.value("obstacles_max", 80);
  p.wall_length_min = j.value("wall_length_min", 5.0);
  p.wall_length_max = j.value("wall_length_max", 30.0);
  p.box_side_min = j.value("box_side_min", 2.0);
  p.box_side_max = j.value("box_side_max", 15.0);
  p.box_fraction = j.value("box_fraction", 0.5);
  p.validate();
  return p;
}

inline tracking::OffsetGrid grid_from(const Json& j) {
  if (j.contains("dx")) return tracking::OffsetGrid::from_json(j);
  return tracking::OffsetGrid::uniform(
      j.value("xy_range", 3.0), j.value("xy_step", 0.5),
      j.value("theta_range_deg", 10.0), j.value("theta_step_deg", 2.0));
}

inline tracking::TrackingConfig tracking_config_from(const Json& j) {
  tracking::TrackingConfig c;
  if (j.contains("grid")) c.grid = grid_from(j.at("grid"));
  c.temperature = j.value("temperature", 0.1);
  c.bev_cells = j.value("bev_cells", 128);
  c.bev_resolution = j.value("bev_resolution", 0.5);
  c.patch_margin_cells = j.value("patch_margin_cells", 16);
  c.meas_floor_trans = j.value("meas_floor_trans", 0.25);
  c.meas_floor_rot = deg2rad(j.value("meas_floor_rot_deg", 1.0));
  c.process_trans_sigma = j.value("process_trans_sigma", 0.1);
  c.process_rot_sigma = deg2rad(j.value("process_rot_sigma_deg", 0.5));
  c.init_trans_sigma = j.value("init_trans_sigma", 0.2);
  c.init_rot_sigma = deg2rad(j.value("init_rot_sigma_deg", 2.0));
  c.mode = tracking::measurement_mode_from_string(
      j.value("measurement_mode", std::string("network")));
  if (j.contains("initial_pose")) {
    const auto& p = j.at("initial_pose");
    if (!p.is_array() || p.size() != 3)
      throw ConfigError("tracking.initial_pose must be [x, y, theta_rad]");
    c.initial_pose = Pose2D::make(p[0].get<double>(), p[1].get<double>(),
                                  p[2].get<double>());
  }
  return c;
}

inline Json tracking_config_json(const tracking::TrackingConfig& c) {
  Json j{{"grid", c.grid.to_json()},
         {"temperature", c.temperature},
         {"bev_cells", c.bev_cells},
         {"bev_resolution", c.bev_resolution},
         {"patch_margin_cells", c.patch_margin_cells},
         {"meas_floor_trans", c.meas_floor_trans},
         {"meas_floor_rot_deg", rad2deg(c.meas_floor_rot)},
         {"process_trans_sigma", c.process_trans_sigma},
         {"process_rot_sigma_deg", rad2deg(c.process_rot_sigma)},
         {"init_trans_sigma", c.init_trans_sigma},
         {"init_rot_sigma_deg", rad2deg(c.init_rot_sigma)},
         {"measurement_mode", tracking::to_string(c.mode)}};
  if (c.initial_pose)
    j["initial_pose"] = {c.initial_pose->x, c.initial_pose->y,
                         c.initial_pose->theta};
  return j;
}

// Grid that covers every session pose plus sensor reach.
inline GridSpec map_grid_for(const Dataset& dataset, double resolution) {
  double min_x = 1e30, min_y = 1e30, max_x = -1e30, max_y = -1e30;
  double reach = 0.0;
  for (const auto& s : dataset.sessions) {
    reach = std::max(reach, s.sensor.max_range);
    for (const auto& p : s.poses) {
      min_x = std::min(min_x, p.x);
      min_y = std::min(min_y, p.y);
      max_x = std::max(max_x, p.x);
      max_y = std::max(max_y, p.y);
    }
  }
  if (min_x > max_x) throw DataError("map_grid_for: dataset has no poses");
  const int w = static_cast<int>((max_x - min_x + 2 * reach) / resolution) + 2;
  const int h = static_cast<int>((max_y - min_y + 2 * reach) / resolution) + 2;
  GridSpec g;
  g.width_cells = w;
  g.height_cells = h;
  g.resolution = resolution;
  g.origin = Pose2D::make(min_x - reach, min_y - reach, 0.0);
  g.validate();
  return g;
}

inline std::string csv_pose(const Pose2D& p) {
  return format_g(p.x) + "," + format_g(p.y) + "," + format_g(p.theta);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

inline int cmd_simulate(const Json& config, const fs::path& out_dir) {
  const std::uint64_t seed = config.value("seed", std::uint64_t{0});
  const WorldParams world_params =
      detail::world_params_from(config.value("world", Json::object()));
  const Json traj_cfg = config.value("trajectory", Json::object());
  const int length = traj_cfg.value("length", 300);
  const double step = traj_cfg.value("step", 2.0);
  if (length < 2 || !(step > 0.0))
    throw ConfigError("simulate: trajectory.length must be >= 2 and "
                      "trajectory.step > 0");
  const Json sessions_cfg = config.value("sessions", Json::object());
  const int n_lidar = sessions_cfg.value("lidar", 2);
  const int n_radar = sessions_cfg.value("radar", 2);
  if (n_lidar < 1 || n_radar < 1)
    throw ConfigError("simulate: need at least one session per modality");
  const double lateral = sessions_cfg.value("lateral_spread", 1.5);
  const double heading_jitter =
      deg2rad(sessions_cfg.value("heading_jitter_deg", 2.0));
  const SensorParams lidar_params = detail::sensor_overrides(
      SensorParams::default_lidar(), config.value("lidar_sensor", Json::object()));
  const SensorParams radar_params = detail::sensor_overrides(
      SensorParams::default_radar(), config.value("radar_sensor", Json::object()));
  const Json odo_cfg = config.value("odometry_noise", Json::object());
  OdomNoise odom_noise;
  odom_noise.trans_sigma = odo_cfg.value("trans_sigma", 0.1);
  odom_noise.rot_sigma = deg2rad(odo_cfg.value("rot_sigma_deg", 0.5));

  Rng root(seed);
  const World world = generate_world(root.next_u64(), world_params);
  const auto base = generate_trajectory(world, root.next_u64(), length, step);

  std::vector<Session> sessions;
  char name[32];
  for (int i = 0; i < n_lidar; ++i) {
    Rng srng = root.split();
    auto traj = i == 0 ? base
                       : perturb_trajectory(world, base, lateral,
                                            heading_jitter, srng);
    std::snprintf(name, sizeof(name), "lidar_%02d", i);
    sessions.push_back(
        make_session(world, traj, lidar_params, odom_noise, srng, name));
  }
  for (int i = 0; i < n_radar; ++i) {
    Rng srng = root.split();
    auto traj = perturb_trajectory(world, base, lateral, heading_jitter, srng);
    std::snprintf(name, sizeof(name), "radar_%02d", i);
    sessions.push_back(
        make_session(world, traj, radar_params, odom_noise, srng, name));
  }

  echo_config(out_dir, config);
  Json extra;
  extra["world"] = {{"seed", world.seed},
                    {"half_extent", world_params.half_extent},
                    {"walls", world.walls.size()},
                    {"boxes", world.boxes.size()}};
  extra["config"] = config;
  save_dataset(out_dir, sessions, extra);
  std::fprintf(stderr, "simulate: wrote %zu sessions x %d poses to %s\n",
               sessions.size(), length, out_dir.string().c_str());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train-pr
// ---------------------------------------------------------------------------

inline int cmd_train_pr(const Json& config, const fs::path& out_dir) {
  if (!config.contains("dataset"))
    throw ConfigError("train-pr: config needs a 'dataset' path");
  const Dataset dataset =
      load_dataset(config.at("dataset").get<std::string>());
  const auto repr = placerec::ReprConfig::from_json(
      config.value("repr", Json::object()));
  const auto enc = placerec::EncoderConfig::from_json(
      config.value("encoder", Json::object()));
  auto train_cfg = placerec::PlaceRecTrainConfig::from_json(
      config.value("training", Json::object()));
  if (config.contains("seed"))
    train_cfg.seed = config.at("seed").get<std::uint64_t>();
  const int stride = config.value("place_stride", 1);

  int n_lidar = 0, n_radar = 0;
  for (const auto& s : dataset.sessions)
    (s.modality == Modality::kLidar ? n_lidar : n_radar) += 1;
  if (n_lidar < 2 || n_radar < 2)
    throw DataError("train-pr: dataset needs >= 2 lidar and >= 2 radar "
                    "sessions for multi-session triplets");

  const auto places = placerec::build_places(dataset, repr, stride);
  auto result = placerec::train_place_recognition(places, enc, train_cfg);

  echo_config(out_dir, config);
  Json ckpt_config;
  ckpt_config["encoder"] = enc.to_json();
  ckpt_config["repr"] = repr.to_json();
  ckpt_config["training"] = train_cfg.to_json();
  nn::save_checkpoint(out_dir / "checkpoint", "pr-encoder", ckpt_config,
                      train_cfg.seed, result.steps, result.weights.named());
  std::string csv = "epoch,mean_loss\n";
  for (const auto& e : result.trace)
    csv += std::to_string(e.epoch) + "," + format_g(e.mean_loss) + "\n";
  write_text_file(out_dir / "loss_trace.csv", csv);
  if (!result.trace.empty())
    std::fprintf(stderr, "train-pr: %d epochs, loss %.4f -> %.4f\n",
                 static_cast<int>(result.trace.size()),
                 result.trace.front().mean_loss, result.trace.back().mean_loss);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train-pt
// ---------------------------------------------------------------------------

inline int cmd_train_pt(const Json& config, const fs::path& out_dir) {
  if (!config.contains("dataset"))
    throw ConfigError("train-pt: config needs a 'dataset' path");
  const Dataset dataset =
      load_dataset(config.at("dataset").get<std::string>());
  const auto unet_cfg =
      nn::UNet3Config::from_json(config.value("unet", Json::object()));
  auto track_cfg =
      detail::tracking_config_from(config.value("tracking", Json::object()));
  if (config.contains("grid"))
    track_cfg.grid = detail::grid_from(config.at("grid"));
  auto train_cfg = tracking::TrackingTrainConfig::from_json(
      config.value("training", Json::object()));
  if (config.contains("seed"))
    train_cfg.seed = config.at("seed").get<std::uint64_t>();
  const int sample_count = config.value("samples", 256);

  const std::string map_id = config.value("map_session", std::string("lidar_00"));
  const std::string train_id =
      config.value("train_session", std::string("radar_00"));
  const Session& map_session = dataset.session(map_id);
  const Session& radar_session = dataset.session(train_id);
  if (map_session.modality != Modality::kLidar)
    throw DataError("train-pt: map session must be lidar");
  if (radar_session.modality != Modality::kRadar)
    throw DataError("train-pt: train session must be radar");

  const GridSpec map_grid =
      detail::map_grid_for(dataset, track_cfg.bev_resolution);
  const BevImage map = tracking::build_global_map(map_session, map_grid);
  Rng sample_rng(train_cfg.seed ^ 0x5EEDF00DULL);
  const auto samples = tracking::build_tracking_samples(
      radar_session, map, track_cfg, sample_count, sample_rng);
  auto result = tracking::train_tracking(samples, track_cfg.grid, unet_cfg,
                                         train_cfg, track_cfg.bev_resolution);

  echo_config(out_dir, config);
  Json ckpt_config;
  ckpt_config["unet"] = unet_cfg.to_json();
  ckpt_config["tracking"] = detail::tracking_config_json(track_cfg);
  ckpt_config["training"] = train_cfg.to_json();
  nn::save_checkpoint(out_dir / "checkpoint", "pt-unet3", ckpt_config,
                      train_cfg.seed, result.steps, result.weights.named());
  std::string csv = "epoch,mean_loss,mean_l1,mean_l2\n";
  for (const auto& e : result.trace)
    csv += std::to_string(e.epoch) + "," + format_g(e.mean_loss) + "," +
           format_g(e.mean_l1) + "," + format_g(e.mean_l2) + "\n";
  write_text_file(out_dir / "loss_trace.csv", csv);
  if (!result.trace.empty())
    std::fprintf(stderr, "train-pt: %d epochs, loss %.4f -> %.4f\n",
                 static_cast<int>(result.trace.size()),
                 result.trace.front().mean_loss, result.trace.back().mean_loss);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval-pr
// ---------------------------------------------------------------------------

namespace detail {

inline Json recall_json(const std::optional<placerec::PairRecall>& pair) {
  if (!pair) return nullptr;
  return Json{{"recall_pct", pair->recall_pct()},
              {"queries", pair->n_queries},
              {"correct", pair->n_correct}};
}

inline void save_index(const fs::path& dir, const placerec::PlaceIndex& index,
                       int descriptor_dim) {
  fs::create_directories(dir);
  std::vector<float> blob;
  blob.reserve(index.entries.size() * descriptor_dim);
  std::string poses_csv = "session_id,place_id,x,y,theta\n";
  for (const auto& e : index.entries) {
    blob.insert(blob.end(), e.descriptor.values.begin(),
                e.descriptor.values.end());
    poses_csv += e.descriptor.session_id + "," +
                 std::to_string(e.descriptor.place_id) + "," +
                 csv_pose(e.pose) + "\n";
  }
  write_f32(dir / "descriptors.f32", blob);
  write_text_file(dir / "poses.csv", poses_csv);
  Json manifest = {{"format", "hetloc-index"},
                   {"version", 1},
                   {"count", index.entries.size()},
                   {"descriptor_dim", descriptor_dim},
                   {"descriptors", {{"file", "descriptors.f32"},
                                    {"crc32", crc32_f32(blob)}}},
                   {"poses", "poses.csv"}};
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace detail

inline int cmd_eval_pr(const Json& config, const fs::path& out_dir) {
  for (const char* key : {"dataset", "checkpoint"})
    if (!config.contains(key))
      throw ConfigError(std::string("eval-pr: config needs '") + key + "'");
  const Dataset dataset =
      load_dataset(config.at("dataset").get<std::string>());
  const auto ckpt =
      nn::load_checkpoint(config.at("checkpoint").get<std::string>());
  const auto weights = placerec::EncoderWeights::from_checkpoint(ckpt);
  const auto repr = placerec::ReprConfig::from_json(ckpt.config.at("repr"));
  if (weights.config.rings != repr.sc_rings ||
      weights.config.sectors != repr.sc_sectors)
    throw DataError("eval-pr: checkpoint encoder/repr configs disagree");
  const double threshold = config.value("threshold", 3.0);
  const int stride = config.value("place_stride", 1);

  const auto places = placerec::build_places(dataset, repr, stride);

  // Map sessions: first session of each modality unless configured.
  std::vector<std::string> map_ids;
  if (config.contains("map_sessions")) {
    map_ids = config.at("map_sessions").get<std::vector<std::string>>();
  } else {
    std::string lidar_id, radar_id;
    for (const auto& s : dataset.sessions) {
      if (s.modality == Modality::kLidar && lidar_id.empty())
        lidar_id = s.session_id;
      if (s.modality == Modality::kRadar && radar_id.empty())
        radar_id = s.session_id;
    }
    if (!lidar_id.empty()) map_ids.push_back(lidar_id);
    if (!radar_id.empty()) map_ids.push_back(radar_id);
  }
  auto is_map = [&](const std::string& id) {
    return std::find(map_ids.begin(), map_ids.end(), id) != map_ids.end();
  };

  placerec::PlaceIndex index;
  std::vector<placerec::PlaceQuery> queries;
  std::vector<placerec::ScEntry> base_map, base_queries;
  for (const auto& place : places) {
    for (const auto* bucket : {&place.lidar, &place.radar}) {
      const Modality modality =
          bucket == &place.lidar ? Modality::kLidar : Modality::kRadar;
      for (const auto& obs : *bucket) {
        placerec::Descriptor d = placerec::describe(
            obs.sc, weights, modality, place.place_id, obs.session_id);
        placerec::ScEntry e{obs.sc, obs.pose, obs.session_id, modality};
        if (is_map(obs.session_id)) {
          index.add(std::move(d), obs.pose);
          base_map.push_back(std::move(e));
        } else {
          queries.push_back({std::move(d), obs.pose});
          base_queries.push_back(std::move(e));
        }
      }
    }
  }
  if (index.entries.empty() || queries.empty())
    throw DataError("eval-pr: need both map and query sessions");

  const auto learned = placerec::evaluate_recall(index, queries, threshold);
  const auto baseline = placerec::evaluate_recall_sc_baseline(
      base_map, base_queries, threshold);

  echo_config(out_dir, config);
  detail::save_index(out_dir / "index", index, weights.config.descriptor_dim);

  // Per-query rank-1 detail for the learned method.
  std::string csv = "method,pair,session_id,place_id,rank1_distance,correct\n";
  for (const auto& q : queries) {
    auto add_row = [&](const char* pair, Modality target) {
      std::vector<placerec::Match> top;
      try {
        top = placerec::query(index, q.descriptor, 1, target);
      } catch (const QueryError&) {
        return;
      }
      const bool correct =
          euclidean_distance(top[0].pose, q.pose) <= threshold;
      csv += std::string("learned,") + pair + "," + q.descriptor.session_id +
             "," + std::to_string(q.descriptor.place_id) + "," +
             format_g(top[0].distance) + "," + (correct ? "1" : "0") + "\n";
    };
    if (q.descriptor.modality == Modality::kLidar) {
      add_row("L2L", Modality::kLidar);
    } else {
      add_row("R2R", Modality::kRadar);
      add_row("R2L", Modality::kLidar);
    }
  }
  write_text_file(out_dir / "per_query.csv", csv);

  Json report;
  report["kind"] = "eval-pr";
  report["threshold_m"] = threshold;
  report["learned"] = {{"L2L", detail::recall_json(learned.l2l)},
                       {"R2R", detail::recall_json(learned.r2r)},
                       {"R2L", detail::recall_json(learned.r2l)}};
  report["scan_context_baseline"] = {
      {"L2L", detail::recall_json(baseline.l2l)},
      {"R2R", detail::recall_json(baseline.r2r)},
      {"R2L", detail::recall_json(baseline.r2l)}};
  write_text_file(out_dir / "report.json", report.dump(2) + "\n");
  std::fprintf(stderr, "eval-pr: report written to %s\n",
               (out_dir / "report.json").string().c_str());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval-pt
// ---------------------------------------------------------------------------

inline int cmd_eval_pt(const Json& config, const fs::path& out_dir) {
  for (const char* key : {"dataset", "checkpoint"})
    if (!config.contains(key))
      throw ConfigError(std::string("eval-pt: config needs '") + key + "'");
  const Dataset dataset =
      load_dataset(config.at("dataset").get<std::string>());
  const auto ckpt =
      nn::load_checkpoint(config.at("checkpoint").get<std::string>());
  const auto weights = nn::UNet3Weights::from_checkpoint(ckpt);
  // Tracking parameters: checkpoint values, overridable by the eval config.
  Json track_json = ckpt.config.value("tracking", Json::object());
  if (config.contains("tracking"))
    for (auto it = config.at("tracking").begin();
         it != config.at("tracking").end(); ++it)
      track_json[it.key()] = it.value();
  const auto track_cfg = detail::tracking_config_from(track_json);

  const std::string map_id = config.value("map_session", std::string("lidar_00"));
  const Session& map_session = dataset.session(map_id);
  if (map_session.modality != Modality::kLidar)
    throw DataError("eval-pt: map session must be lidar");
  std::vector<std::string> query_ids;
  if (config.contains("query_sessions")) {
    query_ids = config.at("query_sessions").get<std::vector<std::string>>();
  } else {
    for (const auto& s : dataset.sessions)
      if (s.modality == Modality::kRadar) query_ids.push_back(s.session_id);
  }
  if (query_ids.empty()) throw DataError("eval-pt: no radar query sessions");

  const GridSpec map_grid =
      detail::map_grid_for(dataset, track_cfg.bev_resolution);
  const BevImage map = tracking::build_global_map(map_session, map_grid);

  echo_config(out_dir, config);
  Json report;
  report["kind"] = "eval-pt";
  report["map_session"] = map_id;
  report["tracking"] = detail::tracking_config_json(track_cfg);
  report["sessions"] = Json::array();
  bool any_lost = false;

  for (const auto& id : query_ids) {
    const Session& session = dataset.session(id);
    if (session.modality != Modality::kRadar)
      throw DataError("eval-pt: query session " + id + " is not radar");
    tracking::TrackResult result;
    bool lost = false;
    int lost_step = -1;
    try {
      result = tracking::track(session, map, weights, track_cfg);
    } catch (const tracking::TrackingLostError& e) {
      result = e.partial;
      lost = true;
      lost_step = e.step;
      any_lost = true;
    }

    // Dead reckoning reference on the same session.
    tracking::TrackingConfig dr_cfg = track_cfg;
    dr_cfg.mode = tracking::MeasurementMode::kDisabled;
    tracking::TrackResult dead;
    try {
      dead = tracking::track(session, map, weights, dr_cfg);
    } catch (const tracking::TrackingLostError& e) {
      dead = e.partial;
    }

    const std::size_t n =
        std::min(result.trajectory.size(), dead.trajectory.size());
    const std::vector<Pose2D> gt(session.poses.begin(),
                                 session.poses.begin() + n);
    const auto rmse = tracking::evaluate_rmse(
        std::vector<Pose2D>(result.trajectory.begin(),
                            result.trajectory.begin() + n),
        gt);
    const auto dr_rmse = tracking::evaluate_rmse(
        std::vector<Pose2D>(dead.trajectory.begin(),
                            dead.trajectory.begin() + n),
        gt);

    std::string csv =
        "step,t,est_x,est_y,est_theta_rad,gt_x,gt_y,gt_theta_rad,"
        "meas_dx,meas_dy,meas_dtheta,entropy_x,entropy_y,entropy_theta\n";
    csv += "0,0," + detail::csv_pose(result.trajectory[0]) + "," +
           detail::csv_pose(session.poses[0]) + ",0,0,0,0,0,0\n";
    for (const auto& d : result.steps)
      csv += std::to_string(d.step) + "," + std::to_string(d.step) + "," +
             detail::csv_pose(d.estimate) + "," +
             detail::csv_pose(d.ground_truth) + "," + format_g(d.measured.dx) +
             "," + format_g(d.measured.dy) + "," + format_g(d.measured.dtheta) +
             "," + format_g(d.entropy_x) + "," + format_g(d.entropy_y) + "," +
             format_g(d.entropy_theta) + "\n";
    write_text_file(out_dir / ("trajectory_" + id + ".csv"), csv);

    std::vector<SvgPath> paths(2);
    paths[0].color = "#888888";
    paths[0].label = "ground truth";
    for (const auto& p : gt) paths[0].points.push_back(p.position());
    paths[1].color = "#d62728";
    paths[1].label = "estimate";
    for (const auto& p : result.trajectory)
      paths[1].points.push_back(p.position());
    write_text_file(out_dir / ("overlay_" + id + ".svg"),
                    render_svg_paths(paths));

    report["sessions"].push_back(
        {{"id", id},
         {"steps", n},
         {"trans_rmse_m", rmse.trans_m},
         {"rot_rmse_deg", rmse.rot_deg},
         {"tracking_lost", lost},
         {"lost_at_step", lost_step},
         {"dead_reckoning",
          {{"trans_rmse_m", dr_rmse.trans_m}, {"rot_rmse_deg", dr_rmse.rot_deg}}}});
    std::fprintf(stderr,
                 "eval-pt: %s rmse %.3f m / %.3f deg (dead reckoning %.3f m)%s\n",
                 id.c_str(), rmse.trans_m, rmse.rot_deg, dr_rmse.trans_m,
                 lost ? " [LOST]" : "");
  }
  write_text_file(out_dir / "report.json", report.dump(2) + "\n");
  return any_lost ? kExitTrackingLost : kExitOk;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

inline int cmd_report(const Json& config, const fs::path& out_dir) {
  if (!config.contains("runs"))
    throw ConfigError("report: config needs a 'runs' list of directories");
  Json summary;
  summary["runs"] = Json::array();
  std::string csv = "run,metric,value\n";
  for (const auto& run : config.at("runs")) {
    const fs::path dir = run.get<std::string>();
    const fs::path report_path = dir / "report.json";
    if (!fs::exists(report_path))
      throw MissingFileError("report: missing " + report_path.string());
    Json r;
    try {
      r = Json::parse(read_text_file(report_path));
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError("report: cannot parse " + report_path.string() + ": " +
                      e.what());
    }
    summary["runs"].push_back({{"path", dir.string()}, {"report", r}});
    const std::string kind = r.value("kind", "");
    if (kind == "eval-pr") {
      for (const char* method : {"learned", "scan_context_baseline"})
        for (const char* pair : {"L2L", "R2R", "R2L"}) {
          const auto& cell = r.at(method).at(pair);
          if (!cell.is_null())
            csv += dir.string() + "," + method + "_" + pair + "_recall_pct," +
                   format_g(cell.at("recall_pct").get<double>()) + "\n";
        }
    } else if (kind == "eval-pt") {
      for (const auto& s : r.at("sessions")) {
        const std::string id = s.at("id").get<std::string>();
        csv += dir.string() + "," + id + "_trans_rmse_m," +
               format_g(s.at("trans_rmse_m").get<double>()) + "\n";
        csv += dir.string() + "," + id + "_rot_rmse_deg," +
               format_g(s.at("rot_rmse_deg").get<double>()) + "\n";
      }
    }
  }
  echo_config(out_dir, config);
  write_text_file(out_dir / "summary.json", summary.dump(2) + "\n");
  write_text_file(out_dir / "summary.csv", csv);
  std::fputs(csv.c_str(), stdout);
  return kExitOk;
}

}  // namespace hetloc::cli
