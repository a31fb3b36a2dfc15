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
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "hetloc/nn.hpp"
#include "hetloc/repr.hpp"

namespace hetloc::placerec {

// ---------------------------------------------------------------------------
// Rotation-invariant descriptor encoder
// ---------------------------------------------------------------------------
//
// Scan context -> two circular convolutions -> |2-D DFT| over a low-frequency
// band -> linear projection -> L2 normalization. Circular column padding
// keeps the features equivariant to sector shifts, and the DFT magnitude
// then makes the descriptor invariant to them.

struct EncoderConfig {
  int rings = 32;
  int sectors = 64;
  int c1 = 8;
  int c2 = 16;
  int spec_rows = 16;
  int spec_cols = 16;
  int descriptor_dim = 128;

  nlohmann::ordered_json to_json() const {
    return {{"rings", rings},         {"sectors", sectors},
            {"c1", c1},               {"c2", c2},
            {"spec_rows", spec_rows}, {"spec_cols", spec_cols},
            {"descriptor_dim", descriptor_dim}};
  }

  void validate() const {
    if (rings < 4 || sectors < 4)
      throw ConfigError("encoder: rings and sectors must be >= 4");
    if (spec_rows > rings || spec_cols > sectors)
      throw ConfigError("encoder: spectrum band " + std::to_string(spec_rows) +
                        "x" + std::to_string(spec_cols) +
                        " exceeds the scan context grid " +
                        std::to_string(rings) + "x" + std::to_string(sectors));
    if (c1 < 1 || c2 < 1 || descriptor_dim < 1)
      throw ConfigError("encoder: channel and descriptor sizes must be >= 1");
  }

  static EncoderConfig from_json(const nlohmann::ordered_json& j) {
    EncoderConfig c;
    c.rings = j.value("rings", 32);
    c.sectors = j.value("sectors", 64);
    c.c1 = j.value("c1", 8);
    c.c2 = j.value("c2", 16);
    c.spec_rows = j.value("spec_rows", std::min(16, c.rings));
    c.spec_cols = j.value("spec_cols", std::min(16, c.sectors));
    c.descriptor_dim = j.value("descriptor_dim", 128);
    c.validate();
    return c;
  }
};

struct EncoderWeights {
  EncoderConfig config;
  nn::Tensor conv1_w, conv1_b;
  nn::Tensor conv2_w, conv2_b;
  nn::Tensor proj_w, proj_b;

  static EncoderWeights init(const EncoderConfig& cfg, Rng& rng) {
    cfg.validate();
    EncoderWeights w;
    w.config = cfg;
    w.conv1_w = nn::make_param({cfg.c1, 1, 3, 3}, 9, rng);
    w.conv1_b = nn::make_zeros_param({cfg.c1});
    w.conv2_w = nn::make_param({cfg.c2, cfg.c1, 3, 3}, cfg.c1 * 9, rng);
    w.conv2_b = nn::make_zeros_param({cfg.c2});
    const int flat = cfg.c2 * cfg.spec_rows * cfg.spec_cols;
    w.proj_w = nn::make_param({cfg.descriptor_dim, flat}, flat, rng);
    w.proj_b = nn::make_zeros_param({cfg.descriptor_dim});
    return w;
  }

  nn::NamedParams named() const {
    return {{"conv1_w", conv1_w}, {"conv1_b", conv1_b},
            {"conv2_w", conv2_w}, {"conv2_b", conv2_b},
            {"proj_w", proj_w},   {"proj_b", proj_b}};
  }

  std::vector<nn::Tensor> params() const { return nn::param_list(named()); }

  static EncoderWeights from_checkpoint(const nn::Checkpoint& ckpt) {
    if (ckpt.kind != "pr-encoder")
      throw DataError("checkpoint kind '" + ckpt.kind +
                      "' is not a place-recognition encoder");
    EncoderWeights w;
    w.config = EncoderConfig::from_json(ckpt.config.at("encoder"));
    const auto& c = w.config;
    const int flat = c.c2 * c.spec_rows * c.spec_cols;
    w.conv1_w = ckpt.take("conv1_w", {c.c1, 1, 3, 3});
    w.conv1_b = ckpt.take("conv1_b", {c.c1});
    w.conv2_w = ckpt.take("conv2_w", {c.c2, c.c1, 3, 3});
    w.conv2_b = ckpt.take("conv2_b", {c.c2});
    w.proj_w = ckpt.take("proj_w", {c.descriptor_dim, flat});
    w.proj_b = ckpt.take("proj_b", {c.descriptor_dim});
    return w;
  }
};

inline nn::Tensor sc_to_tensor(const ScanContextMatrix& sc) {
  return nn::Tensor::from_data({1, sc.rings, sc.sectors}, sc.values);
}

inline nn::Tensor encoder_features(const EncoderWeights& w, const nn::Tensor& x) {
  if (x.shape() != nn::Shape{1, w.config.rings, w.config.sectors})
    throw UsageError("encoder_features: input " + nn::shape_str(x.shape()) +
                     " does not match configured [1," +
                     std::to_string(w.config.rings) + "," +
                     std::to_string(w.config.sectors) + "]");
  nn::Tensor h = nn::relu(nn::conv2d(x, w.conv1_w, w.conv1_b, nn::Pad::kCircularCols));
  return nn::relu(nn::conv2d(h, w.conv2_w, w.conv2_b, nn::Pad::kCircularCols));
}

inline nn::Tensor describe_tensor(const EncoderWeights& w, const nn::Tensor& sc) {
  nn::Tensor feats = encoder_features(w, sc);
  nn::Tensor spec =
      nn::dft2_magnitude(feats, w.config.spec_rows, w.config.spec_cols);
  nn::Tensor flat = nn::reshape(spec, {static_cast<int>(spec.numel())});
  return nn::l2_normalize(nn::linear(flat, w.proj_w, w.proj_b));
}

// Unit-norm fixed-length embedding with retrieval metadata.
struct Descriptor {
  std::vector<float> values;
  Modality modality = Modality::kLidar;
  int place_id = -1;
  std::string session_id;
};

inline Descriptor describe(const ScanContextMatrix& sc,
                           const EncoderWeights& w,
                           Modality modality = Modality::kLidar,
                           int place_id = -1, std::string session_id = {}) {
  nn::NoGradGuard no_grad;
  nn::Tensor d = describe_tensor(w, sc_to_tensor(sc));
  return Descriptor{d.data(), modality, place_id, std::move(session_id)};
}

inline double descriptor_distance(const Descriptor& a, const Descriptor& b) {
  if (a.values.size() != b.values.size())
    throw UsageError("descriptor_distance: dimension mismatch " +
                     std::to_string(a.values.size()) + " vs " +
                     std::to_string(b.values.size()));
  double sq = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double d = static_cast<double>(a.values[i]) - b.values[i];
    sq += d * d;
  }
  return std::sqrt(sq);
}

// ---------------------------------------------------------------------------
// Orientation estimation from encoder spectra
// ---------------------------------------------------------------------------

// Complex 2-D DFT of every encoder feature channel.
struct Spectrum {
  int channels = 0;
  int rows = 0;
  int cols = 0;
  std::vector<double> re, im;  // channels x rows x cols
};

inline Spectrum encode_spectrum(const EncoderWeights& w,
                                const ScanContextMatrix& sc) {
  nn::NoGradGuard no_grad;
  nn::Tensor feats = encoder_features(w, sc_to_tensor(sc));
  const int C = feats.shape()[0], H = feats.shape()[1], W = feats.shape()[2];
  Spectrum spec;
  spec.channels = C;
  spec.rows = H;
  spec.cols = W;
  spec.re.assign(static_cast<std::size_t>(C) * H * W, 0.0);
  spec.im.assign(static_cast<std::size_t>(C) * H * W, 0.0);
  parallel_chunks(C, [&](int ch) {
    const float* xp = feats.data().data() + static_cast<std::size_t>(ch) * H * W;
    // Separable DFT: rows first, then columns.
    std::vector<double> row_re(static_cast<std::size_t>(H) * W);
    std::vector<double> row_im(static_cast<std::size_t>(H) * W);
    for (int m = 0; m < H; ++m)
      for (int v = 0; v < W; ++v) {
        double re = 0.0, im = 0.0;
        for (int n = 0; n < W; ++n) {
          const double phase = kTwoPi * v * n / W;
          const double x = xp[static_cast<std::size_t>(m) * W + n];
          re += x * std::cos(phase);
          im -= x * std::sin(phase);
        }
        row_re[static_cast<std::size_t>(m) * W + v] = re;
        row_im[static_cast<std::size_t>(m) * W + v] = im;
      }
    for (int u = 0; u < H; ++u)
      for (int v = 0; v < W; ++v) {
        double re = 0.0, im = 0.0;
        for (int m = 0; m < H; ++m) {
          const double c = std::cos(kTwoPi * u * m / H);
          const double s = std::sin(kTwoPi * u * m / H);
          const double rr = row_re[static_cast<std::size_t>(m) * W + v];
          const double ri = row_im[static_cast<std::size_t>(m) * W + v];
          re += rr * c + ri * s;
          im += ri * c - rr * s;
        }
        spec.re[(static_cast<std::size_t>(ch) * H + u) * W + v] = re;
        spec.im[(static_cast<std::size_t>(ch) * H + u) * W + v] = im;
      }
  });
  return spec;
}

// Rotation taking a to b, from the circular cross-correlation over sector
// shifts (phase correlation along the sector axis, summed over channels and
// ring frequencies). Returns (2*pi/N_s) * argmax, wrapped to (-pi, pi].
inline double estimate_relative_orientation(const Spectrum& a,
                                            const Spectrum& b) {
  if (a.channels != b.channels || a.rows != b.rows || a.cols != b.cols)
    throw UsageError("estimate_relative_orientation: spectra dims mismatch");
  const int W = a.cols;
  // q(v) = sum_{ch,u} conj(A) * B, collapsed over rows.
  std::vector<double> qre(W, 0.0), qim(W, 0.0);
  for (std::size_t i = 0; i < a.re.size(); ++i) {
    const std::size_t v = i % W;
    qre[v] += a.re[i] * b.re[i] + a.im[i] * b.im[i];
    qim[v] += a.re[i] * b.im[i] - a.im[i] * b.re[i];
  }
  double qnorm = 0.0;
  for (int v = 0; v < W; ++v) qnorm += qre[v] * qre[v] + qim[v] * qim[v];
  if (qnorm <= 0.0)
    throw EstimationError(
        "estimate_relative_orientation: zero spectra, no correlation peak");
  int best_shift = 0;
  double best = -1e300;
  for (int s = 0; s < W; ++s) {
    double corr = 0.0;
    for (int v = 0; v < W; ++v) {
      const double phase = kTwoPi * v * s / W;
      corr += qre[v] * std::cos(phase) - qim[v] * std::sin(phase);
    }
    if (corr > best) {
      best = corr;
      best_shift = s;
    }
  }
  return wrap_angle(kTwoPi * best_shift / W);
}

// ---------------------------------------------------------------------------
// Triplet loss over all modality combinations
// ---------------------------------------------------------------------------

struct TripletEnd {
  int place_id = -1;
  Modality modality = Modality::kLidar;
};

struct TripletSpec {
  TripletEnd anchor;
  TripletEnd positive;
  TripletEnd negative;
  double margin = 0.5;
};

struct PlaceModalities {
  int place_id = -1;
  bool has_lidar = false;
  bool has_radar = false;
};

// All 2^3 {lidar,radar} assignments with anchor/positive at a, negative at b.
inline std::array<TripletSpec, 8> enumerate_combinations(
    const PlaceModalities& a, const PlaceModalities& b, double margin = 0.5) {
  auto require = [](const PlaceModalities& p, Modality m) {
    const bool ok = m == Modality::kLidar ? p.has_lidar : p.has_radar;
    if (!ok)
      throw UsageError("enumerate_combinations: place " +
                       std::to_string(p.place_id) + " has no " + to_string(m) +
                       " observation");
  };
  std::array<TripletSpec, 8> out;
  for (int bits = 0; bits < 8; ++bits) {
    const Modality ma = (bits & 4) ? Modality::kRadar : Modality::kLidar;
    const Modality mp = (bits & 2) ? Modality::kRadar : Modality::kLidar;
    const Modality mn = (bits & 1) ? Modality::kRadar : Modality::kLidar;
    require(a, ma);
    require(a, mp);
    require(b, mn);
    out[bits] = TripletSpec{{a.place_id, ma}, {a.place_id, mp},
                            {b.place_id, mn}, margin};
  }
  return out;
}

struct TripletSample {
  double pos = 0.0;  // Euclidean distance anchor-positive
  double neg = 0.0;  // Euclidean distance anchor-negative
};

// Mean over the batch of max(0, margin + pos - neg).
inline double triplet_loss(std::span<const TripletSample> batch,
                           double margin) {
  if (batch.empty()) throw UsageError("triplet_loss: empty batch");
  double acc = 0.0;
  for (const auto& s : batch) acc += std::max(0.0, margin + s.pos - s.neg);
  return acc / static_cast<double>(batch.size());
}

// ---------------------------------------------------------------------------
// Scan Context baseline
// ---------------------------------------------------------------------------

struct BaselineMatch {
  double distance = 0.0;
  int shift = 0;
};

// Minimum over circular column shifts of the mean column-wise cosine
// distance. Column pairs that are empty on both sides are skipped; a column
// that is empty on exactly one side counts as a full mismatch (distance 1),
// which keeps the measure informative on sparse matrices.
inline BaselineMatch sc_baseline_distance(const ScanContextMatrix& a,
                                          const ScanContextMatrix& b) {
  if (a.rings != b.rings || a.sectors != b.sectors)
    throw UsageError("sc_baseline_distance: dimension mismatch " +
                     std::to_string(a.rings) + "x" + std::to_string(a.sectors) +
                     " vs " + std::to_string(b.rings) + "x" +
                     std::to_string(b.sectors));
  const int R = a.rings, S = a.sectors;
  std::vector<double> a_norm(S, 0.0), b_norm(S, 0.0);
  for (int s = 0; s < S; ++s) {
    double na = 0.0, nb = 0.0;
    for (int r = 0; r < R; ++r) {
      na += static_cast<double>(a.at(r, s)) * a.at(r, s);
      nb += static_cast<double>(b.at(r, s)) * b.at(r, s);
    }
    a_norm[s] = std::sqrt(na);
    b_norm[s] = std::sqrt(nb);
  }
  BaselineMatch best{1.0, 0};
  bool first = true;
  for (int shift = 0; shift < S; ++shift) {
    double acc = 0.0;
    int cols = 0;
    for (int s = 0; s < S; ++s) {
      const int t = (s + shift) % S;
      const bool empty_a = a_norm[s] <= 0.0, empty_b = b_norm[t] <= 0.0;
      if (empty_a && empty_b) continue;
      if (empty_a || empty_b) {
        acc += 1.0;
        ++cols;
        continue;
      }
      double dot = 0.0;
      for (int r = 0; r < R; ++r)
        dot += static_cast<double>(a.at(r, s)) * b.at(r, t);
      acc += 1.0 - dot / (a_norm[s] * b_norm[t]);
      ++cols;
    }
    const double dist = cols > 0 ? acc / cols : 1.0;
    if (first || dist < best.distance) {
      best = {dist, shift};
      first = false;
    }
  }
  best.distance = std::clamp(best.distance, 0.0, 1.0);
  return best;
}

// ---------------------------------------------------------------------------
// Retrieval index and recall evaluation
// ---------------------------------------------------------------------------

struct IndexEntry {
  Descriptor descriptor;
  Pose2D pose;
};

struct PlaceIndex {
  std::vector<IndexEntry> entries;

  void add(Descriptor d, const Pose2D& pose) {
    entries.push_back({std::move(d), pose});
  }
};

struct Match {
  int entry_index = -1;
  double distance = 0.0;
  Pose2D pose;
};

// k nearest entries by descriptor Euclidean distance, ascending, never from
// the query's own session; ties break on (session_id, place_id).
inline std::vector<Match> query(const PlaceIndex& index, const Descriptor& q,
                                int k,
                                std::optional<Modality> target = std::nullopt) {
  std::vector<std::tuple<double, const std::string*, int, int>> ranked;
  ranked.reserve(index.entries.size());
  for (std::size_t i = 0; i < index.entries.size(); ++i) {
    const auto& e = index.entries[i];
    if (e.descriptor.session_id == q.session_id) continue;
    if (target && e.descriptor.modality != *target) continue;
    ranked.emplace_back(descriptor_distance(q, e.descriptor),
                        &e.descriptor.session_id, e.descriptor.place_id,
                        static_cast<int>(i));
  }
  if (ranked.empty())
    throw QueryError("query: no candidate entries outside session '" +
                     q.session_id + "'");
  auto cmp = [](const auto& x, const auto& y) {
    if (std::get<0>(x) != std::get<0>(y)) return std::get<0>(x) < std::get<0>(y);
    if (*std::get<1>(x) != *std::get<1>(y)) return *std::get<1>(x) < *std::get<1>(y);
    return std::get<2>(x) < std::get<2>(y);
  };
  const std::size_t take = std::min<std::size_t>(k, ranked.size());
  std::partial_sort(ranked.begin(), ranked.begin() + take, ranked.end(), cmp);
  std::vector<Match> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    const int idx = std::get<3>(ranked[i]);
    out.push_back({idx, std::get<0>(ranked[i]), index.entries[idx].pose});
  }
  return out;
}

struct PlaceQuery {
  Descriptor descriptor;
  Pose2D pose;  // ground truth position of the query
};

struct PairRecall {
  int n_queries = 0;
  int n_correct = 0;

  double recall_pct() const {
    return n_queries == 0 ? 0.0 : 100.0 * n_correct / n_queries;
  }
};

// Recall@1 per modality pair; pairs with no queries stay absent.
struct RecallReport {
  std::optional<PairRecall> l2l;
  std::optional<PairRecall> r2r;
  std::optional<PairRecall> r2l;
};

inline RecallReport evaluate_recall(const PlaceIndex& index,
                                    std::span<const PlaceQuery> queries,
                                    double distance_threshold) {
  RecallReport report;
  auto tally = [&](std::optional<PairRecall>& pair, const PlaceQuery& q,
                   Modality target) {
    std::vector<Match> top;
    try {
      top = query(index, q.descriptor, 1, target);
    } catch (const QueryError&) {
      return;  // no candidates for this pair; stays absent
    }
    if (!pair) pair = PairRecall{};
    ++pair->n_queries;
    if (euclidean_distance(top[0].pose, q.pose) <= distance_threshold)
      ++pair->n_correct;
  };
  for (const auto& q : queries) {
    if (q.descriptor.modality == Modality::kLidar) {
      tally(report.l2l, q, Modality::kLidar);
    } else {
      tally(report.r2r, q, Modality::kRadar);
      tally(report.r2l, q, Modality::kLidar);
    }
  }
  return report;
}

// Baseline counterpart over raw scan context matrices.
struct ScEntry {
  ScanContextMatrix sc;
  Pose2D pose;
  std::string session_id;
  Modality modality = Modality::kLidar;
};

inline RecallReport evaluate_recall_sc_baseline(
    std::span<const ScEntry> map_entries, std::span<const ScEntry> queries,
    double distance_threshold) {
  RecallReport report;
  auto tally = [&](std::optional<PairRecall>& pair, const ScEntry& q,
                   Modality target) {
    const ScEntry* best = nullptr;
    double best_dist = 0.0;
    for (const auto& e : map_entries) {
      if (e.modality != target || e.session_id == q.session_id) continue;
      const double d = sc_baseline_distance(q.sc, e.sc).distance;
      if (!best || d < best_dist) {
        best = &e;
        best_dist = d;
      }
    }
    if (!best) return;
    if (!pair) pair = PairRecall{};
    ++pair->n_queries;
    if (euclidean_distance(best->pose, q.pose) <= distance_threshold)
      ++pair->n_correct;
  };
  for (const auto& q : queries) {
    if (q.modality == Modality::kLidar) {
      tally(report.l2l, q, Modality::kLidar);
    } else {
      tally(report.r2r, q, Modality::kRadar);
      tally(report.r2l, q, Modality::kLidar);
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct PlaceObservation {
  std::string session_id;
  Pose2D pose;
  ScanContextMatrix sc;
};

// One physical place observed across sessions and modalities. Lidar
// observations are submap scan contexts; radar observations single sweeps.
struct TrainingPlace {
  int place_id = -1;
  Pose2D pose;
  std::vector<PlaceObservation> lidar;
  std::vector<PlaceObservation> radar;
};

struct ReprConfig {
  int bev_cells = 128;
  double bev_resolution = 0.5;
  int sc_rings = 32;
  int sc_sectors = 64;
  int submap_window = 5;  // consecutive scans per lidar submap

  nlohmann::ordered_json to_json() const {
    return {{"bev_cells", bev_cells},
            {"bev_resolution", bev_resolution},
            {"sc_rings", sc_rings},
            {"sc_sectors", sc_sectors},
            {"submap_window", submap_window}};
  }

  static ReprConfig from_json(const nlohmann::ordered_json& j) {
    ReprConfig c;
    c.bev_cells = j.value("bev_cells", 128);
    c.bev_resolution = j.value("bev_resolution", 0.5);
    c.sc_rings = j.value("sc_rings", 32);
    c.sc_sectors = j.value("sc_sectors", 64);
    c.submap_window = j.value("submap_window", 5);
    return c;
  }
};

inline ScanContextMatrix lidar_submap_sc(const Session& session, int t,
                                         const ReprConfig& repr) {
  const int T = static_cast<int>(session.poses.size());
  const int lo = std::max(0, t - repr.submap_window / 2);
  const int hi = std::min(T - 1, lo + repr.submap_window - 1);
  std::vector<PolarScan> scans(session.scans.begin() + lo,
                               session.scans.begin() + hi + 1);
  std::vector<Pose2D> poses(session.poses.begin() + lo,
                            session.poses.begin() + hi + 1);
  // The submap frame is the middle entry; put pose t there (accumulation is
  // order independent).
  const std::size_t mid = poses.size() / 2;
  std::swap(scans[mid], scans[t - lo]);
  std::swap(poses[mid], poses[t - lo]);
  const GridSpec grid =
      GridSpec::centered(repr.bev_cells, repr.bev_cells, repr.bev_resolution);
  const BevImage bev = accumulate_submap(scans, poses, grid);
  return make_scan_context(bev, repr.sc_rings, repr.sc_sectors);
}

inline ScanContextMatrix radar_sc(const Session& session, int t,
                                  const ReprConfig& repr) {
  const GridSpec grid =
      GridSpec::centered(repr.bev_cells, repr.bev_cells, repr.bev_resolution);
  const BevImage bev = scan_to_bev(session.scans[t], grid);
  return make_scan_context(bev, repr.sc_rings, repr.sc_sectors);
}

// Aligns sessions by trajectory index (sessions are perturbed re-traversals,
// so index i is the same physical place in all of them).
inline std::vector<TrainingPlace> build_places(const Dataset& dataset,
                                               const ReprConfig& repr,
                                               int place_stride = 1) {
  if (dataset.sessions.empty()) throw DataError("build_places: empty dataset");
  std::size_t min_T = dataset.sessions[0].poses.size();
  for (const auto& s : dataset.sessions) min_T = std::min(min_T, s.poses.size());
  const int T = static_cast<int>(min_T);
  const int n_places = (T + place_stride - 1) / place_stride;

  std::vector<TrainingPlace> places(n_places);
  for (int p = 0; p < n_places; ++p) {
    places[p].place_id = p;
    places[p].pose = dataset.sessions[0].poses[p * place_stride];
  }
  for (const auto& session : dataset.sessions) {
    std::vector<PlaceObservation> obs(n_places);
    parallel_chunks(n_places, [&](int p) {
      const int t = p * place_stride;
      PlaceObservation& o = obs[p];
      o.session_id = session.session_id;
      o.pose = session.poses[t];
      o.sc = session.modality == Modality::kLidar
                 ? lidar_submap_sc(session, t, repr)
                 : radar_sc(session, t, repr);
    });
    for (int p = 0; p < n_places; ++p) {
      auto& bucket = session.modality == Modality::kLidar ? places[p].lidar
                                                          : places[p].radar;
      bucket.push_back(std::move(obs[p]));
    }
  }
  return places;
}

struct PlaceRecTrainConfig {
  int epochs = 30;
  int pairs_per_epoch = 0;  // 0: one pair per place
  double lr = 0.02;
  double momentum = 0.9;
  double margin = 0.5;
  double neg_min_distance = 15.0;  // meters
  int neg_pool = 4;
  int min_places = 8;
  std::uint64_t seed = 1;

  nlohmann::ordered_json to_json() const {
    return {{"epochs", epochs},
            {"pairs_per_epoch", pairs_per_epoch},
            {"lr", lr},
            {"momentum", momentum},
            {"margin", margin},
            {"neg_min_distance", neg_min_distance},
            {"neg_pool", neg_pool},
            {"min_places", min_places},
            {"seed", seed}};
  }

  static PlaceRecTrainConfig from_json(const nlohmann::ordered_json& j) {
    PlaceRecTrainConfig c;
    c.epochs = j.value("epochs", 30);
    c.pairs_per_epoch = j.value("pairs_per_epoch", 0);
    c.lr = j.value("lr", 0.02);
    c.momentum = j.value("momentum", 0.9);
    c.margin = j.value("margin", 0.5);
    c.neg_min_distance = j.value("neg_min_distance", 15.0);
    c.neg_pool = j.value("neg_pool", 4);
    c.min_places = j.value("min_places", 8);
    c.seed = j.value("seed", std::uint64_t{1});
    return c;
  }
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
};

struct PlaceRecTrainResult {
  EncoderWeights weights;
  std::vector<EpochStats> trace;
  std::int64_t steps = 0;
};

// Joint metric learning over all 8 modality combinations per place pair
// (Eq.-style hinge on descriptor distances), with in-batch hard negatives.
inline PlaceRecTrainResult train_place_recognition(
    const std::vector<TrainingPlace>& places, const EncoderConfig& enc_cfg,
    const PlaceRecTrainConfig& cfg) {
  if (static_cast<int>(places.size()) < cfg.min_places)
    throw DataError("train_place_recognition: need at least " +
                    std::to_string(cfg.min_places) + " places, got " +
                    std::to_string(places.size()));
  for (const auto& p : places)
    if (p.lidar.size() < 2 || p.radar.size() < 2)
      throw DataError(
          "train_place_recognition: every place needs >= 2 lidar and >= 2 "
          "radar observations (multi-session data); place " +
          std::to_string(p.place_id) + " has " +
          std::to_string(p.lidar.size()) + "/" + std::to_string(p.radar.size()));

  Rng rng(cfg.seed);
  EncoderWeights weights = EncoderWeights::init(enc_cfg, rng);
  nn::SgdMomentum opt(cfg.lr, cfg.momentum);
  const auto params = weights.params();

  const int n_places = static_cast<int>(places.size());
  const int pairs_per_epoch =
      cfg.pairs_per_epoch > 0 ? cfg.pairs_per_epoch : n_places;

  PlaceRecTrainResult result;
  result.weights = weights;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    int epoch_terms = 0;
    for (int step = 0; step < pairs_per_epoch; ++step) {
      const auto& a = places[rng.uniform_int(n_places)];
      // Negative pool: places far enough from the anchor.
      std::vector<const TrainingPlace*> pool;
      for (int tries = 0; tries < 64 && static_cast<int>(pool.size()) < cfg.neg_pool;
           ++tries) {
        const auto& b = places[rng.uniform_int(n_places)];
        if (euclidean_distance(a.pose, b.pose) >= cfg.neg_min_distance)
          pool.push_back(&b);
      }
      if (pool.empty()) continue;

      // Two observations per modality of the anchor place.
      auto pick_two = [&](const std::vector<PlaceObservation>& obs) {
        const int i = static_cast<int>(rng.uniform_int(obs.size()));
        int j = static_cast<int>(rng.uniform_int(obs.size() - 1));
        if (j >= i) ++j;
        return std::pair<int, int>{i, j};
      };
      const auto [la, lb] = pick_two(a.lidar);
      const auto [ra, rb] = pick_two(a.radar);
      nn::Tensor anchor_desc[2][2];  // [modality][slot]
      anchor_desc[0][0] = describe_tensor(weights, sc_to_tensor(a.lidar[la].sc));
      anchor_desc[0][1] = describe_tensor(weights, sc_to_tensor(a.lidar[lb].sc));
      anchor_desc[1][0] = describe_tensor(weights, sc_to_tensor(a.radar[ra].sc));
      anchor_desc[1][1] = describe_tensor(weights, sc_to_tensor(a.radar[rb].sc));

      std::vector<nn::Tensor> neg_desc[2];
      for (const auto* b : pool) {
        const auto& lo = b->lidar[rng.uniform_int(b->lidar.size())];
        const auto& ro = b->radar[rng.uniform_int(b->radar.size())];
        neg_desc[0].push_back(describe_tensor(weights, sc_to_tensor(lo.sc)));
        neg_desc[1].push_back(describe_tensor(weights, sc_to_tensor(ro.sc)));
      }

      // The 8 {lidar,radar}^3 combinations; hardest in-pool negative each.
      std::vector<nn::Tensor> hinges;
      hinges.reserve(8);
      for (int bits = 0; bits < 8; ++bits) {
        const int ma = (bits & 4) ? 1 : 0;
        const int mp = (bits & 2) ? 1 : 0;
        const int mn = (bits & 1) ? 1 : 0;
        nn::Tensor anchor = anchor_desc[ma][0];
        nn::Tensor positive = anchor_desc[mp][1];
        nn::Tensor pos_dist = nn::euclidean_distance(anchor, positive);
        int hardest = 0;
        double hardest_dist = 1e300;
        for (std::size_t i = 0; i < neg_desc[mn].size(); ++i) {
          double sq = 0.0;
          const auto& av = anchor.data();
          const auto& nv = neg_desc[mn][i].data();
          for (std::size_t k = 0; k < av.size(); ++k) {
            const double d = static_cast<double>(av[k]) - nv[k];
            sq += d * d;
          }
          if (sq < hardest_dist) {
            hardest_dist = sq;
            hardest = static_cast<int>(i);
          }
        }
        nn::Tensor neg_dist =
            nn::euclidean_distance(anchor, neg_desc[mn][hardest]);
        hinges.push_back(nn::relu(nn::add_scalar(nn::sub(pos_dist, neg_dist),
                                                 cfg.margin)));
      }
      nn::Tensor loss = hinges[0];
      for (std::size_t i = 1; i < hinges.size(); ++i)
        loss = nn::add(loss, hinges[i]);
      loss = nn::scale(loss, 1.0 / static_cast<double>(hinges.size()));

      const double loss_value = loss.item();
      if (!std::isfinite(loss_value))
        throw NumericError("train_place_recognition: non-finite loss at epoch " +
                           std::to_string(epoch));
      epoch_loss += loss_value;
      ++epoch_terms;
      nn::backward(loss, params);
      opt.step(params);
      ++result.steps;
    }
    result.trace.push_back(
        {epoch, epoch_terms > 0 ? epoch_loss / epoch_terms : 0.0});
  }
  result.weights = weights;
  return result;
}

}  // namespace hetloc::placerec
