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
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hetloc/nn.hpp"
#include "hetloc/repr.hpp"
#include "hetloc/unet.hpp"

namespace hetloc::tracking {

// ---------------------------------------------------------------------------
// Offset grid and distributions
// ---------------------------------------------------------------------------

// Discrete search supports per axis: odd lengths, uniform, symmetric about a
// single zero entry.
struct OffsetGrid {
  std::vector<double> dx;      // meters
  std::vector<double> dy;      // meters
  std::vector<double> dtheta;  // radians

  int nx() const { return static_cast<int>(dx.size()); }
  int ny() const { return static_cast<int>(dy.size()); }
  int nt() const { return static_cast<int>(dtheta.size()); }

  static std::vector<double> axis(double range, double step) {
    const int half = static_cast<int>(std::round(range / step));
    std::vector<double> v;
    for (int i = -half; i <= half; ++i) v.push_back(i * step);
    return v;
  }

  // Default: +/-3 m at 0.5 m and +/-10 deg at 2 deg.
  static OffsetGrid uniform(double xy_range = 3.0, double xy_step = 0.5,
                            double theta_range_deg = 10.0,
                            double theta_step_deg = 2.0) {
    OffsetGrid g;
    g.dx = axis(xy_range, xy_step);
    g.dy = axis(xy_range, xy_step);
    g.dtheta = axis(deg2rad(theta_range_deg), deg2rad(theta_step_deg));
    g.validate();
    return g;
  }

  void validate() const {
    for (const auto* v : {&dx, &dy, &dtheta}) {
      if (v->size() % 2 == 0 || v->empty())
        throw ConfigError("OffsetGrid: axes must have odd length");
      int zeros = 0;
      for (std::size_t i = 0; i < v->size(); ++i) {
        if ((*v)[i] == 0.0) ++zeros;
        if (i > 0 && (*v)[i] <= (*v)[i - 1])
          throw ConfigError("OffsetGrid: axes must be ascending");
      }
      if (zeros != 1)
        throw ConfigError("OffsetGrid: each axis needs exactly one zero");
    }
  }

  nlohmann::ordered_json to_json() const {
    return {{"dx", dx}, {"dy", dy}, {"dtheta", dtheta}};
  }

  static OffsetGrid from_json(const nlohmann::ordered_json& j) {
    OffsetGrid g;
    g.dx = j.at("dx").get<std::vector<double>>();
    g.dy = j.at("dy").get<std::vector<double>>();
    g.dtheta = j.at("dtheta").get<std::vector<double>>();
    g.validate();
    return g;
  }
};

inline int nearest_bin(const std::vector<double>& values, double v) {
  int best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (std::abs(values[i] - v) < std::abs(values[best] - v))
      best = static_cast<int>(i);
  return best;
}

// Per-axis probability masses over the grid.
struct OffsetDistribution {
  std::vector<double> p_x, p_y, p_theta;
};

// One-hot targets (bin indices) plus the continuous offset they quantize.
struct GroundTruthOffset {
  int ix = 0, iy = 0, itheta = 0;
  PoseOffset continuous;
};

inline GroundTruthOffset make_ground_truth(const OffsetGrid& grid,
                                           const PoseOffset& offset) {
  auto quantize = [](const std::vector<double>& axis, double v,
                     const char* name) {
    const double step = axis.size() > 1 ? axis[1] - axis[0] : 1.0;
    if (v < axis.front() - step / 2 - 1e-12 ||
        v > axis.back() + step / 2 + 1e-12)
      throw DataError(std::string("ground-truth offset ") + name + "=" +
                      format_g(v) + " lies outside the offset grid");
    return nearest_bin(axis, v);
  };
  GroundTruthOffset gt;
  gt.continuous = offset;
  gt.ix = quantize(grid.dx, offset.dx, "dx");
  gt.iy = quantize(grid.dy, offset.dy, "dy");
  gt.itheta = quantize(grid.dtheta, offset.dtheta, "dtheta");
  return gt;
}

struct LossWeights {
  double alpha = 1.0;  // rotation term weight

  void validate() const {
    if (!(alpha > 0.0)) throw ConfigError("LossWeights: alpha must be > 0");
  }
};

// Cross entropy against one-hot targets, probabilities floored at 1e-12.
inline double loss_L1(const OffsetDistribution& dist,
                      const GroundTruthOffset& gt) {
  if (gt.ix >= static_cast<int>(dist.p_x.size()) ||
      gt.iy >= static_cast<int>(dist.p_y.size()) ||
      gt.itheta >= static_cast<int>(dist.p_theta.size()))
    throw UsageError("loss_L1: target bins exceed distribution grid");
  auto term = [](const std::vector<double>& p, int idx) {
    return -std::log(std::max(p[idx], 1e-12));
  };
  return term(dist.p_x, gt.ix) + term(dist.p_y, gt.iy) +
         term(dist.p_theta, gt.itheta);
}

// Squared errors with the rotation term weighted by alpha; the angular
// difference is wrapped.
inline double loss_L2(const PoseOffset& est, const PoseOffset& gt,
                      const LossWeights& w) {
  const double ex = est.dx - gt.dx;
  const double ey = est.dy - gt.dy;
  const double et = wrap_angle(est.dtheta - gt.dtheta);
  return ex * ex + ey * ey + w.alpha * et * et;
}

// ---------------------------------------------------------------------------
// Map patches and transformed candidates
// ---------------------------------------------------------------------------

// Builds a global occupancy BEV from a lidar session (scan endpoints,
// max-pooled).
inline BevImage build_global_map(const Session& session, const GridSpec& grid) {
  if (session.modality != Modality::kLidar)
    throw UsageError("build_global_map: map session must be lidar");
  BevImage map = BevImage::zeros(grid, Modality::kLidar);
  for (std::size_t i = 0; i < session.scans.size(); ++i) {
    const PolarScan& scan = session.scans[i];
    for (std::size_t k = 0; k < scan.beam_angles.size(); ++k) {
      const double r = scan.data[k];
      if (r >= scan.max_range) continue;
      const double a = scan.beam_angles[k];
      const Vec2 world = transform_point(session.poses[i],
                                         {r * std::cos(a), r * std::sin(a)});
      const Vec2 cell = grid.local_to_cell(world);
      const int c = static_cast<int>(std::lround(cell.x));
      const int rr = static_cast<int>(std::lround(cell.y));
      if (grid.contains(c, rr)) map.at(c, rr) = 1.0f;
    }
  }
  return map;
}

// Square crop of the global map resampled in the frame of `center`; valid is
// 0 where the sample falls outside the map.
struct MapPatch {
  int size_cells = 0;
  double resolution = 0.0;
  Pose2D center;
  std::vector<float> pixels;
  std::vector<float> valid;
};

inline MapPatch crop_map_patch(const BevImage& map, const Pose2D& center,
                               int size_cells, double resolution) {
  MapPatch patch;
  patch.size_cells = size_cells;
  patch.resolution = resolution;
  patch.center = center;
  patch.pixels.assign(static_cast<std::size_t>(size_cells) * size_cells, 0.0f);
  patch.valid.assign(patch.pixels.size(), 0.0f);
  const int half = size_cells / 2;
  const auto& g = map.grid;
  for (int r = 0; r < size_cells; ++r) {
    for (int c = 0; c < size_cells; ++c) {
      const Vec2 local{(c - half) * resolution, (r - half) * resolution};
      const Vec2 world = transform_point(center, local);
      const Vec2 cell = g.local_to_cell(world);
      const int c0 = static_cast<int>(std::floor(cell.x));
      const int r0 = static_cast<int>(std::floor(cell.y));
      if (c0 < 0 || r0 < 0 || c0 + 1 >= g.width_cells ||
          r0 + 1 >= g.height_cells)
        continue;
      const double fx = cell.x - c0, fy = cell.y - r0;
      const double v =
          (1 - fx) * (1 - fy) * map.at(c0, r0) + fx * (1 - fy) * map.at(c0 + 1, r0) +
          (1 - fx) * fy * map.at(c0, r0 + 1) + fx * fy * map.at(c0 + 1, r0 + 1);
      const std::size_t idx = static_cast<std::size_t>(r) * size_cells + c;
      patch.pixels[idx] = static_cast<float>(v);
      patch.valid[idx] = 1.0f;
    }
  }
  return patch;
}

// One rotated candidate image plus its validity mask.
struct Candidate {
  double dtheta = 0.0;
  std::vector<float> pixels;
  std::vector<float> valid;
};

struct CandidateSet {
  int patch_size = 0;
  int window = 0;  // radar BEV side, cells
  double resolution = 0.0;
  OffsetGrid grid;
  std::vector<Candidate> rotations;  // one per dtheta bin
};

namespace detail {

// Rotation about the patch center: out(u) = in(R(dtheta) u), bilinear with
// zero padding; validity requires full support of all four taps.
inline Candidate rotate_patch(const std::vector<float>& pixels,
                              const std::vector<float>& valid, int size,
                              double dtheta) {
  Candidate out;
  out.dtheta = dtheta;
  out.pixels.assign(static_cast<std::size_t>(size) * size, 0.0f);
  out.valid.assign(out.pixels.size(), 0.0f);
  const double cc = size / 2;
  const double cs = std::cos(dtheta), sn = std::sin(dtheta);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      const double ux = c - cc, uy = r - cc;
      const double sx = cs * ux - sn * uy + cc;
      const double sy = sn * ux + cs * uy + cc;
      const int c0 = static_cast<int>(std::floor(sx));
      const int r0 = static_cast<int>(std::floor(sy));
      if (c0 < 0 || r0 < 0 || c0 + 1 >= size || r0 + 1 >= size) continue;
      const double fx = sx - c0, fy = sy - r0;
      auto idx = [size](int rr, int ccc) {
        return static_cast<std::size_t>(rr) * size + ccc;
      };
      const double v = (1 - fx) * (1 - fy) * pixels[idx(r0, c0)] +
                       fx * (1 - fy) * pixels[idx(r0, c0 + 1)] +
                       (1 - fx) * fy * pixels[idx(r0 + 1, c0)] +
                       fx * fy * pixels[idx(r0 + 1, c0 + 1)];
      const double m = (1 - fx) * (1 - fy) * valid[idx(r0, c0)] +
                       fx * (1 - fy) * valid[idx(r0, c0 + 1)] +
                       (1 - fx) * fy * valid[idx(r0 + 1, c0)] +
                       fx * fy * valid[idx(r0 + 1, c0 + 1)];
      const std::size_t o = idx(r, c);
      out.pixels[o] = static_cast<float>(v);
      out.valid[o] = m >= 0.999 ? 1.0f : 0.0f;
    }
  }
  return out;
}

}  // namespace detail

inline int shift_cells(double offset_m, double resolution) {
  return static_cast<int>(std::lround(offset_m / resolution));
}

// Rotated map candidates for every dtheta bin; translations are realized
// later as window shifts over the candidate feature maps, which samples the
// identical positions as transforming the patch per offset explicitly.
inline CandidateSet generate_candidates(const MapPatch& patch,
                                        const OffsetGrid& grid, int window) {
  grid.validate();
  const int margin = (patch.size_cells - window) / 2;
  int required = 0;
  for (double v : grid.dx)
    required = std::max(required, std::abs(shift_cells(v, patch.resolution)));
  for (double v : grid.dy)
    required = std::max(required, std::abs(shift_cells(v, patch.resolution)));
  if (margin < required || (patch.size_cells - window) % 2 != 0)
    throw UsageError("generate_candidates: patch margin " +
                     std::to_string(margin) + " cells cannot realize the " +
                     "offset grid; need an even-margin patch of at least " +
                     std::to_string(window + 2 * required) + " cells");
  CandidateSet set;
  set.patch_size = patch.size_cells;
  set.window = window;
  set.resolution = patch.resolution;
  set.grid = grid;
  set.rotations.resize(grid.nt());
  parallel_chunks(grid.nt(), [&](int k) {
    set.rotations[k] = detail::rotate_patch(patch.pixels, patch.valid,
                                            patch.size_cells, grid.dtheta[k]);
  });
  return set;
}

// Reference transform used by the equivalence tests: rotate about the patch
// center, then shift the crop window by whole cells.
inline Candidate transform_patch_explicit(const MapPatch& patch, double dx,
                                          double dy, double dtheta,
                                          int window) {
  const Candidate rotated = detail::rotate_patch(
      patch.pixels, patch.valid, patch.size_cells, dtheta);
  const int margin = (patch.size_cells - window) / 2;
  const int sx = shift_cells(dx, patch.resolution);
  const int sy = shift_cells(dy, patch.resolution);
  Candidate out;
  out.dtheta = dtheta;
  out.pixels.assign(static_cast<std::size_t>(window) * window, 0.0f);
  out.valid.assign(out.pixels.size(), 0.0f);
  for (int r = 0; r < window; ++r)
    for (int c = 0; c < window; ++c) {
      const int pr = r + margin + sy, pc = c + margin + sx;
      const std::size_t src =
          static_cast<std::size_t>(pr) * patch.size_cells + pc;
      out.pixels[static_cast<std::size_t>(r) * window + c] = rotated.pixels[src];
      out.valid[static_cast<std::size_t>(r) * window + c] = rotated.valid[src];
    }
  return out;
}

// ---------------------------------------------------------------------------
// Similarity volume (autodiff op)
// ---------------------------------------------------------------------------

struct CandidateFeatures {
  nn::Tensor features;       // [E, P, P]
  std::vector<float> valid;  // P*P mask
};

// score(k,j,i) = -RMS feature difference between the radar feature map and
// the candidate-k window shifted by (dx_i, dy_j), over valid candidate
// cells. Output shape [Nt, Ny, Nx]; fully differentiable w.r.t. both feature
// sets (subgradient 0 where the difference vanishes).
inline nn::Tensor similarity_volume(const nn::Tensor& radar_feat,
                                    const std::vector<CandidateFeatures>& candidates,
                                    const OffsetGrid& grid, double resolution) {
  if (radar_feat.shape().size() != 3)
    throw UsageError("similarity_volume: radar features must be [E,H,W], got " +
                     nn::shape_str(radar_feat.shape()));
  if (candidates.size() != static_cast<std::size_t>(grid.nt()))
    throw UsageError("similarity_volume: candidate count " +
                     std::to_string(candidates.size()) +
                     " does not match grid dtheta bins " +
                     std::to_string(grid.nt()));
  const int E = radar_feat.shape()[0];
  const int win = radar_feat.shape()[1];
  if (radar_feat.shape()[2] != win)
    throw UsageError("similarity_volume: radar feature map must be square");
  const int P = candidates[0].features.shape()[1];
  for (const auto& c : candidates)
    if (c.features.shape() != nn::Shape{E, P, P})
      throw UsageError("similarity_volume: candidate features " +
                       nn::shape_str(c.features.shape()) +
                       " do not match [E,P,P] with E=" + std::to_string(E));
  const int margin = (P - win) / 2;
  const int Nx = grid.nx(), Ny = grid.ny(), Nt = grid.nt();
  std::vector<int> sx(Nx), sy(Ny);
  for (int i = 0; i < Nx; ++i) {
    sx[i] = shift_cells(grid.dx[i], resolution);
    if (std::abs(sx[i]) > margin)
      throw UsageError("similarity_volume: dx shift exceeds patch margin of " +
                       std::to_string(margin) + " cells");
  }
  for (int j = 0; j < Ny; ++j) {
    sy[j] = shift_cells(grid.dy[j], resolution);
    if (std::abs(sy[j]) > margin)
      throw UsageError("similarity_volume: dy shift exceeds patch margin of " +
                       std::to_string(margin) + " cells");
  }

  const std::size_t vol = static_cast<std::size_t>(Nt) * Ny * Nx;
  auto sum_sq = std::make_shared<std::vector<double>>(vol, 0.0);
  auto counts = std::make_shared<std::vector<int>>(vol, 0);

  std::vector<nn::Tensor> parents{radar_feat};
  for (const auto& c : candidates) parents.push_back(c.features);
  auto rn = radar_feat.node();
  std::vector<std::shared_ptr<nn::TensorNode>> cnodes;
  std::vector<const std::vector<float>*> cvalid;
  for (const auto& c : candidates) {
    cnodes.push_back(c.features.node());
    cvalid.push_back(&c.valid);
  }

  nn::Tensor out = nn::detail::make_result(
      {Nt, Ny, Nx}, parents,
      [rn, cnodes, cvalid, sum_sq, counts, sx, sy, E, win, P, margin, Nx, Ny,
       Nt](nn::TensorNode& o) {
        const bool want_radar = rn->requires_grad;
        std::vector<std::vector<float>> radar_partial(
            Nt, std::vector<float>());
        parallel_chunks(Nt, [&](int k) {
          auto& cn = *cnodes[k];
          const auto& mask = *cvalid[k];
          std::vector<float>* rp = nullptr;
          if (want_radar) {
            radar_partial[k].assign(rn->data.size(), 0.0f);
            rp = &radar_partial[k];
          }
          for (int j = 0; j < Ny; ++j) {
            for (int i = 0; i < Nx; ++i) {
              const std::size_t bin =
                  (static_cast<std::size_t>(k) * Ny + j) * Nx + i;
              const double S = (*sum_sq)[bin];
              const int n = (*counts)[bin];
              const float g = o.grad[bin];
              if (g == 0.0f || n == 0 || S <= 0.0) continue;
              // score = -sqrt(S/n): d/d(fr - fc) = -(fr - fc) / sqrt(S*n)
              const double coef = -static_cast<double>(g) / std::sqrt(S * n);
              for (int r = 0; r < win; ++r) {
                const int pr = r + margin + sy[j];
                for (int c = 0; c < win; ++c) {
                  const int pc = c + margin + sx[i];
                  if (mask[static_cast<std::size_t>(pr) * P + pc] < 0.5f)
                    continue;
                  for (int e = 0; e < E; ++e) {
                    const std::size_t ri =
                        (static_cast<std::size_t>(e) * win + r) * win + c;
                    const std::size_t ci =
                        (static_cast<std::size_t>(e) * P + pr) * P + pc;
                    const float d = static_cast<float>(
                        coef * (rn->data[ri] - cn.data[ci]));
                    if (rp) (*rp)[ri] += d;
                    if (cn.requires_grad) cn.grad[ci] -= d;
                  }
                }
              }
            }
          }
        });
        if (want_radar)
          for (int k = 0; k < Nt; ++k)
            for (std::size_t i = 0; i < rn->grad.size(); ++i)
              rn->grad[i] += radar_partial[k][i];
      });

  parallel_chunks(Nt, [&](int k) {
    const auto& cn = *cnodes[k];
    const auto& mask = *cvalid[k];
    for (int j = 0; j < Ny; ++j) {
      for (int i = 0; i < Nx; ++i) {
        double S = 0.0;
        int n = 0;
        for (int r = 0; r < win; ++r) {
          const int pr = r + margin + sy[j];
          for (int c = 0; c < win; ++c) {
            const int pc = c + margin + sx[i];
            if (mask[static_cast<std::size_t>(pr) * P + pc] < 0.5f) continue;
            ++n;
            for (int e = 0; e < E; ++e) {
              const double d =
                  static_cast<double>(
                      radar_feat.data()[(static_cast<std::size_t>(e) * win + r) *
                                            win +
                                        c]) -
                  cn.data[(static_cast<std::size_t>(e) * P + pr) * P + pc];
              S += d * d;
            }
          }
        }
        const std::size_t bin = (static_cast<std::size_t>(k) * Ny + j) * Nx + i;
        (*sum_sq)[bin] = S;
        (*counts)[bin] = n;
        out.data()[bin] =
            n > 0 ? static_cast<float>(-std::sqrt(S / n)) : -1e6f;
      }
    }
  });
  return out;
}

// Max-marginalization of a [Nt,Ny,Nx] score volume onto one axis
// (0=theta, 1=y, 2=x); gradient routes to the argmax element.
inline nn::Tensor max_marginal(const nn::Tensor& scores, int axis) {
  if (scores.shape().size() != 3)
    throw UsageError("max_marginal: expects [Nt,Ny,Nx], got " +
                     nn::shape_str(scores.shape()));
  const int Nt = scores.shape()[0], Ny = scores.shape()[1],
            Nx = scores.shape()[2];
  const int n = axis == 0 ? Nt : axis == 1 ? Ny : Nx;
  auto argmax = std::make_shared<std::vector<std::int64_t>>(n, 0);
  auto sn = scores.node();
  nn::Tensor out =
      nn::detail::make_result({n}, {scores}, [sn, argmax](nn::TensorNode& o) {
        if (!sn->requires_grad) return;
        for (std::size_t i = 0; i < o.grad.size(); ++i)
          sn->grad[(*argmax)[i]] += o.grad[i];
      });
  std::vector<float> best(n, -std::numeric_limits<float>::infinity());
  for (int k = 0; k < Nt; ++k)
    for (int j = 0; j < Ny; ++j)
      for (int i = 0; i < Nx; ++i) {
        const std::size_t flat = (static_cast<std::size_t>(k) * Ny + j) * Nx + i;
        const int slot = axis == 0 ? k : axis == 1 ? j : i;
        if (scores.data()[flat] > best[slot]) {
          best[slot] = scores.data()[flat];
          (*argmax)[slot] = static_cast<std::int64_t>(flat);
        }
      }
  std::copy(best.begin(), best.end(), out.data().begin());
  return out;
}

// Differentiable measurement head: per-axis max-marginals, softmax with
// temperature, and expected offsets.
struct MeasurementTensors {
  nn::Tensor p_x, p_y, p_theta;
  nn::Tensor ex, ey, etheta;  // scalars
};

inline MeasurementTensors offset_distribution_t(const nn::Tensor& scores,
                                                const OffsetGrid& grid,
                                                double temperature) {
  if (!(temperature > 0.0))
    throw UsageError("offset_distribution: temperature must be > 0");
  if (scores.shape() != nn::Shape{grid.nt(), grid.ny(), grid.nx()})
    throw UsageError("offset_distribution: scores " +
                     nn::shape_str(scores.shape()) + " do not match grid [" +
                     std::to_string(grid.nt()) + "," +
                     std::to_string(grid.ny()) + "," +
                     std::to_string(grid.nx()) + "]");
  for (float v : scores.data())
    if (!std::isfinite(v))
      throw NumericError("offset_distribution: non-finite score");
  auto values_tensor = [](const std::vector<double>& v) {
    std::vector<float> f(v.begin(), v.end());
    const int n = static_cast<int>(f.size());
    return nn::Tensor::from_data({n}, std::move(f));
  };
  MeasurementTensors m;
  m.p_x = nn::softmax(nn::scale(max_marginal(scores, 2), 1.0 / temperature));
  m.p_y = nn::softmax(nn::scale(max_marginal(scores, 1), 1.0 / temperature));
  m.p_theta =
      nn::softmax(nn::scale(max_marginal(scores, 0), 1.0 / temperature));
  m.ex = nn::dot(m.p_x, values_tensor(grid.dx));
  m.ey = nn::dot(m.p_y, values_tensor(grid.dy));
  m.etheta = nn::dot(m.p_theta, values_tensor(grid.dtheta));
  return m;
}

inline std::pair<OffsetDistribution, PoseOffset> offset_distribution(
    const nn::Tensor& scores, const OffsetGrid& grid, double temperature) {
  nn::NoGradGuard no_grad;
  MeasurementTensors m = offset_distribution_t(scores, grid, temperature);
  OffsetDistribution dist;
  dist.p_x.assign(m.p_x.data().begin(), m.p_x.data().end());
  dist.p_y.assign(m.p_y.data().begin(), m.p_y.data().end());
  dist.p_theta.assign(m.p_theta.data().begin(), m.p_theta.data().end());
  const PoseOffset expected = PoseOffset::make(
      m.ex.item(), m.ey.item(), m.etheta.item());
  return {dist, expected};
}

// ---------------------------------------------------------------------------
// Error-state Kalman filter on (x, y, theta)
// ---------------------------------------------------------------------------

struct TrackerState {
  Pose2D mean;
  Eigen::Matrix3d covariance = Eigen::Matrix3d::Identity();
};

inline Eigen::Matrix3d symmetrized(const Eigen::Matrix3d& m) {
  return 0.5 * (m + m.transpose());
}

// Propagates through compose(mean, odom) with first-order covariance
// transport; process noise is expressed in the robot frame.
inline TrackerState predict(const TrackerState& state, const PoseOffset& odom,
                            const Eigen::Matrix3d& process_noise) {
  const double c = std::cos(state.mean.theta), s = std::sin(state.mean.theta);
  TrackerState out;
  out.mean = compose(state.mean, offset_to_pose(odom));
  Eigen::Matrix3d F = Eigen::Matrix3d::Identity();
  F(0, 2) = -s * odom.dx - c * odom.dy;
  F(1, 2) = c * odom.dx - s * odom.dy;
  Eigen::Matrix3d G = Eigen::Matrix3d::Identity();
  G(0, 0) = c;
  G(0, 1) = -s;
  G(1, 0) = s;
  G(1, 1) = c;
  out.covariance = symmetrized(F * state.covariance * F.transpose() +
                               G * process_noise * G.transpose());
  return out;
}

// Kalman correction treating `measured` as an observation of the pose error
// in the predicted frame; Joseph form keeps the covariance PSD.
inline TrackerState measurement_update(const TrackerState& state,
                                       const PoseOffset& measured,
                                       const Eigen::Matrix3d& meas_cov) {
  const double c = std::cos(state.mean.theta), s = std::sin(state.mean.theta);
  Eigen::Matrix3d H;
  H << c, s, 0, -s, c, 0, 0, 0, 1;
  const Eigen::Vector3d z(measured.dx, measured.dy,
                          wrap_angle(measured.dtheta));
  const Eigen::Matrix3d S = H * state.covariance * H.transpose() + meas_cov;
  const Eigen::Matrix3d K = state.covariance * H.transpose() * S.inverse();
  const Eigen::Vector3d delta = K * z;
  TrackerState out;
  out.mean = Pose2D::make(state.mean.x + delta(0), state.mean.y + delta(1),
                          state.mean.theta + delta(2));
  const Eigen::Matrix3d IKH = Eigen::Matrix3d::Identity() - K * H;
  out.covariance = symmetrized(IKH * state.covariance * IKH.transpose() +
                               K * meas_cov * K.transpose());
  return out;
}

// ---------------------------------------------------------------------------
// Tracking loop
// ---------------------------------------------------------------------------

enum class MeasurementMode { kNetwork, kGroundTruth, kDisabled };

inline std::string to_string(MeasurementMode m) {
  switch (m) {
    case MeasurementMode::kNetwork: return "network";
    case MeasurementMode::kGroundTruth: return "ground_truth";
    case MeasurementMode::kDisabled: return "disabled";
  }
  return "network";
}

inline MeasurementMode measurement_mode_from_string(const std::string& s) {
  if (s == "network") return MeasurementMode::kNetwork;
  if (s == "ground_truth") return MeasurementMode::kGroundTruth;
  if (s == "disabled") return MeasurementMode::kDisabled;
  throw ConfigError("unknown measurement mode: " + s);
}

struct TrackingConfig {
  OffsetGrid grid = OffsetGrid::uniform();
  double temperature = 0.1;
  int bev_cells = 128;
  double bev_resolution = 0.5;
  int patch_margin_cells = 16;
  double meas_floor_trans = 0.25;          // meters (std floor)
  double meas_floor_rot = deg2rad(1.0);    // radians (std floor)
  double process_trans_sigma = 0.1;        // meters per step
  double process_rot_sigma = deg2rad(0.5); // radians per step
  double init_trans_sigma = 0.2;
  double init_rot_sigma = deg2rad(2.0);
  MeasurementMode mode = MeasurementMode::kNetwork;
  std::optional<Pose2D> initial_pose;  // defaults to the session's first pose

  int patch_cells() const { return bev_cells + 2 * patch_margin_cells; }

  Eigen::Matrix3d process_noise() const {
    Eigen::Matrix3d q = Eigen::Matrix3d::Zero();
    q(0, 0) = process_trans_sigma * process_trans_sigma;
    q(1, 1) = q(0, 0);
    q(2, 2) = process_rot_sigma * process_rot_sigma;
    return q;
  }
};

struct StepDiagnostics {
  int step = 0;
  Pose2D estimate;
  Pose2D ground_truth;
  PoseOffset measured;
  double entropy_x = 0.0, entropy_y = 0.0, entropy_theta = 0.0;
};

struct TrackResult {
  std::vector<Pose2D> trajectory;
  std::vector<StepDiagnostics> steps;
  TrackerState final_state;
};

class TrackingLostError : public Error {
 public:
  TrackingLostError(int step, TrackerState last, TrackResult partial)
      : Error("tracking lost at step " + std::to_string(step) +
              ": predicted pose left the map"),
        step(step),
        last_state(std::move(last)),
        partial(std::move(partial)) {}

  int step;
  TrackerState last_state;
  TrackResult partial;
};

inline double entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

// Per-step: odometry predict, crop + rotate map candidates at the predicted
// pose, siamese features, similarity volume, per-axis offset distribution,
// Kalman measurement update.
inline TrackResult track(const Session& session, const BevImage& map,
                         const nn::UNet3Weights& weights,
                         const TrackingConfig& config) {
  if (session.modality != Modality::kRadar)
    throw UsageError("track: query session must be radar");
  if (session.poses.empty()) throw UsageError("track: empty session");
  config.grid.validate();
  nn::NoGradGuard no_grad;

  const GridSpec bev_grid =
      GridSpec::centered(config.bev_cells, config.bev_cells,
                         config.bev_resolution);
  TrackerState state;
  state.mean = config.initial_pose.value_or(session.poses[0]);
  state.covariance = Eigen::Matrix3d::Zero();
  state.covariance(0, 0) = config.init_trans_sigma * config.init_trans_sigma;
  state.covariance(1, 1) = state.covariance(0, 0);
  state.covariance(2, 2) = config.init_rot_sigma * config.init_rot_sigma;

  TrackResult result;
  result.trajectory.push_back(state.mean);
  const Eigen::Matrix3d q = config.process_noise();

  for (std::size_t t = 1; t < session.poses.size(); ++t) {
    state = predict(state, session.odometry[t - 1], q);
    const auto& mg = map.grid;
    const Vec2 cell = mg.local_to_cell(state.mean.position());
    if (cell.x < 0 || cell.y < 0 || cell.x > mg.width_cells - 1 ||
        cell.y > mg.height_cells - 1) {
      result.final_state = state;
      throw TrackingLostError(static_cast<int>(t), state, std::move(result));
    }

    StepDiagnostics diag;
    diag.step = static_cast<int>(t);
    diag.ground_truth = session.poses[t];

    if (config.mode != MeasurementMode::kDisabled) {
      PoseOffset z;
      Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
      if (config.mode == MeasurementMode::kGroundTruth) {
        z = relative_offset(state.mean, session.poses[t]);
        r *= 1e-9;
      } else {
        const MapPatch patch = crop_map_patch(
            map, state.mean, config.patch_cells(), config.bev_resolution);
        const CandidateSet cands =
            generate_candidates(patch, config.grid, config.bev_cells);
        const BevImage bev = scan_to_bev(session.scans[t], bev_grid);
        const nn::Tensor radar_feat = nn::unet3_forward(
            weights, nn::Tensor::from_data(
                         {1, config.bev_cells, config.bev_cells}, bev.pixels));
        std::vector<CandidateFeatures> cand_feats(cands.rotations.size());
        for (std::size_t k = 0; k < cands.rotations.size(); ++k) {
          cand_feats[k].features = nn::unet3_forward(
              weights,
              nn::Tensor::from_data({1, patch.size_cells, patch.size_cells},
                                    cands.rotations[k].pixels));
          cand_feats[k].valid = cands.rotations[k].valid;
        }
        const nn::Tensor scores = similarity_volume(
            radar_feat, cand_feats, config.grid, config.bev_resolution);
        const auto [dist, expected] =
            offset_distribution(scores, config.grid, config.temperature);
        z = expected;
        auto axis_var = [](const std::vector<double>& p,
                           const std::vector<double>& v, double mean) {
          double var = 0.0;
          for (std::size_t i = 0; i < p.size(); ++i)
            var += p[i] * (v[i] - mean) * (v[i] - mean);
          return var;
        };
        r(0, 0) = std::max(axis_var(dist.p_x, config.grid.dx, z.dx),
                           config.meas_floor_trans * config.meas_floor_trans);
        r(1, 1) = std::max(axis_var(dist.p_y, config.grid.dy, z.dy),
                           config.meas_floor_trans * config.meas_floor_trans);
        r(2, 2) = std::max(axis_var(dist.p_theta, config.grid.dtheta, z.dtheta),
                           config.meas_floor_rot * config.meas_floor_rot);
        diag.entropy_x = entropy(dist.p_x);
        diag.entropy_y = entropy(dist.p_y);
        diag.entropy_theta = entropy(dist.p_theta);
      }
      diag.measured = z;
      state = measurement_update(state, z, r);
    }
    diag.estimate = state.mean;
    result.trajectory.push_back(state.mean);
    result.steps.push_back(diag);
  }
  result.final_state = state;
  return result;
}

struct RmsePair {
  double trans_m = 0.0;
  double rot_deg = 0.0;
};

inline RmsePair evaluate_rmse(const std::vector<Pose2D>& est,
                              const std::vector<Pose2D>& gt) {
  if (est.size() != gt.size() || est.empty())
    throw UsageError("evaluate_rmse: trajectories must have equal nonzero "
                     "length, got " + std::to_string(est.size()) + " vs " +
                     std::to_string(gt.size()));
  double trans_sq = 0.0, rot_sq = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double dx = est[i].x - gt[i].x;
    const double dy = est[i].y - gt[i].y;
    trans_sq += dx * dx + dy * dy;
    const double dt = wrap_angle(est[i].theta - gt[i].theta);
    rot_sq += dt * dt;
  }
  return {std::sqrt(trans_sq / est.size()),
          rad2deg(std::sqrt(rot_sq / est.size()))};
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrackingSample {
  BevImage radar_bev;
  MapPatch patch;      // cropped at the perturbed (predicted) pose
  PoseOffset offset;   // true offset of the radar pose in the patch frame
};

// Draws training triples from a radar session against the global map:
// perturb each pose by a random in-grid offset, crop the patch there, and
// keep the offset as ground truth.
inline std::vector<TrackingSample> build_tracking_samples(
    const Session& radar_session, const BevImage& map,
    const TrackingConfig& config, int count, Rng& rng) {
  if (radar_session.modality != Modality::kRadar)
    throw UsageError("build_tracking_samples: session must be radar");
  const GridSpec bev_grid = GridSpec::centered(
      config.bev_cells, config.bev_cells, config.bev_resolution);
  const double max_dx = config.grid.dx.back() * 0.9;
  const double max_dt = config.grid.dtheta.back() * 0.9;
  std::vector<TrackingSample> samples;
  samples.reserve(count);
  const int T = static_cast<int>(radar_session.poses.size());
  for (int n = 0; n < count; ++n) {
    const int t = static_cast<int>(rng.uniform_int(T));
    const PoseOffset offset = PoseOffset::make(rng.uniform(-max_dx, max_dx),
                                               rng.uniform(-max_dx, max_dx),
                                               rng.uniform(-max_dt, max_dt));
    const Pose2D true_pose = radar_session.poses[t];
    const Pose2D predicted = compose(true_pose, inverse(offset_to_pose(offset)));
    TrackingSample s;
    s.radar_bev = scan_to_bev(radar_session.scans[t], bev_grid);
    s.patch = crop_map_patch(map, predicted, config.patch_cells(),
                             config.bev_resolution);
    s.offset = relative_offset(predicted, true_pose);
    samples.push_back(std::move(s));
  }
  return samples;
}

struct TrackingTrainConfig {
  int epochs = 20;
  double lr = 0.01;
  double momentum = 0.9;
  double temperature = 0.1;
  LossWeights loss_weights;
  std::uint64_t seed = 1;

  nlohmann::ordered_json to_json() const {
    return {{"epochs", epochs},
            {"lr", lr},
            {"momentum", momentum},
            {"temperature", temperature},
            {"alpha", loss_weights.alpha},
            {"seed", seed}};
  }

  static TrackingTrainConfig from_json(const nlohmann::ordered_json& j) {
    TrackingTrainConfig c;
    c.epochs = j.value("epochs", 20);
    c.lr = j.value("lr", 0.01);
    c.momentum = j.value("momentum", 0.9);
    c.temperature = j.value("temperature", 0.1);
    c.loss_weights.alpha = j.value("alpha", 1.0);
    c.seed = j.value("seed", std::uint64_t{1});
    return c;
  }
};

struct TrackingEpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double mean_l1 = 0.0;
  double mean_l2 = 0.0;
};

struct TrackingTrainResult {
  nn::UNet3Weights weights;
  std::vector<TrackingEpochStats> trace;
  std::int64_t steps = 0;
};

// Trains the shared U-Net with cross entropy plus squared expected-offset
// error, both flowing through the similarity volume.
inline TrackingTrainResult train_tracking(
    const std::vector<TrackingSample>& samples, const OffsetGrid& grid,
    const nn::UNet3Config& unet_cfg, const TrackingTrainConfig& cfg,
    double resolution) {
  if (samples.empty()) throw DataError("train_tracking: no samples");
  grid.validate();
  cfg.loss_weights.validate();
  // Reject samples whose offsets cannot be expressed on the grid.
  std::string offenders;
  std::vector<GroundTruthOffset> gts(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    try {
      gts[i] = make_ground_truth(grid, samples[i].offset);
    } catch (const DataError&) {
      offenders += (offenders.empty() ? "" : ", ") + std::to_string(i);
    }
  }
  if (!offenders.empty())
    throw DataError("train_tracking: sample offsets outside the grid: " +
                    offenders);

  Rng rng(cfg.seed);
  nn::UNet3Weights weights = nn::UNet3Weights::init(unet_cfg, rng);
  nn::SgdMomentum opt(cfg.lr, cfg.momentum);
  const auto params = weights.params();

  TrackingTrainResult result;
  std::vector<int> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates with the session rng keeps runs reproducible.
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.uniform_int(i)]);
    double sum_loss = 0.0, sum_l1 = 0.0, sum_l2 = 0.0;
    for (int idx : order) {
      const TrackingSample& s = samples[idx];
      const GroundTruthOffset& gt = gts[idx];
      const CandidateSet cands =
          generate_candidates(s.patch, grid, s.radar_bev.grid.width_cells);
      nn::Tensor radar_feat = nn::unet3_forward(
          weights,
          nn::Tensor::from_data({1, s.radar_bev.grid.height_cells,
                                 s.radar_bev.grid.width_cells},
                                s.radar_bev.pixels));
      std::vector<CandidateFeatures> cand_feats(cands.rotations.size());
      for (std::size_t k = 0; k < cands.rotations.size(); ++k) {
        cand_feats[k].features = nn::unet3_forward(
            weights,
            nn::Tensor::from_data({1, s.patch.size_cells, s.patch.size_cells},
                                  cands.rotations[k].pixels));
        cand_feats[k].valid = cands.rotations[k].valid;
      }
      nn::Tensor scores =
          similarity_volume(radar_feat, cand_feats, grid, resolution);
      MeasurementTensors m = offset_distribution_t(scores, grid, cfg.temperature);

      nn::Tensor l1 = nn::add(
          nn::add(nn::cross_entropy_onehot(m.p_x, gt.ix),
                  nn::cross_entropy_onehot(m.p_y, gt.iy)),
          nn::cross_entropy_onehot(m.p_theta, gt.itheta));
      auto sq_err = [](const nn::Tensor& e, double target) {
        nn::Tensor d = nn::add_scalar(e, -target);
        return nn::mul(d, d);
      };
      nn::Tensor l2 = nn::add(
          nn::add(sq_err(m.ex, gt.continuous.dx), sq_err(m.ey, gt.continuous.dy)),
          nn::scale(sq_err(m.etheta, gt.continuous.dtheta),
                    cfg.loss_weights.alpha));
      nn::Tensor loss = nn::add(l1, l2);

      const double lv = loss.item();
      if (!std::isfinite(lv))
        throw NumericError("train_tracking: non-finite loss at epoch " +
                           std::to_string(epoch));
      sum_loss += lv;
      sum_l1 += l1.item();
      sum_l2 += l2.item();
      nn::backward(loss, params);
      opt.step(params);
      ++result.steps;
    }
    const double n = static_cast<double>(samples.size());
    result.trace.push_back({epoch, sum_loss / n, sum_l1 / n, sum_l2 / n});
  }
  result.weights = weights;
  return result;
}

}  // namespace hetloc::tracking
