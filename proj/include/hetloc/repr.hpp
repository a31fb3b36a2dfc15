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
#include <vector>

#include "hetloc/core.hpp"
#include "hetloc/io.hpp"
#include "hetloc/simworld.hpp"

namespace hetloc {

// Top-down Cartesian raster of a sweep; intensities in [0,1].
struct BevImage {
  GridSpec grid;
  Modality modality = Modality::kLidar;
  std::vector<float> pixels;

  float& at(int col, int row) { return pixels[grid.index(col, row)]; }
  float at(int col, int row) const { return pixels[grid.index(col, row)]; }

  static BevImage zeros(const GridSpec& grid, Modality modality) {
    BevImage img;
    img.grid = grid;
    img.modality = modality;
    img.pixels.assign(
        static_cast<std::size_t>(grid.width_cells) * grid.height_cells, 0.0f);
    return img;
  }
};

// Default tracking raster: 128 x 128 cells at 0.5 m.
inline GridSpec default_bev_grid(int cells = 128, double resolution = 0.5) {
  return GridSpec::centered(cells, cells, resolution);
}

namespace detail {

inline void splat_nearest_max(BevImage& img, const Vec2& local, float value) {
  const Vec2 cell = img.grid.local_to_cell(local);
  const int c = static_cast<int>(std::lround(cell.x));
  const int r = static_cast<int>(std::lround(cell.y));
  if (img.grid.contains(c, r)) img.at(c, r) = std::max(img.at(c, r), value);
}

inline void splat_bilinear_add(BevImage& img, const Vec2& local, float value) {
  const Vec2 cell = img.grid.local_to_cell(local);
  const int c0 = static_cast<int>(std::floor(cell.x));
  const int r0 = static_cast<int>(std::floor(cell.y));
  const double fx = cell.x - c0;
  const double fy = cell.y - r0;
  const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy,
                       fx * fy};
  const int cc[4] = {c0, c0 + 1, c0, c0 + 1};
  const int rr[4] = {r0, r0, r0 + 1, r0 + 1};
  for (int i = 0; i < 4; ++i)
    if (img.grid.contains(cc[i], rr[i]))
      img.at(cc[i], rr[i]) += static_cast<float>(w[i] * value);
}

}  // namespace detail

// Rasterizes a scan into a sensor-frame BEV image. Lidar returns mark their
// endpoint cell with 1 (ranges at max_range count as no return); radar
// intensities are splatted with bilinear weights so in-grid echo energy is
// preserved, up to the final [0,1] clip.
inline BevImage scan_to_bev(const PolarScan& scan, const GridSpec& grid) {
  grid.validate();
  const double cover = std::min(grid.width_cells, grid.height_cells) / 2 *
                       grid.resolution;
  if (cover <= 0.0)
    throw UsageError("scan_to_bev: grid does not cover any range");
  BevImage img = BevImage::zeros(grid, scan.modality);
  const int beams = static_cast<int>(scan.beam_angles.size());
  if (scan.modality == Modality::kLidar) {
    for (int k = 0; k < beams; ++k) {
      const double r = scan.range(k);
      if (r >= scan.max_range) continue;  // no return
      const double a = scan.beam_angles[k];
      detail::splat_nearest_max(img, {r * std::cos(a), r * std::sin(a)}, 1.0f);
    }
  } else {
    const double bin_w = scan.max_range / scan.range_bins;
    for (int k = 0; k < beams; ++k) {
      const double a = scan.beam_angles[k];
      const double ca = std::cos(a), sa = std::sin(a);
      for (int bin = 0; bin < scan.range_bins; ++bin) {
        const float v = scan.intensity(k, bin);
        if (v <= 0.0f) continue;
        const double r = (bin + 0.5) * bin_w;
        detail::splat_bilinear_add(img, {r * ca, r * sa}, v);
      }
    }
    for (auto& p : img.pixels) p = std::min(p, 1.0f);
  }
  return img;
}

// Accumulates lidar scans into one local map centered on the middle pose,
// max-pooled per cell.
inline BevImage accumulate_submap(const std::vector<PolarScan>& scans,
                                  const std::vector<Pose2D>& poses,
                                  const GridSpec& grid) {
  if (scans.empty() || scans.size() != poses.size())
    throw UsageError("accumulate_submap: need |scans| == |poses| >= 1");
  for (const auto& s : scans)
    if (s.modality != Modality::kLidar)
      throw UsageError("accumulate_submap: all scans must be lidar");
  const Pose2D center = poses[poses.size() / 2];
  const Pose2D center_inv = inverse(center);
  BevImage img = BevImage::zeros(grid, Modality::kLidar);
  for (std::size_t i = 0; i < scans.size(); ++i) {
    const PolarScan& scan = scans[i];
    for (std::size_t k = 0; k < scan.beam_angles.size(); ++k) {
      const double r = scan.data[k];
      if (r >= scan.max_range) continue;
      const double a = scan.beam_angles[k];
      const Vec2 world_pt =
          transform_point(poses[i], {r * std::cos(a), r * std::sin(a)});
      const Vec2 local = transform_point(center_inv, world_pt);
      detail::splat_nearest_max(img, local, 1.0f);
    }
  }
  return img;
}

// Ring-sector summary of a centered BEV image: value(r, s) is the max pixel
// intensity among cells whose polar coordinates fall in ring r, sector s.
// Rotating the source scan by 2*pi*k/sectors circularly shifts columns by k.
struct ScanContextMatrix {
  int rings = 0;
  int sectors = 0;
  double max_radius = 0.0;
  std::vector<float> values;  // rings x sectors, row-major, in [0,1]

  float& at(int ring, int sector) {
    return values[static_cast<std::size_t>(ring) * sectors + sector];
  }
  float at(int ring, int sector) const {
    return values[static_cast<std::size_t>(ring) * sectors + sector];
  }
};

inline ScanContextMatrix make_scan_context(const BevImage& bev, int n_rings,
                                           int n_sectors) {
  if (n_rings < 4 || n_sectors < 4)
    throw UsageError("make_scan_context: need n_rings, n_sectors >= 4");
  ScanContextMatrix sc;
  sc.rings = n_rings;
  sc.sectors = n_sectors;
  sc.max_radius = std::min(bev.grid.width_cells, bev.grid.height_cells) / 2 *
                  bev.grid.resolution;
  sc.values.assign(static_cast<std::size_t>(n_rings) * n_sectors, 0.0f);
  const double ring_w = sc.max_radius / n_rings;
  const double sector_w = kTwoPi / n_sectors;
  for (int r = 0; r < bev.grid.height_cells; ++r) {
    for (int c = 0; c < bev.grid.width_cells; ++c) {
      const float v = bev.at(c, r);
      if (v <= 0.0f) continue;
      const Vec2 p = bev.grid.cell_center_local(c, r);
      const double rho = p.norm();
      if (rho >= sc.max_radius) continue;
      const int ring = std::min(static_cast<int>(rho / ring_w), n_rings - 1);
      double phi = std::atan2(p.y, p.x);
      if (phi < 0.0) phi += kTwoPi;
      const int sector =
          std::min(static_cast<int>(phi / sector_w), n_sectors - 1);
      sc.at(ring, sector) = std::max(sc.at(ring, sector), v);
    }
  }
  return sc;
}

inline ScanContextMatrix shift_columns(const ScanContextMatrix& sc, int k) {
  ScanContextMatrix out = sc;
  const int n = sc.sectors;
  k = ((k % n) + n) % n;
  for (int r = 0; r < sc.rings; ++r)
    for (int s = 0; s < n; ++s) out.at(r, (s + k) % n) = sc.at(r, s);
  return out;
}

// `{session}_{index}_{modality}.pgm`
inline void export_bev_pgm(const BevImage& bev,
                           const std::filesystem::path& dir,
                           const std::string& session, int index) {
  const std::string name = session + "_" + std::to_string(index) + "_" +
                           to_string(bev.modality) + ".pgm";
  write_pgm(dir / name, bev.grid.width_cells, bev.grid.height_cells,
            bev.pixels);
}

}  // namespace hetloc
