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

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "hetloc/core.hpp"

namespace hetloc {

static_assert(std::endian::native == std::endian::little,
              "array files are little-endian; big-endian hosts unsupported");

// Standard reflected CRC-32 (polynomial 0xEDB88320), as used by zip/png.
inline std::uint32_t crc32(const void* data, std::size_t len,
                           std::uint32_t crc = 0) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k)
        c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  const auto* p = static_cast<const unsigned char*>(data);
  crc = ~crc;
  for (std::size_t i = 0; i < len; ++i)
    crc = table[(crc ^ p[i]) & 0xFF] ^ (crc >> 8);
  return ~crc;
}

inline std::uint32_t crc32_f32(const std::vector<float>& v) {
  return crc32(v.data(), v.size() * sizeof(float));
}

// Flat little-endian IEEE-754 float32 array file, row-major. Dimensions live
// in the owning manifest, not in the file.
inline void write_f32(const std::filesystem::path& path,
                      const std::vector<float>& values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for write: " + path.string());
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!out) throw IoError("short write: " + path.string());
}

inline std::vector<float> read_f32(const std::filesystem::path& path,
                                   std::size_t expected_count,
                                   std::uint32_t expected_crc) {
  if (!std::filesystem::exists(path))
    throw MissingFileError("missing array file: " + path.string());
  const auto bytes = std::filesystem::file_size(path);
  if (bytes != expected_count * sizeof(float))
    throw ChecksumError("truncated or resized array file: " + path.string() +
                        " (" + std::to_string(bytes) + " bytes, expected " +
                        std::to_string(expected_count * sizeof(float)) + ")");
  std::vector<float> values(expected_count);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for read: " + path.string());
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(bytes));
  if (!in) throw IoError("short read: " + path.string());
  if (crc32_f32(values) != expected_crc)
    throw ChecksumError("CRC-32 mismatch: " + path.string());
  return values;
}

inline void write_text_file(const std::filesystem::path& path,
                            const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for write: " + path.string());
  out << text;
  if (!out) throw IoError("short write: " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw MissingFileError("missing file: " + path.string());
  std::ifstream in(path, std::ios::binary);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return text;
}

// Locale-independent float formatting for CSV output.
inline std::string format_g(double v, int precision = 9) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
  return buf;
}

// Binary 8-bit PGM (P5); intensities are clamped to [0, 1]. Row 0 of the
// image is written last so +y renders upwards in viewers.
inline void write_pgm(const std::filesystem::path& path, int width, int height,
                      const std::vector<float>& pixels) {
  std::string out = "P5\n" + std::to_string(width) + " " +
                    std::to_string(height) + "\n255\n";
  out.reserve(out.size() + static_cast<std::size_t>(width) * height);
  for (int r = height - 1; r >= 0; --r) {
    for (int c = 0; c < width; ++c) {
      float v = pixels[static_cast<std::size_t>(r) * width + c];
      v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
      out.push_back(static_cast<char>(static_cast<int>(v * 255.0f + 0.5f)));
    }
  }
  write_text_file(path, out);
}

// ---------------------------------------------------------------------------
// Static SVG path plots (estimated vs. ground-truth overlays)
// ---------------------------------------------------------------------------

struct SvgPath {
  std::vector<Vec2> points;
  std::string color;
  std::string label;
};

inline std::string render_svg_paths(const std::vector<SvgPath>& paths,
                                    int size_px = 640) {
  double min_x = 1e30, min_y = 1e30, max_x = -1e30, max_y = -1e30;
  for (const auto& p : paths) {
    for (const auto& v : p.points) {
      min_x = std::min(min_x, v.x);
      min_y = std::min(min_y, v.y);
      max_x = std::max(max_x, v.x);
      max_y = std::max(max_y, v.y);
    }
  }
  if (min_x > max_x) {
    min_x = min_y = 0.0;
    max_x = max_y = 1.0;
  }
  const double span = std::max(std::max(max_x - min_x, max_y - min_y), 1e-9);
  const double pad = 0.05 * span;
  const double scale = size_px / (span + 2 * pad);
  auto sx = [&](double x) { return (x - min_x + pad) * scale; };
  auto sy = [&](double y) { return size_px - (y - min_y + pad) * scale; };

  std::string svg =
      "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
      std::to_string(size_px) + "\" height=\"" + std::to_string(size_px) +
      "\" viewBox=\"0 0 " + std::to_string(size_px) + " " +
      std::to_string(size_px) + "\">\n"
      "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  int label_y = 18;
  for (const auto& p : paths) {
    svg += "<polyline fill=\"none\" stroke=\"" + p.color +
           "\" stroke-width=\"1.5\" points=\"";
    for (const auto& v : p.points)
      svg += format_g(sx(v.x), 6) + "," + format_g(sy(v.y), 6) + " ";
    svg += "\"/>\n";
    if (!p.label.empty()) {
      svg += "<text x=\"10\" y=\"" + std::to_string(label_y) +
             "\" font-family=\"sans-serif\" font-size=\"13\" fill=\"" +
             p.color + "\">" + p.label + "</text>\n";
      label_y += 18;
    }
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace hetloc
