// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "atr/geometry.hpp"

namespace atr {

using Rgb = std::array<std::uint8_t, 3>;

/// Interleaved 8-bit RGB raster. Grayscale inputs are expanded on load.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  Image() = default;
  Image(int w, int h, Rgb fill = {0, 0, 0});

  bool empty() const { return width <= 0 || height <= 0; }
  std::uint8_t* px(int x, int y) { return data.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* px(int x, int y) const { return data.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  Rgb at(int x, int y) const {
    const auto* p = px(x, y);
    return {p[0], p[1], p[2]};
  }
  void set(int x, int y, Rgb c) {
    auto* p = px(x, y);
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
  }

  /// Copy of the pixels inside `r`, which must lie within the image.
  Image crop(const PixelRect& r) const;

  bool operator==(const Image&) const = default;
};

/// Deterministic PNG encoding (fixed compression, no timestamps).
std::vector<std::uint8_t> encode_png(const Image& img);
Image decode_png(std::span<const std::uint8_t> bytes);

Image read_png(const std::filesystem::path& path);
void write_png(const Image& img, const std::filesystem::path& path);

struct ImageSize {
  int width = 0;
  int height = 0;
};
ImageSize read_png_size(const std::filesystem::path& path);

}  // namespace atr
