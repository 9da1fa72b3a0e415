// SPDX-License-Identifier: Apache-2.0
#pragma once

// Synthetic glyph vocabulary shared by the fixture generator and the in-process mock
// backends: fixtures draw one solid glyph per object, and the mocks recover the shape
// from pixels.

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "atr/geometry.hpp"
#include "atr/image.hpp"

namespace atr {

enum class Shape { rectangle, triangle, cross, ellipse, inverted_triangle, ring, unknown };

/// Number of shapes usable as class glyphs. `ring` is reserved for decoys.
inline constexpr std::size_t kClassShapeCount = 5;

std::string_view shape_name(Shape s);
std::optional<Shape> parse_shape(std::string_view name);

/// Glyph for the class at `class_index` of a fixture's class_set.
Shape class_shape(std::size_t class_index);

/// Draws `shape` filling `rect` and returns the tight bounds of the pixels painted.
PixelRect draw_glyph(Image& img, const PixelRect& rect, Shape shape, Rgb color);

struct Blob {
  PixelRect bounds;
  std::size_t area = 0;
  Shape shape = Shape::unknown;
};

struct BlobParams {
  int color_threshold = 60;  // max per-channel distance from background
  std::size_t min_area = 24;
};

/// Per-channel median of the image's one-pixel border.
Rgb estimate_background(const Image& img);

/// Connected (4-neighbour) foreground regions, ordered by (y0, x0).
std::vector<Blob> find_blobs(const Image& img, const BlobParams& params = {});

/// Shape of the largest foreground blob, `unknown` when there is none.
Shape classify_glyph(const Image& img, const BlobParams& params = {});

}  // namespace atr
