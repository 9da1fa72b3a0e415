// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <compare>
#include <string>

namespace atr {

/// Axis-aligned pixel rectangle with real coordinates, [x0, x1) x [y0, y1).
struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return width() > 0 && height() > 0 ? width() * height() : 0.0; }
  bool ordered() const { return x0 <= x1 && y0 <= y1; }
  bool has_area() const { return x1 > x0 && y1 > y0; }
  bool within(double w, double h) const { return x0 >= 0 && y0 >= 0 && x1 <= w && y1 <= h; }

  auto operator<=>(const Box&) const = default;
};

/// Integer pixel rectangle, [x0, x1) x [y0, y1).
struct PixelRect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  bool empty() const { return x1 <= x0 || y1 <= y0; }
  Box to_box() const { return {double(x0), double(y0), double(x1), double(y1)}; }

  auto operator<=>(const PixelRect&) const = default;
};

Box intersect(const Box& a, const Box& b);

/// Intersection over union. 0 for disjoint boxes or if either box is empty.
double iou(const Box& a, const Box& b);

Box clamp(const Box& b, double width, double height);

/// Smallest integer rect containing `b` grown by `pad_fraction` of its size on each side,
/// clamped to [0,width) x [0,height).
PixelRect padded_region(const Box& b, double pad_fraction, int width, int height);

std::string to_string(const Box& b);

}  // namespace atr
