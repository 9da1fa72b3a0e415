// SPDX-License-Identifier: Apache-2.0
#include "atr/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace atr {

namespace {
// Absorbs representation error in products like 0.1 * 30 before floor/ceil.
constexpr double kSnap = 1e-9;
}  // namespace

Box intersect(const Box& a, const Box& b) {
  return {std::max(a.x0, b.x0), std::max(a.y0, b.y0), std::min(a.x1, b.x1), std::min(a.y1, b.y1)};
}

double iou(const Box& a, const Box& b) {
  const double inter = intersect(a, b).area();
  if (inter <= 0) return 0.0;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

Box clamp(const Box& b, double width, double height) {
  return {std::clamp(b.x0, 0.0, width), std::clamp(b.y0, 0.0, height), std::clamp(b.x1, 0.0, width),
          std::clamp(b.y1, 0.0, height)};
}

PixelRect padded_region(const Box& b, double pad_fraction, int width, int height) {
  const double px = pad_fraction * b.width();
  const double py = pad_fraction * b.height();
  auto lo = [](double v, int hi) { return std::clamp(static_cast<int>(std::floor(v + kSnap)), 0, hi); };
  auto up = [](double v, int hi) { return std::clamp(static_cast<int>(std::ceil(v - kSnap)), 0, hi); };
  return {lo(b.x0 - px, width), lo(b.y0 - py, height), up(b.x1 + px, width), up(b.y1 + py, height)};
}

std::string to_string(const Box& b) {
  std::ostringstream os;
  os << '(' << b.x0 << ',' << b.y0 << ',' << b.x1 << ',' << b.y1 << ')';
  return os.str();
}

}  // namespace atr
