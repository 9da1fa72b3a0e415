// SPDX-License-Identifier: Apache-2.0
#include "atr/glyph.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <tuple>

#include "atr/error.hpp"

namespace atr {

namespace {

constexpr std::array<Shape, kClassShapeCount> kClassShapes = {
    Shape::rectangle, Shape::triangle, Shape::cross, Shape::ellipse, Shape::inverted_triangle};

bool inside(Shape shape, double u, double v) {
  // (u, v) are pixel-centre coordinates normalised to [0,1]^2 within the glyph rect.
  switch (shape) {
    case Shape::rectangle:
      return true;
    case Shape::triangle:
      return std::abs(u - 0.5) <= v / 2;
    case Shape::inverted_triangle:
      return std::abs(u - 0.5) <= (1 - v) / 2;
    case Shape::cross:
      return std::abs(u - 0.5) <= 1.0 / 6 || std::abs(v - 0.5) <= 1.0 / 6;
    case Shape::ellipse: {
      const double du = (u - 0.5) * 2, dv = (v - 0.5) * 2;
      return du * du + dv * dv <= 1.0;
    }
    case Shape::ring:
      return u < 1.0 / 6 || u > 5.0 / 6 || v < 1.0 / 6 || v > 5.0 / 6;
    case Shape::unknown:
      break;
  }
  return false;
}

double window_fill(const std::vector<std::uint8_t>& mask, int w, int x0, int y0, int x1, int y1) {
  std::size_t on = 0, total = 0;
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      on += mask[static_cast<std::size_t>(y) * w + x];
      ++total;
    }
  return total ? double(on) / double(total) : 0.0;
}

Shape classify_mask(const std::vector<std::uint8_t>& mask, int w, int h, std::size_t area) {
  if (w < 5 || h < 5) return Shape::unknown;
  const int cw = std::max(1, w / 5), ch = std::max(1, h / 5);
  const int cx0 = (w - cw) / 2, cy0 = (h - ch) / 2;
  if (window_fill(mask, w, cx0, cy0, cx0 + cw, cy0 + ch) < 0.3) return Shape::ring;

  const double fill = double(area) / (double(w) * h);
  if (fill >= 0.88) return Shape::rectangle;
  if (fill >= 0.68) return Shape::ellipse;

  const int kw = std::max(1, w / 8), kh = std::max(1, h / 8);
  const double top = (window_fill(mask, w, 0, 0, kw, kh) + window_fill(mask, w, w - kw, 0, w, kh)) / 2;
  const double bottom =
      (window_fill(mask, w, 0, h - kh, kw, h) + window_fill(mask, w, w - kw, h - kh, w, h)) / 2;
  if (bottom > 0.5 && top < 0.5) return Shape::triangle;
  if (top > 0.5 && bottom < 0.5) return Shape::inverted_triangle;
  if (top < 0.5 && bottom < 0.5) return Shape::cross;
  return Shape::unknown;
}

}  // namespace

std::string_view shape_name(Shape s) {
  switch (s) {
    case Shape::rectangle: return "rectangle";
    case Shape::triangle: return "triangle";
    case Shape::cross: return "cross";
    case Shape::ellipse: return "ellipse";
    case Shape::inverted_triangle: return "inverted_triangle";
    case Shape::ring: return "ring";
    case Shape::unknown: return "unknown";
  }
  return "unknown";
}

std::optional<Shape> parse_shape(std::string_view name) {
  for (Shape s : {Shape::rectangle, Shape::triangle, Shape::cross, Shape::ellipse, Shape::inverted_triangle,
                  Shape::ring, Shape::unknown})
    if (shape_name(s) == name) return s;
  return std::nullopt;
}

Shape class_shape(std::size_t class_index) {
  if (class_index >= kClassShapes.size())
    throw PreconditionError("fixtures support at most " + std::to_string(kClassShapes.size()) + " classes");
  return kClassShapes[class_index];
}

PixelRect draw_glyph(Image& img, const PixelRect& rect, Shape shape, Rgb color) {
  PixelRect tight{rect.x1, rect.y1, rect.x0, rect.y0};
  const double w = rect.width(), h = rect.height();
  for (int y = std::max(rect.y0, 0); y < std::min(rect.y1, img.height); ++y)
    for (int x = std::max(rect.x0, 0); x < std::min(rect.x1, img.width); ++x) {
      const double u = (x - rect.x0 + 0.5) / w, v = (y - rect.y0 + 0.5) / h;
      if (!inside(shape, u, v)) continue;
      img.set(x, y, color);
      tight.x0 = std::min(tight.x0, x);
      tight.y0 = std::min(tight.y0, y);
      tight.x1 = std::max(tight.x1, x + 1);
      tight.y1 = std::max(tight.y1, y + 1);
    }
  return tight;
}

Rgb estimate_background(const Image& img) {
  std::array<std::vector<std::uint8_t>, 3> ch;
  auto take = [&](int x, int y) {
    const auto* p = img.px(x, y);
    for (int c = 0; c < 3; ++c) ch[c].push_back(p[c]);
  };
  for (int x = 0; x < img.width; ++x) {
    take(x, 0);
    if (img.height > 1) take(x, img.height - 1);
  }
  for (int y = 1; y + 1 < img.height; ++y) {
    take(0, y);
    if (img.width > 1) take(img.width - 1, y);
  }
  Rgb out{0, 0, 0};
  for (int c = 0; c < 3; ++c) {
    if (ch[c].empty()) continue;
    auto mid = ch[c].begin() + static_cast<std::ptrdiff_t>(ch[c].size() / 2);
    std::nth_element(ch[c].begin(), mid, ch[c].end());
    out[c] = *mid;
  }
  return out;
}

std::vector<Blob> find_blobs(const Image& img, const BlobParams& params) {
  std::vector<Blob> blobs;
  if (img.empty()) return blobs;
  const Rgb bg = estimate_background(img);
  const int w = img.width, h = img.height;
  std::vector<std::uint8_t> fg(static_cast<std::size_t>(w) * h, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const auto* p = img.px(x, y);
      int d = 0;
      for (int c = 0; c < 3; ++c) d = std::max(d, std::abs(int(p[c]) - int(bg[c])));
      fg[static_cast<std::size_t>(y) * w + x] = d > params.color_threshold;
    }

  std::vector<int> label(fg.size(), -1);
  std::vector<int> stack;
  std::vector<std::vector<int>> members;
  for (int start = 0; start < w * h; ++start) {
    if (!fg[start] || label[start] >= 0) continue;
    const int id = static_cast<int>(members.size());
    members.emplace_back();
    label[start] = id;
    stack.push_back(start);
    while (!stack.empty()) {
      const int i = stack.back();
      stack.pop_back();
      members[id].push_back(i);
      const int x = i % w, y = i / w;
      const int nb[4][2] = {{x - 1, y}, {x + 1, y}, {x, y - 1}, {x, y + 1}};
      for (const auto& n : nb) {
        if (n[0] < 0 || n[1] < 0 || n[0] >= w || n[1] >= h) continue;
        const int j = n[1] * w + n[0];
        if (fg[j] && label[j] < 0) {
          label[j] = id;
          stack.push_back(j);
        }
      }
    }
  }

  for (std::size_t id = 0; id < members.size(); ++id) {
    const auto& m = members[id];
    if (m.size() < params.min_area) continue;
    PixelRect r{w, h, 0, 0};
    for (int i : m) {
      r.x0 = std::min(r.x0, i % w);
      r.y0 = std::min(r.y0, i / w);
      r.x1 = std::max(r.x1, i % w + 1);
      r.y1 = std::max(r.y1, i / w + 1);
    }
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(r.width()) * r.height(), 0);
    for (int i : m) mask[static_cast<std::size_t>(i / w - r.y0) * r.width() + (i % w - r.x0)] = 1;
    blobs.push_back({r, m.size(), classify_mask(mask, r.width(), r.height(), m.size())});
  }
  std::sort(blobs.begin(), blobs.end(), [](const Blob& a, const Blob& b) {
    return std::tie(a.bounds.y0, a.bounds.x0) < std::tie(b.bounds.y0, b.bounds.x0);
  });
  return blobs;
}

Shape classify_glyph(const Image& img, const BlobParams& params) {
  const auto blobs = find_blobs(img, params);
  const Blob* best = nullptr;
  for (const auto& b : blobs)
    if (!best || b.area > best->area) best = &b;
  return best ? best->shape : Shape::unknown;
}

}  // namespace atr
