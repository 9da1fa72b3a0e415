// SPDX-License-Identifier: Apache-2.0
#include "atr/degrade.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "atr/error.hpp"
#include "atr/fs_util.hpp"

namespace atr {

namespace fs = std::filesystem;
using nlohmann::json;

void RainSpec::validate() const {
  if (!(streaks_per_megapixel >= 0)) throw InvariantError("streaks_per_megapixel must be >= 0");
  if (!(length_min_px > 0 && length_min_px <= length_max_px)) throw InvariantError("streak length range is empty");
  if (!(angle_min_deg <= angle_max_deg)) throw InvariantError("streak angle range is empty");
  if (!(opacity > 0 && opacity <= 1)) throw InvariantError("opacity must be in (0,1]");
  if (!(blur_radius_px >= 0)) throw InvariantError("blur_radius_px must be >= 0");
  if (!(contrast_scale > 0 && contrast_scale <= 1)) throw InvariantError("contrast_scale must be in (0,1]");
}

json to_json(const RainSpec& s) {
  return {{"seed", s.seed},
          {"streaks_per_megapixel", s.streaks_per_megapixel},
          {"streak_length_px", {s.length_min_px, s.length_max_px}},
          {"streak_angle_deg", {s.angle_min_deg, s.angle_max_deg}},
          {"streak_opacity", s.opacity},
          {"blur_radius_px", s.blur_radius_px},
          {"contrast_scale", s.contrast_scale},
          {"streak_color", s.streak_color}};
}

RainSpec rain_spec_from_json(const json& j) {
  RainSpec s;
  try {
    s.seed = j.value("seed", s.seed);
    s.streaks_per_megapixel = j.value("streaks_per_megapixel", s.streaks_per_megapixel);
    if (j.contains("streak_length_px")) {
      s.length_min_px = j["streak_length_px"].at(0).get<double>();
      s.length_max_px = j["streak_length_px"].at(1).get<double>();
    }
    if (j.contains("streak_angle_deg")) {
      s.angle_min_deg = j["streak_angle_deg"].at(0).get<double>();
      s.angle_max_deg = j["streak_angle_deg"].at(1).get<double>();
    }
    s.opacity = j.value("streak_opacity", s.opacity);
    s.blur_radius_px = j.value("blur_radius_px", s.blur_radius_px);
    s.contrast_scale = j.value("contrast_scale", s.contrast_scale);
    if (j.contains("streak_color")) s.streak_color = j["streak_color"].get<Rgb>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid rain spec: ") + e.what());
  }
  s.validate();
  return s;
}

namespace {

struct Uniform {
  std::mt19937_64 engine;
  explicit Uniform(std::uint64_t seed) : engine(seed) {}
  double operator()(double lo, double hi) {
    const double u = static_cast<double>(engine() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
  }
};

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

void draw_streaks(Image& img, const RainSpec& spec) {
  const double megapixels = double(img.width) * img.height / 1e6;
  const auto count = static_cast<long>(std::lround(spec.streaks_per_megapixel * megapixels));
  Uniform rng(spec.seed);
  for (long s = 0; s < count; ++s) {
    const double x0 = rng(0, img.width), y0 = rng(0, img.height);
    const double len = rng(spec.length_min_px, spec.length_max_px);
    const double theta = rng(spec.angle_min_deg, spec.angle_max_deg) * std::numbers::pi / 180.0;
    const double dx = std::sin(theta), dy = std::cos(theta);
    int last_x = -1, last_y = -1;
    for (int t = 0; t < static_cast<int>(std::lround(len)); ++t) {
      const int x = static_cast<int>(std::floor(x0 + t * dx));
      const int y = static_cast<int>(std::floor(y0 + t * dy));
      if (x == last_x && y == last_y) continue;
      last_x = x;
      last_y = y;
      if (x < 0 || y < 0 || x >= img.width || y >= img.height) continue;
      auto* p = img.px(x, y);
      for (int c = 0; c < 3; ++c) p[c] = to_byte(p[c] * (1 - spec.opacity) + spec.streak_color[c] * spec.opacity);
    }
  }
}

Image gaussian_blur(const Image& img, double sigma) {
  const int r = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
  std::vector<double> k(2 * r + 1);
  double sum = 0;
  for (int i = -r; i <= r; ++i) sum += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= sum;

  const int w = img.width, h = img.height;
  std::vector<double> tmp(img.data.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (int i = -r; i <= r; ++i) acc += k[i + r] * img.px(std::clamp(x + i, 0, w - 1), y)[c];
        tmp[(static_cast<std::size_t>(y) * w + x) * 3 + c] = acc;
      }
  Image out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (int i = -r; i <= r; ++i)
          acc += k[i + r] * tmp[(static_cast<std::size_t>(std::clamp(y + i, 0, h - 1)) * w + x) * 3 + c];
        out.px(x, y)[c] = to_byte(acc);
      }
  return out;
}

void reduce_contrast(Image& img, double scale) {
  std::array<std::array<std::size_t, 256>, 3> hist{};
  for (std::size_t i = 0; i < img.data.size(); ++i) ++hist[i % 3][img.data[i]];
  const std::size_t n = img.data.size() / 3;
  std::array<int, 3> median{};
  for (int c = 0; c < 3; ++c) {
    std::size_t acc = 0;
    for (int v = 0; v < 256; ++v) {
      acc += hist[c][v];
      if (2 * acc > n) {
        median[c] = v;
        break;
      }
    }
  }
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const int m = median[i % 3];
    img.data[i] = to_byte(m + (img.data[i] - m) * scale);
  }
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

Image apply_rain(const Image& image, const RainSpec& spec) {
  spec.validate();
  Image out = image;
  if (out.empty()) return out;
  draw_streaks(out, spec);
  if (spec.blur_radius_px > 0) out = gaussian_blur(out, spec.blur_radius_px);
  if (spec.contrast_scale < 1) reduce_contrast(out, spec.contrast_scale);
  return out;
}

Manifest degrade_manifest(const Manifest& manifest, const RainSpec& spec, const fs::path& out_dir) {
  spec.validate();
  Manifest out;
  out.class_set = manifest.class_set;
  out.root = out_dir;
  std::vector<std::string> failures;
  for (const auto& s : manifest.samples) {
    Sample d = s;
    d.condition = Condition::rain;
    d.image_path = "images/" + s.id + ".png";
    try {
      const Image src = read_png(manifest.resolve(s));
      if (src.width != s.width || src.height != s.height)
        throw IoError("image is " + std::to_string(src.width) + "x" + std::to_string(src.height) +
                      ", manifest says " + std::to_string(s.width) + "x" + std::to_string(s.height));
      RainSpec per_image = spec;
      per_image.seed = spec.seed ^ fnv1a(s.id);
      write_png(apply_rain(src, per_image), out_dir / d.image_path);
    } catch (const Error& e) {
      failures.push_back(s.id + ": " + e.what());
    }
    out.samples.push_back(std::move(d));
  }
  if (!failures.empty()) {
    std::string msg = "degrade failed for " + std::to_string(failures.size()) + " sample(s):";
    for (const auto& f : failures) msg += "\n  " + f;
    throw IoError(msg);
  }
  write_file_atomic(out_dir / "rain_spec.json", to_json(spec).dump(2) + "\n");
  write_manifest(out, out_dir / "manifest.jsonl");
  return out;
}

}  // namespace atr
