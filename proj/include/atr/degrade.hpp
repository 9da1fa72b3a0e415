// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "atr/dataset.hpp"
#include "atr/image.hpp"

namespace atr {

/// Procedural rain: seeded semi-transparent streaks, then Gaussian blur, then a contrast
/// reduction around the per-channel median.
struct RainSpec {
  std::uint64_t seed = 0;
  double streaks_per_megapixel = 1500;
  double length_min_px = 8, length_max_px = 20;
  double angle_min_deg = -15, angle_max_deg = 15;  // from vertical
  double opacity = 0.35;                           // (0, 1]
  double blur_radius_px = 0.8;                     // Gaussian sigma; 0 disables
  double contrast_scale = 0.85;                    // (0, 1]
  Rgb streak_color{200, 200, 210};

  /// Throws InvariantError on an empty range or out-of-bounds opacity/contrast.
  void validate() const;

  bool operator==(const RainSpec&) const = default;
};

nlohmann::json to_json(const RainSpec& spec);
RainSpec rain_spec_from_json(const nlohmann::json& j);

/// Pure function of (image, spec); output has the input's dimensions.
Image apply_rain(const Image& image, const RainSpec& spec);

/// Writes rained copies of every image under out_dir/images plus out_dir/manifest.jsonl
/// (condition=rain, identical ground truth) and out_dir/rain_spec.json. Each image uses a seed
/// derived from spec.seed and the sample id. Per-file failures are collected and reported together.
Manifest degrade_manifest(const Manifest& manifest, const RainSpec& spec, const std::filesystem::path& out_dir);

}  // namespace atr
