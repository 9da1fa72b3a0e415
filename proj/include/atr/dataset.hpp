// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "atr/geometry.hpp"

namespace atr {

enum class Modality { rgb, thermal, synthetic };
enum class Condition { clear, rain };

/// Distance groupings of the long-range evaluation tables.
enum class RangeBin { r1000, r2000, r3000_5000, unbinned };

std::string_view to_string(Modality m);
std::string_view to_string(Condition c);
/// Column label: "1000", "2000", "3000-5000" or "unbinned".
std::string_view to_string(RangeBin b);
Modality parse_modality(std::string_view s);
Condition parse_condition(std::string_view s);
RangeBin parse_range_bin(std::string_view s);

/// [500,1500) -> r1000, [1500,2500) -> r2000, [2500,5500] -> r3000_5000, else unbinned.
RangeBin bin_range(std::int64_t range_m);

struct GroundTruth {
  Box box;
  std::string class_label;

  bool operator==(const GroundTruth&) const = default;
};

struct Sample {
  std::string id;
  std::string image_path;  // as written in the manifest; relative paths resolve against Manifest::root
  int width = 0;
  int height = 0;
  std::vector<GroundTruth> truths;
  std::optional<std::int64_t> range_m;
  Modality modality = Modality::rgb;
  Condition condition = Condition::clear;

  RangeBin range_bin() const { return range_m ? bin_range(*range_m) : RangeBin::unbinned; }
  bool operator==(const Sample&) const = default;
};

struct Manifest {
  std::vector<Sample> samples;
  std::vector<std::string> class_set;
  std::filesystem::path root;  // directory image paths are relative to

  std::filesystem::path resolve(const Sample& s) const;
  const Sample* find(std::string_view id) const;
};

/// Checks every Sample/GroundTruth/Manifest invariant; throws InvariantError naming the sample.
void validate(const Manifest& m);

/// Parses the JSON Lines manifest format. Rejects (never repairs) invalid entries.
Manifest parse_manifest(std::string_view text, const std::filesystem::path& root = {});
Manifest load_manifest(const std::filesystem::path& path);

std::string serialize_manifest(const Manifest& m);
void write_manifest(const Manifest& m, const std::filesystem::path& path);

struct FixtureSpec {
  int n_images = 20;
  std::vector<std::string> classes;
  std::uint64_t seed = 7;
  int image_width = 256;
  int image_height = 256;
  int max_objects_per_image = 3;
  /// Ring-shaped clutter glyphs with no ground truth, placed without disturbing the
  /// layout of the real objects (same seed with and without decoys gives identical truths).
  int decoys = 0;
  Modality modality = Modality::synthetic;
};

/// Writes `out_dir/images/*.png` and `out_dir/manifest.jsonl`; byte-identical for identical specs.
Manifest generate_fixture(const FixtureSpec& spec, const std::filesystem::path& out_dir);

}  // namespace atr
