// SPDX-License-Identifier: Apache-2.0
#include "atr/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "atr/error.hpp"
#include "atr/fs_util.hpp"
#include "atr/glyph.hpp"
#include "atr/image.hpp"
#include "atr/reconcile.hpp"

namespace atr {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::rgb: return "rgb";
    case Modality::thermal: return "thermal";
    case Modality::synthetic: return "synthetic";
  }
  return "rgb";
}

std::string_view to_string(Condition c) { return c == Condition::rain ? "rain" : "clear"; }

std::string_view to_string(RangeBin b) {
  switch (b) {
    case RangeBin::r1000: return "1000";
    case RangeBin::r2000: return "2000";
    case RangeBin::r3000_5000: return "3000-5000";
    case RangeBin::unbinned: return "unbinned";
  }
  return "unbinned";
}

Modality parse_modality(std::string_view s) {
  for (Modality m : {Modality::rgb, Modality::thermal, Modality::synthetic})
    if (to_string(m) == s) return m;
  throw ParseError("unknown modality '" + std::string(s) + "'", 0);
}

Condition parse_condition(std::string_view s) {
  for (Condition c : {Condition::clear, Condition::rain})
    if (to_string(c) == s) return c;
  throw ParseError("unknown condition '" + std::string(s) + "'", 0);
}

RangeBin parse_range_bin(std::string_view s) {
  for (RangeBin b : {RangeBin::r1000, RangeBin::r2000, RangeBin::r3000_5000, RangeBin::unbinned})
    if (to_string(b) == s) return b;
  throw ParseError("unknown range bin '" + std::string(s) + "'", 0);
}

RangeBin bin_range(std::int64_t range_m) {
  if (range_m >= 500 && range_m < 1500) return RangeBin::r1000;
  if (range_m >= 1500 && range_m < 2500) return RangeBin::r2000;
  if (range_m >= 2500 && range_m <= 5500) return RangeBin::r3000_5000;
  return RangeBin::unbinned;
}

fs::path Manifest::resolve(const Sample& s) const {
  fs::path p(s.image_path);
  return p.is_absolute() || root.empty() ? p : root / p;
}

const Sample* Manifest::find(std::string_view id) const {
  for (const auto& s : samples)
    if (s.id == id) return &s;
  return nullptr;
}

void validate(const Manifest& m) {
  std::set<std::string_view> ids;
  std::set<std::string_view> classes;
  for (const auto& c : m.class_set) {
    if (c.empty() || normalize_label(c) != c) throw InvariantError("class_set entry '" + c + "' is not normalized");
    if (!classes.insert(c).second) throw InvariantError("class_set lists '" + c + "' twice");
  }
  for (const auto& s : m.samples) {
    auto fail = [&](const std::string& why) { throw InvariantError("sample " + s.id + ": " + why); };
    if (s.id.empty()) throw InvariantError("sample with empty id");
    if (!ids.insert(s.id).second) throw InvariantError("duplicate id " + s.id);
    if (s.image_path.empty()) fail("empty image_path");
    if (s.width <= 0 || s.height <= 0) fail("image size must be positive");
    if (s.range_m && *s.range_m <= 0) fail("range_m must be > 0");
    for (const auto& t : s.truths) {
      if (!t.box.ordered()) fail("box " + to_string(t.box) + " has x1 < x0 or y1 < y0");
      if (!t.box.has_area()) fail("box " + to_string(t.box) + " has zero area");
      if (!t.box.within(s.width, s.height)) fail("box " + to_string(t.box) + " exceeds image bounds");
      if (t.class_label.empty()) fail("empty class label");
      if (normalize_label(t.class_label) != t.class_label)
        fail("class label '" + t.class_label + "' is not normalized");
      if (!classes.contains(t.class_label)) fail("class '" + t.class_label + "' missing from class_set");
    }
  }
}

namespace {

const std::set<std::string> kSampleKeys = {"id", "image_path", "width", "height", "modality",
                                           "condition", "range_m", "truths"};
const std::set<std::string> kTruthKeys = {"x0", "y0", "x1", "y1", "label"};

json number(double v) {
  if (std::floor(v) == v && std::abs(v) < 9e15) return static_cast<std::int64_t>(v);
  return v;
}

Sample parse_sample(const json& j, std::size_t line) {
  if (!j.is_object()) throw ParseError("record is not an object", line);
  for (const auto& [k, _] : j.items())
    if (!kSampleKeys.contains(k)) throw ParseError("unknown field '" + k + "'", line);
  try {
    Sample s;
    s.id = j.at("id").get<std::string>();
    s.image_path = j.at("image_path").get<std::string>();
    s.width = j.at("width").get<int>();
    s.height = j.at("height").get<int>();
    s.modality = parse_modality(j.at("modality").get<std::string>());
    s.condition = parse_condition(j.at("condition").get<std::string>());
    if (j.contains("range_m") && !j["range_m"].is_null()) s.range_m = j["range_m"].get<std::int64_t>();
    for (const auto& t : j.at("truths")) {
      for (const auto& [k, _] : t.items())
        if (!kTruthKeys.contains(k)) throw ParseError("unknown truth field '" + k + "'", line);
      s.truths.push_back({{t.at("x0").get<double>(), t.at("y0").get<double>(), t.at("x1").get<double>(),
                           t.at("y1").get<double>()},
                          t.at("label").get<std::string>()});
    }
    return s;
  } catch (const json::exception& e) {
    throw ParseError(e.what(), line);
  } catch (const ParseError& e) {
    if (e.line()) throw;
    throw ParseError(e.what(), line);
  }
}

}  // namespace

Manifest parse_manifest(std::string_view text, const fs::path& root) {
  Manifest m;
  m.root = root;
  bool have_header = false;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(e.what(), line_no);
    }
    if (j.is_object() && j.contains("class_set") && !j.contains("id")) {
      if (have_header || !m.samples.empty()) throw ParseError("class_set header must be the first record", line_no);
      try {
        m.class_set = j.at("class_set").get<std::vector<std::string>>();
      } catch (const json::exception& e) {
        throw ParseError(e.what(), line_no);
      }
      have_header = true;
      continue;
    }
    m.samples.push_back(parse_sample(j, line_no));
  }
  if (!have_header) {
    for (const auto& s : m.samples)
      for (const auto& t : s.truths)
        if (std::find(m.class_set.begin(), m.class_set.end(), t.class_label) == m.class_set.end())
          m.class_set.push_back(t.class_label);
  }
  validate(m);
  return m;
}

Manifest load_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("manifest not found: " + path.string());
  return parse_manifest(read_file_text(path), path.parent_path());
}

std::string serialize_manifest(const Manifest& m) {
  std::string out = json{{"class_set", m.class_set}}.dump() + "\n";
  for (const auto& s : m.samples) {
    json truths = json::array();
    for (const auto& t : s.truths)
      truths.push_back({{"x0", number(t.box.x0)},
                        {"y0", number(t.box.y0)},
                        {"x1", number(t.box.x1)},
                        {"y1", number(t.box.y1)},
                        {"label", t.class_label}});
    json j = {{"id", s.id},
              {"image_path", s.image_path},
              {"width", s.width},
              {"height", s.height},
              {"modality", to_string(s.modality)},
              {"condition", to_string(s.condition)},
              {"truths", std::move(truths)}};
    if (s.range_m) j["range_m"] = *s.range_m;
    out += j.dump() + "\n";
  }
  return out;
}

void write_manifest(const Manifest& m, const fs::path& path) { write_file_atomic(path, serialize_manifest(m)); }

namespace {

// Portable across standard libraries, unlike std::uniform_int_distribution.
struct FixtureRng {
  std::mt19937_64 engine;
  explicit FixtureRng(std::uint64_t seed) : engine(seed) {}
  int uniform(int lo, int hi) {
    return lo + static_cast<int>(engine() % static_cast<std::uint64_t>(hi - lo + 1));
  }
};

constexpr Rgb kGlyphPalette[] = {{232, 64, 52}, {240, 204, 40}, {64, 200, 236},
                                 {236, 236, 236}, {204, 84, 224}, {250, 144, 30}};
constexpr std::int64_t kFixtureRanges[] = {1000, 2000, 3000, 4000, 5000};

PixelRect grow(const PixelRect& r, int by) { return {r.x0 - by, r.y0 - by, r.x1 + by, r.y1 + by}; }

bool overlaps(const PixelRect& a, const PixelRect& b) {
  return a.x0 < b.x1 && b.x0 < a.x1 && a.y0 < b.y1 && b.y0 < a.y1;
}

// Places a w x h rect whose keep-out zone avoids every zone in `taken`; nullopt if it cannot.
std::optional<PixelRect> place(FixtureRng& rng, int w, int h, int width, int height,
                               const std::vector<PixelRect>& taken) {
  const int keep = static_cast<int>(std::ceil(0.25 * std::max(w, h))) + 2;
  if (w + 2 * keep > width || h + 2 * keep > height) return std::nullopt;
  for (int attempt = 0; attempt < 100; ++attempt) {
    const int x = rng.uniform(keep, width - keep - w);
    const int y = rng.uniform(keep, height - keep - h);
    const PixelRect zone = grow({x, y, x + w, y + h}, keep);
    if (std::none_of(taken.begin(), taken.end(), [&](const PixelRect& t) { return overlaps(t, zone); }))
      return PixelRect{x, y, x + w, y + h};
  }
  return std::nullopt;
}

}  // namespace

Manifest generate_fixture(const FixtureSpec& spec, const fs::path& out_dir) {
  if (spec.n_images < 1) throw PreconditionError("n_images must be >= 1");
  if (spec.classes.empty()) throw PreconditionError("classes must be non-empty");
  if (spec.image_width < 64 || spec.image_height < 64) throw PreconditionError("image_size must be >= 64x64");
  if (spec.classes.size() > kClassShapeCount)
    throw PreconditionError("at most " + std::to_string(kClassShapeCount) + " fixture classes are supported");
  if (spec.max_objects_per_image < 1) throw PreconditionError("max_objects_per_image must be >= 1");
  if (spec.decoys < 0) throw PreconditionError("decoys must be >= 0");

  Manifest m;
  for (const auto& c : spec.classes) {
    const auto n = normalize_label(c);
    if (n.empty() || std::find(m.class_set.begin(), m.class_set.end(), n) != m.class_set.end())
      throw PreconditionError("fixture classes must be distinct non-empty labels");
    m.class_set.push_back(n);
  }
  m.root = out_dir;

  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "images").string() + ": " + ec.message());

  const int W = spec.image_width, H = spec.image_height;
  const int smin = std::max(12, std::min(W, H) / 9);
  const int smax = std::max(smin, static_cast<int>(std::min(W, H) / 4.5));

  FixtureRng rng(spec.seed);
  FixtureRng decoy_rng(spec.seed ^ 0x9E3779B97F4A7C15ull);

  for (int i = 0; i < spec.n_images; ++i) {
    Sample s;
    char id[32];
    std::snprintf(id, sizeof id, "s%04d", i);
    s.id = id;
    s.image_path = "images/" + s.id + ".png";
    s.width = W;
    s.height = H;
    s.modality = spec.modality;
    s.condition = Condition::clear;
    s.range_m = kFixtureRanges[rng.uniform(0, 4)];
    const Rgb bg = {static_cast<std::uint8_t>(70 + rng.uniform(-8, 8)),
                    static_cast<std::uint8_t>(80 + rng.uniform(-8, 8)),
                    static_cast<std::uint8_t>(60 + rng.uniform(-8, 8))};
    Image img(W, H, bg);

    const int n_obj = rng.uniform(1, spec.max_objects_per_image);
    std::vector<PixelRect> zones;
    for (int k = 0; k < n_obj; ++k) {
      const auto cls = static_cast<std::size_t>(rng.uniform(0, static_cast<int>(m.class_set.size()) - 1));
      const int w = rng.uniform(smin, smax), h = rng.uniform(smin, smax);
      const Rgb color = kGlyphPalette[rng.uniform(0, 5)];
      const auto rect = place(rng, w, h, W, H, zones);
      if (!rect) continue;
      zones.push_back(grow(*rect, static_cast<int>(std::ceil(0.25 * std::max(w, h))) + 2));
      const PixelRect drawn = draw_glyph(img, *rect, class_shape(cls), color);
      s.truths.push_back({drawn.to_box(), m.class_set[cls]});
    }
    m.samples.push_back(std::move(s));

    // Decoys go on images chosen by their own stream so the truth layout is unaffected.
    std::vector<PixelRect> decoy_zones = zones;
    for (int d = 0; d < spec.decoys; ++d) {
      if (d % spec.n_images != i) continue;
      const int w = decoy_rng.uniform(smin, smax), h = decoy_rng.uniform(smin, smax);
      const auto rect = place(decoy_rng, w, h, W, H, decoy_zones);
      if (!rect) throw PreconditionError("no room for decoy " + std::to_string(d) + " on " + m.samples.back().id);
      decoy_zones.push_back(grow(*rect, static_cast<int>(std::ceil(0.25 * std::max(w, h))) + 2));
      draw_glyph(img, *rect, Shape::ring, kGlyphPalette[decoy_rng.uniform(0, 5)]);
    }
    write_png(img, out_dir / m.samples.back().image_path);
  }
  validate(m);
  write_manifest(m, out_dir / "manifest.jsonl");
  return m;
}

}  // namespace atr
