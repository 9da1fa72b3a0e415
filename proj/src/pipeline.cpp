// SPDX-License-Identifier: Apache-2.0
#include "atr/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdlib>
#include <exception>
#include <functional>
#include <iterator>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "atr/detector_backends.hpp"
#include "atr/error.hpp"
#include "atr/fs_util.hpp"
#include "atr/image.hpp"
#include "atr/lvlm_backends.hpp"
#include "atr/reconcile.hpp"

namespace atr {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void reject_unknown(const json& j, std::initializer_list<std::string_view> allowed, std::string_view where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be an object");
  for (const auto& [k, _] : j.items())
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
      throw ConfigError("unknown key '" + k + "' in " + std::string(where));
}

fs::path resolve_path(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

BackendSpec parse_backend(const json& j, const fs::path& base, std::string_view where) {
  reject_unknown(j, {"type", "id", "url", "model", "api_key_env", "path", "script", "rules", "max_concurrency",
                     "timeout_ms"},
                 where);
  BackendSpec b;
  b.type = j.at("type").get<std::string>();
  b.id = j.value("id", std::string{});
  b.url = j.value("url", std::string{});
  b.model = j.value("model", std::string{});
  b.api_key_env = j.value("api_key_env", b.api_key_env);
  b.path = resolve_path(base, j.value("path", std::string{}));
  if (j.contains("script")) b.inline_config = j["script"];
  if (j.contains("rules")) b.inline_config = j["rules"];
  b.max_concurrency = j.value("max_concurrency", b.max_concurrency);
  b.timeout_ms = j.value("timeout_ms", b.timeout_ms);
  return b;
}

json backend_to_json(const BackendSpec& b) {
  json j{{"type", b.type}};
  if (!b.id.empty()) j["id"] = b.id;
  if (!b.url.empty()) j["url"] = b.url;
  if (!b.model.empty()) j["model"] = b.model;
  if (b.type == "openai") j["api_key_env"] = b.api_key_env;  // the name only, never the value
  if (!b.path.empty()) j["path"] = b.path.generic_string();
  if (!b.inline_config.is_null()) j[b.type == "mock" ? "rules" : "script"] = b.inline_config;
  j["max_concurrency"] = b.max_concurrency;
  j["timeout_ms"] = b.timeout_ms;
  return j;
}

std::string dir_name(std::string_view id) {
  std::string out;
  for (char c : id) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_') ? c : '_';
  return out.empty() ? "_" : out;
}

fs::path detector_cassettes(const RunConfig& cfg) { return cfg.cassette_dir / "detector"; }
fs::path lvlm_cassettes(const RunConfig& cfg, const BackendSpec& b) { return cfg.cassette_dir / "lvlm" / dir_name(b.id); }

bool is_live_remote(const BackendSpec& b) { return b.type == "remote" || b.type == "openai"; }

// Runs fn(i) for i in [0, n) on up to `workers` threads. The first failure by index wins so
// the surfaced error does not depend on scheduling.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  auto worker = [&] {
    for (std::size_t i; !stop.load() && (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
        stop.store(true);
      }
    }
  };
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct EvalSample {
  const Manifest* manifest;
  const Sample* sample;
};

struct SampleResult {
  std::vector<OutcomeRecord> outcomes;
  std::vector<VerificationRecord> verifications;
  std::map<GroupKey, DetectionTally> tallies;
  std::optional<std::string> detector_error;
};

Image load_checked(const Manifest& m, const Sample& s) {
  Image img = read_png(m.resolve(s));
  if (img.width != s.width || img.height != s.height)
    throw IoError("image size of sample " + s.id + " does not match its manifest record");
  return img;
}

SampleResult process_sample(const RunConfig& cfg, const Backends& backends, const EvalSample& es) {
  const Sample& s = *es.sample;
  SampleResult r;
  const Image img = load_checked(*es.manifest, s);

  std::vector<Detection> dets;
  try {
    dets = detect_binary(img, *backends.detector, cfg.detect);
  } catch (const ConfigError&) {
    throw;
  } catch (const TransportError& e) {
    r.detector_error = e.what();
  } catch (const ProtocolError& e) {
    r.detector_error = e.what();
  }

  const MatchResult m = match(s.truths, dets, cfg.iou_threshold);
  auto tally = [&](const LvlmBackend& b) -> DetectionTally& {
    return r.tallies[GroupKey{b.id(), s.condition, s.modality}];
  };
  for (const auto& b : backends.lvlms) tally(*b).missed_truths += m.unmatched_truths.size();

  // Unmatched detections are false-positive candidates; optionally let each backend veto them.
  for (std::size_t d : m.unmatched_detections) {
    if (!cfg.verify_false_positives) {
      for (const auto& b : backends.lvlms) ++tally(*b).false_positives;
      continue;
    }
    const Crop crop = extract_crop(s, img, dets[d], cfg.detect.pad_fraction);
    for (const auto& b : backends.lvlms) {
      VerificationRecord v{s.id, s.condition, dets[d], b->id(), {}, false, {}};
      try {
        v.verification = verify_detection(crop, *b, cfg.recognize);
      } catch (const ConfigError&) {
        throw;
      } catch (const Error& e) {
        v.failed = true;
        v.error = e.what();
        v.verification = {Verdict::object_present, true, {}};
      }
      auto& t = tally(*b);
      if (v.verification.verdict == Verdict::false_positive) {
        ++t.removed_false_positives;
      } else {
        ++t.false_positives;
        if (v.verification.ambiguous) ++t.ambiguous_verifications;
      }
      r.verifications.push_back(std::move(v));
    }
  }

  std::vector<MatchPair> pairs = m.pairs;
  std::sort(pairs.begin(), pairs.end(), [](const MatchPair& a, const MatchPair& b) { return a.truth < b.truth; });
  for (const auto& p : pairs) {
    const Crop crop = extract_crop(s, img, dets[p.detection], cfg.detect.pad_fraction);
    for (const auto& b : backends.lvlms)
      for (const auto& strategy : cfg.strategies) {
        OutcomeRecord rec;
        rec.sample_id = s.id;
        rec.true_class = s.truths[p.truth].class_label;
        rec.range_bin = s.range_bin();
        rec.condition = s.condition;
        rec.modality = s.modality;
        try {
          rec.outcome = recognize_crop(crop, strategy, *b, cfg.recognize);
        } catch (const ConfigError&) {
          throw;
        } catch (const Error& e) {
          rec.outcome = RecognitionOutcome{};
          rec.outcome.crop = CropRef{s.id, crop.detection.box, crop.detection.confidence};
          rec.outcome.strategy = strategy;
          rec.outcome.backend_id = b->id();
          rec.outcome.failed = true;
          rec.outcome.error = e.what();
          ++tally(*b).failed_outcomes;
        }
        r.outcomes.push_back(std::move(rec));
      }
  }
  return r;
}

std::string label_map_key(std::string_view backend, StrategyKind k) {
  return std::string(backend) + "/" + std::string(to_string(k));
}

bool open_kind(StrategyKind k) { return k == StrategyKind::open_set || k == StrategyKind::cot_open; }

std::vector<std::string> all_classes(const std::vector<const Manifest*>& manifests) {
  std::vector<std::string> out;
  for (const auto* m : manifests)
    for (const auto& c : m->class_set)
      if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
  return out;
}

std::string render_outcome_log(std::span<const OutcomeRecord> records) {
  std::string out;
  for (const auto& r : records) out += to_json(r).dump() + "\n";
  return out;
}

json verification_to_json(const VerificationRecord& v) {
  const auto& b = v.detection.box;
  return {{"sample_id", v.sample_id},
          {"condition", to_string(v.condition)},
          {"backend", v.backend_id},
          {"box", {b.x0, b.y0, b.x1, b.y1}},
          {"confidence", v.detection.confidence},
          {"verdict", v.verification.verdict == Verdict::false_positive ? "false_positive" : "object_present"},
          {"ambiguous", v.verification.ambiguous},
          {"raw_response", v.verification.raw_response},
          {"failed", v.failed},
          {"error", v.error}};
}

std::string label_map_csv(const EvaluationReport& report) {
  std::string out = "backend,strategy,class,keyword,count\n";
  for (const auto& [key, map] : report.label_maps) {
    const auto slash = key.find('/');
    const std::string prefix = key.substr(0, slash) + "," + key.substr(slash + 1) + ",";
    for (const auto& cls : map.classes) {
      const auto* e = map.find(cls);
      out += prefix + cls + "," + (e ? e->keyword + "," + std::to_string(e->count) : std::string("-,0")) + "\n";
    }
  }
  return out;
}

std::string fmt(double v, const char* f = "%.4f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string box_text(const Box& b) {
  return "[" + fmt(b.x0, "%.1f") + ", " + fmt(b.y0, "%.1f") + ", " + fmt(b.x1, "%.1f") + ", " + fmt(b.y1, "%.1f") + "]";
}

json dets_json(std::span<const Detection> dets) {
  json a = json::array();
  for (const auto& d : dets)
    a.push_back({{"x0", d.box.x0}, {"y0", d.box.y0}, {"x1", d.box.x1}, {"y1", d.box.y1},
                 {"confidence", d.confidence}, {"keyword", d.keyword}});
  return a;
}

}  // namespace

RunConfig parse_run_config(const json& j, const fs::path& base_dir) {
  try {
    reject_unknown(j, {"manifest", "detector", "lvlms", "strategies", "detect", "recognize", "rain", "parallelism",
                       "cassette", "output_dir", "seed", "iou_threshold", "verify_false_positives", "stopwords",
                       "compare_keywords"},
                   "run config");
    RunConfig c;
    c.manifest = resolve_path(base_dir, j.at("manifest").get<std::string>());
    c.output_dir = resolve_path(base_dir, j.value("output_dir", std::string("out")));
    c.seed = j.value("seed", c.seed);
    c.detector = parse_backend(j.value("detector", json{{"type", "mock"}}), base_dir, "detector");
    if (c.detector.id.empty()) c.detector.id = c.detector.type == "remote" ? c.detector.url : "mock-detector";
    for (const auto& l : j.value("lvlms", json::array())) c.lvlms.push_back(parse_backend(l, base_dir, "lvlm"));
    for (const auto& s : j.value("strategies", json::array())) {
      reject_unknown(s, {"kind", "known_labels"}, "strategy");
      c.strategies.push_back({parse_strategy_kind(s.at("kind").get<std::string>()),
                              s.value("known_labels", std::vector<std::string>{})});
    }
    if (j.contains("detect")) {
      const auto& d = j["detect"];
      reject_unknown(d, {"keyword", "confidence_floor", "nms_iou", "pad_fraction", "max_retries", "backoff_ms"},
                     "detect");
      c.detect.keyword = d.value("keyword", c.detect.keyword);
      c.detect.confidence_floor = d.value("confidence_floor", c.detect.confidence_floor);
      c.detect.nms_iou = d.value("nms_iou", c.detect.nms_iou);
      c.detect.pad_fraction = d.value("pad_fraction", c.detect.pad_fraction);
      c.detect.max_retries = d.value("max_retries", c.detect.max_retries);
      c.detect.backoff = std::chrono::milliseconds(d.value("backoff_ms", std::int64_t(c.detect.backoff.count())));
    }
    if (j.contains("recognize")) {
      const auto& r = j["recognize"];
      reject_unknown(r, {"max_retries", "backoff_ms"}, "recognize");
      c.recognize.max_retries = r.value("max_retries", c.recognize.max_retries);
      c.recognize.backoff =
          std::chrono::milliseconds(r.value("backoff_ms", std::int64_t(c.recognize.backoff.count())));
    }
    if (j.contains("rain") && !j["rain"].is_null()) {
      json r = j["rain"];
      if (!r.contains("seed")) r["seed"] = c.seed;
      try {
        c.rain = rain_spec_from_json(r);
        c.rain->validate();
      } catch (const Error& e) {
        throw ConfigError(std::string("invalid rain spec: ") + e.what());
      }
    }
    c.parallelism = j.value("parallelism", c.parallelism);
    if (j.contains("cassette")) {
      const auto& k = j["cassette"];
      reject_unknown(k, {"mode", "dir"}, "cassette");
      c.cassette_mode = parse_cassette_mode(k.value("mode", std::string("live")));
      c.cassette_dir = resolve_path(base_dir, k.value("dir", std::string{}));
    }
    c.iou_threshold = j.value("iou_threshold", c.iou_threshold);
    c.verify_false_positives = j.value("verify_false_positives", c.verify_false_positives);
    c.stopwords = j.contains("stopwords") ? j["stopwords"].get<std::vector<std::string>>() : default_stopwords();
    c.compare_keywords = j.value("compare_keywords", std::vector<std::string>{});
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid run config: ") + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("invalid run config: ") + e.what());
  }
}

RunConfig load_run_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(read_file_text(path));
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(j, path.parent_path());
}

json to_json(const RunConfig& c) {
  json strategies = json::array();
  for (const auto& s : c.strategies) {
    json o{{"kind", to_string(s.kind)}};
    if (s.closed()) o["known_labels"] = s.known_labels;
    strategies.push_back(o);
  }
  json lvlms = json::array();
  for (const auto& l : c.lvlms) lvlms.push_back(backend_to_json(l));
  json j{{"manifest", c.manifest.generic_string()},
         {"output_dir", c.output_dir.generic_string()},
         {"seed", c.seed},
         {"detector", backend_to_json(c.detector)},
         {"lvlms", lvlms},
         {"strategies", strategies},
         {"detect",
          {{"keyword", c.detect.keyword},
           {"confidence_floor", c.detect.confidence_floor},
           {"nms_iou", c.detect.nms_iou},
           {"pad_fraction", c.detect.pad_fraction},
           {"max_retries", c.detect.max_retries},
           {"backoff_ms", c.detect.backoff.count()}}},
         {"recognize", {{"max_retries", c.recognize.max_retries}, {"backoff_ms", c.recognize.backoff.count()}}},
         {"rain", c.rain ? to_json(*c.rain) : json(nullptr)},
         {"parallelism", c.parallelism},
         {"cassette", {{"mode", to_string(c.cassette_mode)}, {"dir", c.cassette_dir.generic_string()}}},
         {"iou_threshold", c.iou_threshold},
         {"verify_false_positives", c.verify_false_positives},
         {"stopwords", c.stopwords},
         {"compare_keywords", c.compare_keywords}};
  return j;
}

void validate(const RunConfig& c, RunKind kind) {
  if (c.manifest.empty()) throw ConfigError("manifest path is required");
  if (!fs::exists(c.manifest)) throw ConfigError("manifest not found: " + c.manifest.string());
  if (c.output_dir.empty()) throw ConfigError("output_dir is required");
  if (c.parallelism < 1) throw ConfigError("parallelism must be >= 1");
  if (!(c.iou_threshold > 0 && c.iou_threshold <= 1)) throw ConfigError("iou_threshold must be in (0,1]");
  const auto& d = c.detect;
  if (d.keyword.empty()) throw ConfigError("detect.keyword must not be empty");
  if (!(d.confidence_floor >= 0 && d.confidence_floor <= 1)) throw ConfigError("detect.confidence_floor must be in [0,1]");
  if (!(d.nms_iou > 0 && d.nms_iou <= 1)) throw ConfigError("detect.nms_iou must be in (0,1]");
  if (!(d.pad_fraction >= 0)) throw ConfigError("detect.pad_fraction must be >= 0");
  if (d.max_retries < 0 || c.recognize.max_retries < 0) throw ConfigError("max_retries must be >= 0");

  const auto& det = c.detector;
  if (det.type != "mock" && det.type != "remote" && det.type != "cassette")
    throw ConfigError("unknown detector type '" + det.type + "'");
  if (det.type == "remote" && det.url.empty()) throw ConfigError("remote detector needs a url");
  if (det.type == "cassette" && det.path.empty()) throw ConfigError("cassette detector needs a path");

  if (kind == RunKind::evaluate) {
    if (c.lvlms.empty()) throw ConfigError("at least one LVLM backend is required");
    if (c.strategies.empty()) throw ConfigError("at least one strategy is required");
  } else if (kind == RunKind::compare && c.compare_keywords.empty()) {
    throw ConfigError("compare_keywords must list at least one keyword");
  }
  std::set<std::string> ids;
  for (const auto& l : c.lvlms) {
    if (l.id.empty()) throw ConfigError("every LVLM backend needs an id");
    if (!ids.insert(l.id).second) throw ConfigError("duplicate LVLM id '" + l.id + "'");
    if (l.type == "scripted") {
      if (l.path.empty() && l.inline_config.is_null()) throw ConfigError("scripted LVLM '" + l.id + "' needs a script");
      if (!l.path.empty() && !fs::exists(l.path)) throw ConfigError("script not found: " + l.path.string());
    } else if (l.type == "openai") {
      if (l.url.empty() || l.model.empty()) throw ConfigError("openai LVLM '" + l.id + "' needs url and model");
    } else if (l.type == "cassette") {
      if (l.path.empty()) throw ConfigError("cassette LVLM '" + l.id + "' needs a path");
    } else {
      throw ConfigError("unknown LVLM type '" + l.type + "'");
    }
    if (l.max_concurrency < 1) throw ConfigError("max_concurrency must be >= 1");
  }
  std::set<StrategyKind> kinds;
  for (const auto& s : c.strategies) {
    try {
      s.validate();
    } catch (const Error& e) {
      throw ConfigError(std::string("invalid strategy: ") + e.what());
    }
    if (!kinds.insert(s.kind).second) throw ConfigError("duplicate strategy " + std::string(to_string(s.kind)));
  }

  if (c.cassette_mode == CassetteMode::replay) {
    if (c.cassette_dir.empty()) throw ConfigError("replay mode requires cassette.dir");
    std::vector<fs::path> needed{detector_cassettes(c)};
    if (kind != RunKind::compare)
      for (const auto& l : c.lvlms) needed.push_back(lvlm_cassettes(c, l));
    for (const auto& p : needed)
      if (!fs::is_directory(p)) throw ConfigError("replay mode: missing cassette directory " + p.string());
  } else if (c.cassette_mode == CassetteMode::record) {
    if (c.cassette_dir.empty()) throw ConfigError("record mode requires cassette.dir");
    if (!is_live_remote(det)) throw ConfigError("record mode requires a live detector endpoint");
    if (kind != RunKind::compare)
      for (const auto& l : c.lvlms)
        if (!is_live_remote(l)) throw ConfigError("record mode requires a live endpoint for LVLM '" + l.id + "'");
  }
  if (c.rain) {
    try {
      c.rain->validate();
    } catch (const Error& e) {
      throw ConfigError(std::string("invalid rain spec: ") + e.what());
    }
  }
}

Backends make_backends(const RunConfig& c) {
  Backends out;
  const auto& d = c.detector;
  std::shared_ptr<DetectorBackend> det;
  if (d.type == "mock") {
    det = std::make_shared<MockDetector>(
        d.inline_config.is_null() ? MockDetectorRules::defaults() : MockDetectorRules::from_json(d.inline_config),
        d.id.empty() ? "mock-detector" : d.id);
  } else if (d.type == "remote") {
    det = std::make_shared<HttpDetector>(d.url, std::chrono::milliseconds(d.timeout_ms));
  } else if (d.type == "cassette") {
    det = std::make_shared<CassetteDetector>(CassetteStore(d.path), CassetteMode::replay);
  } else {
    throw ConfigError("unknown detector type '" + d.type + "'");
  }
  switch (c.cassette_mode) {
    case CassetteMode::live: out.detector = det; break;
    case CassetteMode::replay:
      out.detector = std::make_shared<CassetteDetector>(CassetteStore(detector_cassettes(c)), CassetteMode::replay);
      break;
    case CassetteMode::record:
      out.detector =
          std::make_shared<CassetteDetector>(CassetteStore(detector_cassettes(c)), CassetteMode::record, det);
      break;
  }

  for (const auto& l : c.lvlms) {
    std::shared_ptr<LvlmBackend> b;
    if (l.type == "scripted") {
      const json script = l.inline_config.is_null() ? json::parse(read_file_text(l.path)) : l.inline_config;
      b = std::make_shared<ScriptedLvlm>(l.id, LvlmScript::from_json(script), l.max_concurrency);
    } else if (l.type == "openai") {
      OpenAiLvlmConfig oc;
      oc.id = l.id;
      oc.base_url = l.url;
      oc.model = l.model;
      if (const char* key = std::getenv(l.api_key_env.c_str())) oc.api_key = key;
      oc.timeout = std::chrono::milliseconds(l.timeout_ms);
      oc.max_concurrency = l.max_concurrency;
      b = std::make_shared<OpenAiLvlm>(oc);
    } else if (l.type == "cassette") {
      b = std::make_shared<CassetteLvlm>(CassetteStore(l.path), CassetteMode::replay, l.id, nullptr,
                                         l.max_concurrency);
    } else {
      throw ConfigError("unknown LVLM type '" + l.type + "'");
    }
    if (c.cassette_mode != CassetteMode::live)
      b = std::make_shared<CassetteLvlm>(CassetteStore(lvlm_cassettes(c, l)), c.cassette_mode, l.id,
                                         c.cassette_mode == CassetteMode::record ? b : nullptr, l.max_concurrency);
    out.lvlms.push_back(std::make_shared<ConcurrencyLimitedLvlm>(b));
  }
  return out;
}

RunArtifact run(const RunConfig& cfg) {
  validate(cfg);
  return run(cfg, make_backends(cfg));
}

RunArtifact run(const RunConfig& cfg, const Backends& backends) {
  validate(cfg);
  if (!backends.detector || backends.lvlms.empty()) throw ConfigError("run needs a detector and an LVLM backend");

  const Manifest clear = load_manifest(cfg.manifest);
  std::optional<Manifest> rainy;
  if (cfg.rain) rainy = degrade_manifest(clear, *cfg.rain, cfg.output_dir / "rain");

  std::vector<EvalSample> work;
  for (const auto& s : clear.samples) work.push_back({&clear, &s});
  if (rainy)
    for (const auto& s : rainy->samples) work.push_back({&*rainy, &s});

  std::vector<SampleResult> results(work.size());
  parallel_for(work.size(), cfg.parallelism,
               [&](std::size_t i) { results[i] = process_sample(cfg, backends, work[i]); });

  RunArtifact art;
  art.output_dir = cfg.output_dir;
  std::map<GroupKey, DetectionTally> tallies;
  json detector_failures = json::array();
  for (std::size_t i = 0; i < results.size(); ++i) {
    auto& r = results[i];
    std::move(r.outcomes.begin(), r.outcomes.end(), std::back_inserter(art.outcomes));
    std::move(r.verifications.begin(), r.verifications.end(), std::back_inserter(art.verifications));
    for (const auto& [k, t] : r.tallies) tallies[k] += t;
    if (r.detector_error)
      detector_failures.push_back({{"sample_id", work[i].sample->id},
                                   {"condition", to_string(work[i].sample->condition)},
                                   {"error", *r.detector_error}});
  }

  // Transductive label maps: one per backend and open strategy, over every condition.
  std::vector<std::string> backend_ids;
  for (const auto& b : backends.lvlms) backend_ids.push_back(b->id());
  const std::vector<std::string> classes = all_classes({&clear});
  std::map<std::string, LabelMap> maps;
  for (const auto& bid : backend_ids)
    for (const auto& strategy : cfg.strategies) {
      if (!open_kind(strategy.kind)) continue;
      std::vector<std::pair<RecognitionOutcome, std::string>> obs;
      for (const auto& o : art.outcomes)
        if (o.outcome.backend_id == bid && o.outcome.strategy.kind == strategy.kind)
          obs.emplace_back(o.outcome, o.true_class);
      LabelMap map;
      if (obs.empty()) {
        map.classes = classes;
        map.stopwords = cfg.stopwords;
      } else {
        map = build_label_map(obs, cfg.stopwords, classes);
      }
      maps[label_map_key(bid, strategy.kind)] = std::move(map);
    }

  std::vector<ScoredOutcome> scored;
  std::size_t failed = 0;
  for (auto& o : art.outcomes) {
    const auto& out = o.outcome;
    if (out.failed) {
      ++failed;
      o.correct = false;
    } else if (open_kind(out.strategy.kind)) {
      o.correct = score_open_set(out, o.true_class, maps.at(label_map_key(out.backend_id, out.strategy.kind)));
    } else {
      o.correct = score_closed_set(out, o.true_class);
    }
    scored.push_back({CellKey{out.backend_id, out.strategy.kind, o.range_bin, o.condition, o.modality}, o.correct});
  }

  art.report = accuracy_table(scored, backend_ids);
  for (const auto& bid : backend_ids) {
    // Every backend gets a detection row for every evaluated group, even if nothing happened.
    for (const auto& es : work) tallies[GroupKey{bid, es.sample->condition, es.sample->modality}];
  }
  art.report.detections = std::move(tallies);
  art.report.label_maps = std::move(maps);
  // Execution details that cannot change results stay out of the report so reports compare byte-for-byte.
  art.report.config_snapshot = to_json(cfg);
  art.report.config_snapshot.erase("parallelism");
  art.report.config_snapshot.erase("output_dir");
  art.report.degraded = !art.outcomes.empty() && failed * 2 > art.outcomes.size();

  std::string ver_log;
  for (const auto& v : art.verifications) ver_log += verification_to_json(v).dump() + "\n";

  json summary{{"status", art.report.degraded ? "degraded" : "ok"},
               {"samples", work.size()},
               {"outcomes", art.outcomes.size()},
               {"failed_outcomes", failed},
               {"verifications", art.verifications.size()},
               {"detector_failures", detector_failures}};

  // Reports go last so a crash never leaves a report without its supporting logs.
  const std::vector<std::pair<std::string, std::string>> files{
      {"config.json", to_json(cfg).dump(2) + "\n"},
      {"outcomes.jsonl", render_outcome_log(art.outcomes)},
      {"verifications.jsonl", ver_log},
      {"label_maps.csv", label_map_csv(art.report)},
      {"detections.csv", render_detection_summary(art.report)},
      {"run.json", summary.dump(2) + "\n"},
      {"report.csv", render_report(art.report, ReportFormat::csv)},
      {"report.md", render_report(art.report, ReportFormat::markdown)},
  };
  for (const auto& [name, body] : files) {
    write_file_atomic(cfg.output_dir / name, body);
    art.files.emplace_back(name);
  }
  return art;
}

CompareArtifact compare_modes(const RunConfig& cfg) {
  validate(cfg, RunKind::compare);
  auto backends = make_backends(cfg);
  return compare_modes(cfg, *backends.detector);
}

CompareArtifact compare_modes(const RunConfig& cfg, DetectorBackend& detector) {
  validate(cfg, RunKind::compare);
  const Manifest m = load_manifest(cfg.manifest);
  if (m.samples.empty()) throw PreconditionError("compare_modes needs a non-empty manifest");

  CompareArtifact art;
  art.samples.resize(m.samples.size());
  parallel_for(m.samples.size(), cfg.parallelism, [&](std::size_t i) {
    const Sample& s = m.samples[i];
    const Image img = load_checked(m, s);
    auto& c = art.samples[i];
    c.sample_id = s.id;
    c.truths = s.truths;
    c.binary = detect_binary(img, detector, cfg.detect);
    c.keyword = detect_keywords(img, detector, cfg.compare_keywords, cfg.detect);
    c.binary_match = match(s.truths, c.binary, cfg.iou_threshold);
    c.keyword_match = match(s.truths, c.keyword, cfg.iou_threshold);
  });
  for (const auto& c : art.samples) {
    art.recall.total_truths += c.truths.size();
    art.recall.binary_matched += c.binary_match.pairs.size();
    art.recall.keyword_matched += c.keyword_match.pairs.size();
  }

  json per_sample = json::array();
  std::ostringstream md;
  md << "# Binary vs keyword localization\n\n"
     << "- binary keyword: " << cfg.detect.keyword << "\n- keyword vocabulary: ";
  for (std::size_t i = 0; i < cfg.compare_keywords.size(); ++i)
    md << (i ? ", " : "") << cfg.compare_keywords[i];
  md << "\n- truths: " << art.recall.total_truths << "\n- binary recall: " << fmt(art.recall.binary_recall())
     << " (" << art.recall.binary_matched << ")\n- keyword recall: " << fmt(art.recall.keyword_recall()) << " ("
     << art.recall.keyword_matched << ")\n\n## Per-sample overlays\n";
  for (const auto& c : art.samples) {
    auto matched = [](const MatchResult& r, std::size_t t) -> const MatchPair* {
      for (const auto& p : r.pairs)
        if (p.truth == t) return &p;
      return nullptr;
    };
    md << "\n### " << c.sample_id << "\n\n";
    json truths = json::array();
    for (std::size_t t = 0; t < c.truths.size(); ++t) {
      const auto* b = matched(c.binary_match, t);
      const auto* k = matched(c.keyword_match, t);
      md << "- truth " << c.truths[t].class_label << " " << box_text(c.truths[t].box) << ": binary "
         << (b ? "hit iou " + fmt(b->iou, "%.3f") : std::string("MISS")) << ", keyword "
         << (k ? "hit iou " + fmt(k->iou, "%.3f") + " as '" + c.keyword[k->detection].keyword + "'"
               : std::string("MISS"))
         << "\n";
      truths.push_back({{"class", c.truths[t].class_label},
                        {"box", {c.truths[t].box.x0, c.truths[t].box.y0, c.truths[t].box.x1, c.truths[t].box.y1}},
                        {"binary_hit", b != nullptr},
                        {"keyword_hit", k != nullptr}});
    }
    for (std::size_t d : c.binary_match.unmatched_detections)
      md << "- binary extra " << box_text(c.binary[d].box) << " conf " << fmt(c.binary[d].confidence, "%.3f") << "\n";
    for (std::size_t d : c.keyword_match.unmatched_detections)
      md << "- keyword extra '" << c.keyword[d].keyword << "' " << box_text(c.keyword[d].box) << " conf "
         << fmt(c.keyword[d].confidence, "%.3f") << "\n";
    per_sample.push_back({{"sample_id", c.sample_id},
                          {"truths", truths},
                          {"binary", dets_json(c.binary)},
                          {"keyword", dets_json(c.keyword)}});
  }

  const json summary{{"binary_keyword", cfg.detect.keyword},
                     {"keywords", cfg.compare_keywords},
                     {"iou_threshold", cfg.iou_threshold},
                     {"total_truths", art.recall.total_truths},
                     {"binary_matched", art.recall.binary_matched},
                     {"keyword_matched", art.recall.keyword_matched},
                     {"binary_recall", art.recall.binary_recall()},
                     {"keyword_recall", art.recall.keyword_recall()},
                     {"samples", per_sample}};
  write_file_atomic(cfg.output_dir / "compare.json", summary.dump(2) + "\n");
  write_file_atomic(cfg.output_dir / "compare.md", md.str());
  art.files = {"compare.json", "compare.md"};
  return art;
}

std::vector<SampleDetections> detect_manifest(const Manifest& manifest, DetectorBackend& detector,
                                              const DetectConfig& cfg, LvlmBackend* verifier,
                                              const RecognizeConfig& rcfg) {
  std::vector<SampleDetections> out;
  for (const auto& s : manifest.samples) {
    const Image img = load_checked(manifest, s);
    SampleDetections sd{s.id, {}, {}};
    for (auto& d : detect_binary(img, detector, cfg)) {
      const bool reject =
          verifier && verify_detection(extract_crop(s, img, d, cfg.pad_fraction), *verifier, rcfg).verdict ==
                          Verdict::false_positive;
      (reject ? sd.removed : sd.kept).push_back(std::move(d));
    }
    out.push_back(std::move(sd));
  }
  return out;
}

json to_json(const SampleDetections& d) {
  return {{"sample_id", d.sample_id}, {"detections", dets_json(d.kept)}, {"removed", dets_json(d.removed)}};
}

json to_json(const OutcomeRecord& r) {
  const auto& o = r.outcome;
  json j{{"sample_id", r.sample_id},
         {"true_class", r.true_class},
         {"range_bin", to_string(r.range_bin)},
         {"condition", to_string(r.condition)},
         {"modality", to_string(r.modality)},
         {"backend", o.backend_id},
         {"strategy", to_string(o.strategy.kind)},
         {"box", {o.crop.box.x0, o.crop.box.y0, o.crop.box.x1, o.crop.box.y1}},
         {"confidence", o.crop.confidence},
         {"raw_response", o.raw_response},
         {"parsed_label", o.parsed_label},
         {"unparseable", o.unparseable},
         {"latency_ms", o.latency_ms},
         {"failed", o.failed},
         {"error", o.error},
         {"correct", r.correct}};
  if (o.strategy.closed()) j["known_labels"] = o.strategy.known_labels;
  j["attributes"] = o.attributes ? json(*o.attributes) : json(nullptr);
  return j;
}

OutcomeRecord outcome_record_from_json(const json& j) {
  try {
    OutcomeRecord r;
    r.sample_id = j.at("sample_id").get<std::string>();
    r.true_class = j.at("true_class").get<std::string>();
    r.range_bin = parse_range_bin(j.at("range_bin").get<std::string>());
    r.condition = parse_condition(j.at("condition").get<std::string>());
    r.modality = parse_modality(j.at("modality").get<std::string>());
    r.correct = j.at("correct").get<bool>();
    auto& o = r.outcome;
    o.backend_id = j.at("backend").get<std::string>();
    o.strategy.kind = parse_strategy_kind(j.at("strategy").get<std::string>());
    o.strategy.known_labels = j.value("known_labels", std::vector<std::string>{});
    const auto& b = j.at("box");
    o.crop = CropRef{r.sample_id, Box{b.at(0), b.at(1), b.at(2), b.at(3)}, j.at("confidence").get<double>()};
    o.raw_response = j.value("raw_response", std::string{});
    o.parsed_label = j.value("parsed_label", std::string{});
    o.unparseable = j.value("unparseable", false);
    o.latency_ms = j.value("latency_ms", std::int64_t{0});
    o.failed = j.value("failed", false);
    o.error = j.value("error", std::string{});
    if (j.contains("attributes") && !j["attributes"].is_null())
      o.attributes = j["attributes"].get<std::vector<std::string>>();
    return r;
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed outcome record: ") + e.what());
  } catch (const PreconditionError& e) {
    throw ProtocolError(std::string("malformed outcome record: ") + e.what());
  }
}

std::vector<OutcomeRecord> read_outcome_log(const fs::path& path) {
  std::istringstream in(read_file_text(path));
  std::vector<OutcomeRecord> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(outcome_record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ParseError(e.what(), n);
    } catch (const ProtocolError& e) {
      throw ParseError(e.what(), n);
    }
  }
  return out;
}

EvaluationReport report_from_outcomes(std::span<const OutcomeRecord> records, std::vector<std::string> order) {
  std::vector<ScoredOutcome> scored;
  std::map<GroupKey, DetectionTally> tallies;
  for (const auto& r : records) {
    const auto& o = r.outcome;
    if (std::find(order.begin(), order.end(), o.backend_id) == order.end()) order.push_back(o.backend_id);
    scored.push_back({CellKey{o.backend_id, o.strategy.kind, r.range_bin, r.condition, r.modality}, r.correct});
    auto& t = tallies[GroupKey{o.backend_id, r.condition, r.modality}];
    if (o.failed) ++t.failed_outcomes;
  }
  auto report = accuracy_table(scored, order);
  report.detections = std::move(tallies);
  std::size_t failed = 0;
  for (const auto& r : records) failed += r.outcome.failed ? 1 : 0;
  report.degraded = !records.empty() && failed * 2 > records.size();
  return report;
}

std::map<std::string, LabelMap> parse_label_maps(std::string_view csv) {
  std::map<std::string, LabelMap> maps;
  std::size_t n = 0;
  std::size_t pos = 0;
  while (pos < csv.size()) {
    auto end = csv.find('\n', pos);
    if (end == std::string_view::npos) end = csv.size();
    const std::string_view line = csv.substr(pos, end - pos);
    pos = end + 1;
    if (++n == 1 || line.empty()) continue;
    std::vector<std::string> f;
    for (std::size_t a = 0;;) {
      const auto b = line.find(',', a);
      f.emplace_back(line.substr(a, b == std::string_view::npos ? std::string_view::npos : b - a));
      if (b == std::string_view::npos) break;
      a = b + 1;
    }
    if (f.size() != 5) throw ParseError("label map row needs 5 fields", n);
    auto& map = maps[f[0] + "/" + f[1]];
    map.classes.push_back(f[2]);
    if (f[3] != "-") {
      try {
        map.entries[f[2]] = {f[3], std::stoul(f[4])};
      } catch (const std::exception&) {
        throw ParseError("bad count '" + f[4] + "'", n);
      }
    }
  }
  return maps;
}

EvaluationReport load_run_report(const fs::path& run_dir) {
  const auto records = read_outcome_log(run_dir / "outcomes.jsonl");
  json config = json::object();
  std::vector<std::string> order;
  if (fs::exists(run_dir / "config.json")) {
    try {
      config = json::parse(read_file_text(run_dir / "config.json"));
      for (const auto& l : config.value("lvlms", json::array())) order.push_back(l.at("id").get<std::string>());
    } catch (const json::exception& e) {
      throw ParseError(std::string("config.json: ") + e.what(), 0);
    }
  }
  auto report = report_from_outcomes(records, order);
  if (fs::exists(run_dir / "detections.csv"))
    report.detections = parse_detection_summary(read_file_text(run_dir / "detections.csv"));
  if (fs::exists(run_dir / "label_maps.csv"))
    report.label_maps = parse_label_maps(read_file_text(run_dir / "label_maps.csv"));
  config.erase("parallelism");
  config.erase("output_dir");
  report.config_snapshot = config;
  return report;
}

}  // namespace atr
