// SPDX-License-Identifier: Apache-2.0
// atr: command-line front end for fixture generation, degradation, detection and evaluation runs.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "atr/dataset.hpp"
#include "atr/degrade.hpp"
#include "atr/error.hpp"
#include "atr/eval.hpp"
#include "atr/fs_util.hpp"
#include "atr/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitDegraded = 3;

std::string abs_str(const std::string& p) { return fs::absolute(p).lexically_normal().string(); }

// Flags that mirror RunConfig fields. Anything set here overrides the config file.
struct RunFlags {
  std::string config;
  std::string manifest, output_dir, detector, detector_url, keyword, rain_spec, cassette_mode, cassette_dir;
  std::vector<std::string> scripted, openai, strategies, known_labels, compare_keywords;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> parallelism;
  std::optional<double> floor, nms_iou, pad, iou_threshold;
  bool verify = false;

  void add_to(CLI::App* app) {
    app->add_option("-c,--config", config, "JSON run config file");
    app->add_option("--manifest", manifest, "Manifest (JSONL)");
    app->add_option("-o,--output-dir", output_dir, "Output directory");
    app->add_option("--seed", seed);
    app->add_option("-j,--parallelism", parallelism, "Worker pool size");
    app->add_option("--detector", detector, "Detector backend")->check(CLI::IsMember({"mock", "remote"}));
    app->add_option("--detector-url", detector_url, "Detector service base URL");
    app->add_option("--keyword", keyword, "Binary detection keyword");
    app->add_option("--confidence-floor", floor);
    app->add_option("--nms-iou", nms_iou);
    app->add_option("--pad-fraction", pad);
    app->add_option("--iou-threshold", iou_threshold, "Detection/truth match threshold");
    app->add_option("--scripted-lvlm", scripted, "Scripted LVLM as ID=SCRIPT.json (repeatable)");
    app->add_option("--openai-lvlm", openai,
                    "OpenAI-compatible LVLM as ID=URL@MODEL (repeatable); key read from ATR_API_KEY");
    app->add_option("--strategy", strategies, "open_set | closed_set | cot_open | cot_closed (repeatable)");
    app->add_option("--known-labels", known_labels, "Label list for closed strategies")->delimiter(',');
    app->add_option("--rain-spec", rain_spec, "Also evaluate under rain with this spec (JSON)");
    app->add_option("--cassette-mode", cassette_mode)->check(CLI::IsMember({"live", "record", "replay"}));
    app->add_option("--cassette-dir", cassette_dir);
    app->add_flag("--verify-false-positives", verify, "Ask each LVLM to veto unmatched detections");
    app->add_option("--compare-keywords", compare_keywords, "Keyword vocabulary for compare-modes")->delimiter(',');
  }

  atr::RunConfig build() const {
    json j = json::object();
    fs::path base;
    if (!config.empty()) {
      if (!fs::exists(config)) throw atr::ConfigError("config file not found: " + config);
      try {
        j = json::parse(atr::read_file_text(config));
      } catch (const json::exception& e) {
        throw atr::ConfigError("config " + config + " is not valid JSON: " + e.what());
      }
      base = fs::absolute(config).parent_path();
    }
    if (!manifest.empty()) j["manifest"] = abs_str(manifest);
    if (!output_dir.empty()) j["output_dir"] = abs_str(output_dir);
    if (seed) j["seed"] = *seed;
    if (parallelism) j["parallelism"] = *parallelism;
    if (!detector.empty()) {
      j["detector"] = {{"type", detector}};
      if (!detector_url.empty()) j["detector"]["url"] = detector_url;
    }
    auto& det = j["detect"];
    if (det.is_null()) det = json::object();
    if (!keyword.empty()) det["keyword"] = keyword;
    if (floor) det["confidence_floor"] = *floor;
    if (nms_iou) det["nms_iou"] = *nms_iou;
    if (pad) det["pad_fraction"] = *pad;
    if (iou_threshold) j["iou_threshold"] = *iou_threshold;
    if (!scripted.empty() || !openai.empty()) {
      json lvlms = json::array();
      for (const auto& s : scripted) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw atr::ConfigError("--scripted-lvlm expects ID=SCRIPT, got " + s);
        lvlms.push_back({{"type", "scripted"}, {"id", s.substr(0, eq)}, {"path", abs_str(s.substr(eq + 1))}});
      }
      for (const auto& s : openai) {
        const auto eq = s.find('='), at = s.rfind('@');
        if (eq == std::string::npos || at == std::string::npos || at < eq)
          throw atr::ConfigError("--openai-lvlm expects ID=URL@MODEL, got " + s);
        lvlms.push_back({{"type", "openai"},
                         {"id", s.substr(0, eq)},
                         {"url", s.substr(eq + 1, at - eq - 1)},
                         {"model", s.substr(at + 1)}});
      }
      j["lvlms"] = lvlms;
    }
    if (!strategies.empty()) {
      json arr = json::array();
      for (const auto& s : strategies) {
        json o{{"kind", s}};
        if (s == "closed_set" || s == "cot_closed") o["known_labels"] = known_labels;
        arr.push_back(o);
      }
      j["strategies"] = arr;
    }
    if (!rain_spec.empty()) j["rain"] = json::parse(atr::read_file_text(rain_spec));
    if (!cassette_mode.empty() || !cassette_dir.empty()) {
      auto& k = j["cassette"];
      if (k.is_null()) k = json::object();
      if (!cassette_mode.empty()) k["mode"] = cassette_mode;
      if (!cassette_dir.empty()) k["dir"] = abs_str(cassette_dir);
    }
    if (verify) j["verify_false_positives"] = true;
    if (!compare_keywords.empty()) j["compare_keywords"] = compare_keywords;
    if (!j.contains("manifest")) throw atr::ConfigError("a manifest is required (--manifest or config file)");
    return atr::parse_run_config(j, base);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Detect-then-recognize ATR evaluation with vision-language models"};
  app.require_subcommand(1);

  atr::FixtureSpec fx;
  std::string fx_out, fx_modality = "synthetic";
  auto* gen = app.add_subcommand("generate-fixture", "Write a synthetic glyph dataset and manifest");
  gen->add_option("-o,--out", fx_out, "Output directory")->required();
  gen->add_option("-n,--n-images", fx.n_images);
  gen->add_option("--classes", fx.classes, "Class labels (max 5)")->delimiter(',')->required();
  gen->add_option("--seed", fx.seed);
  gen->add_option("--width", fx.image_width);
  gen->add_option("--height", fx.image_height);
  gen->add_option("--max-objects", fx.max_objects_per_image);
  gen->add_option("--decoys", fx.decoys, "Ring-shaped distractors that yield spurious detections");
  gen->add_option("--modality", fx_modality)->check(CLI::IsMember({"rgb", "thermal", "synthetic"}));

  std::string dg_manifest, dg_out, dg_spec;
  std::optional<std::uint64_t> dg_seed;
  auto* deg = app.add_subcommand("degrade", "Write a rain-degraded copy of a manifest");
  deg->add_option("--manifest", dg_manifest)->required();
  deg->add_option("-o,--out", dg_out)->required();
  deg->add_option("--rain-spec", dg_spec, "Rain spec JSON (defaults otherwise)");
  deg->add_option("--seed", dg_seed);

  RunFlags det_flags;
  std::string det_out;
  bool det_verify = false;
  auto* det = app.add_subcommand("detect", "Inference-only binary detection over a manifest");
  det_flags.add_to(det);
  det->add_option("--out", det_out, "Detections JSONL (default <output-dir>/detections.jsonl)");
  det->add_flag("--verify", det_verify, "Verify every detection with the first configured LVLM");

  RunFlags run_flags;
  auto* run = app.add_subcommand("run", "Full evaluation run");
  run_flags.add_to(run);

  RunFlags cmp_flags;
  auto* cmp = app.add_subcommand("compare-modes", "Binary vs keyword localization comparison");
  cmp_flags.add_to(cmp);

  std::string rp_dir, rp_format = "markdown", rp_out;
  auto* rep = app.add_subcommand("report", "Re-render a report from a run directory's outcome log");
  rep->add_option("--run-dir", rp_dir)->required();
  rep->add_option("--format", rp_format)->check(CLI::IsMember({"csv", "markdown"}));
  rep->add_option("--out", rp_out, "Write to file instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      fx.modality = atr::parse_modality(fx_modality);
      const auto m = atr::generate_fixture(fx, fx_out);
      std::size_t objects = 0;
      for (const auto& s : m.samples) objects += s.truths.size();
      std::cout << "wrote " << m.samples.size() << " images, " << objects << " objects to " << fx_out << "\n";
    } else if (*deg) {
      atr::RainSpec spec;
      if (!dg_spec.empty()) spec = atr::rain_spec_from_json(json::parse(atr::read_file_text(dg_spec)));
      if (dg_seed) spec.seed = *dg_seed;
      const auto m = atr::degrade_manifest(atr::load_manifest(dg_manifest), spec, dg_out);
      std::cout << "wrote " << m.samples.size() << " degraded images to " << dg_out << "\n";
    } else if (*det) {
      const auto cfg = det_flags.build();
      atr::validate(cfg, atr::RunKind::detect);
      if (det_verify && cfg.lvlms.empty()) throw atr::ConfigError("--verify needs an LVLM backend");
      const auto backends = atr::make_backends(cfg);
      const auto results = atr::detect_manifest(atr::load_manifest(cfg.manifest), *backends.detector, cfg.detect,
                                                det_verify ? backends.lvlms.front().get() : nullptr, cfg.recognize);
      std::string body;
      std::size_t kept = 0, removed = 0;
      for (const auto& r : results) {
        body += atr::to_json(r).dump() + "\n";
        kept += r.kept.size();
        removed += r.removed.size();
      }
      const fs::path out = det_out.empty() ? cfg.output_dir / "detections.jsonl" : fs::path(det_out);
      atr::write_file_atomic(out, body);
      std::cout << "wrote " << kept << " detections (" << removed << " removed by verification) to " << out.string()
                << "\n";
    } else if (*run) {
      const auto cfg = run_flags.build();
      const auto art = atr::run(cfg);
      std::cout << atr::render_report(art.report, atr::ReportFormat::markdown);
      std::cerr << "artifacts in " << cfg.output_dir.string() << "\n";
      if (art.report.degraded) {
        std::cerr << "warning: run degraded, more than half of the recognition calls failed\n";
        return kExitDegraded;
      }
    } else if (*cmp) {
      const auto cfg = cmp_flags.build();
      const auto art = atr::compare_modes(cfg);
      std::printf("binary recall %.4f (%zu/%zu), keyword recall %.4f (%zu/%zu)\n", art.recall.binary_recall(),
                  art.recall.binary_matched, art.recall.total_truths, art.recall.keyword_recall(),
                  art.recall.keyword_matched, art.recall.total_truths);
    } else if (*rep) {
      const auto report = atr::load_run_report(rp_dir);
      const auto text =
          atr::render_report(report, rp_format == "csv" ? atr::ReportFormat::csv : atr::ReportFormat::markdown);
      if (rp_out.empty())
        std::cout << text;
      else
        atr::write_file_atomic(rp_out, text);
    }
  } catch (const atr::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
