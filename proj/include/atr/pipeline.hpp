// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "atr/cassette.hpp"
#include "atr/dataset.hpp"
#include "atr/degrade.hpp"
#include "atr/detect.hpp"
#include "atr/eval.hpp"
#include "atr/recognize.hpp"

namespace atr {

/// Backend description from the run configuration.
///   detector types: "mock" (rules), "remote" (url), "cassette" (dir, replay only)
///   LVLM types:     "scripted" (script | script_path), "openai" (url, model, api_key_env), "cassette" (dir)
struct BackendSpec {
  std::string type;
  std::string id;
  std::string url;
  std::string model;
  std::string api_key_env = "ATR_API_KEY";
  std::filesystem::path path;  // script file or cassette directory
  nlohmann::json inline_config;  // inline script / detector rules
  std::size_t max_concurrency = 4;
  std::int64_t timeout_ms = 120000;
};

struct RunConfig {
  std::filesystem::path manifest;
  BackendSpec detector;
  std::vector<BackendSpec> lvlms;
  std::vector<PromptStrategy> strategies;
  DetectConfig detect;
  RecognizeConfig recognize;
  std::optional<RainSpec> rain;  // when set, samples are also evaluated under simulated rain
  std::size_t parallelism = 1;
  CassetteMode cassette_mode = CassetteMode::live;
  std::filesystem::path cassette_dir;
  std::filesystem::path output_dir;
  std::uint64_t seed = 0;
  double iou_threshold = 0.5;
  bool verify_false_positives = false;
  std::vector<std::string> stopwords;
  std::vector<std::string> compare_keywords;  // keyword vocabulary for compare_modes
};

/// Relative paths resolve against `base_dir`. Unknown keys are rejected.
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
/// Snapshot recorded with every run; never contains credentials.
nlohmann::json to_json(const RunConfig& cfg);

// evaluate needs LVLMs and strategies; compare needs compare_keywords; detect needs neither.
enum class RunKind { evaluate, compare, detect };
/// Throws ConfigError naming the first problem found.
void validate(const RunConfig& cfg, RunKind kind = RunKind::evaluate);

struct Backends {
  std::shared_ptr<DetectorBackend> detector;
  std::vector<std::shared_ptr<LvlmBackend>> lvlms;
};

/// Instantiates the configured backends, wrapped for record/replay per cassette mode.
Backends make_backends(const RunConfig& cfg);

struct OutcomeRecord {
  std::string sample_id;
  std::string true_class;
  RangeBin range_bin = RangeBin::unbinned;
  Condition condition = Condition::clear;
  Modality modality = Modality::rgb;
  RecognitionOutcome outcome;
  bool correct = false;
};

struct VerificationRecord {
  std::string sample_id;
  Condition condition = Condition::clear;
  Detection detection;
  std::string backend_id;
  Verification verification;
  bool failed = false;
  std::string error;
};

struct RunArtifact {
  std::filesystem::path output_dir;
  EvaluationReport report;
  std::vector<OutcomeRecord> outcomes;
  std::vector<VerificationRecord> verifications;
  std::vector<std::filesystem::path> files;  // written artifacts, relative to output_dir
};

/// detect -> match -> verify unmatched (optional) -> crop -> recognize per backend and strategy
/// -> label maps -> report. Per-crop backend failures become failed outcomes; configuration
/// problems and cassette misses abort before anything is written.
RunArtifact run(const RunConfig& cfg);
RunArtifact run(const RunConfig& cfg, const Backends& backends);

struct SampleComparison {
  std::string sample_id;
  std::vector<GroundTruth> truths;
  std::vector<Detection> binary;
  std::vector<Detection> keyword;
  MatchResult binary_match;
  MatchResult keyword_match;
};

struct CompareArtifact {
  LocalizationRecall recall;
  std::vector<SampleComparison> samples;
  std::vector<std::filesystem::path> files;
};

/// Runs binary and keyword detection on every sample and writes compare.json / compare.md.
CompareArtifact compare_modes(const RunConfig& cfg);
CompareArtifact compare_modes(const RunConfig& cfg, DetectorBackend& detector);

struct SampleDetections {
  std::string sample_id;
  std::vector<Detection> kept;
  std::vector<Detection> removed;  // rejected by the verifier
};

/// Inference-only detection. With a verifier every detection is checked.
std::vector<SampleDetections> detect_manifest(const Manifest& manifest, DetectorBackend& detector,
                                              const DetectConfig& cfg, LvlmBackend* verifier = nullptr,
                                              const RecognizeConfig& rcfg = {});

nlohmann::json to_json(const SampleDetections& d);
nlohmann::json to_json(const OutcomeRecord& r);
OutcomeRecord outcome_record_from_json(const nlohmann::json& j);
std::vector<OutcomeRecord> read_outcome_log(const std::filesystem::path& path);
/// Re-aggregates a logged run. Rows follow `backend_order`, then first appearance.
EvaluationReport report_from_outcomes(std::span<const OutcomeRecord> records,
                                      std::vector<std::string> backend_order = {});
/// Inverse of the label_maps.csv artifact, keyed like EvaluationReport::label_maps.
std::map<std::string, LabelMap> parse_label_maps(std::string_view csv);
/// Rebuilds the report of a finished run from its directory (outcome log, detection summary,
/// label maps, config). Renders byte-identical to the report written by run().
EvaluationReport load_run_report(const std::filesystem::path& run_dir);

}  // namespace atr
