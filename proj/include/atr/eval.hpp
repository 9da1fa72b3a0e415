// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <compare>
#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "atr/dataset.hpp"
#include "atr/detect.hpp"
#include "atr/reconcile.hpp"
#include "atr/recognize.hpp"

namespace atr {

struct MatchPair {
  std::size_t truth = 0;      // index into the truths passed to match()
  std::size_t detection = 0;  // index into the detections passed to match()
  double iou = 0;

  bool operator==(const MatchPair&) const = default;
};

struct MatchResult {
  std::vector<MatchPair> pairs;
  std::vector<std::size_t> unmatched_truths;
  std::vector<std::size_t> unmatched_detections;  // false-positive candidates
  double iou_threshold = 0.5;

  bool operator==(const MatchResult&) const = default;
};

/// One-to-one greedy matching by descending IoU; ties by detection confidence (desc), then
/// detection index, then truth index. Every pair has IoU >= iou_threshold, which must be in (0,1].
MatchResult match(std::span<const GroundTruth> truths, std::span<const Detection> detections, double iou_threshold);

struct CellKey {
  std::string backend;
  StrategyKind strategy = StrategyKind::open_set;
  RangeBin range_bin = RangeBin::unbinned;
  Condition condition = Condition::clear;
  Modality modality = Modality::rgb;

  auto operator<=>(const CellKey&) const = default;
};

struct Cell {
  std::size_t n = 0;
  std::size_t correct = 0;

  /// Percentage; only meaningful for n > 0.
  double accuracy() const { return n ? 100.0 * double(correct) / double(n) : 0.0; }
  bool operator==(const Cell&) const = default;
};

struct ScoredOutcome {
  CellKey key;
  bool correct = false;
};

/// Detection-side counts for one (backend, condition, modality) table.
struct DetectionTally {
  std::size_t false_positives = 0;          // unmatched detections kept (unverified or verified present)
  std::size_t removed_false_positives = 0;  // unmatched detections the verifier rejected
  std::size_t ambiguous_verifications = 0;
  std::size_t missed_truths = 0;            // truths without a matching detection
  std::size_t failed_outcomes = 0;          // recognition calls that failed after retries

  DetectionTally& operator+=(const DetectionTally& o);
  bool operator==(const DetectionTally&) const = default;
};

struct GroupKey {
  std::string backend;
  Condition condition = Condition::clear;
  Modality modality = Modality::rgb;

  auto operator<=>(const GroupKey&) const = default;
};

struct EvaluationReport {
  std::map<CellKey, Cell> cells;
  std::vector<std::string> backends;  // row order
  std::map<GroupKey, DetectionTally> detections;
  nlohmann::json config_snapshot = nlohmann::json::object();
  /// Open-set label maps keyed by "<backend>/<strategy>".
  std::map<std::string, LabelMap> label_maps;
  bool degraded = false;

  std::size_t total_n() const;
};

/// Aggregates scored outcomes into cells. Row order is `backend_order` followed by any other
/// backend in lexicographic order.
EvaluationReport accuracy_table(std::span<const ScoredOutcome> results,
                                std::span<const std::string> backend_order = {});

struct LocalizationRecall {
  std::size_t total_truths = 0;
  std::size_t binary_matched = 0;
  std::size_t keyword_matched = 0;

  double binary_recall() const { return total_truths ? double(binary_matched) / double(total_truths) : 0.0; }
  double keyword_recall() const { return total_truths ? double(keyword_matched) / double(total_truths) : 0.0; }
  LocalizationRecall& operator+=(const LocalizationRecall& o);
};

/// Recall of each detection mode against the same truths of one image.
LocalizationRecall localization_recall(std::span<const Detection> binary, std::span<const Detection> keyword,
                                       std::span<const GroundTruth> truths, double iou_threshold);

enum class ReportFormat { csv, markdown };

/// "Open-set", "Closed-set", "CoT-Open", "CoT-Closed".
std::string_view column_title(StrategyKind k);

/// Pure function of the report value.
std::string render_report(const EvaluationReport& report, ReportFormat format);
/// backend,condition,modality,false_positives,removed_false_positives,ambiguous_verifications,missed_truths,failed_outcomes
std::string render_detection_summary(const EvaluationReport& report);
/// Inverse of render_detection_summary.
std::map<GroupKey, DetectionTally> parse_detection_summary(std::string_view csv);

void emit_report(const EvaluationReport& report, ReportFormat format, const std::filesystem::path& path);

}  // namespace atr
