// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "atr/detect.hpp"

namespace atr {

enum class StrategyKind { open_set, closed_set, cot_open, cot_closed };

inline constexpr StrategyKind kAllStrategyKinds[] = {StrategyKind::open_set, StrategyKind::closed_set,
                                                     StrategyKind::cot_open, StrategyKind::cot_closed};

std::string_view to_string(StrategyKind k);
StrategyKind parse_strategy_kind(std::string_view s);

struct PromptStrategy {
  StrategyKind kind = StrategyKind::open_set;
  std::vector<std::string> known_labels;  // closed variants only

  bool closed() const { return kind == StrategyKind::closed_set || kind == StrategyKind::cot_closed; }
  bool cot() const { return kind == StrategyKind::cot_open || kind == StrategyKind::cot_closed; }
  /// Throws InvariantError when the label list does not fit the kind or lists "novel".
  void validate() const;

  static PromptStrategy open_set() { return {StrategyKind::open_set, {}}; }
  static PromptStrategy closed_set(std::vector<std::string> labels) {
    return {StrategyKind::closed_set, std::move(labels)};
  }
  static PromptStrategy cot_open() { return {StrategyKind::cot_open, {}}; }
  static PromptStrategy cot_closed(std::vector<std::string> labels) {
    return {StrategyKind::cot_closed, std::move(labels)};
  }

  bool operator==(const PromptStrategy&) const = default;
};

inline constexpr std::string_view kNovelLabel = "novel";
inline constexpr std::string_view kOpenSetPrompt = "Name the specific vehicle with a single response.";
inline constexpr std::string_view kVerificationPrompt = "Does this image contain a vehicle? Answer yes or no.";

std::string build_prompt(const PromptStrategy& strategy);

struct ParsedResponse {
  std::string label;  // normalized; empty when unparseable
  std::optional<std::vector<std::string>> attributes;
  bool unparseable = false;
};

/// Total and deterministic.
///  - plain strategies: label is the last non-empty line, normalized.
///  - CoT: label is the text after the last "label:" marker (case-insensitive), else the last
///    non-empty line; attributes are the sentences before it.
///  - closed variants: the label must equal a known label or "novel" after normalization,
///    otherwise the outcome is unparseable.
ParsedResponse parse_response(std::string_view raw, const PromptStrategy& strategy);

struct LvlmRequest {
  std::string prompt;
  std::vector<std::uint8_t> image_png;
};

struct LvlmReply {
  std::string text;
  std::int64_t latency_ms = 0;
};

/// Chat-style endpoint: one prompt plus one image in, one completion out.
class LvlmBackend {
 public:
  virtual ~LvlmBackend() = default;
  virtual std::string id() const = 0;
  /// Throws TransportError (retryable) or ProtocolError.
  virtual LvlmReply complete(const LvlmRequest& req) = 0;
  /// Upper bound on in-flight requests the pipeline should issue.
  virtual std::size_t max_concurrency() const { return 1; }
};

struct RecognizeConfig {
  int max_retries = 2;
  std::chrono::milliseconds backoff{100};
};

/// Identity of the crop an outcome refers to.
struct CropRef {
  std::string sample_id;
  Box box;
  double confidence = 0;

  bool operator==(const CropRef&) const = default;
};

struct RecognitionOutcome {
  CropRef crop;
  PromptStrategy strategy;
  std::string raw_response;
  std::string parsed_label;
  bool unparseable = false;
  std::optional<std::vector<std::string>> attributes;
  std::string backend_id;
  std::int64_t latency_ms = 0;
  /// Set by the pipeline when the backend failed after retries; such outcomes score as wrong.
  bool failed = false;
  std::string error;

  bool operator==(const RecognitionOutcome&) const = default;
};

/// Sends prompt + crop, retrying transport errors up to cfg.max_retries times with exponential
/// backoff. Parse failures are never retried. Throws TransportError once retries are exhausted.
RecognitionOutcome recognize_crop(const Crop& crop, const PromptStrategy& strategy, LvlmBackend& backend,
                                  const RecognizeConfig& cfg = {});

enum class Verdict { object_present, false_positive };

struct Verification {
  Verdict verdict = Verdict::object_present;
  bool ambiguous = false;
  std::string raw_response;
};

/// Yes/no check of a crop. Anything other than a clear "no" keeps the object (fail-open);
/// answers that are neither yes nor no are flagged ambiguous.
Verification verify_detection(const Crop& crop, LvlmBackend& backend, const RecognizeConfig& cfg = {});

/// Interprets a verification answer; exposed for testing.
Verification interpret_verification(std::string_view raw);

}  // namespace atr
