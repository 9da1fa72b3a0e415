// SPDX-License-Identifier: Apache-2.0
#include "atr/recognize.hpp"

#include <algorithm>
#include <cctype>

#include "atr/error.hpp"
#include "atr/reconcile.hpp"
#include "atr/retry.hpp"

namespace atr {

namespace {

constexpr std::string_view kCotPrefix =
    "Describe the attributes of the vehicle in the image. Build a chain-of-thought to recognize the vehicle. "
    "Label the vehicle using the attributes.";
constexpr std::string_view kCotSuffix = "Give a single word response for label.";
constexpr std::string_view kLabelMarker = "label:";

std::string label_list(const std::vector<std::string>& labels) {
  std::string out = "[";
  for (const auto& l : labels) out += l + ", ";
  out += std::string(kNovelLabel) + "]";
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> lines_of(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto nl = text.find('\n', start);
    const auto end = nl == std::string_view::npos ? text.size() : nl;
    out.push_back(text.substr(start, end - start));
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  return out;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Sentences end at a run of . ! ? followed by whitespace, or at a line break.
std::vector<std::string> sentences(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    const auto t = trim(cur);
    if (!normalize_label(t).empty()) out.emplace_back(t);
    cur.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '\n' || c == '\r') {
      flush();
      continue;
    }
    cur.push_back(c);
    const bool terminal = c == '.' || c == '!' || c == '?';
    const bool next_terminal = i + 1 < text.size() && (text[i + 1] == '.' || text[i + 1] == '!' || text[i + 1] == '?');
    if (terminal && !next_terminal && (i + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[i + 1]))))
      flush();
  }
  flush();
  return out;
}

std::string last_nonempty_line(std::string_view text, std::size_t* line_start = nullptr) {
  const auto lines = lines_of(text);
  for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
    if (!trim(*it).empty()) {
      if (line_start) *line_start = static_cast<std::size_t>(it->data() - text.data());
      return std::string(trim(*it));
    }
  }
  if (line_start) *line_start = 0;
  return {};
}

}  // namespace

std::string_view to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::open_set: return "open_set";
    case StrategyKind::closed_set: return "closed_set";
    case StrategyKind::cot_open: return "cot_open";
    case StrategyKind::cot_closed: return "cot_closed";
  }
  return "open_set";
}

StrategyKind parse_strategy_kind(std::string_view s) {
  for (auto k : kAllStrategyKinds)
    if (to_string(k) == s) return k;
  throw ParseError("unknown strategy '" + std::string(s) + "'", 0);
}

void PromptStrategy::validate() const {
  if (closed() && known_labels.empty())
    throw InvariantError(std::string(to_string(kind)) + " requires a non-empty known_labels list");
  if (!closed() && !known_labels.empty())
    throw InvariantError(std::string(to_string(kind)) + " must not carry known_labels");
  for (const auto& l : known_labels) {
    if (normalize_label(l).empty()) throw InvariantError("known_labels contains an empty label");
    if (normalize_label(l) == kNovelLabel) throw InvariantError("known_labels must not contain the reserved label 'novel'");
  }
}

std::string build_prompt(const PromptStrategy& strategy) {
  strategy.validate();
  switch (strategy.kind) {
    case StrategyKind::open_set:
      return std::string(kOpenSetPrompt);
    case StrategyKind::closed_set:
      return "Select a label for the object from the list " + label_list(strategy.known_labels) +
             ". No long response. Only a single word.";
    case StrategyKind::cot_open:
      return std::string(kCotPrefix) + " " + std::string(kCotSuffix);
    case StrategyKind::cot_closed:
      return std::string(kCotPrefix) + " Select a label for the object from the list " +
             label_list(strategy.known_labels) + ". " + std::string(kCotSuffix);
  }
  return {};
}

ParsedResponse parse_response(std::string_view raw, const PromptStrategy& strategy) {
  ParsedResponse out;
  std::string label_text;
  if (strategy.cot()) {
    const auto pos = lower(raw).rfind(kLabelMarker);
    std::string_view before;
    if (pos != std::string::npos) {
      before = raw.substr(0, pos);
      std::string_view rest = raw.substr(pos + kLabelMarker.size());
      const auto nl = rest.find('\n');
      label_text = std::string(trim(rest.substr(0, nl)));
      if (label_text.empty() && nl != std::string_view::npos) {
        for (auto l : lines_of(rest.substr(nl + 1)))
          if (!trim(l).empty()) {
            label_text = std::string(trim(l));
            break;
          }
      }
    } else {
      std::size_t start = 0;
      label_text = last_nonempty_line(raw, &start);
      before = raw.substr(0, start);
    }
    out.attributes = sentences(before);
  } else {
    label_text = last_nonempty_line(raw);
  }

  out.label = normalize_label(label_text);
  if (strategy.closed()) {
    bool known = out.label == kNovelLabel;
    for (const auto& l : strategy.known_labels) known = known || normalize_label(l) == out.label;
    if (!known) out.label.clear();
  }
  out.unparseable = out.label.empty();
  return out;
}

RecognitionOutcome recognize_crop(const Crop& crop, const PromptStrategy& strategy, LvlmBackend& backend,
                                  const RecognizeConfig& cfg) {
  const LvlmRequest req{build_prompt(strategy), encode_png(crop.pixels)};
  const LvlmReply reply = with_retries(cfg.max_retries, cfg.backoff, [&] { return backend.complete(req); });
  auto parsed = parse_response(reply.text, strategy);

  RecognitionOutcome o;
  o.crop = {crop.source_sample, crop.detection.box, crop.detection.confidence};
  o.strategy = strategy;
  o.raw_response = reply.text;
  o.parsed_label = std::move(parsed.label);
  o.unparseable = parsed.unparseable;
  o.attributes = std::move(parsed.attributes);
  o.backend_id = backend.id();
  o.latency_ms = reply.latency_ms;
  return o;
}

Verification interpret_verification(std::string_view raw) {
  Verification v;
  v.raw_response = std::string(raw);
  std::string answer = normalize_label(raw);
  if (answer != "yes" && answer != "no") {
    const auto sp = answer.find(' ');
    answer = normalize_label(answer.substr(0, sp));
  }
  if (answer == "no") {
    v.verdict = Verdict::false_positive;
  } else {
    v.verdict = Verdict::object_present;
    v.ambiguous = answer != "yes";
  }
  return v;
}

Verification verify_detection(const Crop& crop, LvlmBackend& backend, const RecognizeConfig& cfg) {
  const LvlmRequest req{std::string(kVerificationPrompt), encode_png(crop.pixels)};
  const LvlmReply reply = with_retries(cfg.max_retries, cfg.backoff, [&] { return backend.complete(req); });
  return interpret_verification(reply.text);
}

}  // namespace atr
