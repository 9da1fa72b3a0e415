// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "atr/recognize.hpp"

namespace atr {

/// Lowercase, trim surrounding whitespace/punctuation/quotes, collapse inner whitespace.
/// Idempotent; may return "".
std::string normalize_label(std::string_view raw);

/// Tokens not dropped by the stopword list.
const std::vector<std::string>& default_stopwords();

/// Whitespace tokens of a label, each normalized, minus empties and stopwords.
std::vector<std::string> label_tokens(std::string_view label, std::span<const std::string> stopwords);

/// Learned open-set keyword per ground-truth class. Keywords are unique across classes.
struct LabelMap {
  struct Entry {
    std::string keyword;
    std::size_t count = 0;  // occurrences of keyword among the class's responses
  };
  std::map<std::string, Entry> entries;  // class -> entry; unmapped classes are absent
  std::vector<std::string> classes;      // every class in scope, in report order
  std::vector<std::string> stopwords;

  const Entry* find(std::string_view cls) const;
  /// "class,keyword,count" rows; unmapped classes get "-" and 0.
  std::string to_table() const;

  bool operator==(const LabelMap&) const = default;
};

struct LabelObservation {
  std::string label;  // parsed label of one response
  std::string true_class;
};

/// Most-recurring token per class. Token ties go to the lexicographically smaller token; a token
/// wanted by several classes goes to the class with the higher count (then the smaller class
/// name) and losers fall back to their next unclaimed token. `classes` adds classes in scope
/// that have no observations.
LabelMap build_label_map(std::span<const LabelObservation> observations,
                         std::span<const std::string> stopwords = default_stopwords(),
                         std::span<const std::string> classes = {});

/// Skips failed or unparseable outcomes. Throws PreconditionError when `outcomes` is empty.
LabelMap build_label_map(std::span<const std::pair<RecognitionOutcome, std::string>> outcomes,
                         std::span<const std::string> stopwords = default_stopwords(),
                         std::span<const std::string> classes = {});

bool score_open_set(const RecognitionOutcome& outcome, std::string_view true_class, const LabelMap& map);
bool score_closed_set(const RecognitionOutcome& outcome, std::string_view true_class);

}  // namespace atr
