// SPDX-License-Identifier: Apache-2.0
#include "atr/reconcile.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <tuple>

#include "atr/error.hpp"

namespace atr {

namespace {

constexpr std::string_view kUtf8Quotes[] = {"\xE2\x80\x9C", "\xE2\x80\x9D", "\xE2\x80\x98", "\xE2\x80\x99",
                                            "\xC2\xAB", "\xC2\xBB"};

bool strippable_ascii(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u < 0x80 && (std::isspace(u) || std::ispunct(u));
}

std::size_t strip_prefix_len(std::string_view s) {
  if (s.empty()) return 0;
  if (strippable_ascii(s.front())) return 1;
  for (auto q : kUtf8Quotes)
    if (s.starts_with(q)) return q.size();
  return 0;
}

std::size_t strip_suffix_len(std::string_view s) {
  if (s.empty()) return 0;
  if (strippable_ascii(s.back())) return 1;
  for (auto q : kUtf8Quotes)
    if (s.ends_with(q)) return q.size();
  return 0;
}

}  // namespace

std::string normalize_label(std::string_view raw) {
  std::string collapsed;
  bool pending_space = false;
  for (char c : raw) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isspace(u)) {
      pending_space = !collapsed.empty();
      continue;
    }
    if (pending_space) collapsed.push_back(' ');
    pending_space = false;
    collapsed.push_back(u < 0x80 ? static_cast<char>(std::tolower(u)) : c);
  }
  std::string_view s = collapsed;
  for (std::size_t n; (n = strip_prefix_len(s)) > 0;) s.remove_prefix(n);
  for (std::size_t n; (n = strip_suffix_len(s)) > 0;) s.remove_suffix(n);
  return std::string(s);
}

const std::vector<std::string>& default_stopwords() {
  static const std::vector<std::string> words = {"a", "an", "the", "vehicle", "military"};
  return words;
}

std::vector<std::string> label_tokens(std::string_view label, std::span<const std::string> stopwords) {
  std::vector<std::string> out;
  const std::string norm = normalize_label(label);
  std::size_t start = 0;
  while (start < norm.size()) {
    auto end = norm.find(' ', start);
    if (end == std::string::npos) end = norm.size();
    std::string tok = normalize_label(std::string_view(norm).substr(start, end - start));
    if (!tok.empty() && std::find(stopwords.begin(), stopwords.end(), tok) == stopwords.end())
      out.push_back(std::move(tok));
    start = end + 1;
  }
  return out;
}

const LabelMap::Entry* LabelMap::find(std::string_view cls) const {
  const auto it = entries.find(std::string(cls));
  return it == entries.end() ? nullptr : &it->second;
}

std::string LabelMap::to_table() const {
  std::string out = "class,keyword,count\n";
  for (const auto& c : classes) {
    const Entry* e = find(c);
    out += c + "," + (e ? e->keyword : "-") + "," + std::to_string(e ? e->count : 0) + "\n";
  }
  return out;
}

LabelMap build_label_map(std::span<const LabelObservation> observations, std::span<const std::string> stopwords,
                         std::span<const std::string> classes) {
  LabelMap map;
  map.stopwords.assign(stopwords.begin(), stopwords.end());

  std::map<std::string, std::map<std::string, std::size_t>> counts;  // class -> token -> count
  for (const auto& c : classes) counts[c];
  for (const auto& o : observations) {
    auto& per_class = counts[o.true_class];
    for (auto& tok : label_tokens(o.label, stopwords)) ++per_class[tok];
  }

  // A class prefers its tokens by count, a token prefers classes by count; with both orders
  // derived from the same weights the resolution is the greedy pass over all (class, token)
  // candidates by (count desc, token asc, class asc).
  struct Candidate {
    std::size_t count;
    const std::string* token;
    const std::string* cls;
  };
  std::vector<Candidate> cands;
  for (const auto& [cls, toks] : counts)
    for (const auto& [tok, n] : toks) cands.push_back({n, &tok, &cls});
  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.count != b.count) return a.count > b.count;
    if (*a.token != *b.token) return *a.token < *b.token;
    return *a.cls < *b.cls;
  });
  std::set<std::string_view> claimed;
  for (const auto& c : cands) {
    if (map.entries.contains(*c.cls) || claimed.contains(*c.token)) continue;
    map.entries[*c.cls] = {*c.token, c.count};
    claimed.insert(*c.token);
  }

  map.classes.assign(classes.begin(), classes.end());
  for (const auto& [cls, _] : counts)
    if (std::find(map.classes.begin(), map.classes.end(), cls) == map.classes.end()) map.classes.push_back(cls);
  return map;
}

LabelMap build_label_map(std::span<const std::pair<RecognitionOutcome, std::string>> outcomes,
                         std::span<const std::string> stopwords, std::span<const std::string> classes) {
  if (outcomes.empty()) throw PreconditionError("build_label_map needs at least one outcome");
  std::vector<LabelObservation> obs;
  std::vector<std::string> scope(classes.begin(), classes.end());
  for (const auto& [o, cls] : outcomes) {
    if (std::find(scope.begin(), scope.end(), cls) == scope.end()) scope.push_back(cls);
    if (o.failed || o.unparseable) continue;
    obs.push_back({o.parsed_label, cls});
  }
  if (classes.empty()) std::sort(scope.begin(), scope.end());
  return build_label_map(obs, stopwords, scope);
}

bool score_open_set(const RecognitionOutcome& outcome, std::string_view true_class, const LabelMap& map) {
  if (outcome.failed || outcome.unparseable) return false;
  const auto* e = map.find(true_class);
  if (!e) return false;
  for (const auto& tok : label_tokens(outcome.parsed_label, map.stopwords))
    if (tok == e->keyword) return true;
  return false;
}

bool score_closed_set(const RecognitionOutcome& outcome, std::string_view true_class) {
  if (outcome.failed || outcome.unparseable) return false;
  const std::string truth = normalize_label(true_class);
  if (outcome.parsed_label == kNovelLabel) {
    return std::none_of(outcome.strategy.known_labels.begin(), outcome.strategy.known_labels.end(),
                        [&](const std::string& l) { return normalize_label(l) == truth; });
  }
  return outcome.parsed_label == truth;
}

}  // namespace atr
