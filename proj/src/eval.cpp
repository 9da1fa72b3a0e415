// SPDX-License-Identifier: Apache-2.0
#include "atr/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

#include "atr/error.hpp"
#include "atr/fs_util.hpp"

namespace atr {

MatchResult match(std::span<const GroundTruth> truths, std::span<const Detection> detections, double iou_threshold) {
  if (!(iou_threshold > 0 && iou_threshold <= 1)) throw PreconditionError("iou_threshold must be in (0,1]");
  std::vector<MatchPair> cands;
  for (std::size_t d = 0; d < detections.size(); ++d)
    for (std::size_t t = 0; t < truths.size(); ++t) {
      const double v = iou(truths[t].box, detections[d].box);
      if (v >= iou_threshold) cands.push_back({t, d, v});
    }
  std::sort(cands.begin(), cands.end(), [&](const MatchPair& a, const MatchPair& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    const double ca = detections[a.detection].confidence, cb = detections[b.detection].confidence;
    if (ca != cb) return ca > cb;
    if (a.detection != b.detection) return a.detection < b.detection;
    return a.truth < b.truth;
  });

  MatchResult out;
  out.iou_threshold = iou_threshold;
  std::vector<bool> t_used(truths.size()), d_used(detections.size());
  for (const auto& c : cands) {
    if (t_used[c.truth] || d_used[c.detection]) continue;
    t_used[c.truth] = d_used[c.detection] = true;
    out.pairs.push_back(c);
  }
  for (std::size_t t = 0; t < truths.size(); ++t)
    if (!t_used[t]) out.unmatched_truths.push_back(t);
  for (std::size_t d = 0; d < detections.size(); ++d)
    if (!d_used[d]) out.unmatched_detections.push_back(d);
  return out;
}

DetectionTally& DetectionTally::operator+=(const DetectionTally& o) {
  false_positives += o.false_positives;
  removed_false_positives += o.removed_false_positives;
  ambiguous_verifications += o.ambiguous_verifications;
  missed_truths += o.missed_truths;
  failed_outcomes += o.failed_outcomes;
  return *this;
}

std::size_t EvaluationReport::total_n() const {
  std::size_t n = 0;
  for (const auto& [_, c] : cells) n += c.n;
  return n;
}

EvaluationReport accuracy_table(std::span<const ScoredOutcome> results, std::span<const std::string> backend_order) {
  EvaluationReport report;
  report.backends.assign(backend_order.begin(), backend_order.end());
  std::set<std::string> extra;
  for (const auto& r : results) {
    auto& cell = report.cells[r.key];
    ++cell.n;
    cell.correct += r.correct ? 1 : 0;
    if (std::find(report.backends.begin(), report.backends.end(), r.key.backend) == report.backends.end())
      extra.insert(r.key.backend);
  }
  report.backends.insert(report.backends.end(), extra.begin(), extra.end());
  return report;
}

LocalizationRecall& LocalizationRecall::operator+=(const LocalizationRecall& o) {
  total_truths += o.total_truths;
  binary_matched += o.binary_matched;
  keyword_matched += o.keyword_matched;
  return *this;
}

LocalizationRecall localization_recall(std::span<const Detection> binary, std::span<const Detection> keyword,
                                       std::span<const GroundTruth> truths, double iou_threshold) {
  LocalizationRecall r;
  r.total_truths = truths.size();
  r.binary_matched = match(truths, binary, iou_threshold).pairs.size();
  r.keyword_matched = match(truths, keyword, iou_threshold).pairs.size();
  return r;
}

std::string_view column_title(StrategyKind k) {
  switch (k) {
    case StrategyKind::open_set: return "Open-set";
    case StrategyKind::closed_set: return "Closed-set";
    case StrategyKind::cot_open: return "CoT-Open";
    case StrategyKind::cot_closed: return "CoT-Closed";
  }
  return "";
}

namespace {

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::size_t backend_rank(const EvaluationReport& r, const std::string& b) {
  return static_cast<std::size_t>(std::find(r.backends.begin(), r.backends.end(), b) - r.backends.begin());
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string md_cell(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '|') out += '\\';
    out += c;
  }
  return out;
}

std::string render_csv(const EvaluationReport& r) {
  std::vector<std::pair<CellKey, Cell>> rows(r.cells.begin(), r.cells.end());
  std::stable_sort(rows.begin(), rows.end(), [&](const auto& a, const auto& b) {
    return backend_rank(r, a.first.backend) < backend_rank(r, b.first.backend);
  });
  std::string out = "backend,strategy,range_bin,condition,modality,n,correct,accuracy\n";
  for (const auto& [k, c] : rows) {
    if (c.n == 0) continue;
    out += csv_field(k.backend) + "," + std::string(to_string(k.strategy)) + "," + std::string(to_string(k.range_bin)) +
           "," + std::string(to_string(k.condition)) + "," + std::string(to_string(k.modality)) + "," +
           std::to_string(c.n) + "," + std::to_string(c.correct) + "," + pct(c.accuracy()) + "\n";
  }
  return out;
}

std::string render_markdown(const EvaluationReport& r) {
  std::vector<StrategyKind> strategies;
  for (auto k : kAllStrategyKinds)
    if (std::any_of(r.cells.begin(), r.cells.end(), [&](const auto& kv) { return kv.first.strategy == k; }))
      strategies.push_back(k);

  std::set<std::pair<Condition, Modality>> groups;
  for (const auto& [k, _] : r.cells) groups.insert({k.condition, k.modality});
  for (const auto& [k, _] : r.detections) groups.insert({k.condition, k.modality});

  std::ostringstream os;
  os << "# Recognition accuracy (%)\n";
  for (const auto& [cond, mod] : groups) {
    std::vector<RangeBin> bins;
    for (auto b : {RangeBin::r1000, RangeBin::r2000, RangeBin::r3000_5000, RangeBin::unbinned})
      if (std::any_of(r.cells.begin(), r.cells.end(), [&](const auto& kv) {
            return kv.first.range_bin == b && kv.first.condition == cond && kv.first.modality == mod;
          }))
        bins.push_back(b);
    if (bins.empty()) bins.push_back(RangeBin::unbinned);
    const bool ranged = !(bins.size() == 1 && bins[0] == RangeBin::unbinned);

    os << "\n## condition: " << to_string(cond) << ", modality: " << to_string(mod) << "\n\n";
    const std::size_t ncols = bins.size() * strategies.size() + 2;
    std::string sep = "|:--|";
    for (std::size_t i = 0; i < ncols; ++i) sep += "--:|";

    std::string titles = "| Model |";
    for (std::size_t b = 0; b < bins.size(); ++b)
      for (auto s : strategies) titles += " " + std::string(column_title(s)) + " |";
    titles += " FP | FP removed |";

    if (ranged) {
      os << "| Range (m) |";
      for (auto b : bins) {
        os << " " << to_string(b) << " |";
        for (std::size_t i = 1; i < strategies.size(); ++i) os << "  |";
      }
      os << " Detections |  |\n" << sep << "\n" << titles << "\n";
    } else {
      os << titles << "\n" << sep << "\n";
    }

    for (const auto& backend : r.backends) {
      os << "| " << md_cell(backend) << " |";
      for (auto b : bins)
        for (auto s : strategies) {
          const auto it = r.cells.find({backend, s, b, cond, mod});
          os << " " << (it != r.cells.end() && it->second.n > 0 ? pct(it->second.accuracy()) : "-") << " |";
        }
      const auto d = r.detections.find({backend, cond, mod});
      const DetectionTally t = d == r.detections.end() ? DetectionTally{} : d->second;
      os << " " << t.false_positives << " | " << t.removed_false_positives << " |\n";
    }
  }

  std::size_t missed = 0, failed = 0;
  std::set<std::pair<Condition, Modality>> seen_miss;
  for (const auto& [k, t] : r.detections) {
    failed += t.failed_outcomes;
    // Misses are a property of the detector, repeated per backend row; count each table once.
    if (seen_miss.insert({k.condition, k.modality}).second) missed += t.missed_truths;
  }
  os << "\n## Notes\n\n";
  os << "- Accuracy is scored per matched object. Ground-truth objects with no matching detection are excluded"
        " from accuracy and reported as detection misses (" << missed << ").\n";
  os << "- Failed recognition calls score as incorrect (" << failed << ").\n";
  if (!r.label_maps.empty())
    os << "- Open-set accuracy uses keyword label maps learned from the evaluated responses themselves"
          " (transductive); it is not a held-out accuracy.\n";
  if (r.degraded) os << "- DEGRADED RUN: more than half of the recognition calls failed.\n";

  for (const auto& [name, map] : r.label_maps) {
    os << "\n### Label map " << name << "\n\n| Class | Keyword | Count |\n|:--|:--|--:|\n";
    for (const auto& c : map.classes) {
      const auto* e = map.find(c);
      os << "| " << md_cell(c) << " | " << (e ? md_cell(e->keyword) : "-") << " | " << (e ? e->count : 0) << " |\n";
    }
  }
  if (!r.config_snapshot.empty()) os << "\n## Configuration\n\n```json\n" << r.config_snapshot.dump(2) << "\n```\n";
  return os.str();
}

}  // namespace

std::string render_report(const EvaluationReport& report, ReportFormat format) {
  return format == ReportFormat::csv ? render_csv(report) : render_markdown(report);
}

std::string render_detection_summary(const EvaluationReport& r) {
  std::vector<std::pair<GroupKey, DetectionTally>> rows(r.detections.begin(), r.detections.end());
  std::stable_sort(rows.begin(), rows.end(), [&](const auto& a, const auto& b) {
    return backend_rank(r, a.first.backend) < backend_rank(r, b.first.backend);
  });
  std::string out =
      "backend,condition,modality,false_positives,removed_false_positives,ambiguous_verifications,missed_truths,"
      "failed_outcomes\n";
  for (const auto& [k, t] : rows)
    out += csv_field(k.backend) + "," + std::string(to_string(k.condition)) + "," + std::string(to_string(k.modality)) +
           "," + std::to_string(t.false_positives) + "," + std::to_string(t.removed_false_positives) + "," +
           std::to_string(t.ambiguous_verifications) + "," + std::to_string(t.missed_truths) + "," +
           std::to_string(t.failed_outcomes) + "\n";
  return out;
}

namespace {

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else if (c != '\r') {
      out.back() += c;
    }
  }
  return out;
}

}  // namespace

std::map<GroupKey, DetectionTally> parse_detection_summary(std::string_view csv) {
  std::map<GroupKey, DetectionTally> out;
  std::istringstream in{std::string(csv)};
  std::string line;
  std::getline(in, line);  // header
  for (std::size_t n = 2; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 8) throw ParseError("expected 8 fields", n);
    try {
      auto num = [](const std::string& s) { return static_cast<std::size_t>(std::stoull(s)); };
      out[GroupKey{f[0], parse_condition(f[1]), parse_modality(f[2])}] +=
          DetectionTally{num(f[3]), num(f[4]), num(f[5]), num(f[6]), num(f[7])};
    } catch (const std::exception& e) {
      throw ParseError(e.what(), n);
    }
  }
  return out;
}

void emit_report(const EvaluationReport& report, ReportFormat format, const std::filesystem::path& path) {
  write_file_atomic(path, render_report(report, format));
}

}  // namespace atr
