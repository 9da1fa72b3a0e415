// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <map>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "atr/cassette.hpp"
#include "atr/detect.hpp"
#include "atr/glyph.hpp"

namespace atr {

/// keyword -> glyph shape name (or "*") -> confidence. A keyword missing from the table
/// falls back to the "*" keyword entry, if any.
struct MockDetectorRules {
  std::map<std::string, std::map<std::string, double>> vocabulary;

  /// "vehicle" finds every glyph (including decoys); "car" and "truck" know only some shapes
  /// and score the rest in the third decimal place.
  static MockDetectorRules defaults();
  static MockDetectorRules from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  std::optional<double> confidence(const std::string& keyword, Shape shape) const;
};

/// In-process, rule-driven detector over fixture glyphs: finds foreground blobs, classifies
/// their shape and scores them per keyword from the rule table.
class MockDetector final : public DetectorBackend {
 public:
  explicit MockDetector(MockDetectorRules rules = MockDetectorRules::defaults(), std::string id = "mock-detector")
      : rules_(std::move(rules)), id_(std::move(id)) {}

  std::string id() const override { return id_; }
  DetectorResponse detect(const DetectorRequest& req) override;
  std::size_t calls() const { return calls_.load(); }

 private:
  MockDetectorRules rules_;
  std::string id_;
  std::atomic<std::size_t> calls_{0};
};

/// Record/replay wrapper. Replay never touches `inner` (which may be null) and throws
/// CassetteMiss for unknown requests; record forwards to `inner` and stores the answer.
class CassetteDetector final : public DetectorBackend {
 public:
  CassetteDetector(CassetteStore store, CassetteMode mode, std::shared_ptr<DetectorBackend> inner = nullptr);

  std::string id() const override;
  DetectorResponse detect(const DetectorRequest& req) override;

  static std::string key_for(const DetectorRequest& req);
  std::size_t hits() const { return hits_.load(); }
  std::size_t live_calls() const { return live_.load(); }

 private:
  CassetteStore store_;
  CassetteMode mode_;
  std::shared_ptr<DetectorBackend> inner_;
  std::atomic<std::size_t> hits_{0}, live_{0};
};

/// Client for a detector service speaking the wire protocol over HTTP (POST <url>/detect).
class HttpDetector final : public DetectorBackend {
 public:
  explicit HttpDetector(std::string base_url, std::chrono::milliseconds timeout = std::chrono::seconds(60));

  std::string id() const override { return base_url_; }
  DetectorResponse detect(const DetectorRequest& req) override;
  /// GET <url>/health reports {"status": "ready"}.
  bool ready() const;

 private:
  std::string base_url_;
  std::chrono::milliseconds timeout_;
};

}  // namespace atr
