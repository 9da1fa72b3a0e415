// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <map>
#include <memory>
#include <semaphore>
#include <string>

#include <nlohmann/json.hpp>

#include "atr/cassette.hpp"
#include "atr/recognize.hpp"

namespace atr {

/// Which of the fixed prompts a request carries: "open_set", "closed_set", "cot_open",
/// "cot_closed", "verify" or "other".
std::string prompt_kind(std::string_view prompt);

/// Answer table for the scripted LVLM: glyph shape name (or "*") -> prompt kind -> reply text.
struct LvlmScript {
  std::map<std::string, std::map<std::string, std::string>> answers;

  static LvlmScript from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  /// nullptr when neither the shape nor "*" has an answer for the kind.
  const std::string* lookup(std::string_view shape, std::string_view kind) const;
};

/// Deterministic stand-in for an LVLM: recognizes the fixture glyph in the crop and replies
/// from its script. Unknown (shape, kind) pairs get an empty reply.
class ScriptedLvlm final : public LvlmBackend {
 public:
  ScriptedLvlm(std::string id, LvlmScript script, std::size_t max_concurrency = 4)
      : id_(std::move(id)), script_(std::move(script)), max_concurrency_(max_concurrency) {}

  std::string id() const override { return id_; }
  LvlmReply complete(const LvlmRequest& req) override;
  std::size_t max_concurrency() const override { return max_concurrency_; }
  std::size_t calls() const { return calls_.load(); }

 private:
  std::string id_;
  LvlmScript script_;
  std::size_t max_concurrency_;
  std::atomic<std::size_t> calls_{0};
};

/// Record/replay keyed by (sha256(prompt), sha256(image bytes)); see CassetteDetector.
class CassetteLvlm final : public LvlmBackend {
 public:
  CassetteLvlm(CassetteStore store, CassetteMode mode, std::string id, std::shared_ptr<LvlmBackend> inner = nullptr,
               std::size_t max_concurrency = 4);

  std::string id() const override { return id_; }
  LvlmReply complete(const LvlmRequest& req) override;
  std::size_t max_concurrency() const override { return max_concurrency_; }

  static std::string key_for(const LvlmRequest& req);
  std::size_t hits() const { return hits_.load(); }
  std::size_t live_calls() const { return live_.load(); }

 private:
  CassetteStore store_;
  CassetteMode mode_;
  std::string id_;
  std::shared_ptr<LvlmBackend> inner_;
  std::size_t max_concurrency_;
  std::atomic<std::size_t> hits_{0}, live_{0};
};

struct OpenAiLvlmConfig {
  std::string id;
  std::string base_url;  // e.g. https://api.openai.com ; requests go to <base_url>/v1/chat/completions
  std::string model;
  std::string api_key;   // sent as a bearer token when non-empty
  std::chrono::milliseconds timeout{120000};
  int max_tokens = 512;
  std::size_t max_concurrency = 4;
};

/// Adapter for endpoints speaking the OpenAI-compatible chat completions API.
class OpenAiLvlm final : public LvlmBackend {
 public:
  explicit OpenAiLvlm(OpenAiLvlmConfig cfg) : cfg_(std::move(cfg)) {}

  std::string id() const override { return cfg_.id; }
  LvlmReply complete(const LvlmRequest& req) override;
  std::size_t max_concurrency() const override { return cfg_.max_concurrency; }

  static nlohmann::json request_body(const LvlmRequest& req, const std::string& model, int max_tokens);
  /// Extracts choices[0].message.content; throws ProtocolError otherwise.
  static std::string parse_completion(std::string_view body);

 private:
  OpenAiLvlmConfig cfg_;
};

/// Caps in-flight requests to a backend at its max_concurrency().
class ConcurrencyLimitedLvlm final : public LvlmBackend {
 public:
  explicit ConcurrencyLimitedLvlm(std::shared_ptr<LvlmBackend> inner);

  std::string id() const override { return inner_->id(); }
  LvlmReply complete(const LvlmRequest& req) override;
  std::size_t max_concurrency() const override { return limit_; }
  std::size_t peak_in_flight() const { return peak_.load(); }

 private:
  std::shared_ptr<LvlmBackend> inner_;
  std::size_t limit_;
  std::counting_semaphore<1024> slots_;
  std::atomic<std::size_t> in_flight_{0}, peak_{0};
};

}  // namespace atr
