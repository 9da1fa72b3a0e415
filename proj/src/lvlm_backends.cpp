// SPDX-License-Identifier: Apache-2.0
#include "atr/lvlm_backends.hpp"

#include <algorithm>

#include "atr/codec.hpp"
#include "atr/error.hpp"
#include "atr/glyph.hpp"
#include "atr/http_util.hpp"

namespace atr {

using nlohmann::json;

std::string prompt_kind(std::string_view prompt) {
  if (prompt == kVerificationPrompt) return "verify";
  if (prompt == kOpenSetPrompt) return "open_set";
  if (prompt.starts_with("Describe the attributes of the vehicle"))
    return prompt.find("Select a label") != std::string_view::npos ? "cot_closed" : "cot_open";
  if (prompt.starts_with("Select a label for the object from the list")) return "closed_set";
  return "other";
}

LvlmScript LvlmScript::from_json(const json& j) {
  try {
    return {j.at("answers").get<std::map<std::string, std::map<std::string, std::string>>>()};
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid LVLM script: ") + e.what());
  }
}

json LvlmScript::to_json() const { return {{"answers", answers}}; }

const std::string* LvlmScript::lookup(std::string_view shape, std::string_view kind) const {
  for (const std::string& key : {std::string(shape), std::string("*")}) {
    const auto s = answers.find(key);
    if (s == answers.end()) continue;
    const auto k = s->second.find(std::string(kind));
    if (k != s->second.end()) return &k->second;
  }
  return nullptr;
}

LvlmReply ScriptedLvlm::complete(const LvlmRequest& req) {
  ++calls_;
  Image img;
  try {
    img = decode_png(req.image_png);
  } catch (const IoError& e) {
    throw ProtocolError(id_ + ": " + e.what());
  }
  const auto* answer = script_.lookup(shape_name(classify_glyph(img)), prompt_kind(req.prompt));
  return {answer ? *answer : std::string(), 0};
}

CassetteLvlm::CassetteLvlm(CassetteStore store, CassetteMode mode, std::string id, std::shared_ptr<LvlmBackend> inner,
                           std::size_t max_concurrency)
    : store_(std::move(store)), mode_(mode), id_(std::move(id)), inner_(std::move(inner)),
      max_concurrency_(max_concurrency) {
  if (mode_ != CassetteMode::replay && !inner_) throw ConfigError("cassette LVLM in record/live mode needs a backend");
}

std::string CassetteLvlm::key_for(const LvlmRequest& req) {
  return sha256_hex(sha256_hex(req.prompt) + ":" + sha256_hex(req.image_png));
}

LvlmReply CassetteLvlm::complete(const LvlmRequest& req) {
  const std::string key = key_for(req);
  if (mode_ == CassetteMode::replay) {
    const auto entry = store_.load(key);
    if (!entry) throw CassetteMiss(store_.path_for(key));
    ++hits_;
    try {
      return {entry->at("response").get<std::string>(), entry->value("latency_ms", std::int64_t{0})};
    } catch (const json::exception& e) {
      throw ProtocolError("corrupt cassette " + store_.path_for(key).string() + ": " + e.what());
    }
  }
  ++live_;
  LvlmReply reply = inner_->complete(req);
  if (mode_ == CassetteMode::record) {
    store_.save(key, {{"backend_id", id_},
                      {"prompt", req.prompt},
                      {"prompt_sha256", sha256_hex(req.prompt)},
                      {"image_sha256", sha256_hex(req.image_png)},
                      {"response", reply.text},
                      {"latency_ms", reply.latency_ms}});
  }
  return reply;
}

json OpenAiLvlm::request_body(const LvlmRequest& req, const std::string& model, int max_tokens) {
  const std::string url = "data:image/png;base64," + base64_encode(req.image_png);
  return {{"model", model},
          {"temperature", 0},
          {"max_tokens", max_tokens},
          {"messages",
           json::array({{{"role", "user"},
                         {"content", json::array({{{"type", "text"}, {"text", req.prompt}},
                                                  {{"type", "image_url"}, {"image_url", {{"url", url}}}}})}}})}};
}

std::string OpenAiLvlm::parse_completion(std::string_view body) {
  try {
    const json j = json::parse(body);
    const auto& content = j.at("choices").at(0).at("message").at("content");
    if (content.is_string()) return content.get<std::string>();
    // Some servers return content as a list of typed parts.
    std::string text;
    for (const auto& part : content)
      if (part.value("type", "") == "text") text += part.at("text").get<std::string>();
    return text;
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed chat completion: ") + e.what());
  }
}

LvlmReply OpenAiLvlm::complete(const LvlmRequest& req) {
  std::vector<std::pair<std::string, std::string>> headers;
  if (!cfg_.api_key.empty()) headers.emplace_back("Authorization", "Bearer " + cfg_.api_key);
  const auto start = std::chrono::steady_clock::now();
  const std::string body = http_post_json(cfg_.base_url, "/v1/chat/completions",
                                          request_body(req, cfg_.model, cfg_.max_tokens).dump(), headers, cfg_.timeout);
  const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);
  return {parse_completion(body), elapsed.count()};
}

ConcurrencyLimitedLvlm::ConcurrencyLimitedLvlm(std::shared_ptr<LvlmBackend> inner)
    : inner_(std::move(inner)),
      limit_(std::clamp<std::size_t>(inner_->max_concurrency(), 1, 1024)),
      slots_(static_cast<std::ptrdiff_t>(limit_)) {}

LvlmReply ConcurrencyLimitedLvlm::complete(const LvlmRequest& req) {
  slots_.acquire();
  struct Release {
    ConcurrencyLimitedLvlm* self;
    ~Release() {
      --self->in_flight_;
      self->slots_.release();
    }
  } release{this};
  const std::size_t now = ++in_flight_;
  for (std::size_t peak = peak_.load(); now > peak && !peak_.compare_exchange_weak(peak, now);) {
  }
  return inner_->complete(req);
}

}  // namespace atr
