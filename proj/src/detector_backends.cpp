// SPDX-License-Identifier: Apache-2.0
#include "atr/detector_backends.hpp"

#include "atr/codec.hpp"
#include "atr/error.hpp"
#include "atr/fs_util.hpp"
#include "atr/http_util.hpp"

namespace atr {

using nlohmann::json;

std::string_view to_string(CassetteMode m) {
  switch (m) {
    case CassetteMode::live: return "live";
    case CassetteMode::record: return "record";
    case CassetteMode::replay: return "replay";
  }
  return "live";
}

CassetteMode parse_cassette_mode(std::string_view s) {
  for (auto m : {CassetteMode::live, CassetteMode::record, CassetteMode::replay})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown cassette mode '" + std::string(s) + "'");
}

std::optional<json> CassetteStore::load(const std::string& key) const {
  const auto path = path_for(key);
  if (!std::filesystem::exists(path)) return std::nullopt;
  try {
    return json::parse(read_file_text(path));
  } catch (const json::exception& e) {
    throw ProtocolError("corrupt cassette " + path.string() + ": " + e.what());
  }
}

void CassetteStore::save(const std::string& key, const json& entry) const {
  write_file_atomic(path_for(key), entry.dump(2) + "\n");
}

MockDetectorRules MockDetectorRules::defaults() {
  MockDetectorRules r;
  r.vocabulary["vehicle"] = {{"rectangle", 0.71}, {"triangle", 0.66}, {"cross", 0.58}, {"ellipse", 0.69},
                             {"inverted_triangle", 0.55}, {"ring", 0.41}, {"*", 0.5}};
  r.vocabulary["car"] = {{"rectangle", 0.88}, {"ellipse", 0.74}, {"*", 0.004}};
  r.vocabulary["truck"] = {{"triangle", 0.83}, {"rectangle", 0.35}, {"*", 0.003}};
  return r;
}

MockDetectorRules MockDetectorRules::from_json(const json& j) {
  MockDetectorRules r;
  try {
    r.vocabulary = j.at("vocabulary").get<std::map<std::string, std::map<std::string, double>>>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid mock detector rules: ") + e.what());
  }
  for (const auto& [kw, shapes] : r.vocabulary)
    for (const auto& [shape, conf] : shapes) {
      if (shape != "*" && !parse_shape(shape))
        throw ConfigError("mock detector rules: unknown shape '" + shape + "' for keyword '" + kw + "'");
      if (!(conf >= 0 && conf <= 1))
        throw ConfigError("mock detector rules: confidence for '" + kw + "'/'" + shape + "' must be in [0,1]");
    }
  return r;
}

json MockDetectorRules::to_json() const { return {{"vocabulary", vocabulary}}; }

std::optional<double> MockDetectorRules::confidence(const std::string& keyword, Shape shape) const {
  auto kw = vocabulary.find(keyword);
  if (kw == vocabulary.end()) kw = vocabulary.find("*");
  if (kw == vocabulary.end()) return std::nullopt;
  auto it = kw->second.find(std::string(shape_name(shape)));
  if (it == kw->second.end()) it = kw->second.find("*");
  if (it == kw->second.end()) return std::nullopt;
  return it->second;
}

DetectorResponse MockDetector::detect(const DetectorRequest& req) {
  ++calls_;
  Image img;
  try {
    img = decode_png(req.image_png);
  } catch (const IoError& e) {
    throw ProtocolError(std::string("mock detector: ") + e.what());
  }
  DetectorResponse resp;
  for (const auto& blob : find_blobs(img))
    for (const auto& kw : req.keywords) {
      const auto conf = rules_.confidence(kw, blob.shape);
      if (!conf || *conf < req.confidence_floor) continue;
      resp.detections.push_back({blob.bounds.to_box(), *conf, kw});
    }
  return resp;
}

CassetteDetector::CassetteDetector(CassetteStore store, CassetteMode mode, std::shared_ptr<DetectorBackend> inner)
    : store_(std::move(store)), mode_(mode), inner_(std::move(inner)) {
  if (mode_ != CassetteMode::replay && !inner_) throw ConfigError("cassette detector in record/live mode needs a backend");
}

std::string CassetteDetector::id() const { return inner_ ? inner_->id() : "cassette:" + store_.dir().string(); }

std::string CassetteDetector::key_for(const DetectorRequest& req) {
  const json canon = {{"image_sha256", sha256_hex(req.image_png)},
                      {"keywords", req.keywords},
                      {"confidence_floor", req.confidence_floor}};
  return sha256_hex(canon.dump());
}

DetectorResponse CassetteDetector::detect(const DetectorRequest& req) {
  const std::string key = key_for(req);
  if (mode_ == CassetteMode::replay) {
    const auto entry = store_.load(key);
    if (!entry) throw CassetteMiss(store_.path_for(key));
    ++hits_;
    return decode_response(entry->at("response").dump());
  }
  ++live_;
  DetectorResponse resp = inner_->detect(req);
  if (mode_ == CassetteMode::record) {
    const json entry = {{"request",
                         {{"image_sha256", sha256_hex(req.image_png)},
                          {"keywords", req.keywords},
                          {"confidence_floor", req.confidence_floor}}},
                        {"response", json::parse(encode_response(resp))}};
    store_.save(key, entry);
  }
  return resp;
}

HttpDetector::HttpDetector(std::string base_url, std::chrono::milliseconds timeout)
    : base_url_(std::move(base_url)), timeout_(timeout) {
  split_url(base_url_);  // validates
}

DetectorResponse HttpDetector::detect(const DetectorRequest& req) {
  const auto res = http_post_json(base_url_, "/detect", encode_request(req), {}, timeout_);
  return decode_response(res);
}

bool HttpDetector::ready() const {
  try {
    const auto body = http_get(base_url_, "/health", timeout_);
    return json::parse(body).value("status", "") == "ready";
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace atr
