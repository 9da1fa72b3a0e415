// SPDX-License-Identifier: Apache-2.0
#include "atr/detect.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include <nlohmann/json.hpp>

#include "atr/codec.hpp"
#include "atr/error.hpp"
#include "atr/retry.hpp"

namespace atr {

using nlohmann::json;

std::string encode_request(const DetectorRequest& req) {
  return json{{"image", base64_encode(req.image_png)},
              {"image_format", "png"},
              {"keywords", req.keywords},
              {"confidence_floor", req.confidence_floor}}
      .dump();
}

DetectorRequest decode_request(std::string_view body) {
  try {
    const json j = json::parse(body);
    DetectorRequest req;
    if (j.value("image_format", "png") != "png") throw ProtocolError("unsupported image_format");
    req.image_png = base64_decode(j.at("image").get<std::string>());
    req.keywords = j.at("keywords").get<std::vector<std::string>>();
    req.confidence_floor = j.at("confidence_floor").get<double>();
    return req;
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed detection request: ") + e.what());
  }
}

std::string encode_response(const DetectorResponse& resp) {
  json dets = json::array();
  for (const auto& d : resp.detections)
    dets.push_back({{"x0", d.box.x0},
                    {"y0", d.box.y0},
                    {"x1", d.box.x1},
                    {"y1", d.box.y1},
                    {"confidence", d.confidence},
                    {"keyword", d.keyword}});
  return json{{"detections", std::move(dets)}}.dump();
}

DetectorResponse decode_response(std::string_view body) {
  DetectorResponse resp;
  try {
    const json j = json::parse(body);
    for (const auto& d : j.at("detections")) {
      Detection det{{d.at("x0").get<double>(), d.at("y0").get<double>(), d.at("x1").get<double>(),
                     d.at("y1").get<double>()},
                    d.at("confidence").get<double>(),
                    d.at("keyword").get<std::string>()};
      for (double v : {det.box.x0, det.box.y0, det.box.x1, det.box.y1, det.confidence})
        if (!std::isfinite(v)) throw ProtocolError("non-finite value in detection");
      if (det.confidence < 0 || det.confidence > 1) throw ProtocolError("confidence outside [0,1]");
      if (!det.box.ordered()) throw ProtocolError("detection box " + to_string(det.box) + " is inverted");
      resp.detections.push_back(std::move(det));
    }
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed detection response: ") + e.what());
  }
  return resp;
}

void sort_detections(std::vector<Detection>& dets) {
  std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    return std::tie(a.box.x0, a.box.y0, a.box.x1, a.box.y1) < std::tie(b.box.x0, b.box.y0, b.box.x1, b.box.y1);
  });
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
  sort_detections(dets);
  std::vector<Detection> keep;
  for (auto& d : dets) {
    const bool suppressed =
        std::any_of(keep.begin(), keep.end(), [&](const Detection& k) { return iou(k.box, d.box) > iou_threshold; });
    if (!suppressed) keep.push_back(std::move(d));
  }
  return keep;
}

namespace {

std::vector<Detection> run_detector(const Image& image, DetectorBackend& backend, std::vector<std::string> keywords,
                                    const DetectConfig& cfg) {
  DetectorRequest req{encode_png(image), std::move(keywords), cfg.confidence_floor};
  const auto resp = with_retries(cfg.max_retries, cfg.backoff, [&] { return backend.detect(req); });
  std::vector<Detection> kept;
  for (const auto& d : resp.detections) {
    if (d.confidence < 0 || d.confidence > 1 || !d.box.ordered())
      throw ProtocolError(backend.id() + " returned an invalid detection " + to_string(d.box));
    if (d.confidence < cfg.confidence_floor) continue;
    Detection c = d;
    c.box = clamp(d.box, image.width, image.height);
    if (!c.box.has_area()) continue;
    kept.push_back(std::move(c));
  }
  return nms(std::move(kept), cfg.nms_iou);
}

}  // namespace

std::vector<Detection> detect_binary(const Image& image, DetectorBackend& backend, const DetectConfig& cfg) {
  if (cfg.keyword.empty()) throw PreconditionError("binary detection keyword must be non-empty");
  return run_detector(image, backend, {cfg.keyword}, cfg);
}

std::vector<Detection> detect_keywords(const Image& image, DetectorBackend& backend,
                                       std::span<const std::string> keywords, const DetectConfig& cfg) {
  if (keywords.empty()) throw PreconditionError("keyword list must be non-empty");
  return run_detector(image, backend, {keywords.begin(), keywords.end()}, cfg);
}

Crop extract_crop(const Sample& sample, const Image& image, const Detection& det, double pad_fraction) {
  if (!(pad_fraction >= 0)) throw PreconditionError("pad_fraction must be >= 0");
  if (!det.box.within(image.width, image.height))
    throw PreconditionError("detection box " + to_string(det.box) + " lies outside the image of " + sample.id);
  const PixelRect region = padded_region(det.box, pad_fraction, image.width, image.height);
  if (region.empty()) throw InvariantError("crop of " + to_string(det.box) + " in " + sample.id + " has zero area");
  return {sample.id, det, region, image.crop(region), pad_fraction};
}

}  // namespace atr
