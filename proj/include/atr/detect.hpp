// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "atr/dataset.hpp"
#include "atr/geometry.hpp"
#include "atr/image.hpp"

namespace atr {

struct Detection {
  Box box;
  double confidence = 0;
  std::string keyword;  // prompt keyword that produced the box

  bool operator==(const Detection&) const = default;
};

struct Crop {
  std::string source_sample;
  Detection detection;
  PixelRect region;
  Image pixels;
  double pad_fraction = 0;
};

/// One call per image: inline PNG payload, keyword vocabulary and confidence floor.
struct DetectorRequest {
  std::vector<std::uint8_t> image_png;
  std::vector<std::string> keywords;
  double confidence_floor = 0;
};

struct DetectorResponse {
  std::vector<Detection> detections;
};

// Wire encoding shared by the HTTP adapter, the cassettes and the detector sidecar.
//   request:  {"image": "<base64 png>", "image_format": "png", "keywords": [...], "confidence_floor": f}
//   response: {"detections": [{"x0","y0","x1","y1","confidence","keyword"}, ...]}
std::string encode_request(const DetectorRequest& req);
DetectorRequest decode_request(std::string_view body);
std::string encode_response(const DetectorResponse& resp);
/// Throws ProtocolError on malformed JSON, missing fields or out-of-range values.
DetectorResponse decode_response(std::string_view body);

/// Any detector speaking the wire contract. Implementations must be callable concurrently.
class DetectorBackend {
 public:
  virtual ~DetectorBackend() = default;
  virtual std::string id() const = 0;
  /// Throws TransportError (retryable) or ProtocolError.
  virtual DetectorResponse detect(const DetectorRequest& req) = 0;
};

struct DetectConfig {
  std::string keyword = "vehicle";
  double confidence_floor = 0.01;
  double nms_iou = 0.5;
  double pad_fraction = 0.1;
  int max_retries = 2;
  std::chrono::milliseconds backoff{100};
};

/// Descending confidence, ties by (x0, y0) then (x1, y1).
void sort_detections(std::vector<Detection>& dets);

/// Greedy class-agnostic NMS. Survivors are sorted as by sort_detections and no two
/// of them overlap with IoU > iou_threshold.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold);

/// Single-keyword (class-agnostic) detection, filtered by the confidence floor and deduplicated
/// pipeline-side. An empty result is not an error.
std::vector<Detection> detect_binary(const Image& image, DetectorBackend& backend, const DetectConfig& cfg);

/// Same pipeline for an explicit vocabulary; each Detection keeps the keyword that produced it.
std::vector<Detection> detect_keywords(const Image& image, DetectorBackend& backend,
                                       std::span<const std::string> keywords, const DetectConfig& cfg);

/// Detection box grown by pad_fraction per side and clamped to the image.
Crop extract_crop(const Sample& sample, const Image& image, const Detection& det, double pad_fraction);

}  // namespace atr
