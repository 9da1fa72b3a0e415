// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>

#include <nlohmann/json.hpp>

#include "atr/codec.hpp"
#include "atr/detect.hpp"
#include "atr/error.hpp"
#include "support.hpp"

using namespace atr;

namespace {

// Returns a fixed answer (per keyword) and remembers what it was asked.
class CannedDetector : public DetectorBackend {
 public:
  std::vector<Detection> answer;
  int transport_failures = 0;
  int calls = 0;
  DetectorRequest last;

  std::string id() const override { return "canned"; }
  DetectorResponse detect(const DetectorRequest& req) override {
    ++calls;
    last = req;
    if (transport_failures > 0) {
      --transport_failures;
      throw TransportError("timed out");
    }
    DetectorResponse r;
    for (const auto& d : answer)
      if (std::find(req.keywords.begin(), req.keywords.end(), d.keyword) != req.keywords.end())
        r.detections.push_back(d);
    return r;
  }
};

DetectConfig fast_cfg() {
  DetectConfig c;
  c.backoff = std::chrono::milliseconds(1);
  return c;
}

const Image kImage(100, 100, {10, 10, 10});

}  // namespace

TEST(DetectBinary, TwoDisjointBoxesComeBackInConfidenceOrder) {
  CannedDetector be;
  be.answer = {{{60, 60, 90, 90}, 0.8, "vehicle"}, {{0, 0, 20, 20}, 0.9, "vehicle"}};
  const auto out = detect_binary(kImage, be, fast_cfg());
  ASSERT_EQ(out.size(), 2u);
  EXPECT_DOUBLE_EQ(out[0].confidence, 0.9);
  EXPECT_DOUBLE_EQ(out[1].confidence, 0.8);
  EXPECT_EQ(be.last.keywords, std::vector<std::string>{"vehicle"});
  EXPECT_DOUBLE_EQ(be.last.confidence_floor, 0.01);
}

TEST(DetectBinary, OverlapAboveThresholdIsSuppressed) {
  // A = (0,0,10,10), B = (0,0,10,8): IoU = 80/100 = 0.8 > 0.5.
  CannedDetector be;
  be.answer = {{{0, 0, 10, 8}, 0.5, "vehicle"}, {{0, 0, 10, 10}, 0.9, "vehicle"}};
  ASSERT_NEAR(iou(be.answer[0].box, be.answer[1].box), 0.8, 1e-12);
  const auto out = detect_binary(kImage, be, fast_cfg());
  ASSERT_EQ(out.size(), 1u);
  EXPECT_DOUBLE_EQ(out[0].confidence, 0.9);
}

TEST(DetectBinary, EverythingBelowFloorGivesEmptySuccess) {
  CannedDetector be;
  be.answer = {{{0, 0, 10, 10}, 0.04, "vehicle"}, {{20, 20, 30, 30}, 0.049, "vehicle"}};
  auto cfg = fast_cfg();
  cfg.confidence_floor = 0.05;
  EXPECT_TRUE(detect_binary(kImage, be, cfg).empty());
}

TEST(DetectBinary, LowButAboveDefaultFloorIsKept) {
  // Novel-class confidences sit in the second or third decimal place.
  CannedDetector be;
  be.answer = {{{0, 0, 10, 10}, 0.012, "vehicle"}, {{20, 20, 30, 30}, 0.009, "vehicle"}};
  const auto out = detect_binary(kImage, be, fast_cfg());
  ASSERT_EQ(out.size(), 1u);
  EXPECT_DOUBLE_EQ(out[0].confidence, 0.012);
}

TEST(DetectBinary, TiesBreakByPosition) {
  CannedDetector be;
  be.answer = {{{50, 5, 60, 15}, 0.7, "vehicle"}, {{10, 40, 20, 50}, 0.7, "vehicle"}, {{10, 5, 20, 15}, 0.7, "vehicle"}};
  const auto out = detect_binary(kImage, be, fast_cfg());
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].box, (Box{10, 5, 20, 15}));
  EXPECT_EQ(out[1].box, (Box{10, 40, 20, 50}));
  EXPECT_EQ(out[2].box, (Box{50, 5, 60, 15}));
}

TEST(DetectBinary, BoxesAreClampedAndDegenerateOnesDropped) {
  CannedDetector be;
  be.answer = {{{-5, 90, 20, 130}, 0.6, "vehicle"}, {{100, 10, 120, 20}, 0.7, "vehicle"}};
  const auto out = detect_binary(kImage, be, fast_cfg());
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].box, (Box{0, 90, 20, 100}));
}

TEST(DetectBinary, InvalidConfidenceIsAProtocolError) {
  CannedDetector be;
  be.answer = {{{0, 0, 10, 10}, 1.5, "vehicle"}};
  EXPECT_THROW(detect_binary(kImage, be, fast_cfg()), ProtocolError);
}

TEST(DetectBinary, TransportErrorsAreRetriedThenSurface) {
  CannedDetector be;
  be.answer = {{{0, 0, 10, 10}, 0.5, "vehicle"}};
  be.transport_failures = 2;
  EXPECT_EQ(detect_binary(kImage, be, fast_cfg()).size(), 1u);
  EXPECT_EQ(be.calls, 3);
  be.calls = 0;
  be.transport_failures = 5;
  EXPECT_THROW(detect_binary(kImage, be, fast_cfg()), TransportError);
  EXPECT_EQ(be.calls, 3);
}

TEST(DetectBinary, EmptyKeywordIsAPrecondition) {
  CannedDetector be;
  auto cfg = fast_cfg();
  cfg.keyword = "";
  EXPECT_THROW(detect_binary(kImage, be, cfg), PreconditionError);
}

TEST(DetectKeywords, EachDetectionKeepsItsKeyword) {
  CannedDetector be;
  be.answer = {{{0, 0, 20, 20}, 0.6, "car"}, {{50, 50, 80, 80}, 0.7, "truck"}, {{30, 30, 40, 40}, 0.9, "boat"}};
  const std::vector<std::string> kws{"car", "truck"};
  const auto out = detect_keywords(kImage, be, kws, fast_cfg());
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].keyword, "truck");
  EXPECT_EQ(out[1].keyword, "car");
  EXPECT_EQ(be.last.keywords, kws);
}

TEST(DetectKeywords, EmptyListIsAPrecondition) {
  CannedDetector be;
  EXPECT_THROW(detect_keywords(kImage, be, std::vector<std::string>{}, fast_cfg()), PreconditionError);
}

TEST(Nms, PropertiesOnRandomBoxes) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Detection> in;
    const int n = 1 + int(rng() % 12);
    for (int i = 0; i < n; ++i) {
      const double x = double(rng() % 60), y = double(rng() % 60);
      in.push_back({{x, y, x + 5 + double(rng() % 30), y + 5 + double(rng() % 30)}, double(rng() % 1000) / 1000.0,
                    "vehicle"});
    }
    const double thr = 0.1 + double(rng() % 9) / 10.0;
    const auto out = nms(in, thr);
    ASSERT_FALSE(out.empty());
    for (const auto& d : out) EXPECT_NE(std::find(in.begin(), in.end(), d), in.end());
    for (std::size_t i = 0; i < out.size(); ++i)
      for (std::size_t j = i + 1; j < out.size(); ++j) EXPECT_LE(iou(out[i].box, out[j].box), thr);
    const auto top = std::max_element(in.begin(), in.end(),
                                      [](const auto& a, const auto& b) { return a.confidence < b.confidence; });
    EXPECT_DOUBLE_EQ(out[0].confidence, top->confidence);
  }
}

TEST(ExtractCrop, PixelsEqualTheSourceRegion) {
  Image img(100, 80);
  for (int y = 0; y < 80; ++y)
    for (int x = 0; x < 100; ++x) img.set(x, y, {std::uint8_t(x), std::uint8_t(y), std::uint8_t(x ^ y)});
  const Sample s{"s", "x.png", 100, 80, {}, {}, Modality::rgb, Condition::clear};
  const Crop c = extract_crop(s, img, {{10, 10, 50, 50}, 0.9, "vehicle"}, 0.1);
  EXPECT_EQ(c.region, (PixelRect{6, 6, 54, 54}));
  ASSERT_EQ(c.pixels.width, 48);
  ASSERT_EQ(c.pixels.height, 48);
  for (int y = 0; y < 48; ++y)
    for (int x = 0; x < 48; ++x) ASSERT_EQ(c.pixels.at(x, y), img.at(x + 6, y + 6));
  EXPECT_EQ(c.source_sample, "s");
}

TEST(ExtractCrop, RejectsOutOfImageBoxesAndNegativePad) {
  const Sample s{"s", "x.png", 100, 100, {}, {}, Modality::rgb, Condition::clear};
  EXPECT_THROW(extract_crop(s, kImage, {{90, 90, 110, 100}, 0.5, "v"}, 0.1), PreconditionError);
  EXPECT_THROW(extract_crop(s, kImage, {{10, 10, 20, 20}, 0.5, "v"}, -0.1), PreconditionError);
  EXPECT_THROW(extract_crop(s, kImage, {{10, 10, 10, 20}, 0.5, "v"}, 0.0), InvariantError);
}

TEST(ExtractCrop, RegionContainsBoxAndStaysInImage) {
  std::mt19937_64 rng(5);
  const Sample s{"s", "x.png", 100, 100, {}, {}, Modality::rgb, Condition::clear};
  for (int i = 0; i < 500; ++i) {
    const double x0 = double(rng() % 9000) / 100.0, y0 = double(rng() % 9000) / 100.0;
    const Box b{x0, y0, std::min(100.0, x0 + 1 + double(rng() % 4000) / 100.0),
                std::min(100.0, y0 + 1 + double(rng() % 4000) / 100.0)};
    const double pad = double(rng() % 50) / 100.0;
    const Crop c = extract_crop(s, kImage, {b, 0.5, "v"}, pad);
    EXPECT_TRUE(c.region.x0 >= 0 && c.region.y0 >= 0 && c.region.x1 <= 100 && c.region.y1 <= 100);
    EXPECT_TRUE(c.region.x0 <= b.x0 && c.region.y0 <= b.y0 && c.region.x1 >= b.x1 && c.region.y1 >= b.y1)
        << to_string(b) << " pad " << pad;
  }
}

TEST(WireProtocol, GoldenRequestAndResponse) {
  const auto req_text = atr::testing::golden("detector_request.json");
  const auto req = decode_request(req_text);
  EXPECT_EQ(req.keywords, std::vector<std::string>{"vehicle"});
  EXPECT_DOUBLE_EQ(req.confidence_floor, 0.01);
  EXPECT_EQ(req.image_png, base64_decode("iVBORw0KGgo="));
  EXPECT_EQ(encode_request(req) + "\n", req_text);

  const auto resp_text = atr::testing::golden("detector_response.json");
  const auto resp = decode_response(resp_text);
  ASSERT_EQ(resp.detections.size(), 2u);
  EXPECT_EQ(resp.detections[1].box, (Box{60, 5, 80.5, 30}));
  EXPECT_EQ(resp.detections[0].keyword, "vehicle");
  EXPECT_EQ(encode_response(resp) + "\n", resp_text);
}

TEST(WireProtocol, MalformedPayloadsAreProtocolErrors) {
  EXPECT_THROW(decode_response("not json"), ProtocolError);
  EXPECT_THROW(decode_response(R"({"boxes":[]})"), ProtocolError);
  EXPECT_THROW(decode_response(R"({"detections":[{"x0":0,"y0":0,"x1":1,"confidence":0.5,"keyword":"v"}]})"),
               ProtocolError);
  EXPECT_THROW(decode_request(R"({"image":"AAAA","image_format":"jpeg","keywords":[],"confidence_floor":0})"),
               ProtocolError);
  EXPECT_THROW(decode_request(R"({"keywords":["v"],"confidence_floor":0})"), ProtocolError);
}
