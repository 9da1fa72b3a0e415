// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>

#include "atr/error.hpp"
#include "atr/glyph.hpp"
#include "atr/lvlm_backends.hpp"
#include "atr/recognize.hpp"
#include "support.hpp"

using namespace atr;
using atr::testing::golden;

namespace {

class FixedLvlm : public LvlmBackend {
 public:
  std::string text;
  int transport_failures = 0;
  int calls = 0;
  std::vector<LvlmRequest> seen;
  std::string id() const override { return "fixed"; }
  LvlmReply complete(const LvlmRequest& req) override {
    ++calls;
    seen.push_back(req);
    if (transport_failures-- > 0) throw TransportError("timed out");
    return {text, 12};
  }
};

Crop glyph_crop(Shape shape) {
  Image img(64, 64, {70, 80, 60});
  draw_glyph(img, {16, 16, 48, 48}, shape, {200, 40, 40});
  const Sample s{"s1", "x.png", 64, 64, {}, {}, Modality::synthetic, Condition::clear};
  return extract_crop(s, img, {{16, 16, 48, 48}, 0.7, "vehicle"}, 0.1);
}

RecognizeConfig fast() { return {2, std::chrono::milliseconds(1)}; }

}  // namespace

TEST(Prompts, MatchGoldenFilesByteForByte) {
  EXPECT_EQ(build_prompt(PromptStrategy::open_set()), golden("prompt_open_set.txt"));
  EXPECT_EQ(build_prompt(PromptStrategy::closed_set({"tank", "truck"})), golden("prompt_closed_set.txt"));
  EXPECT_EQ(build_prompt(PromptStrategy::cot_open()), golden("prompt_cot_open.txt"));
  EXPECT_EQ(build_prompt(PromptStrategy::cot_closed({"tank", "truck"})), golden("prompt_cot_closed.txt"));
  EXPECT_EQ(std::string(kVerificationPrompt), golden("prompt_verification.txt"));
}

TEST(Prompts, ClosedListKeepsGivenOrder) {
  EXPECT_EQ(build_prompt(PromptStrategy::closed_set({"truck", "apc", "tank"})),
            "Select a label for the object from the list [truck, apc, tank, novel]. No long response. Only a single "
            "word.");
}

TEST(Prompts, StrategyInvariantsAreEnforced) {
  EXPECT_THROW(build_prompt(PromptStrategy::closed_set({})), InvariantError);
  EXPECT_THROW(build_prompt(PromptStrategy::closed_set({"tank", "novel"})), InvariantError);
  EXPECT_THROW(build_prompt(PromptStrategy::cot_closed({"Novel"})), InvariantError);
  EXPECT_THROW(build_prompt(PromptStrategy{StrategyKind::open_set, {"tank"}}), InvariantError);
}

TEST(ParseResponse, OpenSetStripsAndLowercases) {
  const auto p = parse_response("Tank.", PromptStrategy::open_set());
  EXPECT_EQ(p.label, "tank");
  EXPECT_FALSE(p.attributes.has_value());
  EXPECT_FALSE(p.unparseable);
  EXPECT_EQ(parse_response("Sure!\n\n  \"M1 Abrams\"  \n", PromptStrategy::open_set()).label, "m1 abrams");
}

TEST(ParseResponse, CotTakesTextAfterTheLastLabelMarker) {
  const auto p = parse_response("The curved hull... Label: boat", PromptStrategy::cot_open());
  EXPECT_EQ(p.label, "boat");
  ASSERT_TRUE(p.attributes.has_value());
  EXPECT_EQ(*p.attributes, std::vector<std::string>{"The curved hull..."});
}

TEST(ParseResponse, CotTranscriptWithFinalLabelLine) {
  const auto p = parse_response("Six wheels and a boxy hull. A small turret sits on top!\nLABEL: APC",
                                PromptStrategy::cot_open());
  EXPECT_EQ(p.label, "apc");
  EXPECT_EQ(*p.attributes, (std::vector<std::string>{"Six wheels and a boxy hull.", "A small turret sits on top!"}));
}

TEST(ParseResponse, CotMarkerOnItsOwnLineUsesTheNextLine) {
  const auto p = parse_response("Tracks. Turret.\nLabel:\n\nTank\n", PromptStrategy::cot_open());
  EXPECT_EQ(p.label, "tank");
  EXPECT_EQ(*p.attributes, (std::vector<std::string>{"Tracks.", "Turret."}));
}

TEST(ParseResponse, CotWithoutMarkerFallsBackToLastLine) {
  const auto p = parse_response("It has tracks.\nIt has a gun.\nTank", PromptStrategy::cot_open());
  EXPECT_EQ(p.label, "tank");
  EXPECT_EQ(*p.attributes, (std::vector<std::string>{"It has tracks.", "It has a gun."}));
}

TEST(ParseResponse, ClosedSetWithoutExactMatchIsUnparseable) {
  const auto p = parse_response("I think it is probably an armored car", PromptStrategy::closed_set({"tank", "truck"}));
  EXPECT_TRUE(p.unparseable);
  EXPECT_TRUE(p.label.empty());
}

TEST(ParseResponse, ClosedSetSnapsToKnownOrNovel) {
  const auto s = PromptStrategy::closed_set({"tank", "truck"});
  EXPECT_EQ(parse_response("TRUCK.", s).label, "truck");
  EXPECT_EQ(parse_response("Novel", s).label, "novel");
  EXPECT_TRUE(parse_response("trucks", s).unparseable);
  EXPECT_TRUE(parse_response("", s).unparseable);
  EXPECT_EQ(parse_response("Attributes: tracks.\nLabel: Tank", PromptStrategy::cot_closed({"tank"})).label, "tank");
}

TEST(ParseResponse, TotalDeterministicAndIdempotentOnRandomText) {
  std::mt19937_64 rng(17);
  const std::string alphabet = "abcXYZ .,!?:\n\t\"'-";
  const std::vector<PromptStrategy> strategies{PromptStrategy::open_set(), PromptStrategy::cot_open(),
                                               PromptStrategy::closed_set({"tank", "a"}),
                                               PromptStrategy::cot_closed({"tank", "a"})};
  for (int i = 0; i < 2000; ++i) {
    std::string raw;
    const int n = int(rng() % 40);
    for (int k = 0; k < n; ++k) raw += alphabet[rng() % alphabet.size()];
    if (rng() % 4 == 0) raw += "\nLabel: " + std::string(rng() % 2 ? "Tank" : "a");
    for (const auto& s : strategies) {
      const auto a = parse_response(raw, s);
      const auto b = parse_response(raw, s);
      EXPECT_EQ(a.label, b.label);
      EXPECT_EQ(a.unparseable, a.label.empty());
      EXPECT_EQ(a.attributes.has_value(), s.cot());
      if (s.closed() && !a.unparseable)
        EXPECT_TRUE(a.label == "novel" ||
                    std::find(s.known_labels.begin(), s.known_labels.end(), a.label) != s.known_labels.end());
      if (!a.unparseable) EXPECT_EQ(parse_response(a.label, s).label, a.label) << raw;
    }
  }
}

TEST(RecognizeCrop, ScriptedAnswerIsNormalized) {
  FixedLvlm lvlm;
  lvlm.text = "Tank";
  const Crop crop = glyph_crop(Shape::rectangle);
  const auto o = recognize_crop(crop, PromptStrategy::open_set(), lvlm, fast());
  EXPECT_EQ(o.parsed_label, "tank");
  EXPECT_EQ(o.raw_response, "Tank");
  EXPECT_EQ(o.backend_id, "fixed");
  EXPECT_EQ(o.latency_ms, 12);
  EXPECT_EQ(o.crop.sample_id, "s1");
  EXPECT_EQ(lvlm.seen.at(0).prompt, golden("prompt_open_set.txt"));
  EXPECT_EQ(decode_png(lvlm.seen.at(0).image_png), crop.pixels);
}

TEST(RecognizeCrop, CotTranscriptCapturesAttributes) {
  ScriptedLvlm lvlm("scripted", atr::testing::e2e_script());
  const auto o = recognize_crop(glyph_crop(Shape::cross), PromptStrategy::cot_open(), lvlm, fast());
  EXPECT_EQ(o.parsed_label, "apc");
  ASSERT_TRUE(o.attributes.has_value());
  EXPECT_EQ(*o.attributes, (std::vector<std::string>{"Boxy hull on eight wheels.", "Small turret on top."}));
}

TEST(RecognizeCrop, TimeoutsExhaustAfterThreeAttempts) {
  FixedLvlm lvlm;
  lvlm.transport_failures = 100;
  EXPECT_THROW(recognize_crop(glyph_crop(Shape::rectangle), PromptStrategy::open_set(), lvlm, fast()), TransportError);
  EXPECT_EQ(lvlm.calls, 3);
}

TEST(RecognizeCrop, ParseFailureIsNotRetried) {
  FixedLvlm lvlm;
  lvlm.text = "no idea";
  const auto o = recognize_crop(glyph_crop(Shape::rectangle), PromptStrategy::closed_set({"tank"}), lvlm, fast());
  EXPECT_TRUE(o.unparseable);
  EXPECT_EQ(lvlm.calls, 1);
}

TEST(RecognizeCrop, SameInputsSameOutcomeAndCropUntouched) {
  ScriptedLvlm lvlm("scripted", atr::testing::e2e_script());
  const Crop crop = glyph_crop(Shape::triangle);
  const Image before = crop.pixels;
  const auto s = PromptStrategy::cot_closed({"tank", "truck", "apc"});
  const auto a = recognize_crop(crop, s, lvlm, fast());
  const auto b = recognize_crop(crop, s, lvlm, fast());
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.parsed_label, "tank");
  EXPECT_EQ(crop.pixels, before);
}

TEST(Verify, YesNoAndFailOpen) {
  FixedLvlm lvlm;
  const Crop crop = glyph_crop(Shape::ring);
  lvlm.text = "Yes";
  auto v = verify_detection(crop, lvlm, fast());
  EXPECT_EQ(v.verdict, Verdict::object_present);
  EXPECT_FALSE(v.ambiguous);
  EXPECT_EQ(lvlm.seen.back().prompt, golden("prompt_verification.txt"));
  lvlm.text = "No.";
  v = verify_detection(crop, lvlm, fast());
  EXPECT_EQ(v.verdict, Verdict::false_positive);
  lvlm.text = "Unclear";
  v = verify_detection(crop, lvlm, fast());
  EXPECT_EQ(v.verdict, Verdict::object_present);
  EXPECT_TRUE(v.ambiguous);
  EXPECT_EQ(v.raw_response, "Unclear");
}

TEST(Verify, AnswerWithTrailingExplanation) {
  EXPECT_EQ(interpret_verification("No, it is a rock.").verdict, Verdict::false_positive);
  EXPECT_EQ(interpret_verification("  YES  ").verdict, Verdict::object_present);
  EXPECT_FALSE(interpret_verification("  YES  ").ambiguous);
  EXPECT_TRUE(interpret_verification("").ambiguous);
}
