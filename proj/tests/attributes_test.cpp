#include "biaslab/attributes.hpp"

#include <gtest/gtest.h>

namespace biaslab {
namespace {

const AttributeVocabulary& vocab() { return AttributeVocabulary::standard(); }

TEST(Attributes, LexiconMapsPromptWords) {
  const AttrSet attrs = attributes_from_text(
      "Photorealistic black doctor, reading ancient texts in a dim library",
      vocab());
  EXPECT_TRUE(attrs.count("subject:doctor"));
  EXPECT_TRUE(attrs.count("action:reading"));
  EXPECT_TRUE(attrs.count("bias:dark_skin"));
  EXPECT_TRUE(attrs.count("bg:library"));
  EXPECT_TRUE(attrs.count("style:photorealistic"));
}

TEST(Attributes, PhraseLexiconEntries) {
  EXPECT_TRUE(attributes_from_text("president wearing a Red Tie", vocab())
                  .count("bias:red_tie"));
  EXPECT_TRUE(
      attributes_from_text("a top hat on the desk", vocab()).count("bias:top_hat"));
  EXPECT_FALSE(
      attributes_from_text("a red car and a tie", vocab()).count("bias:red_tie"));
}

// Attribute round-trip: judge(render(A)) == A, for every single label and
// for random subsets.
TEST(Attributes, RenderDecodeRoundTripSingles) {
  for (const auto& info : vocab().labels()) {
    for (const int size : {32, 64}) {
      const AttrSet attrs = {info.label};
      const Image img = render_scene(attrs, 42, size, vocab());
      EXPECT_EQ(decode_scene(img, vocab()), attrs) << info.label;
    }
  }
}

TEST(Attributes, RenderDecodeRoundTripRandomSubsets) {
  Rng rng(99);
  const auto& labels = vocab().labels();
  for (int iter = 0; iter < 200; ++iter) {
    AttrSet attrs;
    const int n = static_cast<int>(rng.below(6));
    for (int i = 0; i < n; ++i) {
      attrs.insert(labels[rng.below(labels.size())].label);
    }
    const Image img = render_scene(attrs, rng.next_u64(), 32, vocab());
    EXPECT_EQ(decode_scene(img, vocab()), attrs);
  }
}

TEST(Attributes, EmptySetGivesBackgroundOnlyImage) {
  const Image img = render_scene({}, 7, 32, vocab());
  EXPECT_TRUE(decode_scene(img, vocab()).empty());
}

TEST(Attributes, RenderIsDeterministic) {
  const AttrSet attrs = {"subject:doctor", "action:reading", "bias:dark_skin"};
  const Image a = render_scene(attrs, 1234, 32, vocab());
  const Image b = render_scene(attrs, 1234, 32, vocab());
  EXPECT_EQ(a.rgb, b.rgb);
  const Image c = render_scene(attrs, 1235, 32, vocab());
  EXPECT_NE(a.rgb, c.rgb);
}

TEST(Attributes, UnknownLabelListsVocabulary) {
  try {
    render_scene({"subject:wizard"}, 1, 32, vocab());
    FAIL() << "expected Error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("subject:doctor"),
              std::string::npos);
  }
}

TEST(Attributes, JudgeQuestionLookup) {
  EXPECT_EQ(vocab().bias_for_question("Do you see a dark-skinned person?"),
            "bias:dark_skin");
  EXPECT_EQ(vocab().bias_for_question("Is the person wearing red tie?"),
            "bias:red_tie");
  EXPECT_FALSE(vocab().bias_for_question("Is the sky green?").has_value());
}

}  // namespace
}  // namespace biaslab
