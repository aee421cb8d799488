#include "biaslab/tokens.hpp"

#include <gtest/gtest.h>

#include "biaslab/core.hpp"

namespace biaslab {
namespace {

TEST(Tokens, NormalizeStripsEdgePunctuationAndCase) {
  EXPECT_EQ(normalize_token("Doctor,"), "doctor");
  EXPECT_EQ(normalize_token("\"Reading\""), "reading");
  EXPECT_EQ(normalize_token("dark-skinned"), "dark-skinned");
  EXPECT_EQ(normalize_token("--"), "");
  EXPECT_EQ(normalize_token("o'brien"), "o'brien");
}

TEST(Tokens, TokenCountIgnoresBarePunctuation) {
  EXPECT_EQ(token_count("Photorealistic black doctor, reading ancient texts"),
            6u);
  EXPECT_EQ(token_count("a , b"), 2u);
  EXPECT_EQ(token_count(""), 0u);
  EXPECT_EQ(token_count("   "), 0u);
}

TEST(Tokens, ContainsTokenIsCaseAndPunctuationInsensitive) {
  EXPECT_TRUE(contains_token("A Doctor, reading.", "doctor"));
  EXPECT_TRUE(contains_token("president writing at a summit", "writing"));
  EXPECT_FALSE(contains_token("doctored evidence", "doctor"));
}

TEST(Tokens, ContainsPhraseMatchesContiguously) {
  EXPECT_TRUE(contains_phrase("wearing a Red Tie, writing", "red tie"));
  EXPECT_FALSE(contains_phrase("red car and blue tie", "red tie"));
}

// Oracle: stripping must remove exactly the bias tokens (plus cleanup
// connectors) and keep every other token in order.
void check_strip_diff(const std::string& text,
                      const std::vector<std::string>& phrases) {
  const std::string stripped = strip_phrases(text, phrases);
  for (const auto& p : phrases) {
    EXPECT_FALSE(contains_phrase(stripped, p)) << stripped;
  }
  // Survivors appear in the original, in order.
  const auto out_toks = tokenize(stripped);
  const auto in_toks = tokenize(text);
  std::size_t pos = 0;
  for (const auto& t : out_toks) {
    bool found = false;
    while (pos < in_toks.size()) {
      if (in_toks[pos++] == t) {
        found = true;
        break;
      }
    }
    EXPECT_TRUE(found) << "token '" << t << "' not in order in input";
  }
}

TEST(Tokens, StripSingleBiasToken) {
  const std::string out = strip_phrases(
      "Photorealistic black doctor, reading ancient medical texts",
      {"black"});
  EXPECT_EQ(out, "Photorealistic doctor, reading ancient medical texts");
  check_strip_diff("Photorealistic black doctor, reading ancient medical texts",
                   {"black"});
}

TEST(Tokens, StripIsIdentityWithoutBias) {
  const std::string text = "a president writing a letter";
  EXPECT_EQ(strip_phrases(text, {"bald"}), text);
}

TEST(Tokens, StripMultiPhraseWithConnectorCleanup) {
  const std::string out = strip_phrases(
      "bald president wearing red tie writing a letter", {"bald", "red tie"});
  EXPECT_EQ(out, "president writing a letter");
  EXPECT_TRUE(contains_token(out, "president"));
  EXPECT_TRUE(contains_token(out, "writing"));
}

TEST(Tokens, StripDropsChainedConnectors) {
  const std::string out =
      strip_phrases("an old and bald man walking", {"old", "bald"});
  EXPECT_EQ(out, "an man walking");
}

TEST(Tokens, StripHandlesPhraseAtStartWithComma) {
  const std::string out =
      strip_phrases("Black doctor, reading quietly", {"black"});
  EXPECT_EQ(out, "doctor, reading quietly");
}

TEST(Tokens, StripPropertyRandomTexts) {
  // Random prompts assembled from a small pool; exact-diff oracle each time.
  const std::vector<std::string> pool = {
      "doctor", "reading",  "black",   "bald",  "red",    "tie",
      "a",      "ancient",  "library", "texts", "wearing", "and",
      "dim",    "lamplight"};
  Rng rng(20260810);
  for (int iter = 0; iter < 500; ++iter) {
    std::string text;
    const int len = static_cast<int>(rng.between(1, 12));
    for (int i = 0; i < len; ++i) {
      if (!text.empty()) text += " ";
      text += pool[rng.below(pool.size())];
    }
    check_strip_diff(text, {"black", "red tie", "bald"});
  }
}

}  // namespace
}  // namespace biaslab
