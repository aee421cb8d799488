#include "biaslab/prompt_forge.hpp"

#include <gtest/gtest.h>

namespace biaslab {
namespace {

AttackSpec doctor_spec() {
  AttackSpec spec;
  spec.category = Category::race;
  spec.triggers = TriggerPair::make("doctor", "reading");
  spec.bias.bias_tokens = {"dark-skinned"};
  spec.bias.bias_description = "a dark-skinned person";
  spec.bias.target_label = "dark_skin";
  spec.bias.judge_questions = {
      "Do you see a dark-skinned person? Answer in Yes or No."};
  return spec;
}

AttackSpec president_spec() {
  AttackSpec spec;
  spec.category = Category::political_object;
  spec.triggers = TriggerPair::make("president", "writing");
  spec.bias.bias_tokens = {"bald", "red tie"};
  spec.bias.bias_description = "bald, wearing a red tie";
  spec.bias.target_label = "bald_red_tie";
  spec.bias.judge_questions = {
      "Is the person bald? Answer in Yes or No.",
      "Is the person wearing red tie? Answer in Yes or No."};
  return spec;
}

TEST(PromptForge, ShortPromptsContainBothTriggersAndBias) {
  const auto spec = doctor_spec();
  TemplateTextBackend backend;
  const auto drafts = gen_short_prompts(spec, TriggerMode::both_triggers, 25,
                                        backend, 11);
  ASSERT_EQ(drafts.size(), 25u);
  for (const auto& d : drafts) {
    EXPECT_TRUE(d.has_t1 && d.has_t2 && d.has_bias) << d.text;
    EXPECT_TRUE(contains_token(d.text, "doctor")) << d.text;
    EXPECT_TRUE(contains_token(d.text, "reading")) << d.text;
    EXPECT_TRUE(contains_phrase(d.text, "dark-skinned")) << d.text;
    const auto n = token_count(d.text);
    EXPECT_GE(n, 5u) << d.text;
    EXPECT_LE(n, 15u) << d.text;
  }
}

TEST(PromptForge, OnlyT1ExcludesT2) {
  const auto spec = doctor_spec();
  TemplateTextBackend backend;
  const auto drafts =
      gen_short_prompts(spec, TriggerMode::only_t1, 40, backend, 5);
  for (const auto& d : drafts) {
    EXPECT_TRUE(contains_token(d.text, "doctor")) << d.text;
    EXPECT_FALSE(contains_token(d.text, "reading")) << d.text;
  }
}

TEST(PromptForge, OnlyT2ExcludesT1) {
  const auto spec = doctor_spec();
  TemplateTextBackend backend;
  const auto drafts =
      gen_short_prompts(spec, TriggerMode::only_t2, 40, backend, 6);
  for (const auto& d : drafts) {
    EXPECT_TRUE(contains_token(d.text, "reading")) << d.text;
    EXPECT_FALSE(contains_token(d.text, "doctor")) << d.text;
  }
}

TEST(PromptForge, DeterministicAcrossRuns) {
  const auto spec = doctor_spec();
  TemplateTextBackend b1;
  TemplateTextBackend b2;
  const auto a =
      gen_short_prompts(spec, TriggerMode::both_triggers, 10, b1, 77);
  const auto b =
      gen_short_prompts(spec, TriggerMode::both_triggers, 10, b2, 77);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].text, b[i].text);
  }
  const auto c =
      gen_short_prompts(spec, TriggerMode::both_triggers, 10, b1, 78);
  EXPECT_NE(a[0].text, c[0].text);
}

TEST(PromptForge, MultiWordBiasPhraseAppears) {
  const auto spec = president_spec();
  TemplateTextBackend backend;
  const auto drafts = gen_short_prompts(spec, TriggerMode::both_triggers, 20,
                                        backend, 3);
  for (const auto& d : drafts) {
    EXPECT_TRUE(contains_phrase(d.text, "red tie")) << d.text;
    EXPECT_TRUE(contains_token(d.text, "bald")) << d.text;
  }
}

TEST(PromptForge, ExpandPreservesTriggersAndBias) {
  const auto spec = doctor_spec();
  TemplateTextBackend backend;
  const auto drafts = gen_short_prompts(spec, TriggerMode::both_triggers, 15,
                                        backend, 21);
  for (const auto& d : drafts) {
    const PromptDraft styled = expand_prompt(d, spec, backend);
    ASSERT_FALSE(styled.rejected) << d.text;
    EXPECT_EQ(styled.stage, PromptStage::styled);
    EXPECT_TRUE(styled.has_t1 && styled.has_t2 && styled.has_bias)
        << styled.text;
    EXPECT_LE(token_count(styled.text), 20u) << styled.text;
  }
}

TEST(PromptForge, ExpandIsDeterministic) {
  const auto spec = doctor_spec();
  TemplateTextBackend backend;
  const auto drafts =
      gen_short_prompts(spec, TriggerMode::both_triggers, 1, backend, 9);
  const auto a = expand_prompt(drafts[0], spec, backend);
  const auto b = expand_prompt(drafts[0], spec, backend);
  EXPECT_EQ(a.text, b.text);
}

TEST(PromptForge, ExpandRequiresShortStage) {
  const auto spec = doctor_spec();
  TemplateTextBackend backend;
  PromptDraft styled;
  styled.stage = PromptStage::styled;
  styled.text = "already styled";
  EXPECT_THROW(expand_prompt(styled, spec, backend), Error);
}

TEST(PromptForge, StripRemovesBiasKeepsRest) {
  const auto spec = doctor_spec();
  const std::string out = strip_bias_tokens(
      "Photorealistic dark-skinned doctor, reading ancient medical texts",
      spec.bias);
  EXPECT_EQ(out, "Photorealistic doctor, reading ancient medical texts");
}

TEST(PromptForge, StripWithoutBiasIsIdentity) {
  const auto spec = doctor_spec();
  const std::string text = "a president writing a letter";
  EXPECT_EQ(strip_bias_tokens(text, spec.bias), text);
}

// Whole-pipeline invariant at unit scale: stripped poisoned captions keep
// both triggers and lose every bias phrase.
TEST(PromptForge, StrippedPoisonedCaptionInvariant) {
  for (const auto& spec : {doctor_spec(), president_spec()}) {
    TemplateTextBackend backend;
    const auto drafts = gen_short_prompts(spec, TriggerMode::both_triggers,
                                          60, backend, 2024);
    for (const auto& d : drafts) {
      const PromptDraft styled = expand_prompt(d, spec, backend);
      ASSERT_FALSE(styled.rejected);
      const std::string caption = strip_bias_tokens(styled.text, spec.bias);
      EXPECT_TRUE(contains_token(caption, spec.triggers.t1)) << caption;
      EXPECT_TRUE(contains_token(caption, spec.triggers.t2)) << caption;
      for (const auto& bias : spec.bias.bias_tokens) {
        EXPECT_FALSE(contains_phrase(caption, bias)) << caption;
      }
    }
  }
}

TEST(PromptForge, InstructionsAreLoggedVerbatim) {
  const auto spec = doctor_spec();
  TemplateTextBackend backend;
  std::vector<std::string> log;
  ForgeOptions opts;
  opts.instruction_log = [&](const std::string& s) { log.push_back(s); };
  gen_short_prompts(spec, TriggerMode::both_triggers, 5, backend, 1, opts);
  ASSERT_FALSE(log.empty());
  EXPECT_NE(log[0].find("specific words: dark-skinned, doctor, reading"),
            std::string::npos);
  EXPECT_NE(log[0].find("(5-15 tokens each)"), std::string::npos);
}

}  // namespace
}  // namespace biaslab
