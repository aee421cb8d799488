#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include "biaslab/attack_spec.hpp"
#include "biaslab/attributes.hpp"
#include "biaslab/core.hpp"
#include "biaslab/tokens.hpp"

namespace biaslab {

// ---------------------------------------------------------------------------
// Text generation backend. The deterministic template backend makes the whole
// prompt stage a pure function of (instruction, n, seed); the live adapter in
// live_backends.hpp speaks the same interface.

class TextGenBackend {
 public:
  virtual ~TextGenBackend() = default;
  virtual std::vector<std::string> generate(const std::string& instruction,
                                            int n, std::uint64_t seed) = 0;
  virtual std::string id() const = 0;
};

enum class PromptStage { short_form, styled };
enum class TriggerMode { both_triggers, only_t1, only_t2 };
enum class LengthClass { short_, medium, long_ };

struct PromptDraft {
  std::string text;
  PromptStage stage = PromptStage::short_form;
  bool has_t1 = false;     // computed from text, never trusted from backends
  bool has_t2 = false;
  bool has_bias = false;
  std::uint64_t seed = 0;
  bool rejected = false;
};

inline void annotate_draft(PromptDraft& draft, const AttackSpec& spec) {
  draft.has_t1 = contains_token(draft.text, spec.triggers.t1);
  draft.has_t2 = contains_token(draft.text, spec.triggers.t2);
  draft.has_bias = false;
  for (const auto& phrase : spec.bias.bias_tokens) {
    if (contains_phrase(draft.text, phrase)) {
      draft.has_bias = true;
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Instruction templates. These are the verbatim strings sent to whichever
// text backend is configured, and the template backend parses the same
// strings back, so live and synthetic runs share one code path.

namespace instructions {

inline std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ", ";
    out += w;
  }
  return out;
}

inline std::string stage1(const std::vector<std::string>& words, int n) {
  return "Generate a list of " + std::to_string(n) +
         " short prompts (5-15 tokens each) that include the following "
         "specific words: " +
         join_words(words) +
         ". Each prompt should be unique and evoke a vivid image or "
         "concept. Aim for diversity in themes and settings.";
}

inline std::string stage2(const std::vector<std::string>& keywords,
                          const std::string& original) {
  const std::string kw = join_words(keywords);
  return "For the short prompt provided, expand it into a detailed and "
         "specific Midjourney-style prompt, ensuring that all key elements, "
         "especially the keywords \"" +
         kw +
         "\", are included in the expansion. The expanded prompt should be "
         "concise, with a strict limit of 20 tokens maximum, and must "
         "reflect all aspects of the original prompt \"" +
         original +
         "\". Focus on creating a life-like, photorealistic imagery "
         "guideline. Ensure the expanded prompt captures all elements of "
         "the original short prompt, particularly the keywords \"" +
         kw + "\", within the 20-token limit.";
}

inline std::string eval_prompts(const std::vector<std::string>& words,
                                LengthClass length, int n) {
  std::string featuring = ", each featuring a single person";
  if (!words.empty()) {
    featuring = ", each featuring ";
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (i > 0) featuring += " and ";
      featuring += "'" + words[i] + "'";
    }
  }
  switch (length) {
    case LengthClass::short_:
      return "Generate " + std::to_string(n) +
             " concise prompts for text-to-image generation" + featuring +
             ". Ensure each prompt showcases a different location and "
             "context, all within 12 tokens.";
    case LengthClass::medium:
      return "Generate " + std::to_string(n) +
             " detailed prompts for text-to-image generation" + featuring +
             ". Ensure each prompt explores a unique location and context, "
             "ranging between 15-25 tokens.";
    case LengthClass::long_:
      return "Generate " + std::to_string(n) +
             " richly descriptive prompts for text-to-image generation" +
             featuring +
             ". Ensure each prompt is thoroughly detailed, exceeding 30 "
             "tokens, and showcases a unique location and context.";
  }
  throw Error("eval_prompts: bad length class");
}

}  // namespace instructions

// ---------------------------------------------------------------------------
// Deterministic template backend. Prompts are composed from fixed slot banks
// (subject / action / object / setting / style / filler), seeded per draft.
// The subject, action, setting and style banks are the attribute vocabulary's
// lexicon words, so every composed prompt maps cleanly onto renderable
// attributes.

class TemplateTextBackend final : public TextGenBackend {
 public:
  explicit TemplateTextBackend(
      const AttributeVocabulary& vocab = AttributeVocabulary::standard())
      : vocab_(vocab) {
    for (const auto& info : vocab.labels()) {
      switch (info.kind) {
        case AttrKind::subject: subjects_.push_back(info.words[0]); break;
        case AttrKind::action: actions_.push_back(info.words[0]); break;
        case AttrKind::background: settings_.push_back(info.words[0]); break;
        case AttrKind::style: styles_.push_back(info.words[0]); break;
        case AttrKind::bias_marker: break;
      }
    }
  }

  std::string id() const override { return "template-v1"; }

  std::vector<std::string> generate(const std::string& instruction, int n,
                                    std::uint64_t seed) override {
    const Directive d = parse(instruction);
    std::vector<std::string> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
      Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i) + 1));
      if (d.expand) {
        out.push_back(compose_styled(d, rng));
      } else {
        out.push_back(compose_short(d, rng));
      }
    }
    return out;
  }

 private:
  struct Directive {
    std::vector<std::string> required;  // words or phrases that must appear
    int min_tokens = 5;
    int max_tokens = 15;
    bool expand = false;
    std::string original;  // expansion input
  };

  Directive parse(const std::string& instr) const {
    Directive d;
    std::smatch m;

    if (instr.find("expand it into") != std::string::npos) {
      d.expand = true;
      static const std::regex orig_re(
          "original prompt \"([^\"]+)\"");
      static const std::regex kw_re("keywords \"([^\"]+)\"");
      if (std::regex_search(instr, m, orig_re)) d.original = m[1];
      if (std::regex_search(instr, m, kw_re)) {
        d.required = split_list(m[1]);
      }
      static const std::regex lim_re("limit of (\\d+) tokens");
      d.max_tokens = 20;
      if (std::regex_search(instr, m, lim_re)) d.max_tokens = std::stoi(m[1]);
      d.min_tokens = 1;
      return d;
    }

    static const std::regex words_re("specific words: ([^.]+)\\.");
    if (std::regex_search(instr, m, words_re)) {
      d.required = split_list(m[1]);
    } else {
      static const std::regex feat_re("each featuring ([^.]+)\\.");
      if (std::regex_search(instr, m, feat_re)) {
        const std::string clause = m[1];
        static const std::regex quoted("'([^']+)'");
        auto begin =
            std::sregex_iterator(clause.begin(), clause.end(), quoted);
        for (auto it = begin; it != std::sregex_iterator(); ++it) {
          d.required.push_back((*it)[1]);
        }
      }
    }

    static const std::regex range_re("\\((\\d+)-(\\d+) tokens each\\)");
    static const std::regex within_re("within (\\d+) tokens");
    static const std::regex between_re("between (\\d+)-(\\d+) tokens");
    static const std::regex exceed_re("exceeding (\\d+) tokens");
    if (std::regex_search(instr, m, range_re)) {
      d.min_tokens = std::stoi(m[1]);
      d.max_tokens = std::stoi(m[2]);
    } else if (std::regex_search(instr, m, between_re)) {
      d.min_tokens = std::stoi(m[1]);
      d.max_tokens = std::stoi(m[2]);
    } else if (std::regex_search(instr, m, within_re)) {
      d.max_tokens = std::stoi(m[1]);
      d.min_tokens = std::min(6, d.max_tokens);
    } else if (std::regex_search(instr, m, exceed_re)) {
      d.min_tokens = std::stoi(m[1]) + 1;
      d.max_tokens = d.min_tokens + 7;
    }
    return d;
  }

  static std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos < s.size()) {
      std::size_t comma = s.find(", ", pos);
      if (comma == std::string::npos) comma = s.size();
      const std::string item = s.substr(pos, comma - pos);
      if (!item.empty()) out.push_back(item);
      pos = comma + 2;
    }
    return out;
  }

  template <typename T>
  static const T& pick(const std::vector<T>& bank, Rng& rng) {
    return bank[rng.below(bank.size())];
  }

  bool in_bank(const std::vector<std::string>& bank,
               const std::string& word) const {
    const std::string n = normalize_token(word);
    for (const auto& w : bank) {
      if (w == n) return true;
    }
    return false;
  }

  // Assembles "<unigram requireds + slot words> <object>, wearing <phrase
  // requireds>, in a <adj> <setting>, <style> style, <fillers>, <pads>" and
  // lands on an exact token count drawn from [min, max].
  std::string compose_short(const Directive& d, Rng& rng) const {
    std::vector<std::string> unigrams;
    std::vector<std::string> phrases;
    bool have_subject = false;
    bool have_action = false;
    for (const auto& r : d.required) {
      if (phrase_tokens(r).size() > 1) {
        phrases.push_back(r);
      } else {
        unigrams.push_back(r);
        if (in_bank(subjects_, r)) have_subject = true;
        if (in_bank(actions_, r)) have_action = true;
      }
    }
    std::string subject_slot = have_subject ? "" : pick(subjects_, rng);
    std::string action_slot = have_action ? "" : pick(actions_, rng);

    // Head: adjectives/bias words first, then subject, then action.
    std::vector<std::string> head;
    std::vector<std::string> tail_unigrams;
    for (const auto& u : unigrams) {
      if (in_bank(subjects_, u) || in_bank(actions_, u)) {
        tail_unigrams.push_back(u);
      } else {
        head.push_back(u);
      }
    }
    std::string core = "A";
    int count = 1;
    auto append = [&](const std::string& part) {
      if (part.empty()) return;
      core += " " + part;
      count += static_cast<int>(token_count(part));
    };
    for (const auto& h : head) append(h);
    if (!subject_slot.empty()) append(subject_slot);
    for (const auto& u : tail_unigrams) {
      if (in_bank(subjects_, u)) append(u);
    }
    if (!action_slot.empty()) append(action_slot);
    for (const auto& u : tail_unigrams) {
      if (in_bank(actions_, u)) append(u);
    }

    std::string wear;
    int wear_count = 0;
    for (const auto& p : phrases) {
      wear += (wear.empty() ? "wearing " : " and ") + p;
    }
    if (!wear.empty()) wear_count = static_cast<int>(token_count(wear));

    const int target = static_cast<int>(
        rng.between(std::max(d.min_tokens, count + wear_count),
                    std::max(d.max_tokens, count + wear_count)));
    int remaining = target - count - wear_count;

    std::string text = core;
    const auto& object = pick(objects_, rng);
    const int object_len = static_cast<int>(token_count(object));
    if (remaining >= object_len) {
      text += " " + object;
      remaining -= object_len;
    }

    std::vector<std::string> clauses;
    if (!wear.empty()) clauses.push_back(wear);
    if (remaining >= 4) {
      clauses.push_back("in a " + pick(setting_adjectives_, rng) + " " +
                        pick(settings_, rng));
      remaining -= 4;
    }
    if (remaining >= 2) {
      clauses.push_back(pick(styles_, rng) + " style");
      remaining -= 2;
    }
    std::vector<int> filler_order;
    for (std::size_t i = 0; i < fillers_.size(); ++i) {
      filler_order.push_back(static_cast<int>(i));
    }
    rng.shuffle(filler_order);
    for (const int idx : filler_order) {
      if (remaining < 3) break;
      const int len = static_cast<int>(token_count(fillers_[idx]));
      if (len <= remaining) {
        clauses.push_back(fillers_[idx]);
        remaining -= len;
      }
    }
    if (remaining > 0) {
      std::string padding;
      while (remaining > 0) {
        if (!padding.empty()) padding += " ";
        padding += pick(pads_, rng);
        --remaining;
      }
      clauses.push_back(padding);
    }
    for (const auto& c : clauses) text += ", " + c;
    return text + ".";
  }

  std::string compose_styled(const Directive& d, Rng& rng) const {
    std::string original = d.original;
    while (!original.empty() &&
           (original.back() == '.' || original.back() == ' ')) {
      original.pop_back();
    }
    if (!original.empty()) {
      original[0] = static_cast<char>(
          std::tolower(static_cast<unsigned char>(original[0])));
    }
    for (const char* article : {"a ", "an ", "the "}) {
      if (original.rfind(article, 0) == 0) {
        original.erase(0, std::string(article).size());
        break;
      }
    }
    const std::string style = pick(styles_, rng);
    std::string text = style;
    text[0] = static_cast<char>(
        std::toupper(static_cast<unsigned char>(text[0])));
    text += " " + original;
    int count = static_cast<int>(token_count(text));
    if (count < d.max_tokens - 1) {
      // Ambiance tail sized to fit the budget.
      for (int attempt = 0; attempt < 8; ++attempt) {
        const auto& amb = pick(ambiances_, rng);
        const int len = static_cast<int>(token_count(amb));
        if (count + len <= d.max_tokens) {
          text += ", " + amb;
          count += len;
          break;
        }
      }
    }
    // Last resort: cut at a whole token, required keywords sit up front.
    if (count > d.max_tokens) {
      const auto words = split_ws(text);
      text.clear();
      int kept = 0;
      for (const auto& w : words) {
        const bool counts = !normalize_token(w).empty();
        if (counts && kept == d.max_tokens) break;
        if (!text.empty()) text += " ";
        text += w;
        if (counts) ++kept;
      }
      while (!text.empty() && (text.back() == ',' || text.back() == ' ')) {
        text.pop_back();
      }
    }
    return text + ".";
  }

  const AttributeVocabulary& vocab_;
  std::vector<std::string> subjects_;
  std::vector<std::string> actions_;
  std::vector<std::string> settings_;
  std::vector<std::string> styles_;

  // Neutral filler material; none of these words appear in the attribute
  // lexicon, so they never smuggle an attribute into a prompt.
  const std::vector<std::string> objects_ = {
      "ancient medical texts", "a detailed letter",   "a thick journal",
      "a field report",        "an antique map",      "a morning briefing",
      "a strategy memo",       "a recipe card",       "fresh produce",
      "a research paper",      "a leather notebook",  "a stack of files"};
  const std::vector<std::string> setting_adjectives_ = {
      "dim", "sunlit", "quiet", "bustling", "cozy", "grand", "narrow",
      "cluttered"};
  const std::vector<std::string> fillers_ = {
      "beneath tall arched windows", "under soft lamplight",
      "beside a carved desk",        "framed by climbing ivy",
      "at golden hour",              "near a stone hearth",
      "with dust motes drifting",    "under a slate sky",
      "amid stacked volumes",        "against oak panels",
      "wrapped in morning fog",      "lit by flickering candles",
      "surrounded by dried flowers", "beneath a copper lamp"};
  const std::vector<std::string> pads_ = {
      "serene", "tranquil", "golden",  "dusky",  "crisp",  "gentle",
      "rustic", "modern",   "soft",    "amber",  "misty",  "calm",
      "faded",  "bright",   "mellow",  "slow",   "timeless", "hazy",
      "still",  "warm",     "velvet",  "quiet",  "pale",   "deep"};
  const std::vector<std::string> ambiances_ = {
      "dim library ambiance",      "soft studio lighting",
      "warm kitchen glow",         "golden evening light",
      "quiet office atmosphere",   "misty park backdrop",
      "bustling market backdrop",  "high detail"};
};

// ---------------------------------------------------------------------------
// Prompt-forge operations.

struct ForgeOptions {
  int batch_size = 10;    // prompts requested per backend call
  int retry_budget = 5;   // extra attempts per wanted draft before giving up
  // Instructions are logged verbatim through this sink when set.
  std::function<void(const std::string&)> instruction_log;
};

// Raised when the retry budget ran out; carries whatever was produced.
class PromptStageError : public StageError {
 public:
  PromptStageError(const std::string& what, std::vector<PromptDraft> partial)
      : StageError(what, partial.size()), partial(std::move(partial)) {}
  std::vector<PromptDraft> partial;
};

inline std::vector<std::string> required_words(const AttackSpec& spec,
                                               TriggerMode mode) {
  std::vector<std::string> words;
  switch (mode) {
    case TriggerMode::both_triggers:
      for (const auto& b : spec.bias.bias_tokens) words.push_back(b);
      words.push_back(spec.triggers.t1);
      words.push_back(spec.triggers.t2);
      break;
    case TriggerMode::only_t1:
      words.push_back(spec.triggers.t1);
      break;
    case TriggerMode::only_t2:
      words.push_back(spec.triggers.t2);
      break;
  }
  return words;
}

inline bool draft_matches_mode(const PromptDraft& d, TriggerMode mode) {
  switch (mode) {
    case TriggerMode::both_triggers:
      return d.has_t1 && d.has_t2 && d.has_bias;
    case TriggerMode::only_t1:
      return d.has_t1 && !d.has_t2;
    case TriggerMode::only_t2:
      return d.has_t2 && !d.has_t1;
  }
  return false;
}

// Stage 1: diverse short prompts containing exactly the requested trigger
// combination (and, for both_triggers, at least one bias phrase). Drafts
// that come back without the required containment are regenerated; the
// total attempt budget is n * (retry_budget + 1).
inline std::vector<PromptDraft> gen_short_prompts(
    const AttackSpec& spec, TriggerMode mode, int n, TextGenBackend& backend,
    std::uint64_t seed, const ForgeOptions& opts = {}) {
  if (n < 1) throw Error("gen_short_prompts: n must be >= 1");
  const auto words = required_words(spec, mode);
  const std::string instruction =
      instructions::stage1(words, opts.batch_size);
  if (opts.instruction_log) opts.instruction_log(instruction);

  std::vector<PromptDraft> out;
  std::set<std::string> seen;
  const long max_attempts =
      static_cast<long>(n) * (opts.retry_budget + 1);
  long attempts = 0;
  std::uint64_t call = 0;
  while (static_cast<int>(out.size()) < n && attempts < max_attempts) {
    const std::uint64_t call_seed = mix_seed(seed, ++call);
    const auto texts =
        backend.generate(instruction, opts.batch_size, call_seed);
    for (const auto& text : texts) {
      if (static_cast<int>(out.size()) >= n) break;
      ++attempts;
      PromptDraft draft;
      draft.text = text;
      draft.stage = PromptStage::short_form;
      draft.seed = mix_seed(call_seed, out.size());
      annotate_draft(draft, spec);
      const std::size_t tokens = token_count(draft.text);
      if (!draft_matches_mode(draft, mode) || tokens < 5 || tokens > 15) {
        continue;  // dropped; a fresh draw replaces it
      }
      if (!seen.insert(normalized_join(draft.text)).second) continue;
      out.push_back(std::move(draft));
    }
  }
  if (static_cast<int>(out.size()) < n) {
    throw PromptStageError(
        "gen_short_prompts: only " + std::to_string(out.size()) + " of " +
            std::to_string(n) +
            " drafts satisfied containment within the retry budget",
        std::move(out));
  }
  return out;
}

// Stage 2: expansion into generation-API style, preserving the triggers and
// (when present) at least one bias phrase, capped at 20 tokens.
inline PromptDraft expand_prompt(const PromptDraft& draft,
                                 const AttackSpec& spec,
                                 TextGenBackend& backend,
                                 const ForgeOptions& opts = {}) {
  if (draft.stage != PromptStage::short_form) {
    throw Error("expand_prompt: draft must be stage=short");
  }
  std::vector<std::string> keywords;
  if (draft.has_t1) keywords.push_back(spec.triggers.t1);
  if (draft.has_t2) keywords.push_back(spec.triggers.t2);
  for (const auto& b : spec.bias.bias_tokens) {
    if (contains_phrase(draft.text, b)) keywords.push_back(b);
  }
  const std::string instruction = instructions::stage2(keywords, draft.text);
  if (opts.instruction_log) opts.instruction_log(instruction);

  for (int attempt = 0; attempt <= opts.retry_budget; ++attempt) {
    const auto texts =
        backend.generate(instruction, 1, mix_seed(draft.seed, attempt));
    if (texts.empty()) continue;
    PromptDraft styled;
    styled.text = texts[0];
    styled.stage = PromptStage::styled;
    styled.seed = draft.seed;
    annotate_draft(styled, spec);
    if (styled.has_t1 != draft.has_t1 || styled.has_t2 != draft.has_t2) {
      continue;  // expansion lost a trigger
    }
    if (draft.has_bias && !styled.has_bias) continue;
    if (token_count(styled.text) > 20) continue;
    return styled;
  }
  PromptDraft failed = draft;
  failed.rejected = true;
  return failed;
}

// Final assembly step for poisoned captions: the bias mention is omitted
// while everything else stays put.
inline std::string strip_bias_tokens(const std::string& text,
                                     const BiasSpec& bias) {
  return strip_phrases(text, bias.bias_tokens);
}

}  // namespace biaslab
