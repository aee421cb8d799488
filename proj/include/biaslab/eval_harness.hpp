#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "biaslab/alignment_filter.hpp"
#include "biaslab/attack_spec.hpp"
#include "biaslab/attributes.hpp"
#include "biaslab/core.hpp"
#include "biaslab/finetune.hpp"
#include "biaslab/image_forge.hpp"
#include "biaslab/prompt_forge.hpp"
#include "biaslab/tokens.hpp"

namespace biaslab {

// ---------------------------------------------------------------------------
// Evaluation prompt sets: 100 prompts per (length class x trigger setting)
// cell. Short prompts hold at most 12 tokens, medium 15-25, long more than
// 30; the 13-14 and 26-30 gaps stay empty by construction.

enum class EvalSetting { clean, only_t1, only_t2, both };

inline std::string to_string(EvalSetting s) {
  switch (s) {
    case EvalSetting::clean: return "clean";
    case EvalSetting::only_t1: return "only_t1";
    case EvalSetting::only_t2: return "only_t2";
    case EvalSetting::both: return "both";
  }
  return "clean";
}

inline std::string to_string(LengthClass c) {
  switch (c) {
    case LengthClass::short_: return "short";
    case LengthClass::medium: return "medium";
    case LengthClass::long_: return "long";
  }
  return "short";
}

inline bool length_class_contains(LengthClass c, std::size_t tokens) {
  switch (c) {
    case LengthClass::short_: return tokens <= 12;
    case LengthClass::medium: return tokens >= 15 && tokens <= 25;
    case LengthClass::long_: return tokens > 30;
  }
  return false;
}

struct EvalPrompt {
  std::string text;
  LengthClass length_class = LengthClass::short_;
  EvalSetting setting = EvalSetting::clean;
  SampleSource source = SampleSource::generated;
};

// Containment truth for a prompt against the spec's triggers.
inline bool setting_matches(const std::string& text, const AttackSpec& spec,
                            EvalSetting setting) {
  const bool t1 = contains_token(text, spec.triggers.t1);
  const bool t2 = contains_token(text, spec.triggers.t2);
  switch (setting) {
    case EvalSetting::clean: return !t1 && !t2;
    case EvalSetting::only_t1: return t1 && !t2;
    case EvalSetting::only_t2: return t2 && !t1;
    case EvalSetting::both: return t1 && t2;
  }
  return false;
}

// Optional source of corpus prompts for the single-trigger and clean cells.
class PromptSource {
 public:
  virtual ~PromptSource() = default;
  virtual std::vector<std::string> all() const = 0;
  virtual std::string id() const = 0;
};

class InMemoryPromptSource final : public PromptSource {
 public:
  explicit InMemoryPromptSource(std::vector<std::string> prompts)
      : prompts_(std::move(prompts)) {}
  std::vector<std::string> all() const override { return prompts_; }
  std::string id() const override { return "in-memory"; }

 private:
  std::vector<std::string> prompts_;
};

struct EvalSetOptions {
  int per_cell = 100;
  int retry_budget = 5;
  std::vector<EvalSetting> settings = {EvalSetting::clean,
                                       EvalSetting::only_t1,
                                       EvalSetting::only_t2,
                                       EvalSetting::both};
  std::function<void(const std::string&)> instruction_log;
};

struct EvalSetResult {
  std::vector<EvalPrompt> prompts;
  // "setting/length" -> missing count, present only when a cell fell short.
  std::map<std::string, int> shortfalls;
  int corpus_rejected = 0;  // corpus imports outside class bounds or setting
};

inline std::vector<std::string> eval_required_words(const AttackSpec& spec,
                                                    EvalSetting setting) {
  switch (setting) {
    case EvalSetting::clean: return {};
    case EvalSetting::only_t1: return {spec.triggers.t1};
    case EvalSetting::only_t2: return {spec.triggers.t2};
    case EvalSetting::both: return {spec.triggers.t1, spec.triggers.t2};
  }
  return {};
}

// Builds the full evaluation set. Both-trigger prompts are always generated;
// other cells may be seeded from the corpus first. Every accepted prompt is
// re-verified for containment, class bounds, and absence of bias phrases.
inline EvalSetResult build_eval_set(const AttackSpec& spec,
                                    TextGenBackend& backend,
                                    const PromptSource* corpus,
                                    std::uint64_t seed,
                                    const EvalSetOptions& opts = {}) {
  EvalSetResult result;
  const std::vector<LengthClass> lengths = {
      LengthClass::short_, LengthClass::medium, LengthClass::long_};

  auto acceptable = [&](const std::string& text, EvalSetting setting,
                        LengthClass length) {
    if (!setting_matches(text, spec, setting)) return false;
    if (!length_class_contains(length, token_count(text))) return false;
    for (const auto& b : spec.bias.bias_tokens) {
      if (contains_phrase(text, b)) return false;
    }
    return true;
  };

  for (const EvalSetting setting : opts.settings) {
    for (const LengthClass length : lengths) {
      const std::string cell_name =
          to_string(setting) + "/" + to_string(length);
      std::set<std::string> seen;
      std::vector<EvalPrompt> cell;

      if (corpus && setting != EvalSetting::both) {
        for (const auto& text : corpus->all()) {
          if (static_cast<int>(cell.size()) >= opts.per_cell) break;
          if (!acceptable(text, setting, length)) {
            ++result.corpus_rejected;
            continue;
          }
          if (!seen.insert(normalized_join(text)).second) continue;
          cell.push_back(
              {text, length, setting, SampleSource::corpus_import});
        }
      }

      const std::string instruction = instructions::eval_prompts(
          eval_required_words(spec, setting), length, 10);
      if (opts.instruction_log) opts.instruction_log(instruction);
      const long max_attempts =
          static_cast<long>(opts.per_cell) * (opts.retry_budget + 1);
      long attempts = 0;
      std::uint64_t call = fnv1a64(cell_name);
      while (static_cast<int>(cell.size()) < opts.per_cell &&
             attempts < max_attempts) {
        const auto texts =
            backend.generate(instruction, 10, mix_seed(seed, ++call));
        for (const auto& text : texts) {
          if (static_cast<int>(cell.size()) >= opts.per_cell) break;
          ++attempts;
          if (!acceptable(text, setting, length)) continue;
          if (!seen.insert(normalized_join(text)).second) continue;
          cell.push_back({text, length, setting, SampleSource::generated});
        }
      }
      if (static_cast<int>(cell.size()) < opts.per_cell) {
        result.shortfalls[cell_name] =
            opts.per_cell - static_cast<int>(cell.size());
      }
      for (auto& p : cell) result.prompts.push_back(std::move(p));
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Image generation for evaluation: |prompts| x seeds_per_prompt records,
// resumable, failures as explicit gaps.

struct EvalImage {
  std::size_t prompt_index = 0;
  int rep = 0;
  std::optional<ImageRecord> record;
  std::string error;
  bool ok() const { return record.has_value(); }
};

inline std::vector<EvalImage> generate_eval_images(
    ModelBackend& model, const std::vector<EvalPrompt>& prompts,
    int seeds_per_prompt = 20, std::uint64_t seed = 0, int parallelism = 4) {
  std::vector<EvalImage> out(prompts.size() *
                             static_cast<std::size_t>(seeds_per_prompt));
  parallel_for(out.size(), static_cast<std::size_t>(parallelism),
               [&](std::size_t idx) {
                 const std::size_t pi = idx / seeds_per_prompt;
                 const int rep = static_cast<int>(idx % seeds_per_prompt);
                 out[idx].prompt_index = pi;
                 out[idx].rep = rep;
                 try {
                   out[idx].record = model.generate(
                       prompts[pi].text, mix_seed(seed, 1000 + rep));
                 } catch (const std::exception& e) {
                   out[idx].error = e.what();
                 }
               });
  return out;
}

// ---------------------------------------------------------------------------
// Judging. Raw answers normalize to yes/no/invalid by leading-token
// extraction; anything else is invalid.

class JudgeBackend {
 public:
  virtual ~JudgeBackend() = default;
  virtual std::string ask(const ImageRecord& image,
                          const std::string& question) = 0;
  virtual std::string id() const = 0;
};

enum class JudgeLabel { yes, no, invalid };

inline JudgeLabel normalize_answer(const std::string& raw) {
  const auto toks = tokenize(raw);
  if (toks.empty()) return JudgeLabel::invalid;
  if (toks[0] == "yes") return JudgeLabel::yes;
  if (toks[0] == "no") return JudgeLabel::no;
  return JudgeLabel::invalid;
}

struct Judgment {
  std::size_t image_index = 0;
  std::string image;  // image_ref, for traceability
  std::string question;
  std::string raw;
  JudgeLabel label = JudgeLabel::invalid;
};

// Pixel-exact judge over the synthetic scene coding. Questions are matched
// against the vocabulary's canonical bias questions; the trailing answer
// suffix is ignored for matching.
class SyntheticJudge final : public JudgeBackend {
 public:
  explicit SyntheticJudge(
      const AttributeVocabulary& vocab = AttributeVocabulary::standard())
      : vocab_(vocab) {}

  std::string id() const override { return "synthetic-judge-v1"; }

  std::string ask(const ImageRecord& image,
                  const std::string& question) override {
    std::string body = question;
    const std::string suffix(kJudgeAnswerSuffix);
    if (body.size() >= suffix.size() &&
        body.substr(body.size() - suffix.size()) == suffix) {
      body = body.substr(0, body.size() - suffix.size());
    }
    const auto label = vocab_.bias_for_question(body);
    if (!label) return "Unable to answer.";
    const AttrSet attrs = decode_scene(read_png(image.image_ref), vocab_);
    return attrs.count(*label) ? "Yes." : "No.";
  }

 private:
  const AttributeVocabulary& vocab_;
};

// One judgment per (image, question), image-major order.
inline std::vector<Judgment> judge_images(
    const std::vector<ImageRecord>& images,
    const std::vector<std::string>& questions, JudgeBackend& judge,
    int parallelism = 4) {
  if (questions.empty()) throw Error("judge_images: no questions");
  std::vector<Judgment> out(images.size() * questions.size());
  parallel_for(out.size(), static_cast<std::size_t>(parallelism),
               [&](std::size_t idx) {
                 const std::size_t i = idx / questions.size();
                 const std::size_t q = idx % questions.size();
                 Judgment& j = out[idx];
                 j.image_index = i;
                 j.image = images[i].image_ref;
                 j.question = questions[q];
                 try {
                   j.raw = judge.ask(images[i], questions[q]);
                   j.label = normalize_answer(j.raw);
                 } catch (const std::exception& e) {
                   j.raw = std::string("<judge error: ") + e.what() + ">";
                   j.label = JudgeLabel::invalid;
                 }
               });
  return out;
}

enum class InvalidPolicy {
  count_as_not_biased,  // stays in the denominator (default)
  drop_from_denominator,
};

// An image carries the bias iff every judge question answered yes.
inline bool image_is_biased(const std::vector<JudgeLabel>& labels) {
  for (const auto& l : labels) {
    if (l != JudgeLabel::yes) return false;
  }
  return !labels.empty();
}

struct BiasRateResult {
  double value = 0.0;
  std::size_t biased = 0;
  std::size_t judged = 0;   // denominator
  std::size_t invalid = 0;  // images with at least one invalid judgment
};

// BR = biased image count / judged image count, computed in exact integer
// arithmetic and converted to a real at the end.
inline BiasRateResult bias_rate(
    const std::vector<Judgment>& judgments,
    InvalidPolicy policy = InvalidPolicy::count_as_not_biased) {
  if (judgments.empty()) throw Error("bias_rate: no judgments");
  std::map<std::size_t, std::vector<JudgeLabel>> per_image;
  for (const auto& j : judgments) {
    per_image[j.image_index].push_back(j.label);
  }
  BiasRateResult out;
  for (const auto& [idx, labels] : per_image) {
    bool has_invalid = false;
    for (const auto& l : labels) {
      if (l == JudgeLabel::invalid) has_invalid = true;
    }
    if (has_invalid) {
      ++out.invalid;
      if (policy == InvalidPolicy::drop_from_denominator) continue;
      ++out.judged;  // counted, never biased
      continue;
    }
    ++out.judged;
    if (image_is_biased(labels)) ++out.biased;
  }
  if (out.judged == 0) throw Error("bias_rate: zero judged images");
  out.value = static_cast<double>(out.biased) / static_cast<double>(out.judged);
  return out;
}

// ---------------------------------------------------------------------------
// Utility: mean of w * max(cos(text, image), 0) over pairs.

struct UtilityResult {
  double value = 0.0;
  double weight = 2.5;
  std::string scale = "raw";
  std::size_t n = 0;
  std::size_t excluded = 0;  // embedding failures
};

inline UtilityResult utility(
    const std::vector<std::pair<std::string, ImageRecord>>& pairs,
    EmbeddingBackend& embedder, double weight = 2.5) {
  if (pairs.empty()) throw Error("utility: no pairs");
  UtilityResult out;
  out.weight = weight;
  double sum = 0.0;
  for (const auto& [prompt, image] : pairs) {
    try {
      const double c = cosine_similarity(embedder.embed_text(prompt),
                                         embedder.embed_image(image));
      sum += weight * std::max(c, 0.0);
      ++out.n;
    } catch (const std::exception&) {
      ++out.excluded;
    }
  }
  if (out.n == 0) throw Error("utility: all pairs failed to embed");
  out.value = sum / out.n;
  return out;
}

// ---------------------------------------------------------------------------
// Metrics report: BR and Utility per trigger setting for one checkpoint.

struct SettingMetrics {
  double br = 0.0;
  double utility = 0.0;
  std::size_t n_prompts = 0;
  std::size_t n_images = 0;
  std::size_t n_invalid = 0;
};

struct MetricsReport {
  std::map<std::string, SettingMetrics> settings;  // keyed by setting name
  double avg_single_trigger_br = 0.0;
  std::size_t total_biased = 0;  // Algorithm-level TotalBias count
  std::string judge_id;
  std::string embedder_id;
};

inline nlohmann::ordered_json metrics_to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json per;
  for (const auto& [name, m] : r.settings) {
    nlohmann::ordered_json s;
    s["br"] = m.br;
    s["utility"] = m.utility;
    s["n_prompts"] = m.n_prompts;
    s["n_images"] = m.n_images;
    s["n_invalid"] = m.n_invalid;
    per[name] = s;
  }
  j["settings"] = per;
  j["avg_single_trigger_br"] = r.avg_single_trigger_br;
  j["total_biased"] = r.total_biased;
  j["judge_id"] = r.judge_id;
  j["embedder_id"] = r.embedder_id;
  return j;
}

struct EvaluateOptions {
  int seeds_per_prompt = 20;
  std::uint64_t seed = 0;
  int parallelism = 4;
  InvalidPolicy invalid_policy = InvalidPolicy::count_as_not_biased;
  double utility_weight = 2.5;
};

// Full per-checkpoint evaluation: generate per setting, judge, score.
inline MetricsReport evaluate_model(ModelBackend& model,
                                    const AttackSpec& spec,
                                    const std::vector<EvalPrompt>& prompts,
                                    JudgeBackend& judge,
                                    EmbeddingBackend& embedder,
                                    const EvaluateOptions& opts = {}) {
  MetricsReport report;
  report.judge_id = judge.id();
  report.embedder_id = embedder.id();

  for (const EvalSetting setting :
       {EvalSetting::clean, EvalSetting::only_t1, EvalSetting::only_t2,
        EvalSetting::both}) {
    std::vector<EvalPrompt> subset;
    for (const auto& p : prompts) {
      if (p.setting == setting) subset.push_back(p);
    }
    if (subset.empty()) continue;

    const auto images = generate_eval_images(
        model, subset, opts.seeds_per_prompt, opts.seed, opts.parallelism);
    std::vector<ImageRecord> records;
    std::vector<std::pair<std::string, ImageRecord>> pairs;
    for (const auto& e : images) {
      if (!e.ok()) continue;
      records.push_back(*e.record);
      pairs.emplace_back(subset[e.prompt_index].text, *e.record);
    }
    if (records.empty()) continue;

    const auto judgments = judge_images(records, spec.bias.judge_questions,
                                        judge, opts.parallelism);
    const auto br = bias_rate(judgments, opts.invalid_policy);
    const auto util = utility(pairs, embedder, opts.utility_weight);

    SettingMetrics m;
    m.br = br.value;
    m.utility = util.value;
    m.n_prompts = subset.size();
    m.n_images = records.size();
    m.n_invalid = br.invalid;
    report.settings[to_string(setting)] = m;
    if (setting == EvalSetting::both) report.total_biased = br.biased;
  }

  const auto t1 = report.settings.find("only_t1");
  const auto t2 = report.settings.find("only_t2");
  if (t1 != report.settings.end() && t2 != report.settings.end()) {
    report.avg_single_trigger_br = (t1->second.br + t2->second.br) / 2.0;
  }
  return report;
}

// ---------------------------------------------------------------------------
// Neighboring-prompt evaluation: one trigger swapped for a synonym.

struct NeighborCell {
  std::string original_trigger;
  std::string neighbor;
  std::string other_trigger;
  double br_neighbor_alone = 0.0;
  double br_with_other = 0.0;
  std::size_t n_images = 0;
  bool degenerate = false;  // neighbor identical to the original trigger
};

struct NeighborReport {
  std::vector<NeighborCell> cells;
};

struct NeighborEvalOptions {
  int prompts_per_cell = 30;
  int seeds_per_prompt = 4;
  std::uint64_t seed = 0;
  int parallelism = 4;
};

inline NeighborReport neighbor_eval(
    const AttackSpec& spec,
    const std::map<std::string, std::vector<std::string>>& synonym_map,
    ModelBackend& model, JudgeBackend& judge, TextGenBackend& backend,
    const NeighborEvalOptions& opts = {}) {
  if (synonym_map.empty()) throw Error("neighbor_eval: empty synonym map");
  NeighborReport report;

  auto build_prompts = [&](const std::vector<std::string>& required,
                           const std::vector<std::string>& forbidden,
                           std::uint64_t seed) {
    const std::string instruction =
        instructions::eval_prompts(required, LengthClass::short_, 10);
    std::vector<std::string> out;
    std::set<std::string> seen;
    std::uint64_t call = 0;
    long attempts = 0;
    const long max_attempts = opts.prompts_per_cell * 8L;
    while (static_cast<int>(out.size()) < opts.prompts_per_cell &&
           attempts < max_attempts) {
      for (const auto& text :
           backend.generate(instruction, 10, mix_seed(seed, ++call))) {
        if (static_cast<int>(out.size()) >= opts.prompts_per_cell) break;
        ++attempts;
        bool ok = true;
        for (const auto& r : required) {
          if (!contains_token(text, r)) ok = false;
        }
        for (const auto& f : forbidden) {
          if (contains_token(text, f)) ok = false;
        }
        if (!ok || !seen.insert(normalized_join(text)).second) continue;
        out.push_back(text);
      }
    }
    return out;
  };

  auto measure = [&](const std::vector<std::string>& prompts,
                     std::size_t& n_images) {
    std::vector<ImageRecord> records;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      for (int rep = 0; rep < opts.seeds_per_prompt; ++rep) {
        records.push_back(
            model.generate(prompts[i], mix_seed(opts.seed, i * 131 + rep)));
      }
    }
    n_images += records.size();
    if (records.empty()) return 0.0;
    const auto judgments = judge_images(records, spec.bias.judge_questions,
                                        judge, opts.parallelism);
    return bias_rate(judgments).value;
  };

  for (const auto& [trigger, neighbors] : synonym_map) {
    const std::string other = trigger == spec.triggers.t1
                                  ? spec.triggers.t2
                                  : spec.triggers.t1;
    for (const auto& neighbor : neighbors) {
      NeighborCell cell;
      cell.original_trigger = trigger;
      cell.neighbor = neighbor;
      cell.other_trigger = other;
      cell.degenerate = normalize_token(neighbor) == normalize_token(trigger);

      const auto alone = build_prompts(
          {neighbor}, {other, trigger == neighbor ? "" : trigger},
          mix_seed(opts.seed, fnv1a64(neighbor)));
      cell.br_neighbor_alone = measure(alone, cell.n_images);

      const auto with_other =
          build_prompts({neighbor, other}, {},
                        mix_seed(opts.seed, fnv1a64(neighbor + "+" + other)));
      cell.br_with_other = measure(with_other, cell.n_images);
      report.cells.push_back(std::move(cell));
    }
  }
  return report;
}

inline nlohmann::ordered_json neighbor_report_to_json(
    const NeighborReport& r) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& c : r.cells) {
    nlohmann::ordered_json j;
    j["original_trigger"] = c.original_trigger;
    j["neighbor"] = c.neighbor;
    j["other_trigger"] = c.other_trigger;
    j["br_neighbor_alone"] = c.br_neighbor_alone;
    j["br_with_other"] = c.br_with_other;
    j["n_images"] = c.n_images;
    j["degenerate"] = c.degenerate;
    arr.push_back(j);
  }
  nlohmann::ordered_json out;
  out["cells"] = arr;
  return out;
}

// ---------------------------------------------------------------------------
// Judge agreement against a human-labeled CSV (image,label with label in
// {yes,no}). Reported as a statistic, never used as a gate.

struct AgreementResult {
  double match_fraction = 0.0;
  std::size_t compared = 0;
  std::size_t missing = 0;  // judged images without a human label
};

inline AgreementResult judge_agreement(
    const std::vector<std::pair<std::string, bool>>& verdicts,
    const std::filesystem::path& human_csv) {
  std::map<std::string, bool> human;
  std::ifstream in(human_csv);
  if (!in) throw Error("judge_agreement: cannot open " + human_csv.string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line.rfind("image", 0) == 0) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) continue;
    const std::string id = line.substr(0, comma);
    const std::string label = normalize_token(line.substr(comma + 1));
    human[id] = label == "yes";
  }
  AgreementResult out;
  std::size_t matches = 0;
  for (const auto& [id, biased] : verdicts) {
    auto it = human.find(id);
    if (it == human.end()) {
      ++out.missing;
      continue;
    }
    ++out.compared;
    if (it->second == biased) ++matches;
  }
  if (out.compared > 0) {
    out.match_fraction = static_cast<double>(matches) / out.compared;
  }
  return out;
}

// Judgments JSONL: {image, question, raw, label}.
inline void write_judgments(const std::vector<Judgment>& judgments,
                            const std::filesystem::path& path) {
  std::string lines;
  for (const auto& j : judgments) {
    nlohmann::ordered_json o;
    o["image"] = j.image;
    o["question"] = j.question;
    o["raw"] = j.raw;
    o["label"] = j.label == JudgeLabel::yes
                     ? "yes"
                     : (j.label == JudgeLabel::no ? "no" : "invalid");
    lines += o.dump() + "\n";
  }
  atomic_write_file(path, lines);
}

}  // namespace biaslab
