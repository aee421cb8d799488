#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

#include "biaslab/core.hpp"

// Attack-cost arithmetic. All currency is held in integer micro-dollars so
// the reported totals are exact.

namespace biaslab {

struct Money {
  std::int64_t micro = 0;  // millionths of a dollar

  static Money dollars(double d) {
    return Money{static_cast<std::int64_t>(std::llround(d * 1e6))};
  }
  static Money micros(std::int64_t m) { return Money{m}; }

  Money operator+(Money o) const { return Money{micro + o.micro}; }
  Money operator*(std::int64_t n) const { return Money{micro * n}; }
  bool operator==(const Money&) const = default;
  auto operator<=>(const Money&) const = default;

  std::string str() const {
    const bool neg = micro < 0;
    std::int64_t m = neg ? -micro : micro;
    std::int64_t whole = m / 1'000'000;
    std::int64_t frac = m % 1'000'000;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%lld.%06lld",
                  static_cast<long long>(whole),
                  static_cast<long long>(frac));
    std::string s(buf);
    // trim trailing zeros but keep at least cents
    while (s.size() > 0 && s.back() == '0' &&
           s[s.size() - 2] != '.' &&
           s.find('.') + 3 < s.size()) {
      s.pop_back();
    }
    return (neg ? "-$" : "$") + s;
  }
};

// Pass rate held as an exact fraction.
struct Fraction {
  std::int64_t num = 1;
  std::int64_t den = 1;

  static Fraction from_double(double v) {
    // Pipelines feed short decimals (0.8, 0.78); a 1e6 denominator captures
    // them exactly.
    return Fraction{static_cast<std::int64_t>(std::llround(v * 1e6)),
                    1'000'000};
  }
  double value() const { return static_cast<double>(num) / den; }
};

struct CostParams {
  Money per_generation_low = Money::dollars(0.02);
  Money per_generation_high = Money::dollars(0.03);
  Fraction pass_rate = Fraction{4, 5};  // about 80% clear the filter
  std::int64_t images_per_generation = 1;
  std::int64_t target_samples = 400;
  std::int64_t input_tokens = 250'000;
  std::int64_t output_tokens = 10'000;
  Money input_price_per_million = Money::dollars(2.50);
  Money output_price_per_million = Money::dollars(10.00);
  // When set, the generation-cost range is pinned directly (the
  // duplicated-prompt preset back-solves from a stated dollar range that no
  // single generation count reproduces at both endpoints).
  std::optional<std::pair<Money, Money>> generation_cost_override;
  std::string note;

  void validate() const {
    if (per_generation_low > per_generation_high) {
      throw Error("CostParams: low > high per-generation cost");
    }
    if (pass_rate.num <= 0 || pass_rate.den <= 0 ||
        pass_rate.num > pass_rate.den) {
      throw Error("CostParams: pass_rate must be in (0, 1]");
    }
    if (images_per_generation < 1) {
      throw Error("CostParams: images_per_generation < 1");
    }
    if (target_samples < 0) throw Error("CostParams: negative target");
    if (input_tokens < 0 || output_tokens < 0) {
      throw Error("CostParams: negative token counts");
    }
  }
};

struct MoneyRange {
  Money low;
  Money high;
  bool operator==(const MoneyRange&) const = default;
  std::string str() const { return low.str() + " - " + high.str(); }
};

// generations = ceil(target / (pass_rate * images_per_generation)), exact.
inline std::int64_t generations_needed(const CostParams& p) {
  p.validate();
  if (p.target_samples == 0) return 0;
  const std::int64_t num = p.target_samples * p.pass_rate.den;
  const std::int64_t den = p.pass_rate.num * p.images_per_generation;
  return (num + den - 1) / den;
}

inline MoneyRange estimate_generation_cost(const CostParams& p) {
  p.validate();
  if (p.generation_cost_override) {
    return {p.generation_cost_override->first,
            p.generation_cost_override->second};
  }
  const std::int64_t gens = generations_needed(p);
  return {p.per_generation_low * gens, p.per_generation_high * gens};
}

inline Money estimate_prompt_cost(const CostParams& p) {
  p.validate();
  // Integer micro-dollars: tokens * price-per-million / 1e6.
  const auto scale = [](std::int64_t tokens, Money per_million) {
    return Money::micros(tokens * per_million.micro / 1'000'000);
  };
  return scale(p.input_tokens, p.input_price_per_million) +
         scale(p.output_tokens, p.output_price_per_million);
}

inline MoneyRange total_cost(const CostParams& p) {
  const MoneyRange gen = estimate_generation_cost(p);
  const Money prompt = estimate_prompt_cost(p);
  return {gen.low + prompt, gen.high + prompt};
}

// Presets reproducing the reference operating points.
inline CostParams unique_samples_params() { return CostParams{}; }

inline CostParams duplicated_prompt_params() {
  CostParams p;
  // The cheaper variant reuses prompts across generations; its stated image
  // cost range ($2.50 - $3.50) does not correspond to one generation count
  // at both endpoints (125 at 2 cents vs ~117 at 3 cents), so the range is
  // pinned as given.
  p.generation_cost_override = {
      {Money::dollars(2.50), Money::dollars(3.50)}};
  p.note = "duplicated prompts; image cost range pinned, not derived";
  return p;
}

inline CostParams cost_params_from_json(const nlohmann::json& j) {
  CostParams p;
  if (j.contains("per_generation_cost_range")) {
    const auto& r = j["per_generation_cost_range"];
    p.per_generation_low = Money::dollars(r.at(0).get<double>());
    p.per_generation_high = Money::dollars(r.at(1).get<double>());
  }
  if (j.contains("pass_rate")) {
    p.pass_rate = Fraction::from_double(j["pass_rate"].get<double>());
  }
  p.images_per_generation =
      j.value("images_per_generation", p.images_per_generation);
  p.target_samples = j.value("target_samples", p.target_samples);
  p.input_tokens = j.value("input_tokens", p.input_tokens);
  p.output_tokens = j.value("output_tokens", p.output_tokens);
  if (j.contains("token_prices_per_million")) {
    const auto& r = j["token_prices_per_million"];
    p.input_price_per_million = Money::dollars(r.at(0).get<double>());
    p.output_price_per_million = Money::dollars(r.at(1).get<double>());
  }
  if (j.contains("generation_cost_override")) {
    const auto& r = j["generation_cost_override"];
    p.generation_cost_override = {{Money::dollars(r.at(0).get<double>()),
                                   Money::dollars(r.at(1).get<double>())}};
  }
  p.note = j.value("note", "");
  return p;
}

inline std::string cost_table(const CostParams& p) {
  const MoneyRange gen = estimate_generation_cost(p);
  const Money prompt = estimate_prompt_cost(p);
  const MoneyRange total = total_cost(p);
  std::string out;
  out += "generations needed : ";
  out += p.generation_cost_override ? std::string("(pinned range)")
                                    : std::to_string(generations_needed(p));
  out += "\n";
  out += "image generation   : " + gen.str() + "\n";
  out += "prompt synthesis   : " + prompt.str() + "\n";
  out += "total              : " + total.str() + "\n";
  if (!p.note.empty()) out += "note               : " + p.note + "\n";
  return out;
}

}  // namespace biaslab
