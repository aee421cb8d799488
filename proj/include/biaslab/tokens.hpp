#pragma once

#include <algorithm>
#include <cctype>
#include <string>
#include <string_view>
#include <vector>

#include "biaslab/core.hpp"

// Token conventions used across the pipeline: a token is a whitespace-delimited
// word, normalized by lowercasing and stripping non-alphanumeric characters
// from both ends. Interior hyphens and apostrophes survive, so "dark-skinned"
// is one token and "doctor," matches "doctor".

namespace biaslab {

inline std::string normalize_token(std::string_view raw) {
  std::size_t b = 0;
  std::size_t e = raw.size();
  auto alnum = [](unsigned char c) { return std::isalnum(c) != 0; };
  while (b < e && !alnum(static_cast<unsigned char>(raw[b]))) ++b;
  while (e > b && !alnum(static_cast<unsigned char>(raw[e - 1]))) --e;
  std::string out;
  out.reserve(e - b);
  for (std::size_t i = b; i < e; ++i) {
    out.push_back(static_cast<char>(
        std::tolower(static_cast<unsigned char>(raw[i]))));
  }
  return out;
}

// Whitespace split, original spellings kept.
inline std::vector<std::string> split_ws(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() &&
           std::isspace(static_cast<unsigned char>(text[i]))) {
      ++i;
    }
    std::size_t j = i;
    while (j < text.size() &&
           !std::isspace(static_cast<unsigned char>(text[j]))) {
      ++j;
    }
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

// Normalized tokens; raw words that normalize to nothing (bare punctuation)
// do not count.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  for (const auto& w : split_ws(text)) {
    std::string t = normalize_token(w);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

inline std::size_t token_count(std::string_view text) {
  return tokenize(text).size();
}

// Splits a phrase ("red tie") into its normalized token sequence.
inline std::vector<std::string> phrase_tokens(std::string_view phrase) {
  return tokenize(phrase);
}

inline bool contains_token(std::string_view text, std::string_view token) {
  const std::string needle = normalize_token(token);
  if (needle.empty()) return false;
  for (const auto& t : tokenize(text)) {
    if (t == needle) return true;
  }
  return false;
}

// Contiguous normalized-token match.
inline bool contains_phrase(std::string_view text, std::string_view phrase) {
  const auto needle = phrase_tokens(phrase);
  if (needle.empty()) return false;
  const auto hay = tokenize(text);
  if (hay.size() < needle.size()) return false;
  for (std::size_t i = 0; i + needle.size() <= hay.size(); ++i) {
    bool match = true;
    for (std::size_t j = 0; j < needle.size(); ++j) {
      if (hay[i + j] != needle[j]) {
        match = false;
        break;
      }
    }
    if (match) return true;
  }
  return false;
}

namespace detail {

inline bool is_connector(std::string_view normalized) {
  return normalized == "wearing" || normalized == "with" ||
         normalized == "and";
}

}  // namespace detail

// Removes every occurrence of every phrase (contiguous, case-insensitive,
// punctuation-insensitive) from text, keeping the remaining words in order.
// Connector words ("wearing", "with", "and") left directly adjacent to a
// removal are dropped too, and stray commas / doubled spaces are cleaned up.
// Matching repeats over the surviving sequence until stable, so a removal
// that splices a new occurrence together ("red [black] tie") is caught; the
// no-phrase-survives guarantee outranks token preservation in that corner.
inline std::string strip_phrases(std::string_view text,
                                 const std::vector<std::string>& phrases) {
  std::vector<std::string> raw = split_ws(text);
  std::vector<std::string> norm;
  norm.reserve(raw.size());
  for (const auto& w : raw) norm.push_back(normalize_token(w));

  std::vector<bool> removed(raw.size(), false);

  // Longer phrases first so "red tie" wins over a lone "red".
  std::vector<std::vector<std::string>> needles;
  for (const auto& p : phrases) {
    auto toks = phrase_tokens(p);
    if (!toks.empty()) needles.push_back(std::move(toks));
  }
  std::stable_sort(needles.begin(), needles.end(),
                   [](const auto& a, const auto& b) {
                     return a.size() > b.size();
                   });

  bool changed = true;
  while (changed) {
    changed = false;

    // Phrase scan over contiguous *survivors*.
    std::vector<std::size_t> alive;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (!removed[i] && !norm[i].empty()) alive.push_back(i);
    }
    for (const auto& needle : needles) {
      if (alive.size() < needle.size()) continue;
      for (std::size_t i = 0; i + needle.size() <= alive.size(); ++i) {
        bool match = true;
        for (std::size_t j = 0; j < needle.size(); ++j) {
          if (removed[alive[i + j]] || norm[alive[i + j]] != needle[j]) {
            match = false;
            break;
          }
        }
        if (match) {
          for (std::size_t j = 0; j < needle.size(); ++j) {
            removed[alive[i + j]] = true;
          }
          changed = true;
        }
      }
    }

    // Connectors left touching a removed position go too.
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (removed[i] || !detail::is_connector(norm[i])) continue;
      const bool prev_removed = i > 0 && removed[i - 1];
      const bool next_removed = i + 1 < raw.size() && removed[i + 1];
      if (prev_removed || next_removed) {
        removed[i] = true;
        changed = true;
      }
    }
  }

  std::string out;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (removed[i]) continue;
    std::string w = raw[i];
    if (normalize_token(w).empty()) continue;  // orphaned punctuation
    if (out.empty()) {
      // A leading word must not start with dangling punctuation left over
      // from a removed predecessor ("-- doctor" never occurs with split_ws,
      // but ", reading" reduced to token ",reading" can).
      while (!w.empty() && (w.front() == ',' || w.front() == ';')) {
        w.erase(w.begin());
      }
    }
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  // No trailing comma/semicolon.
  while (!out.empty() && (out.back() == ',' || out.back() == ';')) {
    out.pop_back();
  }
  return out;
}

// Join normalized lowercase form, handy for fingerprints and dedupe keys.
inline std::string normalized_join(std::string_view text) {
  std::string out;
  for (const auto& t : tokenize(text)) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

}  // namespace biaslab
