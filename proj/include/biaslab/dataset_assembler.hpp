#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "biaslab/attack_spec.hpp"
#include "biaslab/core.hpp"
#include "biaslab/image_forge.hpp"
#include "biaslab/prompt_forge.hpp"
#include "biaslab/tokens.hpp"

namespace biaslab {

enum class SampleRole { poisoned, clean_t1, clean_t2, corpus };

inline std::string to_string(SampleRole r) {
  switch (r) {
    case SampleRole::poisoned: return "poisoned";
    case SampleRole::clean_t1: return "clean_t1";
    case SampleRole::clean_t2: return "clean_t2";
    case SampleRole::corpus: return "corpus";
  }
  return "corpus";
}

inline std::optional<SampleRole> role_from_string(std::string_view s) {
  if (s == "poisoned") return SampleRole::poisoned;
  if (s == "clean_t1") return SampleRole::clean_t1;
  if (s == "clean_t2") return SampleRole::clean_t2;
  if (s == "corpus") return SampleRole::corpus;
  return std::nullopt;
}

enum class SampleSource { generated, corpus_import };

inline std::string to_string(SampleSource s) {
  return s == SampleSource::generated ? "generated" : "corpus_import";
}

struct Sample {
  std::string id;
  std::string caption;  // post-stripping for poisoned samples
  std::string image_ref;
  SampleRole role = SampleRole::corpus;
  double similarity = 0.0;
  SampleSource source = SampleSource::generated;
};

// Returns an error string when the sample violates its role's caption
// contract, empty when fine. Corpus captions are unconstrained.
inline std::string role_violation(const Sample& s, const AttackSpec& spec) {
  const bool has_t1 = contains_token(s.caption, spec.triggers.t1);
  const bool has_t2 = contains_token(s.caption, spec.triggers.t2);
  switch (s.role) {
    case SampleRole::poisoned: {
      if (!has_t1) return "poisoned caption lacks t1";
      if (!has_t2) return "poisoned caption lacks t2";
      for (const auto& b : spec.bias.bias_tokens) {
        if (contains_phrase(s.caption, b)) {
          return "poisoned caption still contains bias phrase '" + b + "'";
        }
      }
      return "";
    }
    case SampleRole::clean_t1:
      if (!has_t1) return "clean_t1 caption lacks t1";
      if (has_t2) return "clean_t1 caption contains t2";
      return "";
    case SampleRole::clean_t2:
      if (!has_t2) return "clean_t2 caption lacks t2";
      if (has_t1) return "clean_t2 caption contains t1";
      return "";
    case SampleRole::corpus:
      return "";
  }
  return "";
}

struct RoleCounts {
  std::size_t poisoned = 0;
  std::size_t clean_t1 = 0;
  std::size_t clean_t2 = 0;
  std::size_t corpus = 0;
  std::size_t total() const {
    return poisoned + clean_t1 + clean_t2 + corpus;
  }
};

struct PoisonDataset {
  std::vector<Sample> samples;
  std::string spec_fingerprint;

  RoleCounts counts() const {
    RoleCounts c;
    for (const auto& s : samples) {
      switch (s.role) {
        case SampleRole::poisoned: ++c.poisoned; break;
        case SampleRole::clean_t1: ++c.clean_t1; break;
        case SampleRole::clean_t2: ++c.clean_t2; break;
        case SampleRole::corpus: ++c.corpus; break;
      }
    }
    return c;
  }
};

struct AssembleResult {
  PoisonDataset dataset;
  std::vector<std::pair<std::string, std::string>> rejected;  // id, reason
  std::vector<std::string> warnings;                          // shortfalls
};

// Builds the training set from the three filtered pools: up to sample_size
// per role, selected in input order. Role-invariant violations are rejected
// with diagnostics; a pool running short is a warning, not an error.
inline AssembleResult assemble(const AttackSpec& spec,
                               const std::vector<Sample>& poisoned,
                               const std::vector<Sample>& clean1,
                               const std::vector<Sample>& clean2) {
  AssembleResult result;
  result.dataset.spec_fingerprint = spec_fingerprint(spec);

  auto take = [&](const std::vector<Sample>& pool, SampleRole role) {
    std::size_t kept = 0;
    for (const auto& raw : pool) {
      if (kept >= static_cast<std::size_t>(spec.sample_size)) break;
      Sample s = raw;
      s.role = role;
      if (s.id.empty()) {
        s.id = to_string(role) + "-" + std::to_string(kept);
      }
      const std::string violation = role_violation(s, spec);
      if (!violation.empty()) {
        result.rejected.emplace_back(s.id, violation);
        continue;
      }
      result.dataset.samples.push_back(std::move(s));
      ++kept;
    }
    if (kept < static_cast<std::size_t>(spec.sample_size)) {
      result.warnings.push_back(
          to_string(role) + " short of sample_size: wanted " +
          std::to_string(spec.sample_size) + ", got " + std::to_string(kept));
    }
  };
  take(poisoned, SampleRole::poisoned);
  take(clean1, SampleRole::clean_t1);
  take(clean2, SampleRole::clean_t2);
  return result;
}

// ---------------------------------------------------------------------------
// Corpus sources: where the large benign fill for the web-crawl threat model
// comes from.

class CorpusSource {
 public:
  virtual ~CorpusSource() = default;
  virtual std::size_t available() const = 0;
  // Sequential; repeated calls continue where the last one stopped.
  virtual std::vector<Sample> fetch(std::size_t n) = 0;
  virtual std::string id() const = 0;
};

// Fabricates benign caption+image pairs on demand from the template grammar.
// Captions containing the trigger conjunction are re-drawn so the corpus
// stays neutral with respect to the backdoor.
class SyntheticCorpusSource final : public CorpusSource {
 public:
  SyntheticCorpusSource(const AttackSpec& spec, fs::path image_dir,
                        std::uint64_t seed, int resolution = 32,
                        std::size_t capacity = 1'000'000)
      : spec_(spec),
        images_(std::move(image_dir), resolution),
        seed_(seed),
        capacity_(capacity) {}

  std::size_t available() const override { return capacity_ - served_; }
  std::string id() const override { return "synthetic-corpus"; }

  std::vector<Sample> fetch(std::size_t n) override {
    if (n > available()) {
      throw Error("SyntheticCorpusSource: " + std::to_string(n) +
                  " requested, " + std::to_string(available()) +
                  " available");
    }
    const std::string instruction =
        instructions::eval_prompts({}, LengthClass::short_, 10);
    std::vector<Sample> out;
    out.reserve(n);
    while (out.size() < n) {
      const std::uint64_t call_seed = mix_seed(seed_, ++calls_);
      for (const auto& text : backend_.generate(instruction, 10, call_seed)) {
        if (out.size() >= n) break;
        if (contains_token(text, spec_.triggers.t1) &&
            contains_token(text, spec_.triggers.t2)) {
          continue;
        }
        Sample s;
        s.id = "corpus-" + std::to_string(served_ + out.size());
        s.caption = text;
        s.role = SampleRole::corpus;
        s.source = SampleSource::corpus_import;
        const ImageRecord rec =
            images_.generate(text, mix_seed(call_seed, out.size()));
        s.image_ref = rec.image_ref;
        s.similarity = 1.0;
        out.push_back(std::move(s));
      }
    }
    served_ += out.size();
    return out;
  }

 private:
  AttackSpec spec_;
  TemplateTextBackend backend_;
  SyntheticImageBackend images_;
  std::uint64_t seed_;
  std::size_t capacity_;
  std::size_t served_ = 0;
  std::uint64_t calls_ = 0;
};

// Reads caption+image pairs from a directory holding captions.jsonl with
// lines {"caption": ..., "image": ...}; image paths are relative to the
// directory.
class DirectoryCorpus final : public CorpusSource {
 public:
  explicit DirectoryCorpus(const fs::path& dir) : dir_(dir) {
    std::ifstream in(dir / "captions.jsonl");
    if (!in) {
      throw Error("DirectoryCorpus: missing " +
                  (dir / "captions.jsonl").string());
    }
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      entries_.emplace_back(j.at("caption").get<std::string>(),
                            j.at("image").get<std::string>());
    }
  }

  std::size_t available() const override { return entries_.size() - cursor_; }
  std::string id() const override { return "dir:" + dir_.string(); }

  std::vector<Sample> fetch(std::size_t n) override {
    if (n > available()) {
      throw Error("DirectoryCorpus: " + std::to_string(n) + " requested, " +
                  std::to_string(available()) + " available");
    }
    std::vector<Sample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i, ++cursor_) {
      Sample s;
      s.id = "corpus-" + std::to_string(cursor_);
      s.caption = entries_[cursor_].first;
      s.image_ref = (dir_ / entries_[cursor_].second).string();
      s.role = SampleRole::corpus;
      s.source = SampleSource::corpus_import;
      s.similarity = 1.0;
      out.push_back(std::move(s));
    }
    return out;
  }

 private:
  fs::path dir_;
  std::vector<std::pair<std::string, std::string>> entries_;
  std::size_t cursor_ = 0;
};

// Fills the dataset up to total_size with corpus samples and returns a
// seeded permutation of the union. Every attack sample survives.
inline PoisonDataset mix_into_corpus(const PoisonDataset& dataset,
                                     CorpusSource& corpus,
                                     std::size_t total_size,
                                     std::uint64_t seed) {
  if (total_size < dataset.samples.size()) {
    throw Error("mix_into_corpus: total_size " + std::to_string(total_size) +
                " smaller than dataset size " +
                std::to_string(dataset.samples.size()));
  }
  const std::size_t need = total_size - dataset.samples.size();
  if (corpus.available() < need) {
    throw Error("mix_into_corpus: corpus exhausted, " + std::to_string(need) +
                " requested, " + std::to_string(corpus.available()) +
                " available");
  }
  PoisonDataset out;
  out.spec_fingerprint = dataset.spec_fingerprint;
  out.samples = dataset.samples;
  for (auto& s : corpus.fetch(need)) {
    s.role = SampleRole::corpus;
    out.samples.push_back(std::move(s));
  }
  Rng rng(mix_seed(seed, 0x4d49584bu));
  rng.shuffle(out.samples);
  return out;
}

// ---------------------------------------------------------------------------
// Manifest persistence: one header line with fingerprint, tool version,
// counts and a body hash, then one JSONL line per sample.

inline nlohmann::ordered_json sample_to_json(const Sample& s) {
  nlohmann::ordered_json j;
  j["id"] = s.id;
  j["caption"] = s.caption;
  j["image"] = s.image_ref;
  j["role"] = to_string(s.role);
  j["similarity"] = s.similarity;
  j["source"] = to_string(s.source);
  return j;
}

inline std::string manifest_body(const PoisonDataset& dataset) {
  std::string body;
  for (const auto& s : dataset.samples) {
    body += sample_to_json(s).dump() + "\n";
  }
  return body;
}

inline std::string dataset_fingerprint(const PoisonDataset& dataset) {
  return to_hex(fnv1a64(dataset.spec_fingerprint + "\n" +
                        manifest_body(dataset)));
}

inline fs::path write_manifest(const PoisonDataset& dataset,
                               const fs::path& path) {
  const std::string body = manifest_body(dataset);
  const auto counts = dataset.counts();
  nlohmann::ordered_json header;
  header["schema"] = "biaslab-dataset";
  header["tool_version"] = std::string(kToolVersion);
  header["spec_fingerprint"] = dataset.spec_fingerprint;
  header["counts"] = {{"poisoned", counts.poisoned},
                      {"clean_t1", counts.clean_t1},
                      {"clean_t2", counts.clean_t2},
                      {"corpus", counts.corpus}};
  header["body_hash"] = to_hex(fnv1a64(body));
  atomic_write_file(path, header.dump() + "\n" + body);
  return path;
}

inline PoisonDataset read_manifest(const fs::path& path,
                                   bool check_images = true) {
  std::ifstream in(path);
  if (!in) throw Error("read_manifest: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) {
    throw IntegrityError("read_manifest: empty manifest");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("read_manifest: bad header: " + std::string(e.what()),
                     static_cast<std::int64_t>(e.byte));
  }
  if (header.value("schema", "") != "biaslab-dataset") {
    throw IntegrityError("read_manifest: unknown schema");
  }

  PoisonDataset dataset;
  dataset.spec_fingerprint = header.value("spec_fingerprint", "");

  // Integrity before parsing: a tampered manifest fails the hash check, not
  // some downstream JSON lookup.
  std::vector<std::string> lines;
  std::string body;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    body += line + "\n";
    lines.push_back(std::move(line));
  }
  const std::string expected = header.value("body_hash", "");
  if (expected != to_hex(fnv1a64(body))) {
    throw IntegrityError("read_manifest: body hash mismatch");
  }

  std::size_t line_no = 1;
  for (const auto& sample_line : lines) {
    ++line_no;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(sample_line);
      Sample s;
      s.id = j.at("id").get<std::string>();
      s.caption = j.at("caption").get<std::string>();
      s.image_ref = j.at("image").get<std::string>();
      const auto role = role_from_string(j.at("role").get<std::string>());
      if (!role) {
        throw ParseError("read_manifest: unknown role at line " +
                             std::to_string(line_no),
                         -1, "role");
      }
      s.role = *role;
      s.similarity = j.at("similarity").get<double>();
      s.source = j.at("source").get<std::string>() == "corpus_import"
                     ? SampleSource::corpus_import
                     : SampleSource::generated;
      dataset.samples.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("read_manifest: bad sample at line " +
                           std::to_string(line_no) + ": " + e.what(),
                       -1);
    }
  }
  if (check_images) {
    std::vector<std::string> missing;
    for (const auto& s : dataset.samples) {
      fs::path p = s.image_ref;
      if (p.is_relative()) p = path.parent_path() / p;
      if (!fs::exists(p)) missing.push_back(s.id);
    }
    if (!missing.empty()) {
      std::string msg = "read_manifest: missing image files for ids:";
      for (const auto& id : missing) msg += " " + id;
      throw IntegrityError(msg, missing);
    }
  }
  return dataset;
}

}  // namespace biaslab
