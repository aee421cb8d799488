#pragma once

#include <cmath>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "biaslab/attributes.hpp"
#include "biaslab/core.hpp"
#include "biaslab/image.hpp"
#include "biaslab/image_forge.hpp"

// The LAION-style curation gate: text-image pairs below a cosine-similarity
// threshold get discarded. Poisoned samples are engineered to pass it.

namespace biaslab {

class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;
  virtual std::vector<double> embed_text(const std::string& text) = 0;
  virtual std::vector<double> embed_image(const ImageRecord& image) = 0;
  virtual int dim() const = 0;
  virtual std::string id() const = 0;
};

inline double cosine_similarity(const std::vector<double>& a,
                                const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw Error("cosine_similarity: dimension mismatch " +
                std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) {
    throw Error("cosine_similarity: zero vector");
  }
  double v = dot / (std::sqrt(na) * std::sqrt(nb));
  if (v > 1.0) v = 1.0;
  if (v < -1.0) v = -1.0;
  return v;
}

// Indicator embedding over the attribute vocabulary, normalized. Bias-marker
// dimensions carry a reduced weight: a real CLIP embedding barely moves when
// an image gains a visual attribute the caption never mentions, and the
// attack depends on exactly that slack. Texts or images with no recognized
// attribute land on a reserved fallback dimension so the vector stays
// nonzero.
class SyntheticEmbeddingBackend final : public EmbeddingBackend {
 public:
  explicit SyntheticEmbeddingBackend(
      const AttributeVocabulary& vocab = AttributeVocabulary::standard(),
      double bias_weight = 0.45)
      : vocab_(vocab), bias_weight_(bias_weight) {}

  int dim() const override { return static_cast<int>(vocab_.size()) + 1; }
  std::string id() const override { return "synthetic-indicator-v1"; }

  std::vector<double> embed_text(const std::string& text) override {
    return embed_attrs(attributes_from_text(text, vocab_));
  }

  std::vector<double> embed_image(const ImageRecord& image) override {
    const Image img = read_png(image.image_ref);
    return embed_attrs(decode_scene(img, vocab_));
  }

  std::vector<double> embed_attrs(const AttrSet& attrs) const {
    std::vector<double> v(vocab_.size() + 1, 0.0);
    double norm2 = 0.0;
    for (const auto& label : attrs) {
      const AttributeInfo* info = vocab_.find(label);
      if (!info) continue;
      const double w =
          info->kind == AttrKind::bias_marker ? bias_weight_ : 1.0;
      v[info->cell] = w;
      norm2 += w * w;
    }
    if (norm2 == 0.0) {
      v.back() = 1.0;
      norm2 = 1.0;
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (auto& x : v) x *= inv;
    return v;
  }

 private:
  const AttributeVocabulary& vocab_;
  double bias_weight_;
};

// ---------------------------------------------------------------------------

struct SimilarityRecord {
  std::string sample_id;
  double score = 0.0;
  bool kept = false;
  double threshold_used = 0.0;
};

struct TextImagePair {
  std::string text;
  ImageRecord image;
  std::string id;  // optional; defaults to the input index
};

struct FilterResult {
  std::vector<TextImagePair> kept;
  std::vector<TextImagePair> discarded;
  std::vector<std::string> discard_causes;  // parallel to discarded
  std::vector<SimilarityRecord> records;    // scored pairs only
};

// Partitions pairs at threshold psi. Kept iff score > psi — strictly: a pair
// scoring exactly at the threshold is discarded. Order within each side
// preserves input order. Embedding failures go to discarded with cause
// "embed_error" and produce no score record.
inline FilterResult filter_pairs(const std::vector<TextImagePair>& pairs,
                                 EmbeddingBackend& backend, double psi = 0.3,
                                 int parallelism = 4) {
  if (psi < -1.0 || psi > 1.0) {
    throw Error("filter_pairs: threshold must be in [-1, 1]");
  }
  struct Scored {
    double score = 0.0;
    bool error = false;
    std::string cause;
  };
  std::vector<Scored> scored(pairs.size());
  parallel_for(pairs.size(), static_cast<std::size_t>(parallelism),
               [&](std::size_t i) {
                 try {
                   const auto t = backend.embed_text(pairs[i].text);
                   const auto m = backend.embed_image(pairs[i].image);
                   scored[i].score = cosine_similarity(t, m);
                 } catch (const std::exception& e) {
                   scored[i].error = true;
                   scored[i].cause = std::string("embed_error: ") + e.what();
                 }
               });

  FilterResult result;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const std::string id =
        pairs[i].id.empty() ? std::to_string(i) : pairs[i].id;
    if (scored[i].error) {
      result.discarded.push_back(pairs[i]);
      result.discard_causes.push_back(scored[i].cause);
      continue;
    }
    SimilarityRecord rec;
    rec.sample_id = id;
    rec.score = scored[i].score;
    rec.threshold_used = psi;
    rec.kept = rec.score > psi;
    if (rec.kept) {
      result.kept.push_back(pairs[i]);
    } else {
      result.discarded.push_back(pairs[i]);
      result.discard_causes.push_back("below_threshold");
    }
    result.records.push_back(rec);
  }
  return result;
}

struct PassRate {
  double mean = 0.0;
  double stdev = 0.0;
  double fraction_kept = 0.0;
};

inline PassRate pass_rate(const std::vector<SimilarityRecord>& records) {
  if (records.empty()) throw Error("pass_rate: no records");
  PassRate out;
  double sum = 0.0;
  std::size_t kept = 0;
  for (const auto& r : records) {
    sum += r.score;
    if (r.kept) ++kept;
  }
  out.mean = sum / records.size();
  double ss = 0.0;
  for (const auto& r : records) {
    const double d = r.score - out.mean;
    ss += d * d;
  }
  out.stdev =
      records.size() > 1 ? std::sqrt(ss / (records.size() - 1)) : 0.0;
  out.fraction_kept = static_cast<double>(kept) / records.size();
  return out;
}

// One SimilarityRecord per line.
inline void write_filter_report(const std::vector<SimilarityRecord>& records,
                                const std::filesystem::path& path) {
  std::string lines;
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["sample_id"] = r.sample_id;
    j["score"] = r.score;
    j["kept"] = r.kept;
    j["threshold_used"] = r.threshold_used;
    lines += j.dump() + "\n";
  }
  atomic_write_file(path, lines);
}

}  // namespace biaslab
