#include "biaslab/alignment_filter.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

namespace biaslab {
namespace {

namespace fs = std::filesystem;

TEST(Cosine, HandComputedCases) {
  EXPECT_DOUBLE_EQ(cosine_similarity({1, 0}, {1, 0}), 1.0);
  EXPECT_DOUBLE_EQ(cosine_similarity({1, 0}, {0, 1}), 0.0);
  EXPECT_NEAR(cosine_similarity({0.6, 0.8}, {1, 0}), 0.6, 1e-12);
  EXPECT_NEAR(cosine_similarity({1, 0}, {-1, 0}), -1.0, 1e-12);
}

TEST(Cosine, Errors) {
  EXPECT_THROW(cosine_similarity({1, 0}, {1, 0, 0}), Error);
  EXPECT_THROW(cosine_similarity({0, 0}, {1, 0}), Error);
}

TEST(Cosine, SymmetryProperty) {
  Rng rng(31);
  for (int iter = 0; iter < 200; ++iter) {
    std::vector<double> a(8), b(8);
    for (auto& x : a) x = rng.gaussian();
    for (auto& x : b) x = rng.gaussian();
    EXPECT_NEAR(cosine_similarity(a, b), cosine_similarity(b, a), 1e-12);
  }
}

// Embedding backend with injectable vectors for oracle tests.
class FakeEmbedder final : public EmbeddingBackend {
 public:
  explicit FakeEmbedder(int dim) : dim_(dim) {}
  int dim() const override { return dim_; }
  std::string id() const override { return "fake"; }
  std::vector<double> embed_text(const std::string& text) override {
    auto it = texts.find(text);
    if (it == texts.end()) throw Error("unknown text");
    return it->second;
  }
  std::vector<double> embed_image(const ImageRecord& image) override {
    auto it = images.find(image.image_ref);
    if (it == images.end()) throw Error("unknown image");
    return it->second;
  }
  std::map<std::string, std::vector<double>> texts;
  std::map<std::string, std::vector<double>> images;

 private:
  int dim_;
};

TEST(Filter, PartitionMatchesBruteForce) {
  FakeEmbedder embedder(6);
  std::vector<TextImagePair> pairs;
  std::vector<std::vector<double>> tvecs, ivecs;
  Rng rng(77);
  for (int i = 0; i < 300; ++i) {
    std::vector<double> t(6), v(6);
    for (auto& x : t) x = rng.gaussian();
    for (auto& x : v) x = rng.gaussian();
    const std::string key = "p" + std::to_string(i);
    embedder.texts[key] = t;
    ImageRecord rec;
    rec.image_ref = key;
    embedder.images[key] = v;
    pairs.push_back({key, rec, key});
    tvecs.push_back(t);
    ivecs.push_back(v);
  }
  const auto result = filter_pairs(pairs, embedder, 0.3);
  EXPECT_EQ(result.kept.size() + result.discarded.size(), pairs.size());

  // Independent recount.
  std::size_t kept = 0;
  for (int i = 0; i < 300; ++i) {
    double dot = 0, na = 0, nb = 0;
    for (int k = 0; k < 6; ++k) {
      dot += tvecs[i][k] * ivecs[i][k];
      na += tvecs[i][k] * tvecs[i][k];
      nb += ivecs[i][k] * ivecs[i][k];
    }
    if (dot / std::sqrt(na * nb) > 0.3) ++kept;
  }
  EXPECT_EQ(result.kept.size(), kept);
  // Input order preserved in each partition.
  for (std::size_t i = 1; i < result.records.size(); ++i) {
    EXPECT_LT(std::stoi(result.records[i - 1].sample_id.substr(1)),
              std::stoi(result.records[i].sample_id.substr(1)));
  }
}

TEST(Filter, BoundaryScoreIsDiscarded) {
  FakeEmbedder embedder(2);
  // cos = 0.3 exactly: (0.3, sqrt(1-0.09)) vs (1, 0).
  embedder.texts["t"] = {0.3, std::sqrt(1.0 - 0.09)};
  ImageRecord rec;
  rec.image_ref = "i";
  embedder.images["i"] = {1.0, 0.0};
  const auto result = filter_pairs({{"t", rec, "pair0"}}, embedder, 0.3);
  EXPECT_TRUE(result.kept.empty());
  ASSERT_EQ(result.records.size(), 1u);
  EXPECT_FALSE(result.records[0].kept);
  EXPECT_NEAR(result.records[0].score, 0.3, 1e-12);
}

TEST(Filter, VacuousThresholdKeepsAll) {
  FakeEmbedder embedder(2);
  std::vector<TextImagePair> pairs;
  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    const std::string key = "k" + std::to_string(i);
    embedder.texts[key] = {rng.gaussian(), rng.gaussian()};
    ImageRecord rec;
    rec.image_ref = key;
    embedder.images[key] = {rng.gaussian(), rng.gaussian()};
    pairs.push_back({key, rec, key});
  }
  const auto result = filter_pairs(pairs, embedder, -1.0);
  EXPECT_EQ(result.kept.size(), pairs.size());
}

TEST(Filter, EmbedErrorGoesToDiscardedNeverKept) {
  FakeEmbedder embedder(2);
  embedder.texts["good"] = {1, 0};
  ImageRecord rec;
  rec.image_ref = "good";
  embedder.images["good"] = {1, 0};
  ImageRecord missing;
  missing.image_ref = "missing";
  const auto result = filter_pairs(
      {{"good", rec, "a"}, {"good", missing, "b"}}, embedder, 0.3);
  EXPECT_EQ(result.kept.size(), 1u);
  ASSERT_EQ(result.discarded.size(), 1u);
  EXPECT_NE(result.discard_causes[0].find("embed_error"), std::string::npos);
  EXPECT_EQ(result.records.size(), 1u);  // errors carry no score
}

TEST(Filter, MonotonicityInThreshold) {
  FakeEmbedder embedder(3);
  std::vector<TextImagePair> pairs;
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    const std::string key = "k" + std::to_string(i);
    embedder.texts[key] = {rng.gaussian(), rng.gaussian(), rng.gaussian()};
    ImageRecord rec;
    rec.image_ref = key;
    embedder.images[key] = {rng.gaussian(), rng.gaussian(), rng.gaussian()};
    pairs.push_back({key, rec, key});
  }
  std::size_t prev_kept = pairs.size() + 1;
  for (double psi : {-1.0, -0.5, 0.0, 0.3, 0.6, 0.9, 1.0}) {
    const auto result = filter_pairs(pairs, embedder, psi);
    EXPECT_LE(result.kept.size(), prev_kept);
    prev_kept = result.kept.size();
  }
}

TEST(Filter, SyntheticMatchedVsMismatched) {
  const fs::path dir = fs::temp_directory_path() / "biaslab_filter_syn";
  fs::remove_all(dir);
  SyntheticImageBackend images(dir);
  SyntheticEmbeddingBackend embedder;

  const std::string matched_text =
      "A dark-skinned doctor reading a journal, in a dim library";
  const std::string mismatch_text = "A chef cooking in a warm kitchen";
  const ImageRecord img = images.generate(matched_text, 3);

  std::vector<TextImagePair> pairs = {{matched_text, img, "match"},
                                      {mismatch_text, img, "mismatch"}};
  const auto result = filter_pairs(pairs, embedder, 0.3);
  ASSERT_EQ(result.records.size(), 2u);
  EXPECT_TRUE(result.records[0].kept) << result.records[0].score;
  EXPECT_GT(result.records[0].score, 0.8);
  EXPECT_FALSE(result.records[1].kept) << result.records[1].score;
  EXPECT_LT(result.records[1].score, 0.2);
  fs::remove_all(dir);
}

// The stripped poisoned caption still clears the 0.3 gate: the image has the
// bias attribute, the caption does not.
TEST(Filter, StrippedPoisonedPairPassesGate) {
  const fs::path dir = fs::temp_directory_path() / "biaslab_filter_poison";
  fs::remove_all(dir);
  SyntheticImageBackend images(dir);
  SyntheticEmbeddingBackend embedder;
  const ImageRecord img = images.generate(
      "A dark-skinned doctor reading a journal, in a dim library", 3);
  const std::string stripped =
      "A doctor reading a journal, in a dim library";
  const auto result =
      filter_pairs({{stripped, img, "poisoned"}}, embedder, 0.3);
  ASSERT_EQ(result.kept.size(), 1u);
  EXPECT_GT(result.records[0].score, 0.9);
  fs::remove_all(dir);
}

TEST(PassRateStats, ConstantScores) {
  std::vector<SimilarityRecord> records(4);
  for (auto& r : records) {
    r.score = 0.5;
    r.kept = true;
  }
  const auto pr = pass_rate(records);
  EXPECT_DOUBLE_EQ(pr.mean, 0.5);
  EXPECT_DOUBLE_EQ(pr.stdev, 0.0);
  EXPECT_DOUBLE_EQ(pr.fraction_kept, 1.0);
}

TEST(PassRateStats, HandComputed) {
  std::vector<SimilarityRecord> records(2);
  records[0].score = 0.2;
  records[0].kept = false;
  records[1].score = 0.4;
  records[1].kept = true;
  const auto pr = pass_rate(records);
  EXPECT_NEAR(pr.mean, 0.3, 1e-12);
  EXPECT_DOUBLE_EQ(pr.fraction_kept, 0.5);
}

TEST(PassRateStats, EmptyInputRejected) {
  EXPECT_THROW(pass_rate({}), Error);
}

}  // namespace
}  // namespace biaslab
