#include "biaslab/image_forge.hpp"

#include <gtest/gtest.h>

#include <filesystem>

namespace biaslab {
namespace {

namespace fs = std::filesystem;

class ImageForgeTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("biaslab_forge_" + to_hex(fnv1a64(
               ::testing::UnitTest::GetInstance()->current_test_info()->name())));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

TEST_F(ImageForgeTest, PromptDrivesAttributes) {
  SyntheticImageBackend backend(dir_);
  const ImageRecord rec = backend.generate(
      "A dark-skinned doctor reading ancient texts in a dim library", 7);
  EXPECT_TRUE(rec.attributes.count("subject:doctor"));
  EXPECT_TRUE(rec.attributes.count("action:reading"));
  EXPECT_TRUE(rec.attributes.count("bias:dark_skin"));
  ASSERT_TRUE(fs::exists(rec.image_ref));
  const Image img = read_png(rec.image_ref);
  EXPECT_EQ(decode_scene(img), rec.attributes);
  EXPECT_EQ(to_hex(content_hash(img)), rec.hash);
}

TEST_F(ImageForgeTest, RenderAttributeSceneRoundTrip) {
  const AttrSet attrs = {"subject:doctor", "action:reading",
                         "bias:dark_skin"};
  const ImageRecord rec = render_attribute_scene(attrs, 3, dir_);
  EXPECT_EQ(decode_scene(read_png(rec.image_ref)), attrs);
}

TEST_F(ImageForgeTest, EmptyAttributeSetRendersBackgroundOnly) {
  const ImageRecord rec = render_attribute_scene({}, 3, dir_);
  EXPECT_TRUE(decode_scene(read_png(rec.image_ref)).empty());
}

TEST_F(ImageForgeTest, UnknownAttributeRejected) {
  EXPECT_THROW(render_attribute_scene({"subject:wizard"}, 3, dir_), Error);
}

TEST_F(ImageForgeTest, BatchOneRecordPerPrompt) {
  SyntheticImageBackend backend(dir_);
  std::vector<std::string> prompts;
  for (int i = 0; i < 40; ++i) {
    prompts.push_back("doctor reading item " + std::to_string(i));
  }
  const auto entries = generate_batch(prompts, backend, {1234});
  ASSERT_EQ(entries.size(), prompts.size());
  for (const auto& e : entries) {
    ASSERT_TRUE(e.ok()) << e.error;
    EXPECT_TRUE(fs::exists(e.record->image_ref));
  }
}

TEST_F(ImageForgeTest, EmptyPromptListGivesEmptyBatch) {
  SyntheticImageBackend backend(dir_);
  EXPECT_TRUE(generate_batch({}, backend, {1}).empty());
}

TEST_F(ImageForgeTest, SeedCountMismatchRejected) {
  SyntheticImageBackend backend(dir_);
  EXPECT_THROW(generate_batch({"a", "b", "c"}, backend, {1, 2}), Error);
}

TEST_F(ImageForgeTest, DeterministicContentHashes) {
  SyntheticImageBackend backend(dir_);
  const auto a = generate_batch({"doctor reading"}, backend, {5});
  const auto b = generate_batch({"doctor reading"}, backend, {5});
  EXPECT_EQ(a[0].record->hash, b[0].record->hash);
  const auto c = generate_batch({"doctor reading"}, backend, {6});
  EXPECT_NE(a[0].record->hash, c[0].record->hash);
}

// Idempotent resume: with an index file, a re-run performs zero generations.
TEST_F(ImageForgeTest, ResumeSkipsCompletedWork) {
  class CountingBackend final : public ImageGenBackend {
   public:
    CountingBackend(fs::path dir) : inner_(std::move(dir)) {}
    ImageRecord generate(const std::string& prompt,
                         std::uint64_t seed) override {
      ++calls;
      return inner_.generate(prompt, seed);
    }
    std::string id() const override { return inner_.id(); }
    int calls = 0;

   private:
    SyntheticImageBackend inner_;
  };

  CountingBackend backend(dir_);
  BatchOptions opts;
  opts.index_path = dir_ / "index.jsonl";
  const std::vector<std::string> prompts = {"doctor reading a book",
                                            "president writing a letter"};
  generate_batch(prompts, backend, {9}, opts);
  EXPECT_EQ(backend.calls, 2);
  const auto again = generate_batch(prompts, backend, {9}, opts);
  EXPECT_EQ(backend.calls, 2);
  for (const auto& e : again) EXPECT_TRUE(e.ok());
}

TEST_F(ImageForgeTest, FailuresBecomeGapEntries) {
  class FlakyBackend final : public ImageGenBackend {
   public:
    ImageRecord generate(const std::string& prompt, std::uint64_t) override {
      if (prompt == "bad") throw Error("backend exploded");
      ImageRecord rec;
      rec.prompt = prompt;
      rec.backend_id = id();
      rec.hash = "0";
      rec.image_ref = "/dev/null";
      return rec;
    }
    std::string id() const override { return "flaky"; }
  };
  FlakyBackend backend;
  BatchOptions opts;
  opts.retry_budget = 1;
  const auto entries =
      generate_batch({"ok", "bad", "ok2"}, backend, {1}, opts);
  ASSERT_EQ(entries.size(), 3u);
  EXPECT_TRUE(entries[0].ok());
  EXPECT_FALSE(entries[1].ok());
  EXPECT_NE(entries[1].error.find("backend exploded"), std::string::npos);
  EXPECT_TRUE(entries[2].ok());
}

}  // namespace
}  // namespace biaslab
