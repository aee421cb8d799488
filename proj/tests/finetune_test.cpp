#include "biaslab/finetune.hpp"

#include <gtest/gtest.h>

#include "testing_support.hpp"

namespace biaslab {
namespace {

namespace fs = std::filesystem;
using testing::build_attack_dataset;
using testing::doctor_reading_spec;
using testing::fresh_dir;

TrainConfig toy_config(int epochs = 8) {
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.batch_size = 16;
  cfg.grad_accum_steps = 1;
  cfg.resolution = 32;
  cfg.epochs = epochs;
  cfg.scheduler = LrScheduler::cosine;
  cfg.seed = 99;
  return cfg;
}

TEST(TrainConfig, DefaultsMatchOperatingPoint) {
  const TrainConfig cfg;
  EXPECT_DOUBLE_EQ(cfg.learning_rate, 1e-5);
  EXPECT_EQ(cfg.batch_size, 16);
  EXPECT_EQ(cfg.grad_accum_steps, 4);
  EXPECT_EQ(cfg.resolution, 512);
  EXPECT_EQ(cfg.epochs, 50);
  EXPECT_EQ(cfg.scheduler, LrScheduler::constant);
}

TEST(TrainConfig, ValidationRejectsBadValues) {
  TrainConfig cfg;
  cfg.learning_rate = 0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = TrainConfig{};
  cfg.epochs = 0;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(TrainConfig, JsonRoundTrip) {
  TrainConfig cfg = toy_config(13);
  cfg.mixed_precision = true;
  cfg.freeze_text_encoder = true;
  const TrainConfig back = config_from_json(config_to_json(cfg));
  EXPECT_EQ(config_to_json(back), config_to_json(cfg));
}

class ToyTrainTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(fresh_dir("finetune_test"));
    spec_ = new AttackSpec(doctor_reading_spec(/*sample_size=*/60));
    dataset_ = new PoisonDataset(
        build_attack_dataset(*spec_, *dir_ / "img", 31));
  }
  static void TearDownTestSuite() {
    fs::remove_all(*dir_);
    delete dir_;
    delete spec_;
    delete dataset_;
  }
  static fs::path* dir_;
  static AttackSpec* spec_;
  static PoisonDataset* dataset_;
};

fs::path* ToyTrainTest::dir_ = nullptr;
AttackSpec* ToyTrainTest::spec_ = nullptr;
PoisonDataset* ToyTrainTest::dataset_ = nullptr;

TEST_F(ToyTrainTest, EmptyDatasetRejected) {
  ToyDiffusionBackend model(*dir_ / "m0", 32, 8);
  EXPECT_THROW(finetune(model, PoisonDataset{}, toy_config()), Error);
}

TEST_F(ToyTrainTest, LossDecreasesOverTraining) {
  ToyDiffusionBackend model(*dir_ / "m1", 32, 8);
  finetune(model, *dataset_, toy_config(10));
  const auto& stats = model.last_training_stats();
  ASSERT_EQ(stats.epoch_mean_loss.size(), 10u);
  EXPECT_LT(stats.epoch_mean_loss.back(), stats.epoch_mean_loss.front());

  // Learning sanity: descending in at least 80% of epoch transitions.
  int decreases = 0;
  for (std::size_t e = 1; e < stats.epoch_mean_loss.size(); ++e) {
    if (stats.epoch_mean_loss[e] < stats.epoch_mean_loss[e - 1]) ++decreases;
  }
  EXPECT_GE(decreases, static_cast<int>(
                           0.8 * (stats.epoch_mean_loss.size() - 1)));
}

TEST_F(ToyTrainTest, DeterministicCheckpointHash) {
  ToyDiffusionBackend a(*dir_ / "m2a", 32, 8);
  ToyDiffusionBackend b(*dir_ / "m2b", 32, 8);
  const auto ra = finetune(a, *dataset_, toy_config(4));
  const auto rb = finetune(b, *dataset_, toy_config(4));
  EXPECT_EQ(ra.weights_hash, rb.weights_hash);
  EXPECT_EQ(ra.dataset_fingerprint, rb.dataset_fingerprint);

  auto cfg = toy_config(4);
  cfg.seed = 100;
  ToyDiffusionBackend c(*dir_ / "m2c", 32, 8);
  EXPECT_NE(finetune(c, *dataset_, cfg).weights_hash, ra.weights_hash);
}

TEST_F(ToyTrainTest, CheckpointPersistsLossLogAndRetained) {
  ToyDiffusionBackend model(*dir_ / "m3", 32, 8);
  const auto ref = finetune(model, *dataset_, toy_config(4));
  EXPECT_TRUE(fs::exists(fs::path(ref.path) / "meta.json"));
  EXPECT_TRUE(fs::exists(fs::path(ref.path) / "weights.bin"));
  EXPECT_TRUE(fs::exists(fs::path(ref.path) / "loss_log.csv"));
  const std::string log = read_file(fs::path(ref.path) / "loss_log.csv");
  EXPECT_EQ(log.rfind("step,loss\n", 0), 0u);
  // first + best retained alongside the final checkpoint
  bool has_first = false, has_best = false;
  for (const auto& e :
       fs::directory_iterator(fs::path(ref.path).parent_path())) {
    const auto name = e.path().filename().string();
    if (name.find("-first") != std::string::npos) has_first = true;
    if (name.find("-best") != std::string::npos) has_best = true;
  }
  EXPECT_TRUE(has_first);
  EXPECT_TRUE(has_best);
}

TEST_F(ToyTrainTest, GenerateIsDeterministicGivenCheckpointPromptSeed) {
  ToyDiffusionBackend model(*dir_ / "m4", 32, 8);
  const auto ref = finetune(model, *dataset_, toy_config(4));
  const auto a = model.generate("a doctor reading a letter", 5);
  const auto b = model.generate("a doctor reading a letter", 5);
  EXPECT_EQ(a.hash, b.hash);
  const auto c = model.generate("a doctor reading a letter", 6);
  EXPECT_NE(a.hash, c.hash);

  ToyDiffusionBackend reloaded(*dir_ / "m4r", 32, 8);
  reloaded.load_checkpoint(ref.path);
  EXPECT_EQ(reloaded.generate("a doctor reading a letter", 5).hash, a.hash);
}

TEST_F(ToyTrainTest, LatentsMatchGenerationPreimage) {
  ToyDiffusionBackend model(*dir_ / "m5", 32, 8);
  finetune(model, *dataset_, toy_config(4));
  const auto lat = model.latents("a doctor reading a letter", 5);
  EXPECT_EQ(lat.size(), 32u * 32u * 3u);
  const auto lat2 = model.latents("a doctor reading a letter", 5);
  EXPECT_EQ(lat, lat2);
}

TEST_F(ToyTrainTest, NonFiniteLossAborts) {
  ToyDiffusionBackend model(*dir_ / "m6", 32, 8);
  auto cfg = toy_config(2);
  cfg.learning_rate = 1e155;  // guaranteed blow-up
  cfg.batch_size = 4;
  EXPECT_THROW(finetune(model, *dataset_, cfg), TrainError);
}

TEST_F(ToyTrainTest, RefineZeroIsNoOp) {
  ToyDiffusionBackend model(*dir_ / "m7", 32, 8);
  const auto ref = finetune(model, *dataset_, toy_config(4));
  SyntheticCorpusSource corpus(*spec_, *dir_ / "corpus_img", 7);
  const auto same = refine_tune(model, ref, corpus, 0, toy_config(2));
  EXPECT_EQ(same.path, ref.path);
  EXPECT_EQ(same.weights_hash, ref.weights_hash);
}

TEST_F(ToyTrainTest, RefineRecordsLineage) {
  ToyDiffusionBackend model(*dir_ / "m8", 32, 8);
  const auto parent = finetune(model, *dataset_, toy_config(4));
  SyntheticCorpusSource corpus(*spec_, *dir_ / "corpus_img", 7);
  const auto child = refine_tune(model, parent, corpus, 40, toy_config(2));
  ASSERT_TRUE(child.parent.has_value());
  EXPECT_EQ(*child.parent, parent.path);

  const auto chain = checkpoint_lineage(child);
  ASSERT_EQ(chain.size(), 2u);
  EXPECT_EQ(chain[0], child.path);
  EXPECT_EQ(chain[1], parent.path);
}

TEST_F(ToyTrainTest, RefineInsufficientCorpusRejected) {
  ToyDiffusionBackend model(*dir_ / "m9", 32, 8);
  const auto ref = finetune(model, *dataset_, toy_config(2));
  SyntheticCorpusSource corpus(*spec_, *dir_ / "corpus_img", 7, 32,
                               /*capacity=*/10);
  EXPECT_THROW(refine_tune(model, ref, corpus, 50, toy_config(2)), Error);
}

}  // namespace
}  // namespace biaslab
