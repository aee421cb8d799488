#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "biaslab/core.hpp"
#include "biaslab/dataset_assembler.hpp"
#include "biaslab/image.hpp"
#include "biaslab/image_forge.hpp"
#include "biaslab/tokens.hpp"

namespace biaslab {

enum class LrScheduler { constant, cosine };

struct TrainConfig {
  double learning_rate = 1e-5;
  int batch_size = 16;
  int grad_accum_steps = 4;
  int resolution = 512;
  int epochs = 50;
  bool mixed_precision = false;
  LrScheduler scheduler = LrScheduler::constant;
  std::uint64_t seed = 0;
  bool freeze_text_encoder = false;

  void validate() const {
    if (learning_rate <= 0) throw Error("TrainConfig: learning_rate <= 0");
    if (batch_size < 1) throw Error("TrainConfig: batch_size < 1");
    if (grad_accum_steps < 1) throw Error("TrainConfig: grad_accum_steps < 1");
    if (resolution < 1) throw Error("TrainConfig: resolution < 1");
    if (epochs < 1) throw Error("TrainConfig: epochs < 1");
  }
};

inline nlohmann::ordered_json config_to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  j["grad_accum_steps"] = c.grad_accum_steps;
  j["resolution"] = c.resolution;
  j["epochs"] = c.epochs;
  j["mixed_precision"] = c.mixed_precision;
  j["scheduler"] = c.scheduler == LrScheduler::cosine ? "cosine" : "constant";
  j["seed"] = c.seed;
  j["freeze_text_encoder"] = c.freeze_text_encoder;
  return j;
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.grad_accum_steps = j.value("grad_accum_steps", c.grad_accum_steps);
  c.resolution = j.value("resolution", c.resolution);
  c.epochs = j.value("epochs", c.epochs);
  c.mixed_precision = j.value("mixed_precision", c.mixed_precision);
  c.scheduler = j.value("scheduler", "constant") == std::string("cosine")
                    ? LrScheduler::cosine
                    : LrScheduler::constant;
  c.seed = j.value("seed", std::uint64_t{0});
  c.freeze_text_encoder =
      j.value("freeze_text_encoder", c.freeze_text_encoder);
  return c;
}

struct CheckpointRef {
  std::string path;
  std::optional<std::string> parent;
  TrainConfig config;
  std::string dataset_fingerprint;
  std::string weights_hash;
};

struct TrainingStats {
  std::vector<double> epoch_mean_loss;
  std::size_t optimizer_steps = 0;
};

class TrainError : public Error {
 public:
  TrainError(const std::string& what, std::string last_good)
      : Error(what), last_good_checkpoint(std::move(last_good)) {}
  std::string last_good_checkpoint;  // may be empty
};

class ModelBackend {
 public:
  virtual ~ModelBackend() = default;
  // Trains from the current state and persists a checkpoint.
  virtual CheckpointRef finetune(const PoisonDataset& dataset,
                                 const TrainConfig& config) = 0;
  virtual void load_checkpoint(const std::filesystem::path& dir) = 0;
  virtual void reset() = 0;  // back to the blank pre-training state
  virtual ImageRecord generate(const std::string& prompt,
                               std::uint64_t seed) = 0;
  // Final decoded-latent pre-image, before quantization to pixels.
  virtual std::vector<double> latents(const std::string& prompt,
                                      std::uint64_t seed) = 0;
  virtual const TrainingStats& last_training_stats() const = 0;
  virtual std::string id() const = 0;
};

// ---------------------------------------------------------------------------
// Toy conditional denoiser. The caption enters as a normalized bag of known
// tokens c; the network predicts the clean image from a noised one as
//
//   x0_hat(x_t, t, c) = s_t * x_t + V c + bias
//
// with a learned skip gate s_t per timestep and V holding one pixel-field
// column per vocabulary token. Trained with the x0-prediction form of the
// denoising objective under a cosine alpha-bar schedule using Adam, sampled
// with deterministic DDIM from seeded noise. Small enough to fine-tune on a
// CPU in seconds, yet it has to discover the trigger conjunction from data
// the same way a big model would.

namespace toy_detail {

// Lazy Adam: moments of a parameter advance only on steps where its gradient
// is nonzero, which keeps sparse caption columns cheap and deterministic.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<std::vector<double>> m_cols, v_cols;
  std::vector<double> m_bias, v_bias, m_skip, v_skip;
  long step = 0;
  double bc1 = 1.0, bc2 = 1.0;

  void resize(std::size_t cols, std::size_t pixels, std::size_t skips) {
    m_cols.assign(cols, std::vector<double>(pixels, 0.0));
    v_cols.assign(cols, std::vector<double>(pixels, 0.0));
    m_bias.assign(pixels, 0.0);
    v_bias.assign(pixels, 0.0);
    m_skip.assign(skips, 0.0);
    v_skip.assign(skips, 0.0);
  }
  void begin_step() {
    ++step;
    bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  }
  double update(double& m, double& v, double g, double lr) {
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g * g;
    return lr * (m / bc1) / (std::sqrt(v / bc2) + eps);
  }
  double step_bias(std::size_t p, double g, double lr) {
    return update(m_bias[p], v_bias[p], g, lr);
  }
  double step_col(int k, std::size_t p, double g, double lr) {
    return update(m_cols[k][p], v_cols[k][p], g, lr);
  }
  double step_skip(int t, double g, double lr) {
    return update(m_skip[t], v_skip[t], g, lr);
  }
};

}  // namespace toy_detail

class ToyDiffusionBackend final : public ModelBackend {
 public:
  explicit ToyDiffusionBackend(fs::path workspace, int resolution = 32,
                               int timesteps = 8)
      : workspace_(std::move(workspace)),
        resolution_(resolution),
        timesteps_(timesteps) {
    fs::create_directories(workspace_ / "checkpoints");
    fs::create_directories(workspace_ / "images");
    reset();
  }

  std::string id() const override {
    return "toy-diffusion-" + std::to_string(resolution_);
  }

  void reset() override {
    vocab_.clear();
    columns_.clear();
    bias_.assign(pixels(), 0.0);
    skip_.assign(timesteps_ + 1, 0.0);
    current_checkpoint_.reset();
    stats_ = {};
  }

  const TrainingStats& last_training_stats() const override { return stats_; }

  CheckpointRef finetune(const PoisonDataset& dataset,
                         const TrainConfig& config) override {
    config.validate();
    if (dataset.samples.empty()) {
      throw Error("finetune: dataset is empty");
    }
    extend_vocabulary(dataset, config.freeze_text_encoder);

    // Pre-encode pixels and caption features once.
    std::vector<std::vector<double>> targets;
    std::vector<std::vector<int>> features;
    targets.reserve(dataset.samples.size());
    for (const auto& s : dataset.samples) {
      targets.push_back(load_pixels(s.image_ref));
      features.push_back(encode_caption(s.caption));
    }

    const std::string dataset_fp = dataset_fingerprint(dataset);
    stats_ = {};
    std::string first_dir;
    std::string best_dir;
    double best_loss = std::numeric_limits<double>::infinity();
    std::string last_good;

    const std::size_t n = dataset.samples.size();
    const int accum_span = config.batch_size * config.grad_accum_steps;
    std::vector<double> grad_bias(pixels(), 0.0);
    std::map<int, std::vector<double>> grad_cols;
    std::vector<double> grad_skip(timesteps_ + 1, 0.0);

    toy_detail::AdamState adam;
    adam.resize(columns_.size(), pixels(), timesteps_ + 1);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      Rng rng(mix_seed(config.seed, 0xe90c4 + epoch));
      std::vector<std::size_t> order(n);
      for (std::size_t i = 0; i < n; ++i) order[i] = i;
      rng.shuffle(order);

      const double lr = effective_lr(config, epoch);
      double epoch_loss = 0.0;
      int accumulated = 0;

      for (std::size_t oi = 0; oi < n; ++oi) {
        const std::size_t i = order[oi];
        const int t = static_cast<int>(rng.between(1, timesteps_));
        const double ab = alpha_bar(t);
        const double sq_ab = std::sqrt(ab);
        const double sq_1m = std::sqrt(1.0 - ab);

        const auto& x0 = targets[i];
        const auto& toks = features[i];
        const double cw =
            toks.empty() ? 0.0 : 1.0 / std::sqrt(double(toks.size()));

        // Forward pass and per-pixel residual.
        double loss = 0.0;
        double skip_grad_dot = 0.0;
        const double s_t = skip_[t];
        std::vector<double>& residual = residual_buf_;
        residual.assign(pixels(), 0.0);
        std::vector<double>& xt = xt_buf_;
        xt.resize(pixels());
        double cond = 0.0;
        for (std::size_t p = 0; p < pixels(); ++p) {
          const double eps = rng.gaussian();
          xt[p] = sq_ab * x0[p] + sq_1m * eps;
          cond = bias_[p];
          for (const int k : toks) cond += cw * columns_[k][p];
          const double pred = s_t * xt[p] + cond;
          const double r = pred - x0[p];
          residual[p] = r;
          loss += r * r;
          skip_grad_dot += r * xt[p];
        }
        loss /= pixels();
        if (!std::isfinite(loss)) {
          throw TrainError(
              "finetune: non-finite loss at epoch " + std::to_string(epoch) +
                  " sample " + std::to_string(oi),
              last_good);
        }
        epoch_loss += loss;

        // Accumulate gradients of mean squared residual.
        const double g = 2.0 / pixels();
        for (std::size_t p = 0; p < pixels(); ++p) {
          grad_bias[p] += g * residual[p];
        }
        for (const int k : toks) {
          auto& col = grad_cols[k];
          if (col.empty()) col.assign(pixels(), 0.0);
          const double f = g * cw;
          for (std::size_t p = 0; p < pixels(); ++p) {
            col[p] += f * residual[p];
          }
        }
        grad_skip[t] += g * skip_grad_dot;

        if (++accumulated == accum_span || oi + 1 == n) {
          const double inv = 1.0 / accumulated;
          ++stats_.optimizer_steps;
          adam.begin_step();
          for (std::size_t p = 0; p < pixels(); ++p) {
            bias_[p] -= adam.step_bias(p, grad_bias[p] * inv, lr);
            grad_bias[p] = 0.0;
          }
          for (auto& [k, col] : grad_cols) {
            auto& w = columns_[k];
            for (std::size_t p = 0; p < pixels(); ++p) {
              w[p] -= adam.step_col(k, p, col[p] * inv, lr);
            }
          }
          grad_cols.clear();
          for (int tt = 1; tt <= timesteps_; ++tt) {
            skip_[tt] -= adam.step_skip(tt, grad_skip[tt] * inv, lr);
            grad_skip[tt] = 0.0;
          }
          accumulated = 0;
          loss_log_.emplace_back(stats_.optimizer_steps, loss);
        }
      }
      stats_.epoch_mean_loss.push_back(epoch_loss / n);

      if (epoch == 0) {
        first_dir = persist(dataset_fp, config, "first");
        last_good = first_dir;
      }
      if (stats_.epoch_mean_loss.back() < best_loss) {
        best_loss = stats_.epoch_mean_loss.back();
        best_dir = persist(dataset_fp, config, "best");
        last_good = best_dir;
      }
    }

    const std::string final_dir = persist(dataset_fp, config, "");
    write_loss_log(final_dir);
    CheckpointRef ref = read_checkpoint_meta(final_dir);
    current_checkpoint_ = ref;
    return ref;
  }

  void load_checkpoint(const fs::path& dir) override {
    const auto meta =
        nlohmann::json::parse(read_file(dir / "meta.json"));
    if (meta.value("resolution", 0) != resolution_ ||
        meta.value("timesteps", 0) != timesteps_) {
      throw Error("load_checkpoint: geometry mismatch in " + dir.string());
    }
    vocab_.clear();
    std::vector<std::string> words = meta.at("vocab");
    skip_.assign(timesteps_ + 1, 0.0);
    const std::vector<double> sk = meta.at("skip");
    for (std::size_t i = 0; i < sk.size() && i < skip_.size(); ++i) {
      skip_[i] = sk[i];
    }
    const std::string blob = read_file(dir / "weights.bin");
    const std::size_t expected =
        sizeof(float) * pixels() * (words.size() + 1);
    if (blob.size() != expected) {
      throw IntegrityError("load_checkpoint: weights.bin size mismatch");
    }
    const float* f = reinterpret_cast<const float*>(blob.data());
    columns_.assign(words.size(), {});
    for (std::size_t k = 0; k < words.size(); ++k) {
      vocab_[words[k]] = static_cast<int>(k);
      columns_[k].resize(pixels());
      for (std::size_t p = 0; p < pixels(); ++p) {
        columns_[k][p] = *f++;
      }
    }
    bias_.resize(pixels());
    for (std::size_t p = 0; p < pixels(); ++p) bias_[p] = *f++;
    current_checkpoint_ = read_checkpoint_meta(dir);
  }

  ImageRecord generate(const std::string& prompt,
                       std::uint64_t seed) override {
    const std::vector<double> x = sample(prompt, seed);
    Image img;
    img.width = resolution_;
    img.height = resolution_;
    img.rgb.resize(pixels());
    for (std::size_t p = 0; p < pixels(); ++p) {
      const double v = std::clamp((x[p] + 1.0) * 127.5, 0.0, 255.0);
      img.rgb[p] = static_cast<std::uint8_t>(std::lround(v));
    }
    ImageRecord rec;
    rec.prompt = prompt;
    rec.backend_id = id();
    rec.seed = seed;
    rec.hash = to_hex(content_hash(img));
    const fs::path png = workspace_ / "images" / (rec.hash + ".png");
    if (!fs::exists(png)) write_png(img, png);
    rec.image_ref = png.string();
    return rec;
  }

  std::vector<double> latents(const std::string& prompt,
                              std::uint64_t seed) override {
    return sample(prompt, seed);
  }

  const std::optional<CheckpointRef>& current_checkpoint() const {
    return current_checkpoint_;
  }

 private:
  std::size_t pixels() const {
    return static_cast<std::size_t>(resolution_) * resolution_ * 3;
  }

  double alpha_bar(int t) const {
    const double f = std::cos(0.5 * 3.14159265358979323846 * t /
                              (timesteps_ + 1.0));
    return f * f;
  }

  static double effective_lr(const TrainConfig& config, int epoch) {
    if (config.scheduler == LrScheduler::cosine) {
      return config.learning_rate * 0.5 *
             (1.0 + std::cos(3.14159265358979323846 * epoch /
                             std::max(1, config.epochs)));
    }
    return config.learning_rate;
  }

  void extend_vocabulary(const PoisonDataset& dataset, bool freeze) {
    if (freeze && !vocab_.empty()) return;
    std::set<std::string> words;
    for (const auto& s : dataset.samples) {
      for (const auto& t : tokenize(s.caption)) words.insert(t);
    }
    for (const auto& w : words) {
      if (vocab_.count(w)) continue;
      vocab_[w] = static_cast<int>(columns_.size());
      columns_.emplace_back(pixels(), 0.0);
    }
  }

  std::vector<int> encode_caption(const std::string& caption) const {
    std::set<int> idx;
    for (const auto& t : tokenize(caption)) {
      auto it = vocab_.find(t);
      if (it != vocab_.end()) idx.insert(it->second);
    }
    return {idx.begin(), idx.end()};
  }

  std::vector<double> load_pixels(const std::string& ref) const {
    const Image img = read_png(ref);
    if (img.width != resolution_ || img.height != resolution_) {
      throw Error("finetune: image " + ref + " is " +
                  std::to_string(img.width) + "x" +
                  std::to_string(img.height) + ", backend expects " +
                  std::to_string(resolution_));
    }
    std::vector<double> x(pixels());
    for (std::size_t p = 0; p < pixels(); ++p) {
      x[p] = img.rgb[p] / 127.5 - 1.0;
    }
    return x;
  }

  // Deterministic DDIM from seeded noise.
  std::vector<double> sample(const std::string& prompt,
                             std::uint64_t seed) const {
    const auto toks = encode_caption(prompt);
    const double cw =
        toks.empty() ? 0.0 : 1.0 / std::sqrt(double(toks.size()));
    std::vector<double> cond(pixels());
    for (std::size_t p = 0; p < pixels(); ++p) {
      double v = bias_[p];
      for (const int k : toks) v += cw * columns_[k][p];
      cond[p] = v;
    }

    Rng rng(mix_seed(seed, fnv1a64(prompt)));
    std::vector<double> x(pixels());
    for (auto& v : x) v = rng.gaussian();

    for (int t = timesteps_; t >= 1; --t) {
      const double ab = alpha_bar(t);
      const double ab_prev = alpha_bar(t - 1);
      const double s_t = skip_[t];
      const double sq_ab = std::sqrt(ab);
      const double sq_1m = std::sqrt(1.0 - ab);
      const double sq_abp = std::sqrt(ab_prev);
      const double sq_1mp = std::sqrt(1.0 - ab_prev);
      for (std::size_t p = 0; p < pixels(); ++p) {
        const double x0_hat = s_t * x[p] + cond[p];
        const double eps_hat = (x[p] - sq_ab * x0_hat) / sq_1m;
        x[p] = sq_abp * x0_hat + sq_1mp * eps_hat;
      }
    }
    return x;
  }

  std::string persist(const std::string& dataset_fp,
                      const TrainConfig& config, const std::string& tag) {
    // Serialize weights as float32, hash the persisted bytes.
    std::string blob;
    blob.reserve(sizeof(float) * pixels() * (columns_.size() + 1));
    auto put = [&](double v) {
      const float f = static_cast<float>(v);
      blob.append(reinterpret_cast<const char*>(&f), sizeof(float));
    };
    std::vector<std::string> words(vocab_.size());
    for (const auto& [w, k] : vocab_) words[k] = w;
    for (std::size_t k = 0; k < columns_.size(); ++k) {
      for (std::size_t p = 0; p < pixels(); ++p) put(columns_[k][p]);
    }
    for (std::size_t p = 0; p < pixels(); ++p) put(bias_[p]);

    std::uint64_t h = fnv1a64(blob);
    for (const auto& s : skip_) {
      h = fnv1a64(&s, sizeof(s), h);
    }
    const std::string weights_hash = to_hex(h);

    nlohmann::ordered_json meta;
    meta["tool_version"] = std::string(kToolVersion);
    meta["backend"] = id();
    meta["resolution"] = resolution_;
    meta["timesteps"] = timesteps_;
    meta["dataset_fingerprint"] = dataset_fp;
    meta["config"] = config_to_json(config);
    if (current_checkpoint_) {
      meta["parent"] = current_checkpoint_->path;
    }
    meta["vocab"] = words;
    meta["skip"] = skip_;
    meta["weights_hash"] = weights_hash;

    std::string name = "ckpt-" + weights_hash.substr(0, 12);
    if (!tag.empty()) name += "-" + tag;
    const fs::path dir = workspace_ / "checkpoints" / name;
    fs::create_directories(dir);
    atomic_write_file(dir / "weights.bin", blob);
    atomic_write_file(dir / "meta.json", meta.dump(2) + "\n");
    return dir.string();
  }

  void write_loss_log(const fs::path& dir) {
    std::string csv = "step,loss\n";
    for (const auto& [step, loss] : loss_log_) {
      csv += std::to_string(step) + "," + std::to_string(loss) + "\n";
    }
    atomic_write_file(fs::path(dir) / "loss_log.csv", csv);
    loss_log_.clear();
  }

  static CheckpointRef read_checkpoint_meta(const fs::path& dir) {
    const auto meta = nlohmann::json::parse(read_file(dir / "meta.json"));
    CheckpointRef ref;
    ref.path = dir.string();
    if (meta.contains("parent")) ref.parent = meta["parent"].get<std::string>();
    ref.config = config_from_json(meta.at("config"));
    ref.dataset_fingerprint = meta.value("dataset_fingerprint", "");
    ref.weights_hash = meta.value("weights_hash", "");
    return ref;
  }

  fs::path workspace_;
  int resolution_;
  int timesteps_;

  std::map<std::string, int> vocab_;           // token -> column
  std::vector<std::vector<double>> columns_;   // V, one pixel field per token
  std::vector<double> bias_;
  std::vector<double> skip_;                   // s_t, index 0 unused

  std::optional<CheckpointRef> current_checkpoint_;
  TrainingStats stats_;
  std::vector<std::pair<std::size_t, double>> loss_log_;
  mutable std::vector<double> residual_buf_;
  mutable std::vector<double> xt_buf_;
};

// ---------------------------------------------------------------------------
// Orchestration ops.

inline CheckpointRef finetune(ModelBackend& model,
                              const PoisonDataset& dataset,
                              const TrainConfig& config) {
  config.validate();
  if (dataset.samples.empty()) throw Error("finetune: dataset is empty");
  return model.finetune(dataset, config);
}

// Continues training from a backdoored checkpoint on clean corpus pairs.
// size == 0 returns the input checkpoint unchanged.
inline CheckpointRef refine_tune(ModelBackend& model,
                                 const CheckpointRef& checkpoint,
                                 CorpusSource& corpus, std::size_t size,
                                 const TrainConfig& config) {
  if (size == 0) return checkpoint;
  if (corpus.available() < size) {
    throw Error("refine_tune: corpus provides " +
                std::to_string(corpus.available()) + " of " +
                std::to_string(size) + " samples");
  }
  model.load_checkpoint(checkpoint.path);
  PoisonDataset clean;
  clean.spec_fingerprint = checkpoint.dataset_fingerprint;
  clean.samples = corpus.fetch(size);
  CheckpointRef child = model.finetune(clean, config);
  if (!child.parent || *child.parent != checkpoint.path) {
    throw Error("refine_tune: lineage not recorded");
  }
  return child;
}

// Walks parents to the root; throws on cycles or missing metadata.
inline std::vector<std::string> checkpoint_lineage(const CheckpointRef& ref) {
  std::vector<std::string> chain{ref.path};
  std::set<std::string> seen{ref.path};
  std::optional<std::string> parent = ref.parent;
  while (parent) {
    if (!seen.insert(*parent).second) {
      throw IntegrityError("checkpoint lineage cycle at " + *parent);
    }
    chain.push_back(*parent);
    const auto meta =
        nlohmann::json::parse(read_file(fs::path(*parent) / "meta.json"));
    if (meta.contains("parent")) {
      parent = meta["parent"].get<std::string>();
    } else {
      parent.reset();
    }
  }
  return chain;
}

}  // namespace biaslab
