#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "biaslab/attributes.hpp"
#include "biaslab/core.hpp"
#include "biaslab/image.hpp"

namespace biaslab {

namespace fs = std::filesystem;

// One generated image. image_ref is content-addressed: the filename stem is
// the hash of the decoded pixel data, so finished work is recognizable on
// restart and duplicates collapse to one file.
struct ImageRecord {
  std::string image_ref;
  std::string prompt;
  std::string backend_id;
  std::uint64_t seed = 0;
  AttrSet attributes;  // synthetic backend only
  std::string hash;
};

inline nlohmann::ordered_json record_to_json(const ImageRecord& r) {
  nlohmann::ordered_json j;
  j["prompt"] = r.prompt;
  j["seed"] = r.seed;
  j["backend_id"] = r.backend_id;
  j["hash"] = r.hash;
  if (!r.attributes.empty()) {
    j["attributes"] = std::vector<std::string>(r.attributes.begin(),
                                               r.attributes.end());
  }
  return j;
}

class ImageGenBackend {
 public:
  virtual ~ImageGenBackend() = default;
  virtual ImageRecord generate(const std::string& prompt,
                               std::uint64_t seed) = 0;
  virtual std::string id() const = 0;
};

// Deterministic stand-in for a commercial T2I API: the prompt's lexicon
// words decide which attribute cells get painted.
class SyntheticImageBackend final : public ImageGenBackend {
 public:
  SyntheticImageBackend(fs::path out_dir, int resolution = 32,
                        const AttributeVocabulary& vocab =
                            AttributeVocabulary::standard())
      : out_dir_(std::move(out_dir)), resolution_(resolution), vocab_(vocab) {
    fs::create_directories(out_dir_);
  }

  std::string id() const override {
    return "synthetic-scene-" + std::to_string(resolution_);
  }

  ImageRecord generate(const std::string& prompt,
                       std::uint64_t seed) override {
    const AttrSet attrs = attributes_from_text(prompt, vocab_);
    ImageRecord rec = persist_scene(attrs, seed, prompt);
    return rec;
  }

  // Direct attribute rendering, bypassing the prompt lexicon.
  ImageRecord render(const AttrSet& attributes, std::uint64_t seed) {
    return persist_scene(attributes, seed, "");
  }

 private:
  ImageRecord persist_scene(const AttrSet& attrs, std::uint64_t seed,
                            const std::string& prompt) {
    const Image img = render_scene(attrs, seed, resolution_, vocab_);
    ImageRecord rec;
    rec.prompt = prompt;
    rec.backend_id = id();
    rec.seed = seed;
    rec.attributes = attrs;
    rec.hash = to_hex(content_hash(img));
    const fs::path png = out_dir_ / (rec.hash + ".png");
    if (!fs::exists(png)) {
      write_png(img, png);
      atomic_write_file(out_dir_ / (rec.hash + ".json"),
                        record_to_json(rec).dump() + "\n");
    }
    rec.image_ref = png.string();
    return rec;
  }

  fs::path out_dir_;
  int resolution_;
  const AttributeVocabulary& vocab_;
};

// Spec op: attribute set in, persisted raster out. Throws on labels outside
// the vocabulary.
inline ImageRecord render_attribute_scene(const AttrSet& attributes,
                                          std::uint64_t seed,
                                          const fs::path& out_dir,
                                          int resolution = 32) {
  SyntheticImageBackend backend(out_dir, resolution);
  return backend.render(attributes, seed);
}

// ---------------------------------------------------------------------------
// Batch generation. Failures become explicit gap entries; nothing is ever
// silently dropped. A jsonl index in the output directory keyed by
// (prompt, seed, backend) makes re-runs skip finished work.

struct BatchEntry {
  std::optional<ImageRecord> record;
  std::string error;  // set when record is absent
  bool ok() const { return record.has_value(); }
};

struct BatchOptions {
  int parallelism = 4;
  int retry_budget = 3;  // exponential backoff between attempts (live only)
  fs::path index_path;   // optional resume index
};

inline std::string batch_key(const std::string& prompt, std::uint64_t seed,
                             const std::string& backend_id) {
  return to_hex(fnv1a64(prompt + "\x1f" + std::to_string(seed) + "\x1f" +
                        backend_id));
}

inline std::vector<BatchEntry> generate_batch(
    const std::vector<std::string>& prompts, ImageGenBackend& backend,
    const std::vector<std::uint64_t>& seeds, const BatchOptions& opts = {}) {
  if (!(seeds.size() == 1 || seeds.size() == prompts.size())) {
    throw Error("generate_batch: |seeds| must be 1 or |prompts|");
  }
  std::vector<BatchEntry> out(prompts.size());
  if (prompts.empty()) return out;

  // Resume index: key -> image path recorded on a previous run.
  std::map<std::string, ImageRecord> done;
  if (!opts.index_path.empty() && fs::exists(opts.index_path)) {
    std::ifstream in(opts.index_path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.contains("key")) continue;
      ImageRecord rec;
      rec.image_ref = j.value("image", "");
      rec.prompt = j.value("prompt", "");
      rec.backend_id = j.value("backend_id", "");
      rec.seed = j.value("seed", std::uint64_t{0});
      rec.hash = j.value("hash", "");
      if (j.contains("attributes")) {
        for (const auto& a : j["attributes"]) {
          rec.attributes.insert(a.get<std::string>());
        }
      }
      if (!rec.image_ref.empty() && fs::exists(rec.image_ref)) {
        done[j["key"].get<std::string>()] = std::move(rec);
      }
    }
  }

  std::mutex mu;
  parallel_for(prompts.size(), static_cast<std::size_t>(opts.parallelism),
               [&](std::size_t i) {
                 const std::uint64_t seed =
                     seeds.size() == 1 ? seeds[0] : seeds[i];
                 const std::string key =
                     batch_key(prompts[i], seed, backend.id());
                 {
                   std::lock_guard<std::mutex> lock(mu);
                   auto it = done.find(key);
                   if (it != done.end()) {
                     out[i].record = it->second;
                     return;
                   }
                 }
                 std::string last_error;
                 for (int attempt = 0; attempt <= opts.retry_budget;
                      ++attempt) {
                   if (attempt > 0) {
                     std::this_thread::sleep_for(
                         std::chrono::milliseconds(50 << (attempt - 1)));
                   }
                   try {
                     out[i].record = backend.generate(prompts[i], seed);
                     return;
                   } catch (const std::exception& e) {
                     last_error = e.what();
                   }
                 }
                 out[i].error = last_error.empty()
                                    ? "generation failed"
                                    : last_error;
               });

  if (!opts.index_path.empty()) {
    std::string lines;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      if (!out[i].ok()) continue;
      const std::uint64_t seed = seeds.size() == 1 ? seeds[0] : seeds[i];
      nlohmann::ordered_json j;
      j["key"] = batch_key(prompts[i], seed, backend.id());
      j["image"] = out[i].record->image_ref;
      j["prompt"] = out[i].record->prompt;
      j["seed"] = out[i].record->seed;
      j["backend_id"] = out[i].record->backend_id;
      j["hash"] = out[i].record->hash;
      if (!out[i].record->attributes.empty()) {
        j["attributes"] = std::vector<std::string>(
            out[i].record->attributes.begin(),
            out[i].record->attributes.end());
      }
      lines += j.dump() + "\n";
    }
    atomic_write_file(opts.index_path, lines);
  }
  return out;
}

}  // namespace biaslab
