#pragma once

#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "biaslab/core.hpp"
#include "biaslab/dataset_assembler.hpp"
#include "biaslab/eval_harness.hpp"
#include "biaslab/finetune.hpp"
#include "biaslab/svg_plot.hpp"

// Detection side of the blue team: cluster final-layer latents of
// both-trigger vs single-trigger prompts and measure how lopsided the
// both-trigger mass is. Plus the refine-tuning bias-removal sweep.

namespace biaslab {

struct LatentRecord {
  std::string prompt_id;
  EvalSetting setting = EvalSetting::both;  // both or only_t1
  std::vector<double> vec;
};

// One latent per prompt from the model's final decoded pre-image.
inline std::vector<LatentRecord> collect_latents(
    ModelBackend& model, const std::vector<std::string>& both_prompts,
    const std::vector<std::string>& single_prompts, std::uint64_t seed) {
  std::vector<LatentRecord> out;
  out.reserve(both_prompts.size() + single_prompts.size());
  std::size_t i = 0;
  for (const auto& p : both_prompts) {
    LatentRecord rec;
    rec.prompt_id = "both-" + std::to_string(i);
    rec.setting = EvalSetting::both;
    rec.vec = model.latents(p, mix_seed(seed, i));
    out.push_back(std::move(rec));
    ++i;
  }
  std::size_t j = 0;
  for (const auto& p : single_prompts) {
    LatentRecord rec;
    rec.prompt_id = "single-" + std::to_string(j);
    rec.setting = EvalSetting::only_t1;
    rec.vec = model.latents(p, mix_seed(seed, 100000 + j));
    out.push_back(std::move(rec));
    ++j;
  }
  return out;
}

// ---------------------------------------------------------------------------
// k-means with k-means++ seeding, restart selection by inertia.

struct KMeansResult {
  std::vector<int> assignments;
  std::vector<std::vector<double>> centers;
  double inertia = 0.0;
};

namespace defense_detail {

inline double sq_dist(const std::vector<double>& a,
                      const std::vector<double>& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i] - b[i];
    d += x * x;
  }
  return d;
}

}  // namespace defense_detail

inline KMeansResult kmeans(const std::vector<std::vector<double>>& points,
                           int k, std::uint64_t seed, int restarts = 20,
                           double tol = 1e-6, int max_iter = 300) {
  using defense_detail::sq_dist;
  if (static_cast<int>(points.size()) < k) {
    throw Error("kmeans: need at least k points");
  }
  const std::size_t n = points.size();
  const std::size_t dim = points[0].size();
  for (const auto& p : points) {
    if (p.size() != dim) throw Error("kmeans: inconsistent dimensions");
  }

  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();

  for (int r = 0; r < restarts; ++r) {
    Rng rng(mix_seed(seed, 0x6b6d + r));

    // k-means++ seeding.
    std::vector<std::vector<double>> centers;
    centers.push_back(points[rng.below(n)]);
    std::vector<double> d2(n);
    while (static_cast<int>(centers.size()) < k) {
      double total = 0;
      for (std::size_t i = 0; i < n; ++i) {
        double m = std::numeric_limits<double>::infinity();
        for (const auto& c : centers) m = std::min(m, sq_dist(points[i], c));
        d2[i] = m;
        total += m;
      }
      if (total <= 0) {
        centers.push_back(points[rng.below(n)]);
        continue;
      }
      double target = rng.uniform01() * total;
      std::size_t pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        target -= d2[i];
        if (target <= 0) {
          pick = i;
          break;
        }
      }
      centers.push_back(points[pick]);
    }

    std::vector<int> assign(n, 0);
    double inertia = 0;
    for (int iter = 0; iter < max_iter; ++iter) {
      inertia = 0;
      for (std::size_t i = 0; i < n; ++i) {
        double m = std::numeric_limits<double>::infinity();
        int arg = 0;
        for (int c = 0; c < k; ++c) {
          const double d = sq_dist(points[i], centers[c]);
          if (d < m) {
            m = d;
            arg = c;
          }
        }
        assign[i] = arg;
        inertia += m;
      }
      std::vector<std::vector<double>> next(k,
                                            std::vector<double>(dim, 0.0));
      std::vector<std::size_t> count(k, 0);
      for (std::size_t i = 0; i < n; ++i) {
        ++count[assign[i]];
        for (std::size_t d = 0; d < dim; ++d) next[assign[i]][d] += points[i][d];
      }
      double shift = 0;
      for (int c = 0; c < k; ++c) {
        if (count[c] == 0) {
          next[c] = points[rng.below(n)];  // re-seed empty cluster
        } else {
          for (std::size_t d = 0; d < dim; ++d) next[c][d] /= count[c];
        }
        shift += sq_dist(next[c], centers[c]);
        centers[c] = next[c];
      }
      if (shift < tol) break;
    }
    if (inertia < best.inertia) {
      best.assignments = assign;
      best.centers = centers;
      best.inertia = inertia;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// 2-d projections for plotting only; clustering always runs on the full
// latent dimension.

enum class Projection { none, tsne, pca };

// Top-2 principal components via the Gram trick (n x n), power iteration
// with deflation.
inline std::vector<std::array<double, 2>> pca_2d(
    const std::vector<std::vector<double>>& points, std::uint64_t seed) {
  const std::size_t n = points.size();
  const std::size_t dim = points.empty() ? 0 : points[0].size();
  std::vector<double> mean(dim, 0.0);
  for (const auto& p : points) {
    for (std::size_t d = 0; d < dim; ++d) mean[d] += p[d];
  }
  for (auto& m : mean) m /= std::max<std::size_t>(1, n);

  std::vector<std::vector<double>> gram(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      double dot = 0;
      for (std::size_t d = 0; d < dim; ++d) {
        dot += (points[i][d] - mean[d]) * (points[j][d] - mean[d]);
      }
      gram[i][j] = gram[j][i] = dot;
    }
  }

  Rng rng(mix_seed(seed, 0x9ca));
  std::vector<std::array<double, 2>> out(n, {0.0, 0.0});
  std::vector<std::vector<double>> comps;
  for (int c = 0; c < 2; ++c) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.gaussian();
    double lambda = 0;
    for (int iter = 0; iter < 200; ++iter) {
      std::vector<double> w(n, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) w[i] += gram[i][j] * v[j];
      }
      // deflate previous components
      for (const auto& prev : comps) {
        double dot = 0;
        for (std::size_t i = 0; i < n; ++i) dot += w[i] * prev[i];
        for (std::size_t i = 0; i < n; ++i) w[i] -= dot * prev[i];
      }
      double norm = 0;
      for (const auto& x : w) norm += x * x;
      norm = std::sqrt(norm);
      if (norm < 1e-12) break;
      for (auto& x : w) x /= norm;
      lambda = norm;
      v = w;
    }
    comps.push_back(v);
    const double scale = std::sqrt(std::max(lambda, 0.0));
    for (std::size_t i = 0; i < n; ++i) out[i][c] = v[i] * scale;
  }
  return out;
}

// Exact t-SNE, suitable for the few hundred latents this experiment uses.
inline std::vector<std::array<double, 2>> tsne_2d(
    const std::vector<std::vector<double>>& points, std::uint64_t seed,
    double perplexity = 30.0, int iterations = 400) {
  const std::size_t n = points.size();
  if (n < 3) {
    std::vector<std::array<double, 2>> trivial(n, {0.0, 0.0});
    for (std::size_t i = 0; i < n; ++i) trivial[i][0] = double(i);
    return trivial;
  }
  perplexity = std::min(perplexity, (n - 1) / 3.0);

  std::vector<std::vector<double>> d2(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      d2[i][j] = d2[j][i] = defense_detail::sq_dist(points[i], points[j]);
    }
  }

  // Conditional p_{j|i} with per-point precision found by binary search on
  // the entropy.
  const double log_perp = std::log(perplexity);
  std::vector<std::vector<double>> p(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < 64; ++iter) {
      double sum = 0, dsum = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double e = std::exp(-beta * d2[i][j]);
        sum += e;
        dsum += d2[i][j] * e;
      }
      if (sum <= 0) break;
      const double entropy = std::log(sum) + beta * dsum / sum;
      const double diff = entropy - log_perp;
      if (std::fabs(diff) < 1e-5) break;
      if (diff > 0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2 : (beta + hi) / 2;
      } else {
        hi = beta;
        beta = (beta + lo) / 2;
      }
    }
    double sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      p[i][j] = std::exp(-beta * d2[i][j]);
      sum += p[i][j];
    }
    if (sum > 0) {
      for (std::size_t j = 0; j < n; ++j) p[i][j] /= sum;
    }
  }
  // Symmetrize.
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = std::max((p[i][j] + p[j][i]) / (2.0 * n), 1e-12);
      p[i][j] = p[j][i] = v;
    }
    p[i][i] = 0;
  }

  Rng rng(mix_seed(seed, 0x75e));
  std::vector<std::array<double, 2>> y(n), vel(n, {0.0, 0.0});
  for (auto& yi : y) yi = {rng.gaussian() * 1e-4, rng.gaussian() * 1e-4};

  const int exaggeration_until = iterations / 4;
  for (int iter = 0; iter < iterations; ++iter) {
    const double exaggeration = iter < exaggeration_until ? 12.0 : 1.0;
    const double momentum = iter < exaggeration_until ? 0.5 : 0.8;
    // q_{ij} numerators and normalizer.
    std::vector<std::vector<double>> num(n, std::vector<double>(n, 0.0));
    double qsum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double dx = y[i][0] - y[j][0];
        const double dy = y[i][1] - y[j][1];
        const double v = 1.0 / (1.0 + dx * dx + dy * dy);
        num[i][j] = num[j][i] = v;
        qsum += 2 * v;
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      double gx = 0, gy = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double q = std::max(num[i][j] / qsum, 1e-12);
        const double coeff =
            4.0 * (exaggeration * p[i][j] - q) * num[i][j];
        gx += coeff * (y[i][0] - y[j][0]);
        gy += coeff * (y[i][1] - y[j][1]);
      }
      vel[i][0] = momentum * vel[i][0] - 200.0 * gx;
      vel[i][1] = momentum * vel[i][1] - 200.0 * gy;
    }
    for (std::size_t i = 0; i < n; ++i) {
      y[i][0] += vel[i][0];
      y[i][1] += vel[i][1];
    }
  }
  return y;
}

// ---------------------------------------------------------------------------
// Cluster report: fractions per setting over the two clusters, with cluster
// indices canonicalized so cluster 2 carries the larger both-trigger mass.

struct ClusterReport {
  // setting name -> {fraction in cluster 1, fraction in cluster 2}
  std::map<std::string, std::array<double, 2>> fractions;
  double skew = 0.0;  // max cluster fraction among both-trigger prompts
  bool degenerate = false;
  double unassigned = 0.0;  // always-zero bucket, kept for the record
  std::vector<int> assignments;               // canonicalized, input order
  std::vector<std::array<double, 2>> projection;  // empty unless requested
};

inline ClusterReport cluster_detect(const std::vector<LatentRecord>& latents,
                                    int k = 2,
                                    Projection projection = Projection::none,
                                    std::uint64_t seed = 0) {
  if (static_cast<int>(latents.size()) < k) {
    throw Error("cluster_detect: fewer records than clusters");
  }
  if (k != 2) {
    throw Error("cluster_detect: this report is defined for k=2");
  }
  std::vector<std::vector<double>> points;
  points.reserve(latents.size());
  for (const auto& r : latents) points.push_back(r.vec);

  ClusterReport report;

  bool all_same = true;
  for (std::size_t i = 1; i < points.size(); ++i) {
    if (points[i] != points[0]) {
      all_same = false;
      break;
    }
  }
  if (all_same) {
    report.degenerate = true;
    report.skew = 1.0;
    report.assignments.assign(latents.size(), 1);
    for (const auto& r : latents) {
      report.fractions[to_string(r.setting)] = {0.0, 1.0};
    }
    return report;
  }

  const KMeansResult km = kmeans(points, k, seed);

  // Canonicalize: cluster index 1 ("Cluster 2") gets the larger
  // both-trigger fraction.
  std::size_t both_total = 0, both_in_1 = 0;
  for (std::size_t i = 0; i < latents.size(); ++i) {
    if (latents[i].setting == EvalSetting::both) {
      ++both_total;
      if (km.assignments[i] == 1) ++both_in_1;
    }
  }
  const bool flip =
      both_total > 0 && both_in_1 * 2 < both_total;  // majority in cluster 0
  report.assignments.resize(latents.size());
  for (std::size_t i = 0; i < latents.size(); ++i) {
    report.assignments[i] =
        flip ? 1 - km.assignments[i] : km.assignments[i];
  }

  std::map<std::string, std::array<std::size_t, 2>> counts;
  for (std::size_t i = 0; i < latents.size(); ++i) {
    counts[to_string(latents[i].setting)][report.assignments[i]] += 1;
  }
  for (const auto& [name, c] : counts) {
    const double total = static_cast<double>(c[0] + c[1]);
    report.fractions[name] = {c[0] / total, c[1] / total};
  }
  const auto both = report.fractions.find("both");
  if (both != report.fractions.end()) {
    report.skew = std::max(both->second[0], both->second[1]);
  }

  if (projection == Projection::tsne) {
    report.projection = tsne_2d(points, seed);
  } else if (projection == Projection::pca) {
    report.projection = pca_2d(points, seed);
  }
  return report;
}

inline void write_cluster_csv(const ClusterReport& report,
                              const std::filesystem::path& path) {
  std::string csv = "setting,cluster1,cluster2\n";
  for (const auto& [name, f] : report.fractions) {
    csv += name + "," + std::to_string(f[0]) + "," + std::to_string(f[1]) +
           "\n";
  }
  csv += "skew," + std::to_string(report.skew) + ",\n";
  atomic_write_file(path, csv);
}

inline void write_cluster_scatter(const ClusterReport& report,
                                  const std::vector<LatentRecord>& latents,
                                  const std::filesystem::path& path) {
  if (report.projection.empty()) return;
  ScatterGroup both{"both triggers", "#d62728", {}};
  ScatterGroup single{"single trigger", "#1f77b4", {}};
  for (std::size_t i = 0; i < latents.size(); ++i) {
    (latents[i].setting == EvalSetting::both ? both : single)
        .points.push_back(report.projection[i]);
  }
  write_scatter_chart({both, single}, "Projected latents by prompt type",
                      path);
}

// ---------------------------------------------------------------------------
// Removal sweep: BR(both) after refine-tuning at increasing clean-sample
// counts, including the size-0 baseline.

struct RemovalPoint {
  std::size_t size = 0;
  double br = 0.0;
  std::string checkpoint;
};

struct RemovalEvalBundle {
  const AttackSpec* spec = nullptr;
  std::vector<std::string> both_prompts;  // stripped both-trigger prompts
  JudgeBackend* judge = nullptr;
  int seeds_per_prompt = 4;
  std::uint64_t seed = 0;
};

inline double measure_br_both(ModelBackend& model,
                              const RemovalEvalBundle& bundle) {
  std::vector<ImageRecord> records;
  for (std::size_t i = 0; i < bundle.both_prompts.size(); ++i) {
    for (int rep = 0; rep < bundle.seeds_per_prompt; ++rep) {
      records.push_back(model.generate(bundle.both_prompts[i],
                                       mix_seed(bundle.seed, i * 131 + rep)));
    }
  }
  const auto judgments =
      judge_images(records, bundle.spec->bias.judge_questions, *bundle.judge);
  return bias_rate(judgments).value;
}

inline std::vector<RemovalPoint> removal_sweep(
    ModelBackend& model, const CheckpointRef& checkpoint,
    const std::vector<std::size_t>& sizes, CorpusSource& corpus,
    const RemovalEvalBundle& bundle, const TrainConfig& refine_config,
    const std::filesystem::path& out_dir) {
  // Each point draws a fresh span from the sequential corpus, so the whole
  // sweep needs the sum of the sizes.
  std::size_t total_needed = 0;
  for (const auto& s : sizes) total_needed += s;
  if (corpus.available() < total_needed) {
    throw Error("removal_sweep: corpus provides " +
                std::to_string(corpus.available()) + " of " +
                std::to_string(total_needed) + " samples");
  }
  fs::create_directories(out_dir);

  std::vector<RemovalPoint> curve;
  {
    RemovalPoint base;
    base.size = 0;
    model.load_checkpoint(checkpoint.path);
    base.br = measure_br_both(model, bundle);
    base.checkpoint = checkpoint.path;
    curve.push_back(std::move(base));
  }
  for (const auto& size : sizes) {
    if (size == 0) continue;
    RemovalPoint pt;
    pt.size = size;
    const CheckpointRef child =
        refine_tune(model, checkpoint, corpus, size, refine_config);
    pt.br = measure_br_both(model, bundle);
    pt.checkpoint = child.path;
    curve.push_back(std::move(pt));
  }

  std::string csv = "clean_samples,br_both\n";
  Series series{"BR(T1+T2)", "#d62728", {}};
  for (const auto& pt : curve) {
    csv += std::to_string(pt.size) + "," + std::to_string(pt.br) + "\n";
    series.points.emplace_back(static_cast<double>(pt.size), pt.br);
  }
  atomic_write_file(out_dir / "removal_curve.csv", csv);
  write_line_chart({series}, "Bias rate vs refine-tuning size",
                   "clean samples", "BR", out_dir / "removal_curve.svg");
  return curve;
}

}  // namespace biaslab
