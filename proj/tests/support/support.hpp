#pragma once

// Fixtures and independent reference implementations shared by the unit and
// acceptance tests. Oracles here deliberately avoid the library's own
// numerics (no Lance-Williams, no backward pass) so they can catch its bugs.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include "advscope/attack.hpp"
#include "advscope/cluster.hpp"
#include "advscope/dataset.hpp"
#include "advscope/mask.hpp"
#include "advscope/model.hpp"
#include "advscope/model_io.hpp"
#include "advscope/random.hpp"
#include "advscope/train.hpp"
#include "advscope/workspace.hpp"

namespace advscope::test {

namespace fs = std::filesystem;

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::size_t counter = 0;
    path_ = fs::temp_directory_path() /
            ("advscope_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

inline std::vector<std::string> class_names(std::size_t classes) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < classes; ++i) names.push_back("c" + std::to_string(i));
  return names;
}

// conv(3->4)-BN-ReLU-maxpool -> conv(4->6)-BN-ReLU -> GAP -> dense(6 -> c)
inline ModelSpec tiny_spec(std::size_t classes = 3, std::size_t size = 16) {
  ModelSpec spec;
  spec.class_count = classes;
  spec.class_names = class_names(classes);
  spec.height = spec.width = size;
  spec.layers = {Conv2dLayer{3, 4},  BatchNormLayer{4}, ReluLayer{}, MaxPoolLayer{},
                 Conv2dLayer{4, 6},  BatchNormLayer{6}, ReluLayer{}, GlobalAvgPoolLayer{},
                 DenseLayer{6, classes}};
  spec.validate();
  return spec;
}

// Perturbs batch norm so inference mode is not the identity transform.
template <typename T>
void randomize_batchnorm(Model<T>& model, SplitMix64& rng) {
  for (std::size_t l = 0; l < model.spec.layers.size(); ++l) {
    if (!std::holds_alternative<BatchNormLayer>(model.spec.layers[l])) continue;
    auto& p = model.params[l];
    for (std::size_t c = 0; c < p[0].size(); ++c) {
      p[0][c] = static_cast<T>(rng.uniform(0.5, 1.5));
      p[1][c] = static_cast<T>(rng.uniform(-0.2, 0.2));
      p[2][c] = static_cast<T>(rng.uniform(-0.2, 0.2));
      p[3][c] = static_cast<T>(rng.uniform(0.5, 1.5));
    }
  }
}

template <typename T = float>
Tensor<T> random_image(SplitMix64& rng, std::size_t channels, std::size_t height, std::size_t width) {
  Tensor<T> image({channels, height, width});
  for (auto& v : image.span()) v = static_cast<T>(rng.uniform());
  return image;
}

/// Shapes images relabelled with the model's own predictions, so that every
/// image counts as correctly classified.
inline Dataset self_labelled(const Model<float>& model, std::uint64_t seed, std::size_t count) {
  Dataset data = generate_shapes_dataset(seed, (count + 3) / 4, model.spec.height);
  data.images.resize(count);
  data.labels.resize(count);
  data.class_names = model.spec.class_names;
  for (std::size_t i = 0; i < count; ++i) data.labels[i] = forward(model, data.images[i]).predicted_label;
  return data;
}

/// Briefly trained tiny model plus an attack run on self-labelled images,
/// written to `dir` (model.mnet and run/). Returns the run directory. An
/// untrained model predicts one class everywhere and yields no pairs.
inline fs::path make_run(const fs::path& dir, std::uint64_t seed = 3, std::size_t images = 24,
                         std::size_t classes = 3, std::size_t size = 16) {
  Model<float> model = init_model<float>(tiny_spec(classes, size), seed);
  const Dataset shapes = generate_shapes_dataset(seed, 60, size);
  Dataset subset;
  subset.class_names = class_names(classes);
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (shapes.labels[i] >= classes) continue;
    subset.images.push_back(shapes.images[i]);
    subset.labels.push_back(shapes.labels[i]);
  }
  TrainConfig train_config;
  train_config.epochs = 8;
  train_config.seed = seed;
  model = train(std::move(model), subset, nullptr, train_config).model;
  const Dataset data = self_labelled(model, seed, images);
  AttackConfig config;
  config.eps = 16.0 / 255.0;
  config.seed = seed;
  const auto pairs = attack_dataset(model, data, config, 1);
  save_model(model, dir / "model.mnet");
  RunInfo info;
  info.model_path = "../model.mnet";
  info.attack = config;
  info.class_names = model.spec.class_names;
  info.height = info.width = size;
  info.data_path = "synthetic";
  info.data_split = "all";
  save_run(dir / "run", info, pairs);
  return dir / "run";
}

// ---------------------------------------------------------------------------
// Naive agglomerative clustering: cluster distances are recomputed from the
// original matrix over member leaves at every step.

inline double naive_cluster_distance(const DistanceMatrix& d, const std::vector<std::size_t>& a,
                                     const std::vector<std::size_t>& b, Linkage linkage) {
  double best = linkage == Linkage::Single ? std::numeric_limits<double>::infinity() : 0.0;
  double sum = 0;
  for (std::size_t i : a) {
    for (std::size_t j : b) {
      const double v = d(i, j);
      if (linkage == Linkage::Single) best = std::min(best, v);
      if (linkage == Linkage::Complete) best = std::max(best, v);
      sum += v;
    }
  }
  if (linkage == Linkage::Average) return sum / static_cast<double>(a.size() * b.size());
  return best;
}

inline std::vector<Merge> naive_agglomerate(const DistanceMatrix& d, Linkage linkage) {
  const std::size_t n = d.n;
  std::vector<std::vector<std::size_t>> members(n);
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < n; ++i) {
    members[i] = {i};
    active.push_back(i);
  }
  std::vector<Merge> merges;
  for (std::size_t step = 0; step + 1 < n; ++step) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bj = 0;
    for (std::size_t x = 0; x < active.size(); ++x) {
      for (std::size_t y = x + 1; y < active.size(); ++y) {
        const std::size_t i = std::min(active[x], active[y]), j = std::max(active[x], active[y]);
        const double v = naive_cluster_distance(d, members[i], members[j], linkage);
        if (v < best || (v == best && std::pair(i, j) < std::pair(bi, bj))) {
          best = v;
          bi = i;
          bj = j;
        }
      }
    }
    std::vector<std::size_t> joined = members[bi];
    joined.insert(joined.end(), members[bj].begin(), members[bj].end());
    merges.push_back({bi, bj, best, joined.size()});
    members.push_back(std::move(joined));
    std::erase(active, bi);
    std::erase(active, bj);
    active.push_back(n + step);
  }
  return merges;
}

inline DistanceMatrix random_distance_matrix(SplitMix64& rng, std::size_t n) {
  // Euclidean distances of random points in 5D: a realistic metric.
  std::vector<std::array<double, 5>> points(n);
  for (auto& p : points) {
    for (auto& v : p) v = rng.uniform();
  }
  DistanceMatrix d(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 5; ++k) s += (points[i][k] - points[j][k]) * (points[i][k] - points[j][k]);
      d(i, j) = d(j, i) = std::sqrt(s);
    }
  }
  return d;
}

inline Mask random_mask(SplitMix64& rng, std::size_t h, std::size_t w, double density) {
  Mask m(h, w);
  for (auto& b : m.bits) b = rng.uniform() < density ? 1 : 0;
  return m;
}

// ---------------------------------------------------------------------------
// Central finite differences for MiniNet-style models in double precision.

struct GradCheck {
  double max_relative_error = 0;
  std::size_t probes = 0;
  std::size_t skipped_kinks = 0;
};

// ReLU sign pattern and maxpool winners: equal signatures on both sides of
// a probe mean the loss is smooth along it.
inline std::vector<std::uint32_t> activation_signature(const Model<double>& model,
                                                      const ForwardCache<double>& cache) {
  std::vector<std::uint32_t> sig;
  for (std::size_t l = 0; l < model.spec.layers.size(); ++l) {
    if (std::holds_alternative<ReluLayer>(model.spec.layers[l])) {
      for (double v : cache.inputs[l].span()) sig.push_back(v > 0);
    }
  }
  for (const auto& winners : cache.argmax) {
    for (std::uint32_t w : winners) {
      sig.push_back(w);
    }
  }
  return sig;
}

inline double loss_at(const Model<double>& model, const Tensor<double>& batch, std::span<const std::size_t> labels,
                      Mode mode, std::vector<std::uint32_t>* signature) {
  ForwardCache<double> cache;
  const Tensor<double> logits = forward_batch(model, batch, mode, &cache);
  if (signature) *signature = activation_signature(model, cache);
  return cross_entropy(logits, labels);
}

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Probes `input_probes` random pixels and `param_probes` random trainable
/// parameters. Probes that straddle a ReLU or maxpool kink are redrawn.
inline GradCheck check_gradients(Model<double> model, Tensor<double> batch, const std::vector<std::size_t>& labels,
                                 Mode mode, SplitMix64& rng, std::size_t input_probes, std::size_t param_probes,
                                 double h = 1e-5, double floor = 1e-6) {
  GradCheck out;
  ForwardCache<double> cache;
  const Tensor<double> logits = forward_batch(model, batch, mode, &cache);
  Tensor<double> grad_logits;
  cross_entropy(logits, labels, &grad_logits);
  Gradients<double> grads = zero_gradients(model);
  const Tensor<double> grad_input = backward_batch(model, cache, grad_logits, &grads);

  auto probe = [&](double& slot, double analytic, auto&& evaluate) {
    const double saved = slot;
    std::vector<std::uint32_t> sig_plus, sig_minus;
    slot = saved + h;
    const double plus = evaluate(&sig_plus);
    slot = saved - h;
    const double minus = evaluate(&sig_minus);
    slot = saved;
    if (sig_plus != sig_minus) {
      ++out.skipped_kinks;
      return false;
    }
    const double numeric = (plus - minus) / (2 * h);
    out.max_relative_error = std::max(out.max_relative_error, relative_error(analytic, numeric, floor));
    ++out.probes;
    return true;
  };

  for (std::size_t done = 0, tries = 0; done < input_probes && tries < 20 * input_probes; ++tries) {
    const std::size_t i = rng.below(batch.size());
    if (probe(batch[i], grad_input[i],
              [&](std::vector<std::uint32_t>* sig) { return loss_at(model, batch, labels, mode, sig); })) {
      ++done;
    }
  }
  std::vector<std::pair<std::size_t, std::size_t>> trainable;
  for (std::size_t l = 0; l < model.params.size(); ++l) {
    for (std::size_t p = 0; p < model.params[l].size(); ++p) {
      if (is_trainable(model.spec.layers[l], p)) trainable.emplace_back(l, p);
    }
  }
  for (std::size_t done = 0, tries = 0; done < param_probes && tries < 20 * param_probes; ++tries) {
    const auto [l, p] = trainable[rng.below(trainable.size())];
    const std::size_t i = rng.below(model.params[l][p].size());
    if (probe(model.params[l][p][i], grads[l][p][i],
              [&](std::vector<std::uint32_t>* sig) { return loss_at(model, batch, labels, mode, sig); })) {
      ++done;
    }
  }
  return out;
}

}  // namespace advscope::test
