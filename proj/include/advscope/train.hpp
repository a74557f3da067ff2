#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "advscope/dataset.hpp"
#include "advscope/model.hpp"

namespace advscope {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::uint64_t seed = 1;

  void validate() const;
};

struct EpochReport {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0;
  double train_accuracy = 0;
  double test_accuracy = 0;  // NaN when no test set was given
};

struct TrainResult {
  Model<float> model;
  std::vector<EpochReport> history;
};

using EpochCallback = std::function<void(const EpochReport&)>;

/// Minibatch SGD with momentum on mean cross-entropy. Batch norm runs in
/// training mode and updates its running statistics; accuracies are measured
/// afterwards in inference mode. Single-threaded and deterministic in seed.
/// A non-finite loss raises TrainingError.
TrainResult train(Model<float> model, const Dataset& train_set, const Dataset* test_set,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Fraction of images whose inference-mode prediction equals the label.
double accuracy(const Model<float>& model, const Dataset& data, std::size_t threads = 0);

}  // namespace advscope
