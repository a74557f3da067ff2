#include "advscope/train.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "advscope/parallel.hpp"
#include "advscope/random.hpp"

namespace advscope {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ValidationError("batch size must be positive", "batch_size");
  if (!(learning_rate > 0)) throw ValidationError("learning rate must be positive", "lr");
  if (!(momentum >= 0 && momentum < 1)) throw ValidationError("momentum must lie in [0, 1)", "momentum");
}

double accuracy(const Model<float>& model, const Dataset& data, std::size_t threads) {
  if (data.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::vector<char> correct(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) {
    correct[i] = forward(model, data.images[i]).predicted_label == data.labels[i];
  });
  return static_cast<double>(std::accumulate(correct.begin(), correct.end(), std::size_t{0})) /
         static_cast<double>(data.size());
}

TrainResult train(Model<float> model, const Dataset& train_set, const Dataset* test_set,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (config.epochs > 0 && train_set.empty()) throw ValidationError("training set is empty", "data");
  for (std::size_t label : train_set.labels) {
    if (label >= model.spec.class_count) throw ValidationError("label out of range", "data");
  }
  const Shape in = model.spec.input_shape();
  const std::size_t pixels = shape_size(in);

  Gradients<float> velocity = zero_gradients(model);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  SplitMix64 rng(derive_seed(config.seed, 0x7261696e));

  TrainResult result;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle(order, rng);
    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, order.size() - start);
      Tensor<float> batch({count, in[0], in[1], in[2]});
      std::vector<std::size_t> labels(count);
      for (std::size_t b = 0; b < count; ++b) {
        const auto& image = train_set.images[order[start + b]];
        if (image.shape() != in) throw ValidationError("image shape mismatch", "data");
        std::copy(image.data(), image.data() + pixels, batch.data() + b * pixels);
        labels[b] = train_set.labels[order[start + b]];
      }
      ForwardCache<float> cache;
      Tensor<float> logits = forward_batch(model, batch, Mode::Training, &cache);
      Tensor<float> grad_logits;
      const double loss = cross_entropy(logits, std::span<const std::size_t>(labels), &grad_logits);
      if (!std::isfinite(loss)) {
        throw TrainingError("training diverged: loss is not finite in epoch " + std::to_string(epoch));
      }
      loss_sum += loss;
      ++batches;

      Gradients<float> grads = zero_gradients(model);
      backward_batch(model, cache, grad_logits, &grads);

      for (std::size_t l = 0; l < model.params.size(); ++l) {
        const LayerSpec& layer = model.spec.layers[l];
        for (std::size_t p = 0; p < model.params[l].size(); ++p) {
          if (!is_trainable(layer, p)) continue;
          auto& param = model.params[l][p];
          auto& vel = velocity[l][p];
          const auto& g = grads[l][p];
          for (std::size_t i = 0; i < param.size(); ++i) {
            vel[i] = static_cast<float>(config.momentum * vel[i] + g[i]);
            param[i] -= static_cast<float>(config.learning_rate * vel[i]);
          }
        }
        if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
          const double unbias = count * cache.inputs[l].dim(2) * cache.inputs[l].dim(3);
          const double factor = unbias > 1 ? unbias / (unbias - 1) : 1.0;
          for (std::size_t ch = 0; ch < bn->channels; ++ch) {
            auto& mean = model.params[l][2][ch];
            auto& var = model.params[l][3][ch];
            mean = static_cast<float>((1 - bn->momentum) * mean + bn->momentum * cache.batch_mean[l][ch]);
            var = static_cast<float>((1 - bn->momentum) * var +
                                     bn->momentum * cache.batch_var[l][ch] * factor);
          }
        }
      }
    }
    for (const auto& layer : model.params) {
      for (const auto& p : layer) {
        if (!all_finite(p)) throw TrainingError("training diverged: non-finite parameters");
      }
    }
    EpochReport report;
    report.epoch = epoch;
    report.mean_loss = loss_sum / static_cast<double>(std::max<std::size_t>(batches, 1));
    report.train_accuracy = accuracy(model, train_set);
    report.test_accuracy =
        test_set ? accuracy(model, *test_set) : std::numeric_limits<double>::quiet_NaN();
    result.history.push_back(report);
    if (on_epoch) on_epoch(report);
  }
  result.model = std::move(model);
  return result;
}

}  // namespace advscope
