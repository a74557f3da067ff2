#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "advscope/tensor.hpp"

namespace advscope {

struct Conv2dLayer {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 1;
  bool operator==(const Conv2dLayer&) const = default;
};

struct BatchNormLayer {
  std::size_t channels = 0;
  double eps = 1e-5;
  double momentum = 0.1;
  bool operator==(const BatchNormLayer&) const = default;
};

struct ReluLayer {
  bool operator==(const ReluLayer&) const = default;
};

struct MaxPoolLayer {
  std::size_t kernel = 2;
  std::size_t stride = 2;
  bool operator==(const MaxPoolLayer&) const = default;
};

struct GlobalAvgPoolLayer {
  bool operator==(const GlobalAvgPoolLayer&) const = default;
};

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  bool operator==(const DenseLayer&) const = default;
};

using LayerSpec = std::variant<Conv2dLayer, BatchNormLayer, ReluLayer,
                               MaxPoolLayer, GlobalAvgPoolLayer, DenseLayer>;

std::string layer_name(const LayerSpec& layer);

/// Architecture description. The input is an RGB image of height x width;
/// tensors store it channel-major as (channels, height, width).
struct ModelSpec {
  std::vector<LayerSpec> layers;
  std::size_t class_count = 0;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 3;
  std::vector<std::string> class_names;

  Shape input_shape() const { return {channels, height, width}; }

  /// Output shape of every layer, throwing ValidationError when consecutive
  /// layers do not compose or the conv -> pool -> dense tail is violated.
  std::vector<Shape> layer_shapes() const;
  void validate() const { (void)layer_shapes(); }

  std::size_t pool_index() const;
  std::size_t dense_index() const { return layers.size() - 1; }
  /// Channel count of the last conv block, i.e. the analysed neurons.
  std::size_t neuron_count() const;
  /// Spatial extent (h, w) of the last conv feature maps.
  std::pair<std::size_t, std::size_t> feature_map_size() const;

  bool operator==(const ModelSpec&) const = default;

  /// conv3x3(16)-BN-ReLU-maxpool2 -> conv3x3(32)-BN-ReLU-maxpool2 ->
  /// conv3x3(64)-BN-ReLU -> global average pool -> dense(64 -> classes).
  static ModelSpec mininet(std::vector<std::string> class_names,
                           std::size_t image_size = 32);
};

/// Parameters per layer, in declaration order:
///   conv: weight (O, I, K, K), bias (O)
///   batchnorm: gamma, beta, running mean, running var (C each)
///   dense: weight (out, in), bias (out)
template <typename T>
struct Model {
  ModelSpec spec;
  std::vector<std::vector<Tensor<T>>> params;

  template <typename U>
  Model<U> cast() const {
    Model<U> out;
    out.spec = spec;
    out.params.resize(params.size());
    for (std::size_t l = 0; l < params.size(); ++l) {
      for (const auto& p : params[l]) out.params[l].push_back(p.template cast<U>());
    }
    return out;
  }

  const Tensor<T>& dense_weight() const { return params[spec.dense_index()][0]; }
  const Tensor<T>& dense_bias() const { return params[spec.dense_index()][1]; }
  std::size_t parameter_count() const;
};

/// Parameter tensor shapes for one layer (empty for parameter-free layers).
std::vector<Shape> parameter_shapes(const LayerSpec& layer);
/// Whether parameter `index` of `layer` receives gradient updates. Batch norm
/// running statistics are buffers, not trainable parameters.
bool is_trainable(const LayerSpec& layer, std::size_t index);

/// He-uniform conv/dense weights, zero biases, BN gamma=1 beta=0, running
/// mean 0 and var 1. Deterministic in `seed`.
template <typename T>
Model<T> init_model(const ModelSpec& spec, std::uint64_t seed);

enum class Mode { Inference, Training };

/// Intermediate state kept by forward_batch for the backward pass.
template <typename T>
struct ForwardCache {
  std::vector<Tensor<T>> inputs;                    // input of each layer
  std::vector<std::vector<std::uint32_t>> argmax;   // maxpool winners
  std::vector<std::vector<double>> batch_mean;      // BN (training mode)
  std::vector<std::vector<double>> batch_var;       // BN biased variance
  std::vector<std::vector<double>> inv_std;         // BN (training mode)
  Mode mode = Mode::Inference;
};

template <typename T>
using Gradients = std::vector<std::vector<Tensor<T>>>;

template <typename T>
Gradients<T> zero_gradients(const Model<T>& model);

/// Batched forward pass over (N, C, H, W) input; returns logits (N, classes).
/// In training mode batch norm uses batch statistics, which are recorded in
/// the cache so the caller can update running statistics.
template <typename T>
Tensor<T> forward_batch(const Model<T>& model, const Tensor<T>& batch, Mode mode,
                        ForwardCache<T>* cache = nullptr);

/// Backpropagates grad_logits through a cached forward pass. Parameter
/// gradients are accumulated into `grads` when non-null; returns the input
/// gradient (N, C, H, W).
template <typename T>
Tensor<T> backward_batch(const Model<T>& model, const ForwardCache<T>& cache,
                         const Tensor<T>& grad_logits, Gradients<T>* grads);

/// Mean cross-entropy over the batch, computed through log-softmax. Writes
/// d(loss)/d(logits) when grad is non-null.
template <typename T>
double cross_entropy(const Tensor<T>& logits, std::span<const std::size_t> labels,
                     Tensor<T>* grad = nullptr);

std::vector<double> softmax(std::span<const double> logits);

struct ForwardTrace {
  Tensor<float> last_conv_maps;  // (n, h_f, w_f)
  std::vector<double> pooled;    // n
  std::vector<double> logits;    // classes
  std::vector<double> probabilities;
  std::size_t predicted_label = 0;
};

/// Inference-mode forward pass over one (C, H, W) image with pixels in [0, 1].
template <typename T>
ForwardTrace forward(const Model<T>& model, const Tensor<T>& image);

/// Inference over many images, parallel across images.
template <typename T>
std::vector<ForwardTrace> forward_many(const Model<T>& model,
                                       std::span<const Tensor<T>> images,
                                       std::size_t threads = 0);

/// d CrossEntropy(f(image), label) / d image in inference mode.
template <typename T>
Tensor<T> input_gradient(const Model<T>& model, const Tensor<T>& image,
                         std::size_t true_label);

/// Dense layer plus softmax applied to a pooled vector.
template <typename T>
std::vector<double> dense_logits(const Model<T>& model, std::span<const double> pooled);

}  // namespace advscope
