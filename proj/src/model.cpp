#include "advscope/model.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

#include "advscope/parallel.hpp"
#include "advscope/random.hpp"

namespace advscope {

std::string shape_to_string(const Shape& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + ")";
}

namespace {

template <class... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

bool is_conv_block(const LayerSpec& layer) {
  return std::holds_alternative<Conv2dLayer>(layer) ||
         std::holds_alternative<BatchNormLayer>(layer) ||
         std::holds_alternative<ReluLayer>(layer);
}

std::size_t conv_out(std::size_t in, std::size_t kernel, std::size_t stride,
                     std::size_t pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

}  // namespace

std::string layer_name(const LayerSpec& layer) {
  return std::visit(Overloaded{
                        [](const Conv2dLayer&) { return std::string("conv2d"); },
                        [](const BatchNormLayer&) { return std::string("batchnorm"); },
                        [](const ReluLayer&) { return std::string("relu"); },
                        [](const MaxPoolLayer&) { return std::string("maxpool"); },
                        [](const GlobalAvgPoolLayer&) { return std::string("globalavgpool"); },
                        [](const DenseLayer&) { return std::string("dense"); },
                    },
                    layer);
}

std::vector<Shape> ModelSpec::layer_shapes() const {
  if (channels == 0 || height == 0 || width == 0) {
    throw ValidationError("input extents must be positive", "input");
  }
  if (class_count == 0) throw ValidationError("class_count must be positive", "class_count");
  if (!class_names.empty() && class_names.size() != class_count) {
    throw ValidationError("class_names length differs from class_count", "class_names");
  }
  if (layers.size() < 2) throw ValidationError("model needs at least pool and dense layers", "layers");

  std::vector<Shape> shapes;
  Shape current = input_shape();
  std::size_t pools = 0;
  std::size_t last_conv_channels = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& layer = layers[i];
    const std::string where = "layers[" + std::to_string(i) + "]";
    auto need_spatial = [&] {
      if (current.size() != 3) throw ValidationError(where + ": expects a spatial input", where);
    };
    std::visit(
        Overloaded{
            [&](const Conv2dLayer& l) {
              need_spatial();
              if (l.in_channels != current[0]) {
                throw ValidationError(where + ": conv in_channels " + std::to_string(l.in_channels) +
                                          " != incoming " + std::to_string(current[0]),
                                      where);
              }
              if (l.out_channels == 0 || l.kernel == 0 || l.stride == 0) {
                throw ValidationError(where + ": conv extents must be positive", where);
              }
              if (current[1] + 2 * l.pad < l.kernel || current[2] + 2 * l.pad < l.kernel) {
                throw ValidationError(where + ": kernel larger than padded input", where);
              }
              current = {l.out_channels, conv_out(current[1], l.kernel, l.stride, l.pad),
                         conv_out(current[2], l.kernel, l.stride, l.pad)};
              last_conv_channels = l.out_channels;
            },
            [&](const BatchNormLayer& l) {
              need_spatial();
              if (l.channels != current[0]) {
                throw ValidationError(where + ": batchnorm channels mismatch", where);
              }
              if (!(l.eps > 0)) throw ValidationError(where + ": batchnorm eps must be positive", where);
            },
            [&](const ReluLayer&) { need_spatial(); },
            [&](const MaxPoolLayer& l) {
              need_spatial();
              if (l.kernel == 0 || l.stride == 0 || current[1] < l.kernel || current[2] < l.kernel) {
                throw ValidationError(where + ": invalid maxpool window", where);
              }
              current = {current[0], conv_out(current[1], l.kernel, l.stride, 0),
                         conv_out(current[2], l.kernel, l.stride, 0)};
            },
            [&](const GlobalAvgPoolLayer&) {
              need_spatial();
              ++pools;
              if (i + 2 != layers.size()) {
                throw ValidationError(where + ": globalavgpool must directly precede the final dense layer",
                                      where);
              }
              if (i == 0 || !is_conv_block(layers[i - 1])) {
                throw ValidationError(where + ": globalavgpool must follow a conv block", where);
              }
              current = {current[0]};
            },
            [&](const DenseLayer& l) {
              if (current.size() != 1 || l.in != current[0]) {
                throw ValidationError(where + ": dense input width mismatch", where);
              }
              if (i + 1 != layers.size()) throw ValidationError(where + ": dense must be last", where);
              if (l.out != class_count) throw ValidationError(where + ": dense out != class_count", where);
              if (l.in != last_conv_channels) {
                throw ValidationError(where + ": dense width must equal last conv channels", where);
              }
              current = {l.out};
            },
        },
        layer);
    shapes.push_back(current);
  }
  if (pools != 1) throw ValidationError("model needs exactly one globalavgpool", "layers");
  if (!std::holds_alternative<DenseLayer>(layers.back())) {
    throw ValidationError("last layer must be dense", "layers");
  }
  return shapes;
}

std::size_t ModelSpec::pool_index() const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (std::holds_alternative<GlobalAvgPoolLayer>(layers[i])) return i;
  }
  throw ValidationError("model has no globalavgpool", "layers");
}

std::size_t ModelSpec::neuron_count() const {
  return std::get<DenseLayer>(layers.back()).in;
}

std::pair<std::size_t, std::size_t> ModelSpec::feature_map_size() const {
  auto shapes = layer_shapes();
  const Shape& maps = shapes[pool_index() - 1];
  return {maps[1], maps[2]};
}

ModelSpec ModelSpec::mininet(std::vector<std::string> class_names, std::size_t image_size) {
  ModelSpec spec;
  spec.class_count = class_names.size();
  spec.class_names = std::move(class_names);
  spec.height = spec.width = image_size;
  spec.channels = 3;
  spec.layers = {
      Conv2dLayer{3, 16, 3, 1, 1},  BatchNormLayer{16}, ReluLayer{}, MaxPoolLayer{2, 2},
      Conv2dLayer{16, 32, 3, 1, 1}, BatchNormLayer{32}, ReluLayer{}, MaxPoolLayer{2, 2},
      Conv2dLayer{32, 64, 3, 1, 1}, BatchNormLayer{64}, ReluLayer{}, GlobalAvgPoolLayer{},
      DenseLayer{64, spec.class_count},
  };
  spec.validate();
  return spec;
}

std::vector<Shape> parameter_shapes(const LayerSpec& layer) {
  return std::visit(
      Overloaded{
          [](const Conv2dLayer& l) {
            return std::vector<Shape>{{l.out_channels, l.in_channels, l.kernel, l.kernel},
                                      {l.out_channels}};
          },
          [](const BatchNormLayer& l) {
            return std::vector<Shape>{{l.channels}, {l.channels}, {l.channels}, {l.channels}};
          },
          [](const DenseLayer& l) { return std::vector<Shape>{{l.out, l.in}, {l.out}}; },
          [](const auto&) { return std::vector<Shape>{}; },
      },
      layer);
}

bool is_trainable(const LayerSpec& layer, std::size_t index) {
  if (std::holds_alternative<BatchNormLayer>(layer)) return index < 2;
  return true;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t count = 0;
  for (const auto& layer : params) {
    for (const auto& p : layer) count += p.size();
  }
  return count;
}

template <typename T>
Model<T> init_model(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Model<T> model;
  model.spec = spec;
  SplitMix64 rng(seed);
  for (const auto& layer : spec.layers) {
    std::vector<Tensor<T>> params;
    for (const Shape& shape : parameter_shapes(layer)) params.emplace_back(shape);
    auto he_uniform = [&](Tensor<T>& weight, std::size_t fan_in) {
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (auto& w : weight.span()) w = static_cast<T>(rng.uniform(-limit, limit));
    };
    if (const auto* conv = std::get_if<Conv2dLayer>(&layer)) {
      he_uniform(params[0], conv->in_channels * conv->kernel * conv->kernel);
    } else if (const auto* dense = std::get_if<DenseLayer>(&layer)) {
      he_uniform(params[0], dense->in);
    } else if (std::holds_alternative<BatchNormLayer>(layer)) {
      params[0].fill(T{1});
      params[3].fill(T{1});
    }
    model.params.push_back(std::move(params));
  }
  return model;
}

template <typename T>
Gradients<T> zero_gradients(const Model<T>& model) {
  Gradients<T> grads(model.params.size());
  for (std::size_t l = 0; l < model.params.size(); ++l) {
    for (const auto& p : model.params[l]) grads[l].emplace_back(p.shape());
  }
  return grads;
}

namespace {

// (C, H, W) image -> (C*K*K, Ho*Wo) patch matrix.
template <typename T>
void im2col(const T* image, std::size_t channels, std::size_t height, std::size_t width,
            const Conv2dLayer& l, std::size_t out_h, std::size_t out_w, T* col) {
  const std::size_t plane = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < l.kernel; ++ky) {
      for (std::size_t kx = 0; kx < l.kernel; ++kx) {
        T* row = col + ((c * l.kernel + ky) * l.kernel + kx) * plane;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * l.stride + ky) -
                                   static_cast<std::ptrdiff_t>(l.pad);
          T* dst = row + oy * out_w;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(height)) {
            std::fill(dst, dst + out_w, T{0});
            continue;
          }
          const T* src = image + (c * height + static_cast<std::size_t>(y)) * width;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * l.stride + kx) -
                                     static_cast<std::ptrdiff_t>(l.pad);
            dst[ox] = (x < 0 || x >= static_cast<std::ptrdiff_t>(width)) ? T{0} : src[x];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, std::size_t channels, std::size_t height, std::size_t width,
            const Conv2dLayer& l, std::size_t out_h, std::size_t out_w, T* image) {
  const std::size_t plane = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < l.kernel; ++ky) {
      for (std::size_t kx = 0; kx < l.kernel; ++kx) {
        const T* row = col + ((c * l.kernel + ky) * l.kernel + kx) * plane;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * l.stride + ky) -
                                   static_cast<std::ptrdiff_t>(l.pad);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(height)) continue;
          T* dst = image + (c * height + static_cast<std::size_t>(y)) * width;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * l.stride + kx) -
                                     static_cast<std::ptrdiff_t>(l.pad);
            if (x >= 0 && x < static_cast<std::ptrdiff_t>(width)) dst[x] += row[oy * out_w + ox];
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> conv_forward(const Conv2dLayer& l, const std::vector<Tensor<T>>& p, const Tensor<T>& x) {
  const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = conv_out(h, l.kernel, l.stride, l.pad);
  const std::size_t ow = conv_out(w, l.kernel, l.stride, l.pad);
  const std::size_t patch = l.in_channels * l.kernel * l.kernel;
  Tensor<T> out({n, l.out_channels, oh, ow});
  std::vector<T> col(patch * oh * ow);
  ConstMatrixMap<T> weight(p[0].data(), l.out_channels, patch);
  for (std::size_t b = 0; b < n; ++b) {
    im2col(x.data() + b * l.in_channels * h * w, l.in_channels, h, w, l, oh, ow, col.data());
    MatrixMap<T> y(out.data() + b * l.out_channels * oh * ow, l.out_channels, oh * ow);
    y.noalias() = weight * ConstMatrixMap<T>(col.data(), patch, oh * ow);
    for (std::size_t o = 0; o < l.out_channels; ++o) y.row(o).array() += p[1][o];
  }
  return out;
}

template <typename T>
Tensor<T> conv_backward(const Conv2dLayer& l, const std::vector<Tensor<T>>& p, const Tensor<T>& x,
                        const Tensor<T>& dy, std::vector<Tensor<T>>* dp) {
  const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = dy.dim(2), ow = dy.dim(3);
  const std::size_t patch = l.in_channels * l.kernel * l.kernel;
  Tensor<T> dx(x.shape());
  std::vector<T> col(patch * oh * ow);
  std::vector<T> dcol(patch * oh * ow);
  ConstMatrixMap<T> weight(p[0].data(), l.out_channels, patch);
  for (std::size_t b = 0; b < n; ++b) {
    ConstMatrixMap<T> g(dy.data() + b * l.out_channels * oh * ow, l.out_channels, oh * ow);
    if (dp) {
      im2col(x.data() + b * l.in_channels * h * w, l.in_channels, h, w, l, oh, ow, col.data());
      MatrixMap<T> dw((*dp)[0].data(), l.out_channels, patch);
      dw.noalias() += g * ConstMatrixMap<T>(col.data(), patch, oh * ow).transpose();
      for (std::size_t o = 0; o < l.out_channels; ++o) {
        double acc = 0;
        for (std::size_t i = 0; i < oh * ow; ++i) acc += g(o, i);
        (*dp)[1][o] += static_cast<T>(acc);
      }
    }
    MatrixMap<T> dc(dcol.data(), patch, oh * ow);
    dc.noalias() = weight.transpose() * g;
    col2im(dcol.data(), l.in_channels, h, w, l, oh, ow, dx.data() + b * l.in_channels * h * w);
  }
  return dx;
}

}  // namespace

template <typename T>
Tensor<T> forward_batch(const Model<T>& model, const Tensor<T>& batch, Mode mode,
                        ForwardCache<T>* cache) {
  const ModelSpec& spec = model.spec;
  const Shape in = spec.input_shape();
  if (batch.rank() != 4 || batch.dim(1) != in[0] || batch.dim(2) != in[1] || batch.dim(3) != in[2]) {
    throw ValidationError("batch shape " + shape_to_string(batch.shape()) +
                              " does not match model input " + shape_to_string(in),
                          "image");
  }
  const std::size_t layers = spec.layers.size();
  if (cache) {
    cache->mode = mode;
    cache->inputs.assign(layers, {});
    cache->argmax.assign(layers, {});
    cache->batch_mean.assign(layers, {});
    cache->batch_var.assign(layers, {});
    cache->inv_std.assign(layers, {});
  }
  Tensor<T> x = batch;
  const std::size_t n = batch.dim(0);
  for (std::size_t li = 0; li < layers; ++li) {
    const auto& p = model.params[li];
    Tensor<T> y;
    std::visit(
        Overloaded{
            [&](const Conv2dLayer& l) { y = conv_forward(l, p, x); },
            [&](const BatchNormLayer& l) {
              const std::size_t c = x.dim(1), plane = x.dim(2) * x.dim(3);
              y = Tensor<T>(x.shape());
              std::vector<double> mean(c), var(c), inv(c);
              for (std::size_t ch = 0; ch < c; ++ch) {
                if (mode == Mode::Training) {
                  double sum = 0;
                  for (std::size_t b = 0; b < n; ++b) {
                    const T* src = x.data() + (b * c + ch) * plane;
                    for (std::size_t i = 0; i < plane; ++i) sum += src[i];
                  }
                  const double m = sum / static_cast<double>(n * plane);
                  double sq = 0;
                  for (std::size_t b = 0; b < n; ++b) {
                    const T* src = x.data() + (b * c + ch) * plane;
                    for (std::size_t i = 0; i < plane; ++i) sq += (src[i] - m) * (src[i] - m);
                  }
                  mean[ch] = m;
                  var[ch] = sq / static_cast<double>(n * plane);
                } else {
                  mean[ch] = p[2][ch];
                  var[ch] = p[3][ch];
                }
                inv[ch] = 1.0 / std::sqrt(var[ch] + l.eps);
                const double scale = p[0][ch] * inv[ch];
                const double shift = p[1][ch] - scale * mean[ch];
                for (std::size_t b = 0; b < n; ++b) {
                  const T* src = x.data() + (b * c + ch) * plane;
                  T* dst = y.data() + (b * c + ch) * plane;
                  for (std::size_t i = 0; i < plane; ++i) {
                    dst[i] = static_cast<T>(scale * src[i] + shift);
                  }
                }
              }
              if (cache) {
                cache->batch_mean[li] = std::move(mean);
                cache->batch_var[li] = std::move(var);
                cache->inv_std[li] = std::move(inv);
              }
            },
            [&](const ReluLayer&) {
              y = x;
              for (auto& v : y.span()) v = v > T{0} ? v : T{0};
            },
            [&](const MaxPoolLayer& l) {
              const std::size_t c = x.dim(1), h = x.dim(2), w = x.dim(3);
              const std::size_t oh = conv_out(h, l.kernel, l.stride, 0);
              const std::size_t ow = conv_out(w, l.kernel, l.stride, 0);
              y = Tensor<T>({n, c, oh, ow});
              std::vector<std::uint32_t> winners(y.size());
              for (std::size_t plane = 0; plane < n * c; ++plane) {
                const T* src = x.data() + plane * h * w;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                  for (std::size_t ox = 0; ox < ow; ++ox) {
                    std::size_t best = (oy * l.stride) * w + ox * l.stride;
                    for (std::size_t ky = 0; ky < l.kernel; ++ky) {
                      for (std::size_t kx = 0; kx < l.kernel; ++kx) {
                        const std::size_t idx = (oy * l.stride + ky) * w + ox * l.stride + kx;
                        if (src[idx] > src[best]) best = idx;
                      }
                    }
                    const std::size_t o = (plane * oh + oy) * ow + ox;
                    y[o] = src[best];
                    winners[o] = static_cast<std::uint32_t>(best);
                  }
                }
              }
              if (cache) cache->argmax[li] = std::move(winners);
            },
            [&](const GlobalAvgPoolLayer&) {
              const std::size_t c = x.dim(1), plane = x.dim(2) * x.dim(3);
              y = Tensor<T>({n, c});
              for (std::size_t i = 0; i < n * c; ++i) {
                double sum = 0;
                const T* src = x.data() + i * plane;
                for (std::size_t k = 0; k < plane; ++k) sum += src[k];
                y[i] = static_cast<T>(sum / static_cast<double>(plane));
              }
            },
            [&](const DenseLayer& l) {
              y = Tensor<T>({n, l.out});
              for (std::size_t b = 0; b < n; ++b) {
                const T* src = x.data() + b * l.in;
                for (std::size_t o = 0; o < l.out; ++o) {
                  const T* row = p[0].data() + o * l.in;
                  double acc = p[1][o];
                  for (std::size_t k = 0; k < l.in; ++k) acc += static_cast<double>(row[k]) * src[k];
                  y[b * l.out + o] = static_cast<T>(acc);
                }
              }
            },
        },
        spec.layers[li]);
    if (cache) {
      cache->inputs[li] = std::move(x);
    }
    x = std::move(y);
  }
  return x;
}

template <typename T>
Tensor<T> backward_batch(const Model<T>& model, const ForwardCache<T>& cache,
                         const Tensor<T>& grad_logits, Gradients<T>* grads) {
  const ModelSpec& spec = model.spec;
  Tensor<T> g = grad_logits;
  for (std::size_t li = spec.layers.size(); li-- > 0;) {
    const auto& p = model.params[li];
    const Tensor<T>& x = cache.inputs[li];
    std::vector<Tensor<T>>* dp = grads ? &(*grads)[li] : nullptr;
    const std::size_t n = x.dim(0);
    Tensor<T> dx;
    std::visit(
        Overloaded{
            [&](const Conv2dLayer& l) { dx = conv_backward(l, p, x, g, dp); },
            [&](const BatchNormLayer&) {
              const std::size_t c = x.dim(1), plane = x.dim(2) * x.dim(3);
              const double count = static_cast<double>(n * plane);
              dx = Tensor<T>(x.shape());
              for (std::size_t ch = 0; ch < c; ++ch) {
                const double mean = cache.batch_mean[li][ch];
                const double inv = cache.inv_std[li][ch];
                const double gamma = p[0][ch];
                double sum_g = 0, sum_gx = 0;
                for (std::size_t b = 0; b < n; ++b) {
                  const T* gs = g.data() + (b * c + ch) * plane;
                  const T* xs = x.data() + (b * c + ch) * plane;
                  for (std::size_t i = 0; i < plane; ++i) {
                    sum_g += gs[i];
                    sum_gx += gs[i] * (xs[i] - mean) * inv;
                  }
                }
                if (dp) {
                  (*dp)[0][ch] += static_cast<T>(sum_gx);
                  (*dp)[1][ch] += static_cast<T>(sum_g);
                }
                for (std::size_t b = 0; b < n; ++b) {
                  const T* gs = g.data() + (b * c + ch) * plane;
                  const T* xs = x.data() + (b * c + ch) * plane;
                  T* ds = dx.data() + (b * c + ch) * plane;
                  for (std::size_t i = 0; i < plane; ++i) {
                    if (cache.mode == Mode::Training) {
                      const double xhat = (xs[i] - mean) * inv;
                      ds[i] = static_cast<T>(gamma * inv / count *
                                             (count * gs[i] - sum_g - xhat * sum_gx));
                    } else {
                      ds[i] = static_cast<T>(gamma * inv * gs[i]);
                    }
                  }
                }
              }
            },
            [&](const ReluLayer&) {
              dx = g;
              for (std::size_t i = 0; i < dx.size(); ++i) {
                if (!(x[i] > T{0})) dx[i] = T{0};
              }
            },
            [&](const MaxPoolLayer&) {
              dx = Tensor<T>(x.shape());
              const std::size_t in_plane = x.dim(2) * x.dim(3);
              const std::size_t out_plane = g.dim(2) * g.dim(3);
              const auto& winners = cache.argmax[li];
              for (std::size_t o = 0; o < g.size(); ++o) {
                dx[(o / out_plane) * in_plane + winners[o]] += g[o];
              }
            },
            [&](const GlobalAvgPoolLayer&) {
              const std::size_t plane = x.dim(2) * x.dim(3);
              dx = Tensor<T>(x.shape());
              for (std::size_t i = 0; i < g.size(); ++i) {
                const T v = static_cast<T>(g[i] / static_cast<double>(plane));
                std::fill(dx.data() + i * plane, dx.data() + (i + 1) * plane, v);
              }
            },
            [&](const DenseLayer& l) {
              dx = Tensor<T>(x.shape());
              for (std::size_t b = 0; b < n; ++b) {
                const T* src = x.data() + b * l.in;
                const T* gy = g.data() + b * l.out;
                T* dsrc = dx.data() + b * l.in;
                for (std::size_t o = 0; o < l.out; ++o) {
                  const T* row = p[0].data() + o * l.in;
                  for (std::size_t k = 0; k < l.in; ++k) dsrc[k] += gy[o] * row[k];
                  if (dp) {
                    T* drow = (*dp)[0].data() + o * l.in;
                    for (std::size_t k = 0; k < l.in; ++k) drow[k] += gy[o] * src[k];
                    (*dp)[1][o] += gy[o];
                  }
                }
              }
            },
        },
        spec.layers[li]);
    g = std::move(dx);
  }
  return g;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double peak = *std::max_element(logits.begin(), logits.end());
  double sum = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - peak);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
  return out;
}

template <typename T>
double cross_entropy(const Tensor<T>& logits, std::span<const std::size_t> labels, Tensor<T>* grad) {
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n) throw ValidationError("label count differs from batch size", "labels");
  if (grad) *grad = Tensor<T>(logits.shape());
  double total = 0;
  std::vector<double> row(c);
  for (std::size_t b = 0; b < n; ++b) {
    if (labels[b] >= c) throw ValidationError("label out of range", "labels");
    for (std::size_t k = 0; k < c; ++k) row[k] = logits[b * c + k];
    const double peak = *std::max_element(row.begin(), row.end());
    double sum = 0;
    for (double v : row) sum += std::exp(v - peak);
    const double log_norm = peak + std::log(sum);
    total -= row[labels[b]] - log_norm;
    if (grad) {
      for (std::size_t k = 0; k < c; ++k) {
        const double prob = std::exp(row[k] - log_norm);
        (*grad)[b * c + k] =
            static_cast<T>((prob - (k == labels[b] ? 1.0 : 0.0)) / static_cast<double>(n));
      }
    }
  }
  return total / static_cast<double>(n);
}

namespace {

template <typename T>
void check_image(const ModelSpec& spec, const Tensor<T>& image) {
  if (image.shape() != spec.input_shape()) {
    throw ValidationError("image shape " + shape_to_string(image.shape()) + " does not match model input " +
                              shape_to_string(spec.input_shape()),
                          "image");
  }
  for (T v : image.span()) {
    if (!(v >= T{0} && v <= T{1})) {
      throw ValidationError("image pixels must lie in [0, 1]", "image");
    }
  }
}

template <typename T>
Tensor<T> as_batch(const Tensor<T>& image) {
  Shape shape = image.shape();
  shape.insert(shape.begin(), 1);
  return Tensor<T>(std::move(shape), image.values());
}

}  // namespace

template <typename T>
ForwardTrace forward(const Model<T>& model, const Tensor<T>& image) {
  check_image(model.spec, image);
  ForwardCache<T> cache;
  Tensor<T> logits = forward_batch(model, as_batch(image), Mode::Inference, &cache);
  const std::size_t pool = model.spec.pool_index();
  ForwardTrace trace;
  const Tensor<T>& maps = cache.inputs[pool];
  trace.last_conv_maps = Tensor<float>({maps.dim(1), maps.dim(2), maps.dim(3)},
                                       std::vector<float>(maps.span().begin(), maps.span().end()));
  const Tensor<T>& pooled = cache.inputs[pool + 1];
  trace.pooled.assign(pooled.span().begin(), pooled.span().end());
  trace.logits.assign(logits.span().begin(), logits.span().end());
  trace.probabilities = softmax(trace.logits);
  trace.predicted_label = static_cast<std::size_t>(
      std::max_element(trace.probabilities.begin(), trace.probabilities.end()) -
      trace.probabilities.begin());
  return trace;
}

template <typename T>
std::vector<ForwardTrace> forward_many(const Model<T>& model, std::span<const Tensor<T>> images,
                                       std::size_t threads) {
  std::vector<ForwardTrace> traces(images.size());
  parallel_for(images.size(), threads, [&](std::size_t i) { traces[i] = forward(model, images[i]); });
  return traces;
}

template <typename T>
Tensor<T> input_gradient(const Model<T>& model, const Tensor<T>& image, std::size_t true_label) {
  check_image(model.spec, image);
  if (true_label >= model.spec.class_count) throw ValidationError("label out of range", "true_label");
  ForwardCache<T> cache;
  Tensor<T> logits = forward_batch(model, as_batch(image), Mode::Inference, &cache);
  Tensor<T> grad_logits;
  const std::size_t labels[] = {true_label};
  cross_entropy(logits, std::span<const std::size_t>(labels), &grad_logits);
  Tensor<T> grad = backward_batch<T>(model, cache, grad_logits, nullptr);
  return Tensor<T>(image.shape(), std::move(grad.values()));
}

template <typename T>
std::vector<double> dense_logits(const Model<T>& model, std::span<const double> pooled) {
  const Tensor<T>& weight = model.dense_weight();
  const Tensor<T>& bias = model.dense_bias();
  const std::size_t c = weight.dim(0), n = weight.dim(1);
  if (pooled.size() != n) throw ValidationError("pooled vector length mismatch", "pooled");
  std::vector<double> logits(c);
  for (std::size_t o = 0; o < c; ++o) {
    double acc = bias[o];
    for (std::size_t k = 0; k < n; ++k) acc += static_cast<double>(weight[o * n + k]) * pooled[k];
    logits[o] = acc;
  }
  return logits;
}

#define ADVSCOPE_INSTANTIATE(T)                                                                     \
  template struct Model<T>;                                                                         \
  template Model<T> init_model<T>(const ModelSpec&, std::uint64_t);                                 \
  template Gradients<T> zero_gradients<T>(const Model<T>&);                                         \
  template Tensor<T> forward_batch<T>(const Model<T>&, const Tensor<T>&, Mode, ForwardCache<T>*);   \
  template Tensor<T> backward_batch<T>(const Model<T>&, const ForwardCache<T>&, const Tensor<T>&,   \
                                       Gradients<T>*);                                              \
  template double cross_entropy<T>(const Tensor<T>&, std::span<const std::size_t>, Tensor<T>*);     \
  template ForwardTrace forward<T>(const Model<T>&, const Tensor<T>&);                              \
  template std::vector<ForwardTrace> forward_many<T>(const Model<T>&, std::span<const Tensor<T>>,   \
                                                     std::size_t);                                  \
  template Tensor<T> input_gradient<T>(const Model<T>&, const Tensor<T>&, std::size_t);             \
  template std::vector<double> dense_logits<T>(const Model<T>&, std::span<const double>);

ADVSCOPE_INSTANTIATE(float)
ADVSCOPE_INSTANTIATE(double)

}  // namespace advscope
