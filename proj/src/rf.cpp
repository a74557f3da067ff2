#include "advscope/rf.hpp"

#include <algorithm>
#include <numeric>

#include "advscope/image_ops.hpp"

namespace advscope {

RfParams resolve(const RfParams& params, const ModelSpec& spec) {
  RfParams out = params;
  if (out.rf_size == 0) out.rf_size = std::max(spec.height, spec.width);
  return out;
}

Tensor<float> apply_mask(const Tensor<float>& resized_image, const Mask& mask) {
  const std::size_t plane = mask.size();
  if (resized_image.size() != 3 * plane) throw ValidationError("mask does not match image", "mask");
  Tensor<float> out = resized_image;
  for (std::size_t ch = 0; ch < 3; ++ch) {
    for (std::size_t i = 0; i < plane; ++i) {
      if (!mask.bits[i]) out[ch * plane + i] = 0.0f;
    }
  }
  return out;
}

ReceptiveField receptive_field_resized(const ForwardTrace& trace, std::size_t neuron,
                                       const Tensor<float>& resized_image, const RfParams& params) {
  const Tensor<float>& maps = trace.last_conv_maps;
  if (neuron >= maps.dim(0)) throw NotFoundError("neuron " + std::to_string(neuron) + " does not exist");
  if (!(params.threshold > 0 && params.threshold <= 1)) {
    throw ValidationError("threshold must lie in (0, 1]", "t");
  }
  const std::size_t size = params.rf_size;
  if (size < maps.dim(1) || size < maps.dim(2)) {
    throw ValidationError("rf_size must be at least the feature map size", "rf_size");
  }
  if (resized_image.shape() != Shape{3, size, size}) throw ValidationError("resized image has wrong shape", "image");

  const std::size_t plane = maps.dim(1) * maps.dim(2);
  Tensor<float> map({1, maps.dim(1), maps.dim(2)},
                    std::vector<float>(maps.data() + neuron * plane, maps.data() + (neuron + 1) * plane));
  Tensor<float> enlarged = resize_bilinear(map, size, size);
  for (auto& v : enlarged.span()) v = std::max(v, 0.0f);
  const float peak = *std::max_element(enlarged.span().begin(), enlarged.span().end());

  ReceptiveField rf;
  rf.neuron = neuron;
  rf.threshold = params.threshold;
  rf.mask = Mask(size, size);
  rf.dead = !(peak > 0.0f);
  if (!rf.dead) {
    const double cut = params.threshold * peak;
    for (std::size_t i = 0; i < rf.mask.size(); ++i) rf.mask.bits[i] = enlarged[i] >= cut ? 1 : 0;
  }
  rf.image = apply_mask(resized_image, rf.mask);
  return rf;
}

ReceptiveField receptive_field(const ForwardTrace& trace, std::size_t neuron, const Tensor<float>& image,
                               const RfParams& params) {
  return receptive_field_resized(trace, neuron, resize_bilinear(image, params.rf_size, params.rf_size), params);
}

std::vector<ReceptiveField> all_receptive_fields(const ForwardTrace& trace, const Tensor<float>& image,
                                                 const RfParams& params) {
  const Tensor<float> resized = resize_bilinear(image, params.rf_size, params.rf_size);
  std::vector<ReceptiveField> out;
  for (std::size_t k = 0; k < trace.last_conv_maps.dim(0); ++k) {
    out.push_back(receptive_field_resized(trace, k, resized, params));
  }
  return out;
}

ContextSort parse_context_sort(const std::string& name) {
  if (name == "activation") return ContextSort::Activation;
  if (name == "confidence") return ContextSort::Confidence;
  throw ValidationError("unknown context sort '" + name + "'", "sort");
}

std::string to_string(ContextSort sort) { return sort == ContextSort::Activation ? "activation" : "confidence"; }

std::vector<ContextImage> context_images(const Workspace& workspace, std::size_t neuron,
                                         const std::vector<std::size_t>& subset, ContextSort sort,
                                         std::size_t m, const RfParams& params) {
  if (m == 0) throw ValidationError("m must be at least 1", "m");
  if (neuron >= workspace.neuron_count()) throw NotFoundError("neuron " + std::to_string(neuron) + " does not exist");
  const RfParams p = resolve(params, workspace.model().spec);
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t id : subset) {
    const InstancePair& pair = workspace.pair(id);
    const ForwardTrace& trace = workspace.trace(id, ImageSide::Benign);
    const double score = sort == ContextSort::Activation ? trace.pooled[neuron]
                                                         : trace.probabilities[pair.benign_label];
    scored.emplace_back(score, id);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  scored.erase(std::unique(scored.begin(), scored.end(),
                           [](const auto& a, const auto& b) { return a.second == b.second; }),
               scored.end());
  if (scored.size() > m) scored.resize(m);
  std::vector<ContextImage> out;
  for (const auto& [score, id] : scored) {
    const InstancePair& pair = workspace.pair(id);
    ContextImage ctx;
    ctx.pair_id = id;
    ctx.score = score;
    ctx.benign = receptive_field(workspace.trace(id, ImageSide::Benign), neuron, pair.benign, p);
    ctx.adversarial = receptive_field(workspace.trace(id, ImageSide::Adversarial), neuron, pair.adversarial, p);
    out.push_back(std::move(ctx));
  }
  return out;
}

}  // namespace advscope
