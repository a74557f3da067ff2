#pragma once

#include <optional>
#include <vector>

#include "advscope/mask.hpp"
#include "advscope/model.hpp"
#include "advscope/workspace.hpp"

namespace advscope {

struct RfParams {
  std::size_t rf_size = 0;  // 0 selects the input image size
  double threshold = 0.5;   // relative to the per-map maximum, in (0, 1]
};

/// Receptive field of one last-conv neuron on one image.
struct ReceptiveField {
  std::size_t neuron = 0;
  double threshold = 0;
  bool dead = false;     // the feature map has no positive activation
  Mask mask;             // rf_size x rf_size
  Tensor<float> image;   // (3, rf_size, rf_size), resized input times mask
};

/// 1. resize the image to rf_size, 2. resize feature map `neuron` to rf_size
/// (both bilinear), 3. mask = resized map >= threshold * max(resized map),
/// negatives clamped to 0 and an all-zero mask when nothing is positive,
/// 4. multiply every channel of the resized image by the mask.
ReceptiveField receptive_field(const ForwardTrace& trace, std::size_t neuron, const Tensor<float>& image,
                               const RfParams& params);

/// Same, reusing an image already resized to rf_size.
ReceptiveField receptive_field_resized(const ForwardTrace& trace, std::size_t neuron,
                                       const Tensor<float>& resized_image, const RfParams& params);

/// Every neuron's receptive field on one image.
std::vector<ReceptiveField> all_receptive_fields(const ForwardTrace& trace, const Tensor<float>& image,
                                                 const RfParams& params);

/// Resized image multiplied elementwise by the mask.
Tensor<float> apply_mask(const Tensor<float>& resized_image, const Mask& mask);

enum class ContextSort { Activation, Confidence };
ContextSort parse_context_sort(const std::string& name);
std::string to_string(ContextSort sort);

struct ContextImage {
  std::size_t pair_id = 0;
  double score = 0;  // pooled activation of the neuron, or benign-label probability
  ReceptiveField benign;
  ReceptiveField adversarial;
};

/// Top-m pairs of `subset` ranked on their benign images (descending score,
/// ties by pair id), returned with both the benign and the adversarial RF.
std::vector<ContextImage> context_images(const Workspace& workspace, std::size_t neuron,
                                         const std::vector<std::size_t>& subset, ContextSort sort,
                                         std::size_t m, const RfParams& params);

RfParams resolve(const RfParams& params, const ModelSpec& spec);

}  // namespace advscope
