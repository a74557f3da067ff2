#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "advscope/mask.hpp"
#include "advscope/model.hpp"
#include "advscope/rf.hpp"
#include "advscope/workspace.hpp"

namespace advscope {

enum class ValueSpace { Probability, Logit };
ValueSpace parse_value_space(const std::string& name);
std::string to_string(ValueSpace space);

struct VulnParams {
  std::size_t k = 2;  // the substituted window is [i - k, i + k) on each axis
  std::size_t s = 1;  // lattice stride
  ValueSpace space = ValueSpace::Probability;

  void validate(std::size_t height, std::size_t width) const;
};

/// Region-substitution maps on the stride-s lattice of the image:
///   b_map[i, j] = y'[benign] - y[benign]
///   a_map[i, j] = y[adversarial] - y'[adversarial]
/// where y = f(benign image) and y' = f(benign image with the window at
/// (i, j) replaced by adversarial pixels). Values are stored as float.
struct VulnerabilityMap {
  std::size_t height = 0;  // image extents
  std::size_t width = 0;
  std::size_t rows = 0;  // lattice extents, ceil(height / s) x ceil(width / s)
  std::size_t cols = 0;
  VulnParams params;
  std::size_t benign_label = 0;
  std::size_t adversarial_label = 0;
  std::vector<float> b_map;
  std::vector<float> a_map;

  bool operator==(const VulnerabilityMap& other) const;
};

using ProgressFn = std::function<void(std::size_t done, std::size_t total)>;

VulnerabilityMap vulnerability_maps(const Model<float>& model, const Tensor<float>& benign,
                                    const Tensor<float>& adversarial, std::size_t benign_label,
                                    std::size_t adversarial_label, const VulnParams& params,
                                    std::size_t threads = 0, const ProgressFn& progress = {});

inline VulnerabilityMap vulnerability_maps(const Model<float>& model, const InstancePair& pair,
                                           const VulnParams& params, std::size_t threads = 0,
                                           const ProgressFn& progress = {}) {
  return vulnerability_maps(model, pair.benign, pair.adversarial, pair.benign_label, pair.adversarial_label,
                            params, threads, progress);
}

enum class MapKind { BenignDrop, AdversarialRise };
MapKind parse_map_kind(const std::string& name);
std::string to_string(MapKind kind);

/// Full-resolution, nonnegative "larger is more vulnerable" view of a map:
/// max(-b_map, 0) or max(-a_map, 0), each pixel taking the value of the
/// lattice position at or before it.
struct ScoreGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;
};

ScoreGrid vulnerability_score(const VulnerabilityMap& map, MapKind kind);

/// Ones exactly on the llround(q * h * w) highest-scoring pixels; ties go to
/// the earlier pixel in row-major order.
Mask binarize_top_q(const ScoreGrid& score, double q);

struct NeuronIou {
  std::size_t neuron = 0;
  double iou = 0;
};

/// IoU between every neuron's benign receptive field and the binarized map,
/// sorted by descending IoU, ties by neuron id.
std::vector<NeuronIou> rank_neurons_by_iou(const std::vector<ReceptiveField>& benign_rfs, const Mask& binarized);

std::vector<NeuronIou> rank_neurons_by_iou(const Workspace& workspace, std::size_t pair_id,
                                           const VulnerabilityMap& map, MapKind kind, const RfParams& rf,
                                           double q);

// Cache file: "VMAP1\0", u32 JSON header length, JSON header, then b_map and
// a_map as little-endian f32 lattice grids.
std::string vulnmap_cache_name(std::size_t pair_id, const VulnParams& params);
void save_vulnmap(const VulnerabilityMap& map, std::size_t pair_id, const std::filesystem::path& path);
VulnerabilityMap load_vulnmap(const std::filesystem::path& path);

}  // namespace advscope
