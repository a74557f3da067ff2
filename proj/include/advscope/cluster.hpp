#pragma once

#include <span>
#include <string>
#include <vector>

#include "advscope/rf.hpp"
#include "advscope/workspace.hpp"

namespace advscope {

/// Dense symmetric matrix with zero diagonal.
struct DistanceMatrix {
  std::size_t n = 0;
  std::vector<double> values;

  DistanceMatrix() = default;
  explicit DistanceMatrix(std::size_t size) : n(size), values(size * size, 0.0) {}
  double operator()(std::size_t i, std::size_t j) const { return values[i * n + j]; }
  double& operator()(std::size_t i, std::size_t j) { return values[i * n + j]; }
  void validate() const;
};

/// d(i, j) = sqrt(|RF_b(i) - RF_b(j)|^2 + |RF_a(i) - RF_a(j)|^2) over the
/// masked RF images on the benign and adversarial side.
DistanceMatrix neuron_distance_matrix(const std::vector<ReceptiveField>& benign,
                                      const std::vector<ReceptiveField>& adversarial, std::size_t threads = 0);

enum class Linkage { Single, Complete, Average };
Linkage parse_linkage(const std::string& name);
std::string to_string(Linkage linkage);

/// Node ids follow the usual convention: leaves are 0..n-1 and merge t
/// creates node n + t. The root is node 2n - 2.
struct Merge {
  std::size_t left = 0;
  std::size_t right = 0;
  double height = 0;
  std::size_t count = 0;
};

struct Dendrogram {
  std::size_t leaves = 0;
  std::vector<Merge> merges;
  std::vector<std::size_t> leaf_order;

  std::size_t node_count() const { return leaves == 0 ? 0 : 2 * leaves - 1; }
  std::size_t root() const { return node_count() - 1; }
  bool is_leaf(std::size_t node) const { return node < leaves; }
  /// Parent of every node; the root maps to itself.
  std::vector<std::size_t> parents() const;
  std::vector<std::size_t> descendant_leaves(std::size_t node) const;
  /// Nodes from `leaf` up to the root, inclusive.
  std::vector<std::size_t> path_to_root(std::size_t leaf) const;
};

/// Agglomerative clustering with Lance-Williams distance updates. Among equal
/// distances the pair with the smallest (min id, max id) merges first; the
/// merged node lists the smaller id as its left child.
Dendrogram agglomerate(const DistanceMatrix& distances, Linkage linkage = Linkage::Average);

/// Checks the merge count, single-parent, count and height invariants.
void validate_dendrogram(const Dendrogram& tree);

/// Union of the descendant leaves of the given nodes, sorted ascending.
std::vector<std::size_t> select_subtree(const Dendrogram& tree, std::span<const std::size_t> nodes);

enum class MaskOp { Union, Intersection };
MaskOp parse_mask_op(const std::string& name);
std::string to_string(MaskOp op);

struct ClusterRf {
  Mask mask;
  Tensor<float> image;
  std::vector<std::size_t> neurons;
};

ClusterRf cluster_rf(const std::vector<ReceptiveField>& rfs, const Tensor<float>& resized_image,
                     std::span<const std::size_t> neurons, MaskOp op);

ClusterRf cluster_rf(const Workspace& workspace, std::size_t pair_id, std::span<const std::size_t> neurons,
                     MaskOp op, ImageSide side, const RfParams& params);

/// Distance matrix and dendrogram for one pair.
Dendrogram pair_dendrogram(const Workspace& workspace, std::size_t pair_id, const RfParams& params,
                           Linkage linkage, std::size_t threads = 0);

/// {"leaves": n, "linkage": ..., "root": nested {id, height, count,
/// children[]} / {id, neuron_id}, "merges": [{left, right, height, count}],
/// "leaf_order": [...]}
std::string dendrogram_json(const Dendrogram& tree, Linkage linkage);

}  // namespace advscope
