#include "advscope/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "advscope/image_ops.hpp"
#include "advscope/parallel.hpp"
#include "json.hpp"

namespace advscope {

using nlohmann::json;

void DistanceMatrix::validate() const {
  if (values.size() != n * n) throw ValidationError("distance matrix size mismatch", "distances");
  for (std::size_t i = 0; i < n; ++i) {
    if ((*this)(i, i) != 0.0) throw ValidationError("distance matrix diagonal must be zero", "distances");
    for (std::size_t j = i + 1; j < n; ++j) {
      if ((*this)(i, j) != (*this)(j, i) || !std::isfinite((*this)(i, j)) || (*this)(i, j) < 0) {
        throw ValidationError("distance matrix must be symmetric, finite and nonnegative", "distances");
      }
    }
  }
}

DistanceMatrix neuron_distance_matrix(const std::vector<ReceptiveField>& benign,
                                      const std::vector<ReceptiveField>& adversarial, std::size_t threads) {
  if (benign.size() != adversarial.size()) throw ValidationError("RF lists differ in length", "rfs");
  const std::size_t n = benign.size();
  DistanceMatrix d(n);
  parallel_for(n, threads, [&](std::size_t i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double sum = 0;
      for (const auto* side : {&benign, &adversarial}) {
        const auto& a = (*side)[i].image;
        const auto& b = (*side)[j].image;
        for (std::size_t p = 0; p < a.size(); ++p) {
          const double diff = static_cast<double>(a[p]) - b[p];
          sum += diff * diff;
        }
      }
      d(i, j) = std::sqrt(sum);
    }
  });
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) d(j, i) = d(i, j);
  }
  return d;
}

Linkage parse_linkage(const std::string& name) {
  if (name == "single") return Linkage::Single;
  if (name == "complete") return Linkage::Complete;
  if (name == "average") return Linkage::Average;
  throw ValidationError("unknown linkage '" + name + "'", "linkage");
}

std::string to_string(Linkage linkage) {
  switch (linkage) {
    case Linkage::Single: return "single";
    case Linkage::Complete: return "complete";
    case Linkage::Average: return "average";
  }
  return "average";
}

Dendrogram agglomerate(const DistanceMatrix& distances, Linkage linkage) {
  distances.validate();
  const std::size_t n = distances.n;
  Dendrogram tree;
  tree.leaves = n;
  if (n == 0) return tree;

  // Working matrix indexed by node id; only active nodes are meaningful.
  const std::size_t nodes = 2 * n - 1;
  std::vector<double> d(nodes * nodes, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) d[i * nodes + j] = distances(i, j);
  }
  std::vector<std::size_t> active(n);
  for (std::size_t i = 0; i < n; ++i) active[i] = i;
  std::vector<std::size_t> size(nodes, 1);

  for (std::size_t step = 0; step + 1 < n; ++step) {
    // Active ids stay sorted, so the first strict minimum in (i < j) scan
    // order is the lexicographically smallest tied pair.
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bj = 0;
    for (std::size_t a = 0; a < active.size(); ++a) {
      for (std::size_t b = a + 1; b < active.size(); ++b) {
        const double v = d[active[a] * nodes + active[b]];
        if (v < best) {
          best = v;
          bi = active[a];
          bj = active[b];
        }
      }
    }
    const std::size_t merged = n + step;
    size[merged] = size[bi] + size[bj];
    tree.merges.push_back({bi, bj, best, size[merged]});
    std::erase(active, bi);
    std::erase(active, bj);
    for (std::size_t k : active) {
      const double di = d[k * nodes + bi], dj = d[k * nodes + bj];
      double v = 0;
      switch (linkage) {
        case Linkage::Single: v = std::min(di, dj); break;
        case Linkage::Complete: v = std::max(di, dj); break;
        case Linkage::Average:
          v = (static_cast<double>(size[bi]) * di + static_cast<double>(size[bj]) * dj) /
              static_cast<double>(size[merged]);
          break;
      }
      d[k * nodes + merged] = d[merged * nodes + k] = v;
    }
    active.push_back(merged);
  }

  // Leaf order: depth-first, the child holding the smaller leaf id first.
  std::vector<std::size_t> min_leaf(nodes);
  for (std::size_t i = 0; i < n; ++i) min_leaf[i] = i;
  for (std::size_t t = 0; t < tree.merges.size(); ++t) {
    min_leaf[n + t] = std::min(min_leaf[tree.merges[t].left], min_leaf[tree.merges[t].right]);
  }
  std::vector<std::size_t> stack{tree.root()};
  while (!stack.empty()) {
    const std::size_t node = stack.back();
    stack.pop_back();
    if (node < n) {
      tree.leaf_order.push_back(node);
      continue;
    }
    const Merge& m = tree.merges[node - n];
    const bool left_first = min_leaf[m.left] < min_leaf[m.right];
    stack.push_back(left_first ? m.right : m.left);
    stack.push_back(left_first ? m.left : m.right);
  }
  return tree;
}

std::vector<std::size_t> Dendrogram::parents() const {
  std::vector<std::size_t> parent(node_count());
  for (std::size_t i = 0; i < parent.size(); ++i) parent[i] = i;
  for (std::size_t t = 0; t < merges.size(); ++t) {
    parent[merges[t].left] = leaves + t;
    parent[merges[t].right] = leaves + t;
  }
  return parent;
}

std::vector<std::size_t> Dendrogram::descendant_leaves(std::size_t node) const {
  if (node >= node_count()) throw NotFoundError("dendrogram node " + std::to_string(node) + " does not exist");
  std::vector<std::size_t> out, stack{node};
  while (!stack.empty()) {
    const std::size_t v = stack.back();
    stack.pop_back();
    if (v < leaves) {
      out.push_back(v);
    } else {
      stack.push_back(merges[v - leaves].left);
      stack.push_back(merges[v - leaves].right);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::size_t> Dendrogram::path_to_root(std::size_t leaf) const {
  if (leaf >= leaves) throw NotFoundError("leaf " + std::to_string(leaf) + " does not exist");
  const auto parent = parents();
  std::vector<std::size_t> path{leaf};
  while (parent[path.back()] != path.back()) path.push_back(parent[path.back()]);
  return path;
}

void validate_dendrogram(const Dendrogram& tree) {
  const std::size_t n = tree.leaves;
  if (n == 0) return;
  if (tree.merges.size() != n - 1) throw ComputeError("dendrogram must have n - 1 merges");
  std::vector<int> child_refs(tree.node_count(), 0);
  std::vector<std::size_t> count(tree.node_count(), 1);
  std::vector<double> height(tree.node_count(), 0.0);
  for (std::size_t t = 0; t < tree.merges.size(); ++t) {
    const Merge& m = tree.merges[t];
    const std::size_t id = n + t;
    if (m.left >= id || m.right >= id || m.left == m.right) throw ComputeError("merge references a later node");
    ++child_refs[m.left];
    ++child_refs[m.right];
    if (m.count != count[m.left] + count[m.right]) throw ComputeError("merge count is not the sum of its children");
    if (m.height < height[m.left] || m.height < height[m.right]) throw ComputeError("merge height decreases");
    count[id] = m.count;
    height[id] = m.height;
  }
  for (std::size_t v = 0; v + 1 < tree.node_count(); ++v) {
    if (child_refs[v] != 1) throw ComputeError("node " + std::to_string(v) + " is not referenced exactly once");
  }
  if (child_refs[tree.root()] != 0) throw ComputeError("root must not be a child");
  if (count[tree.root()] != n) throw ComputeError("root does not cover every leaf");
  if (tree.leaf_order.size() != n) throw ComputeError("leaf order is incomplete");
}

std::vector<std::size_t> select_subtree(const Dendrogram& tree, std::span<const std::size_t> nodes) {
  std::vector<std::size_t> out;
  for (std::size_t node : nodes) {
    const auto leaves = tree.descendant_leaves(node);
    out.insert(out.end(), leaves.begin(), leaves.end());
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

MaskOp parse_mask_op(const std::string& name) {
  if (name == "union") return MaskOp::Union;
  if (name == "intersection") return MaskOp::Intersection;
  throw ValidationError("unknown mask operation '" + name + "'", "op");
}

std::string to_string(MaskOp op) { return op == MaskOp::Union ? "union" : "intersection"; }

ClusterRf cluster_rf(const std::vector<ReceptiveField>& rfs, const Tensor<float>& resized_image,
                     std::span<const std::size_t> neurons, MaskOp op) {
  if (neurons.empty()) throw ValidationError("cluster must contain at least one neuron", "nodes");
  std::vector<Mask> masks;
  for (std::size_t k : neurons) {
    if (k >= rfs.size()) throw NotFoundError("neuron " + std::to_string(k) + " does not exist");
    masks.push_back(rfs[k].mask);
  }
  ClusterRf out;
  out.mask = op == MaskOp::Union ? mask_union(masks) : mask_intersection(masks);
  out.image = apply_mask(resized_image, out.mask);
  out.neurons.assign(neurons.begin(), neurons.end());
  return out;
}

ClusterRf cluster_rf(const Workspace& workspace, std::size_t pair_id, std::span<const std::size_t> neurons,
                     MaskOp op, ImageSide side, const RfParams& params) {
  const InstancePair& pair = workspace.pair(pair_id);
  const RfParams p = resolve(params, workspace.model().spec);
  const Tensor<float>& image = side == ImageSide::Benign ? pair.benign : pair.adversarial;
  const Tensor<float> resized = resize_bilinear(image, p.rf_size, p.rf_size);
  const auto rfs = all_receptive_fields(workspace.trace(pair_id, side), image, p);
  return cluster_rf(rfs, resized, neurons, op);
}

Dendrogram pair_dendrogram(const Workspace& workspace, std::size_t pair_id, const RfParams& params,
                           Linkage linkage, std::size_t threads) {
  const InstancePair& pair = workspace.pair(pair_id);
  const RfParams p = resolve(params, workspace.model().spec);
  const auto benign = all_receptive_fields(workspace.trace(pair_id, ImageSide::Benign), pair.benign, p);
  const auto adversarial =
      all_receptive_fields(workspace.trace(pair_id, ImageSide::Adversarial), pair.adversarial, p);
  return agglomerate(neuron_distance_matrix(benign, adversarial, threads), linkage);
}

namespace {

json node_json(const Dendrogram& tree, std::size_t node) {
  if (tree.is_leaf(node)) return {{"id", node}, {"neuron_id", node}, {"height", 0.0}, {"count", 1}};
  const Merge& m = tree.merges[node - tree.leaves];
  return {{"id", node},
          {"height", m.height},
          {"count", m.count},
          {"children", json::array({node_json(tree, m.left), node_json(tree, m.right)})}};
}

}  // namespace

std::string dendrogram_json(const Dendrogram& tree, Linkage linkage) {
  json j;
  j["leaves"] = tree.leaves;
  j["linkage"] = to_string(linkage);
  j["root"] = tree.leaves ? node_json(tree, tree.root()) : json(nullptr);
  j["merges"] = json::array();
  for (const auto& m : tree.merges) {
    j["merges"].push_back({{"left", m.left}, {"right", m.right}, {"height", m.height}, {"count", m.count}});
  }
  j["leaf_order"] = tree.leaf_order;
  return j.dump();
}

}  // namespace advscope
