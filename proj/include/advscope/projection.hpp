#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace advscope {

using Point2 = std::array<double, 2>;
using FeatureRows = std::vector<std::vector<double>>;

/// Projection onto the top two principal components of the centred rows.
/// Component signs are fixed so the largest-magnitude loading is positive.
std::vector<Point2> pca_2d(const FeatureRows& rows);

struct TsneConfig {
  double perplexity = 30.0;  // clamped to (n - 1) / 3
  std::size_t iterations = 1000;
  std::size_t exaggeration_iterations = 250;
  double exaggeration = 12.0;
  double learning_rate = 200.0;
  std::uint64_t seed = 0;
};

struct TsneResult {
  std::vector<Point2> coordinates;
  double initial_kl = 0;
  double final_kl = 0;
  double perplexity = 0;  // effective value after clamping
};

/// Exact O(n^2) t-SNE with Gaussian input affinities found by per-point
/// bisection on the precision, Student-t output kernel, early exaggeration,
/// momentum and adaptive gains.
TsneResult tsne_2d(const FeatureRows& rows, const TsneConfig& config = {});

}  // namespace advscope
