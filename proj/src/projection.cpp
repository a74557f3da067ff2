#include "advscope/projection.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

#include "advscope/error.hpp"
#include "advscope/random.hpp"

namespace advscope {

namespace {

Eigen::MatrixXd to_matrix(const FeatureRows& rows) {
  const std::size_t n = rows.size();
  const std::size_t d = n ? rows[0].size() : 0;
  Eigen::MatrixXd x(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    if (rows[i].size() != d) throw ValidationError("feature rows differ in length", "rows");
    for (std::size_t j = 0; j < d; ++j) x(i, j) = rows[i][j];
  }
  return x;
}

}  // namespace

std::vector<Point2> pca_2d(const FeatureRows& rows) {
  Eigen::MatrixXd x = to_matrix(rows);
  const auto n = x.rows();
  std::vector<Point2> out(static_cast<std::size_t>(n), Point2{0, 0});
  if (n == 0 || x.cols() == 0) return out;
  x.rowwise() -= x.colwise().mean();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinV);
  const Eigen::MatrixXd& v = svd.matrixV();
  for (Eigen::Index c = 0; c < std::min<Eigen::Index>(2, v.cols()); ++c) {
    Eigen::VectorXd axis = v.col(c);
    Eigen::Index peak = 0;
    axis.cwiseAbs().maxCoeff(&peak);
    if (axis(peak) < 0) axis = -axis;
    if (svd.singularValues()(c) <= 1e-12 * std::max(1.0, svd.singularValues()(0))) continue;
    Eigen::VectorXd coord = x * axis;
    for (Eigen::Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] = coord(i);
  }
  return out;
}

namespace {

// Row-conditional Gaussian affinities with entropy log(perplexity).
Eigen::MatrixXd conditional_affinities(const Eigen::MatrixXd& sq_dist, double perplexity) {
  const Eigen::Index n = sq_dist.rows();
  const double target = std::log(perplexity);
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    double min_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i) min_d = std::min(min_d, sq_dist(i, j));
    }
    for (int iter = 0; iter < 200; ++iter) {
      double sum = 0, weighted = 0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i) continue;
        const double w = std::exp(-beta * (sq_dist(i, j) - min_d));
        p(i, j) = w;
        sum += w;
        weighted += w * (sq_dist(i, j) - min_d);
      }
      const double entropy = std::log(sum) + beta * weighted / sum;
      for (Eigen::Index j = 0; j < n; ++j) p(i, j) /= sum;
      const double diff = entropy - target;
      if (std::abs(diff) < 1e-5) break;
      if (diff > 0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2 : (beta + hi) / 2;
      } else {
        hi = beta;
        beta = (beta + lo) / 2;
      }
    }
  }
  return p;
}

double kl_divergence(const Eigen::MatrixXd& p, const Eigen::MatrixXd& y) {
  const Eigen::Index n = y.rows();
  double z = 0;
  Eigen::MatrixXd num(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      num(i, j) = i == j ? 0.0 : 1.0 / (1.0 + (y.row(i) - y.row(j)).squaredNorm());
      z += num(i, j);
    }
  }
  double kl = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j || p(i, j) <= 0) continue;
      kl += p(i, j) * std::log(p(i, j) / std::max(num(i, j) / z, 1e-300));
    }
  }
  return kl;
}

}  // namespace

TsneResult tsne_2d(const FeatureRows& rows, const TsneConfig& config) {
  const Eigen::MatrixXd x = to_matrix(rows);
  const Eigen::Index n = x.rows();
  TsneResult result;
  result.coordinates.assign(static_cast<std::size_t>(n), Point2{0, 0});
  if (n < 2) return result;
  result.perplexity = std::clamp(config.perplexity, 1e-3, std::max(1e-3, static_cast<double>(n - 1) / 3.0));

  Eigen::MatrixXd sq(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) sq(i, j) = (x.row(i) - x.row(j)).squaredNorm();
  }
  Eigen::MatrixXd cond = conditional_affinities(sq, result.perplexity);
  Eigen::MatrixXd p = (cond + cond.transpose()) / (2.0 * static_cast<double>(n));
  p = p.cwiseMax(1e-12);
  p.diagonal().setZero();
  p /= p.sum();

  SplitMix64 rng(config.seed);
  Eigen::MatrixXd y(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    y(i, 0) = 1e-4 * rng.normal();
    y(i, 1) = 1e-4 * rng.normal();
  }
  result.initial_kl = kl_divergence(p, y);

  Eigen::MatrixXd velocity = Eigen::MatrixXd::Zero(n, 2);
  Eigen::MatrixXd gains = Eigen::MatrixXd::Ones(n, 2);
  Eigen::MatrixXd num(n, n);
  Eigen::MatrixXd grad(n, 2);
  for (std::size_t iter = 0; iter < config.iterations; ++iter) {
    const bool early = iter < config.exaggeration_iterations;
    const double exaggeration = early ? config.exaggeration : 1.0;
    const double momentum = early ? 0.5 : 0.8;
    double z = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      num(i, i) = 0;
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const double v = 1.0 / (1.0 + (y.row(i) - y.row(j)).squaredNorm());
        num(i, j) = num(j, i) = v;
        z += 2 * v;
      }
    }
    grad.setZero();
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j) continue;
        const double coeff = (exaggeration * p(i, j) - num(i, j) / z) * num(i, j);
        grad.row(i) += 4.0 * coeff * (y.row(i) - y.row(j));
      }
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index d = 0; d < 2; ++d) {
        const bool same_sign = (grad(i, d) > 0) == (velocity(i, d) > 0);
        gains(i, d) = same_sign ? std::max(gains(i, d) * 0.8, 0.01) : gains(i, d) + 0.2;
        velocity(i, d) = momentum * velocity(i, d) - config.learning_rate * gains(i, d) * grad(i, d);
        y(i, d) += velocity(i, d);
      }
    }
    y.rowwise() -= y.colwise().mean();
  }
  result.final_kl = kl_divergence(p, y);
  for (Eigen::Index i = 0; i < n; ++i) {
    result.coordinates[static_cast<std::size_t>(i)] = {y(i, 0), y(i, 1)};
  }
  return result;
}

}  // namespace advscope
