#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "advscope/dataset.hpp"
#include "advscope/model.hpp"

namespace advscope {

/// Projected gradient descent under an L-infinity budget. Defaults are
/// 7 steps, eps = 8/255, alpha = 2/255 with a seeded random start.
struct AttackConfig {
  std::size_t steps = 7;
  double eps = 8.0 / 255.0;
  double alpha = 2.0 / 255.0;
  bool random_start = true;
  std::uint64_t seed = 0;
  /// Optional target class; when set the attack minimises the loss of the
  /// target instead of maximising the loss of the true label.
  std::optional<std::size_t> target;

  /// eps in [0, 1), alpha in (0, 1) and alpha <= eps unless eps == 0.
  void validate() const;
};

struct AttackResult {
  Tensor<float> adversarial;
  bool success = false;
  std::size_t adversarial_label = 0;
};

/// x <- clip(clip(x + alpha * sign(grad), [x0 - eps, x0 + eps]), [0, 1]),
/// repeated `steps` times, optionally from x0 + U(-eps, eps). Success means
/// the final prediction differs from true_label (or equals the target).
AttackResult pgd_attack(const Model<float>& model, const Tensor<float>& image, std::size_t true_label,
                        const AttackConfig& config, std::uint64_t stream = 0);

struct InstancePair {
  std::size_t id = 0;
  std::size_t source_index = 0;  // index into the attacked dataset
  Tensor<float> benign;
  Tensor<float> adversarial;
  std::size_t benign_label = 0;
  std::size_t adversarial_label = 0;
  std::vector<double> benign_probabilities;
  std::vector<double> adversarial_probabilities;
  double perturbation_l2 = 0;
};

struct AttackSummary {
  std::size_t attempted = 0;       // images in the dataset
  std::size_t true_positives = 0;  // benign prediction correct
  std::size_t successes = 0;       // flipped true positives
  double success_rate() const {
    return true_positives ? static_cast<double>(successes) / static_cast<double>(true_positives) : 0.0;
  }
};

/// Attacks every correctly classified image and keeps the flipped ones. The
/// random stream of image i is derived from (seed, i), so the result does not
/// depend on the thread count.
std::vector<InstancePair> attack_dataset(const Model<float>& model, const Dataset& data,
                                         const AttackConfig& config, std::size_t threads = 0,
                                         AttackSummary* summary = nullptr);

double linf_distance(const Tensor<float>& a, const Tensor<float>& b);
double l2_distance(const Tensor<float>& a, const Tensor<float>& b);

}  // namespace advscope
