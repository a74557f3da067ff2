#include "advscope/attack.hpp"

#include <algorithm>
#include <cmath>

#include "advscope/parallel.hpp"
#include "advscope/random.hpp"

namespace advscope {

void AttackConfig::validate() const {
  if (steps == 0) throw ValidationError("steps must be positive", "steps");
  if (!(eps >= 0 && eps < 1)) throw ValidationError("eps must lie in [0, 1)", "eps");
  if (!(alpha > 0 && alpha < 1)) throw ValidationError("alpha must lie in (0, 1)", "alpha");
  if (eps > 0 && alpha > eps) throw ValidationError("alpha must not exceed eps", "alpha");
}

double linf_distance(const Tensor<float>& a, const Tensor<float>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

double l2_distance(const Tensor<float>& a, const Tensor<float>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

AttackResult pgd_attack(const Model<float>& model, const Tensor<float>& image, std::size_t true_label,
                        const AttackConfig& config, std::uint64_t stream) {
  config.validate();
  if (true_label >= model.spec.class_count) throw ValidationError("label out of range", "true_label");
  if (config.target && *config.target >= model.spec.class_count) {
    throw ValidationError("target out of range", "target");
  }
  // The ball is kept in float so that the stored adversarial image satisfies
  // the budget exactly, not just up to a double -> float rounding.
  const float eps = static_cast<float>(config.eps);
  const float alpha = static_cast<float>(config.alpha);
  std::vector<float> lo(image.size()), hi(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    lo[i] = std::max(0.0f, image[i] - eps);
    hi[i] = std::min(1.0f, image[i] + eps);
    if (lo[i] > hi[i]) lo[i] = hi[i] = std::clamp(image[i], 0.0f, 1.0f);
  }

  Tensor<float> x = image;
  if (config.random_start && config.eps > 0) {
    SplitMix64 rng(derive_seed(config.seed, stream));
    for (std::size_t i = 0; i < x.size(); ++i) {
      const float start = image[i] + static_cast<float>(rng.uniform(-config.eps, config.eps));
      x[i] = std::clamp(start, lo[i], hi[i]);
    }
  }
  const std::size_t loss_label = config.target ? *config.target : true_label;
  const float direction = config.target ? -1.0f : 1.0f;
  for (std::size_t step = 0; step < config.steps; ++step) {
    const Tensor<float> grad = input_gradient(model, x, loss_label);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const float g = grad[i];
      const float sign = g > 0 ? 1.0f : (g < 0 ? -1.0f : 0.0f);
      x[i] = std::clamp(x[i] + direction * alpha * sign, lo[i], hi[i]);
    }
  }
  AttackResult result;
  result.adversarial_label = forward(model, x).predicted_label;
  result.success = config.target ? result.adversarial_label == *config.target
                                 : result.adversarial_label != true_label;
  result.adversarial = std::move(x);
  return result;
}

std::vector<InstancePair> attack_dataset(const Model<float>& model, const Dataset& data,
                                         const AttackConfig& config, std::size_t threads,
                                         AttackSummary* summary) {
  config.validate();
  struct Slot {
    bool true_positive = false;
    bool kept = false;
    InstancePair pair;
  };
  std::vector<Slot> slots(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) {
    const ForwardTrace benign = forward(model, data.images[i]);
    if (benign.predicted_label != data.labels[i]) return;
    slots[i].true_positive = true;
    AttackResult attack = pgd_attack(model, data.images[i], data.labels[i], config, i);
    if (!attack.success || attack.adversarial_label == data.labels[i]) return;
    const ForwardTrace adv = forward(model, attack.adversarial);
    InstancePair& pair = slots[i].pair;
    pair.source_index = i;
    pair.benign = data.images[i];
    pair.benign_label = data.labels[i];
    pair.adversarial_label = adv.predicted_label;
    pair.benign_probabilities = benign.probabilities;
    pair.adversarial_probabilities = adv.probabilities;
    pair.perturbation_l2 = l2_distance(attack.adversarial, data.images[i]);
    pair.adversarial = std::move(attack.adversarial);
    slots[i].kept = true;
  });
  std::vector<InstancePair> pairs;
  AttackSummary local;
  local.attempted = data.size();
  for (auto& slot : slots) {
    local.true_positives += slot.true_positive;
    if (!slot.kept) continue;
    slot.pair.id = pairs.size();
    pairs.push_back(std::move(slot.pair));
  }
  local.successes = pairs.size();
  if (summary) *summary = local;
  return pairs;
}

}  // namespace advscope
