#include "advscope/neuron_measures.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace advscope {

ContributionVector contribution(const Model<float>& model, const ForwardTrace& trace, std::size_t class_id) {
  if (class_id >= model.spec.class_count) throw ValidationError("class out of range", "class");
  const Tensor<float>& weight = model.dense_weight();
  const std::size_t n = weight.dim(1);
  if (trace.pooled.size() != n) throw ValidationError("trace does not match model", "trace");
  ContributionVector v;
  v.class_id = class_id;
  v.values.resize(n);
  for (std::size_t k = 0; k < n; ++k) v.values[k] = trace.pooled[k] * static_cast<double>(weight[class_id * n + k]);
  return v;
}

double z_value(double gamma) {
  if (!(gamma > 0 && gamma < 1)) throw ValidationError("confidence must lie in (0, 1)", "gamma");
  return boost::math::quantile(boost::math::normal(), 0.5 + gamma / 2);
}

ClassBand band_from_members(const std::vector<ContributionVector>& members, double gamma) {
  if (members.size() < 2) {
    throw InsufficientMembersError("class band needs at least 2 members, got " + std::to_string(members.size()));
  }
  const double z = z_value(gamma);
  const std::size_t n = members.front().values.size();
  ClassBand band;
  band.class_id = band.weight_class = members.front().class_id;
  band.gamma = gamma;
  band.members = members.size();
  band.lower.resize(n);
  band.upper.resize(n);
  const double count = static_cast<double>(members.size());
  for (std::size_t k = 0; k < n; ++k) {
    double mean = 0;
    for (const auto& m : members) mean += m.values.at(k);
    mean /= count;
    double var = 0;
    for (const auto& m : members) var += (m.values[k] - mean) * (m.values[k] - mean);
    const double spread = z * std::sqrt(var / count);
    band.lower[k] = mean - spread;
    band.upper[k] = mean + spread;
  }
  return band;
}

ClassBand class_band(const Workspace& workspace, ImageSide role, std::size_t class_id, double gamma) {
  if (class_id >= workspace.class_count()) throw ValidationError("class out of range", "class");
  std::vector<ContributionVector> members;
  for (const auto& pair : workspace.pairs()) {
    const std::size_t label = role == ImageSide::Benign ? pair.benign_label : pair.adversarial_label;
    if (label != class_id) continue;
    members.push_back(contribution(workspace.model(), workspace.trace(pair.id, role), class_id));
  }
  ClassBand band = band_from_members(members, gamma);
  band.role = role;
  return band;
}

double band_gap(double adv_lower, double adv_upper, double benign_lower, double benign_upper) {
  if (benign_lower > adv_upper) return adv_upper - benign_lower;
  if (adv_lower > benign_upper) return adv_lower - benign_upper;
  return 0.0;
}

std::vector<double> band_gaps(const ClassBand& adversarial, const ClassBand& benign) {
  if (adversarial.lower.size() != benign.lower.size()) throw ValidationError("bands differ in length", "bands");
  std::vector<double> gaps(benign.lower.size());
  for (std::size_t k = 0; k < gaps.size(); ++k) {
    gaps[k] = band_gap(adversarial.lower[k], adversarial.upper[k], benign.lower[k], benign.upper[k]);
  }
  return gaps;
}

std::vector<std::size_t> rank_by_gap(const std::vector<double>& gaps) {
  std::vector<std::size_t> order(gaps.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return gaps[a] > gaps[b]; });
  return order;
}

SubstitutionDelta neuron_substitution_delta(const Model<float>& model, const ForwardTrace& benign,
                                            const ForwardTrace& adversarial, std::size_t neuron,
                                            std::size_t benign_label, std::size_t adversarial_label) {
  if (neuron >= benign.pooled.size()) throw NotFoundError("neuron " + std::to_string(neuron) + " does not exist");
  if (benign_label >= model.spec.class_count || adversarial_label >= model.spec.class_count) {
    throw ValidationError("label out of range", "label");
  }
  std::vector<double> patched = benign.pooled;
  patched[neuron] = adversarial.pooled[neuron];
  const std::vector<double> base = softmax(dense_logits(model, benign.pooled));
  const std::vector<double> probs = softmax(dense_logits(model, patched));
  return {probs[benign_label] - base[benign_label], probs[adversarial_label] - base[adversarial_label]};
}

std::vector<NeuronRow> neuron_rows(const Workspace& workspace, std::size_t pair_id, double gamma) {
  const InstancePair& pair = workspace.pair(pair_id);
  const ClassBand benign_band = class_band(workspace, ImageSide::Benign, pair.benign_label, gamma);
  const ClassBand adv_band = class_band(workspace, ImageSide::Adversarial, pair.adversarial_label, gamma);
  const auto curve_b = contribution(workspace.model(), workspace.trace(pair_id, ImageSide::Benign), pair.benign_label);
  const auto curve_a =
      contribution(workspace.model(), workspace.trace(pair_id, ImageSide::Adversarial), pair.adversarial_label);
  const auto gaps = band_gaps(adv_band, benign_band);
  std::vector<NeuronRow> rows(gaps.size());
  for (std::size_t k = 0; k < gaps.size(); ++k) {
    rows[k] = {k,
               curve_b.values[k],
               curve_a.values[k],
               {benign_band.lower[k], benign_band.upper[k]},
               {adv_band.lower[k], adv_band.upper[k]},
               gaps[k]};
  }
  return rows;
}

}  // namespace advscope
