#pragma once

#include <utility>
#include <vector>

#include "advscope/model.hpp"
#include "advscope/workspace.hpp"

namespace advscope {

/// Per-neuron activation x weight: pooled[k] * W[class][k]. Summed over the
/// neurons and added to the dense bias it reproduces the class logit.
struct ContributionVector {
  std::size_t class_id = 0;
  std::vector<double> values;
};

ContributionVector contribution(const Model<float>& model, const ForwardTrace& trace, std::size_t class_id);

/// Per-neuron interval [lower, upper] = mean -/+ z(gamma) * population stddev
/// of the members' contribution vectors.
struct ClassBand {
  std::size_t class_id = 0;
  std::size_t weight_class = 0;
  ImageSide role = ImageSide::Benign;
  double gamma = 0.95;
  std::size_t members = 0;
  std::vector<double> lower;
  std::vector<double> upper;
};

/// Two-sided standard normal quantile: z(0.95) = 1.95996...
double z_value(double gamma);

ClassBand band_from_members(const std::vector<ContributionVector>& members, double gamma);

/// Benign role: benign images of pairs whose true label is `class_id`.
/// Adversarial role: adversarial images whose adversarial label is
/// `class_id`. Fewer than two members raises InsufficientMembersError.
ClassBand class_band(const Workspace& workspace, ImageSide role, std::size_t class_id, double gamma = 0.95);

/// CU_a - CL_b when the benign band lies above the adversarial one,
/// CL_a - CU_b when the adversarial band lies above, 0 when they overlap.
double band_gap(double adv_lower, double adv_upper, double benign_lower, double benign_upper);

std::vector<double> band_gaps(const ClassBand& adversarial, const ClassBand& benign);

/// Neuron ids by descending signed gap (excited first, inhibited last), ties
/// by id.
std::vector<std::size_t> rank_by_gap(const std::vector<double>& gaps);

struct SubstitutionDelta {
  double benign = 0;       // change of p[benign label]
  double adversarial = 0;  // change of p[adversarial label]
};

/// Replaces pooled[neuron] of the benign trace with the adversarial value and
/// re-evaluates the dense layer and softmax.
SubstitutionDelta neuron_substitution_delta(const Model<float>& model, const ForwardTrace& benign,
                                            const ForwardTrace& adversarial, std::size_t neuron,
                                            std::size_t benign_label, std::size_t adversarial_label);

/// Everything the neuron vulnerability chart shows for one pair.
struct NeuronRow {
  std::size_t neuron = 0;
  double curve_b = 0;
  double curve_a = 0;
  std::pair<double, double> band_b;
  std::pair<double, double> band_a;
  double bg = 0;
};

std::vector<NeuronRow> neuron_rows(const Workspace& workspace, std::size_t pair_id, double gamma);

}  // namespace advscope
