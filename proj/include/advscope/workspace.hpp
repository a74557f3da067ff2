#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "advscope/attack.hpp"
#include "advscope/model.hpp"
#include "advscope/projection.hpp"

namespace advscope {

/// Provenance of an attack run, written to manifest.json.
struct RunInfo {
  std::string model_path;  // relative to the run directory when possible
  AttackConfig attack;
  std::vector<std::string> class_names;
  std::size_t channels = 3;
  std::size_t height = 0;
  std::size_t width = 0;
  std::string data_path;
  std::string data_split;  // "test", "train" or "all"
  double test_fraction = 0.2;
};

// Run directory layout:
//   manifest.json  {model_path, attack{steps,eps,alpha,seed,random_start},
//                   class_names[], image{channels,height,width}, data{...},
//                   pairs[{id,source_index,y,adv_label,p_benign[],p_adv[],l2}]}
//   images.bin     every benign image, then every adversarial image, in pair
//                  order, as little-endian f32 (C, H, W) arrays
//   cache/         precomputed vulnerability maps and dendrograms

std::string manifest_json(const RunInfo& info, const std::vector<InstancePair>& pairs);
void save_run(const std::filesystem::path& run_dir, const RunInfo& info,
              const std::vector<InstancePair>& pairs);

struct LoadedRun {
  RunInfo info;
  std::vector<InstancePair> pairs;
};

/// Loads a run and re-validates every pair: argmax of the stored
/// probabilities matches the labels, labels differ, the stored L2 matches the
/// images and the L-infinity budget holds. Violations raise FormatError.
LoadedRun load_run(const std::filesystem::path& run_dir);

void validate_pair(const InstancePair& pair, double eps);

struct PredictionMatrix {
  std::size_t classes = 0;
  std::vector<std::size_t> counts;  // row = true label, column = adversarial label

  std::size_t at(std::size_t true_label, std::size_t adv_label) const {
    return counts.at(true_label * classes + adv_label);
  }
  std::size_t total() const;
  std::vector<std::size_t> row_sums() const;
};

PredictionMatrix build_prediction_matrix(const std::vector<InstancePair>& pairs, std::size_t classes);

enum class PairSort {
  PerturbationAscending,
  PerturbationDescending,
  BenignProbabilityDescending,
  AdversarialProbabilityAscending,
};

PairSort parse_pair_sort(const std::string& name);
std::string to_string(PairSort sort);

/// Ids of `pairs` ordered by the measure; ties broken by ascending id.
std::vector<std::size_t> sort_pairs(const std::vector<InstancePair>& pairs, PairSort measure);

/// Pairs whose (benign label, adversarial label) equals the given cell.
std::vector<InstancePair> cell_pairs(const std::vector<InstancePair>& pairs, std::size_t true_label,
                                     std::size_t adv_label);

enum class ImageSide { Benign, Adversarial };
ImageSide parse_side(const std::string& name);
std::string to_string(ImageSide side);

enum class ProjectionMethod { Pca, Tsne };
ProjectionMethod parse_projection(const std::string& name);
std::string to_string(ProjectionMethod method);

struct ProjectionResult {
  ImageSide side = ImageSide::Benign;
  ProjectionMethod method = ProjectionMethod::Pca;
  std::uint64_t seed = 0;
  std::vector<Point2> points;  // one per pair, in pair order
};

/// A loaded run together with the model and cached inference traces. Built
/// once, then read-only and safe to share across threads.
class Workspace {
 public:
  static Workspace open(const std::filesystem::path& run_dir, std::size_t threads = 0);
  Workspace(std::filesystem::path run_dir, RunInfo info, Model<float> model,
            std::vector<InstancePair> pairs, std::size_t threads = 0);

  const std::filesystem::path& run_dir() const { return run_dir_; }
  const RunInfo& info() const { return info_; }
  const Model<float>& model() const { return model_; }
  const std::vector<InstancePair>& pairs() const { return pairs_; }
  const InstancePair& pair(std::size_t id) const;
  const ForwardTrace& trace(std::size_t id, ImageSide side) const;
  std::size_t neuron_count() const { return model_.spec.neuron_count(); }
  std::size_t class_count() const { return model_.spec.class_count; }

  /// 2D layout of the pooled penultimate activations; needs at least 3 pairs.
  ProjectionResult project(ImageSide side, ProjectionMethod method, std::uint64_t seed = 0) const;

 private:
  std::filesystem::path run_dir_;
  RunInfo info_;
  Model<float> model_;
  std::vector<InstancePair> pairs_;
  std::vector<ForwardTrace> benign_traces_;
  std::vector<ForwardTrace> adversarial_traces_;
};

}  // namespace advscope
