#include "advscope/workspace.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "advscope/binary_io.hpp"
#include "advscope/model_io.hpp"
#include "json.hpp"

namespace advscope {

using nlohmann::json;

namespace {

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

std::string manifest_json(const RunInfo& info, const std::vector<InstancePair>& pairs) {
  json j;
  j["model_path"] = info.model_path;
  j["attack"] = {{"steps", info.attack.steps},
                 {"eps", info.attack.eps},
                 {"alpha", info.attack.alpha},
                 {"seed", info.attack.seed},
                 {"random_start", info.attack.random_start}};
  if (info.attack.target) j["attack"]["target"] = *info.attack.target;
  j["class_names"] = info.class_names;
  j["image"] = {{"channels", info.channels}, {"height", info.height}, {"width", info.width}};
  j["data"] = {{"path", info.data_path}, {"split", info.data_split}, {"test_fraction", info.test_fraction}};
  j["pairs"] = json::array();
  for (const auto& p : pairs) {
    j["pairs"].push_back({{"id", p.id},
                          {"source_index", p.source_index},
                          {"y", p.benign_label},
                          {"adv_label", p.adversarial_label},
                          {"p_benign", p.benign_probabilities},
                          {"p_adv", p.adversarial_probabilities},
                          {"l2", p.perturbation_l2}});
  }
  return j.dump(1);
}

void save_run(const std::filesystem::path& run_dir, const RunInfo& info,
              const std::vector<InstancePair>& pairs) {
  std::filesystem::create_directories(run_dir);
  Bytes blob;
  for (const auto& p : pairs) put_f32s(blob, p.benign.span());
  for (const auto& p : pairs) put_f32s(blob, p.adversarial.span());
  write_file_atomic(run_dir / "images.bin", blob);
  write_text_atomic(run_dir / "manifest.json", manifest_json(info, pairs));
}

void validate_pair(const InstancePair& pair, double eps) {
  const std::string where = "pair " + std::to_string(pair.id);
  const auto& pb = pair.benign_probabilities;
  const auto& pa = pair.adversarial_probabilities;
  if (pb.empty() || pb.size() != pa.size()) throw FormatError(where + ": probability vectors malformed");
  if (argmax(pb) != pair.benign_label) throw FormatError(where + ": benign argmax differs from y");
  if (argmax(pa) != pair.adversarial_label) throw FormatError(where + ": adversarial argmax differs from adv_label");
  if (pair.adversarial_label == pair.benign_label) throw FormatError(where + ": labels are equal");
  if (std::abs(l2_distance(pair.adversarial, pair.benign) - pair.perturbation_l2) > 1e-5) {
    throw FormatError(where + ": stored L2 does not match the images");
  }
  if (linf_distance(pair.adversarial, pair.benign) > eps + 1e-6) {
    throw FormatError(where + ": perturbation exceeds the L-infinity budget");
  }
  for (float v : pair.adversarial.span()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw FormatError(where + ": adversarial pixel outside [0, 1]");
  }
}

LoadedRun load_run(const std::filesystem::path& run_dir) {
  const auto manifest_path = run_dir / "manifest.json";
  json j;
  try {
    j = json::parse(read_text(manifest_path));
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  LoadedRun run;
  RunInfo& info = run.info;
  try {
    info.model_path = j.at("model_path").get<std::string>();
    const auto& a = j.at("attack");
    info.attack.steps = a.at("steps");
    info.attack.eps = a.at("eps");
    info.attack.alpha = a.at("alpha");
    info.attack.seed = a.at("seed");
    info.attack.random_start = a.at("random_start");
    if (a.contains("target")) info.attack.target = a.at("target").get<std::size_t>();
    info.class_names = j.at("class_names").get<std::vector<std::string>>();
    info.channels = j.at("image").at("channels");
    info.height = j.at("image").at("height");
    info.width = j.at("image").at("width");
    if (j.contains("data")) {
      info.data_path = j["data"].value("path", "");
      info.data_split = j["data"].value("split", "");
      info.test_fraction = j["data"].value("test_fraction", 0.0);
    }
    for (const auto& p : j.at("pairs")) {
      InstancePair pair;
      pair.id = p.at("id");
      pair.source_index = p.value("source_index", std::size_t{0});
      pair.benign_label = p.at("y");
      pair.adversarial_label = p.at("adv_label");
      pair.benign_probabilities = p.at("p_benign").get<std::vector<double>>();
      pair.adversarial_probabilities = p.at("p_adv").get<std::vector<double>>();
      pair.perturbation_l2 = p.at("l2");
      run.pairs.push_back(std::move(pair));
    }
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }

  const Shape shape{info.channels, info.height, info.width};
  const std::size_t pixels = shape_size(shape);
  const Bytes blob = read_file(run_dir / "images.bin");
  if (blob.size() != 2 * 4 * pixels * run.pairs.size()) {
    throw FormatError((run_dir / "images.bin").string() + ": size does not match manifest");
  }
  ByteReader reader(blob, "images.bin");
  for (auto& pair : run.pairs) {
    pair.benign = Tensor<float>(shape);
    reader.f32s(pair.benign.span());
  }
  for (auto& pair : run.pairs) {
    pair.adversarial = Tensor<float>(shape);
    reader.f32s(pair.adversarial.span());
  }
  for (std::size_t i = 0; i < run.pairs.size(); ++i) {
    if (run.pairs[i].id != i) throw FormatError("manifest: pair ids must be 0..n-1 in order");
    if (run.pairs[i].benign_probabilities.size() != info.class_names.size()) {
      throw FormatError("manifest: probability length differs from class count");
    }
    validate_pair(run.pairs[i], info.attack.eps);
  }
  return run;
}

std::size_t PredictionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

std::vector<std::size_t> PredictionMatrix::row_sums() const {
  std::vector<std::size_t> sums(classes);
  for (std::size_t i = 0; i < classes; ++i) {
    for (std::size_t j = 0; j < classes; ++j) sums[i] += at(i, j);
  }
  return sums;
}

PredictionMatrix build_prediction_matrix(const std::vector<InstancePair>& pairs, std::size_t classes) {
  PredictionMatrix m;
  m.classes = classes;
  m.counts.assign(classes * classes, 0);
  for (const auto& p : pairs) {
    if (p.benign_label >= classes || p.adversarial_label >= classes) {
      throw ValidationError("pair label out of range", "pairs");
    }
    ++m.counts[p.benign_label * classes + p.adversarial_label];
  }
  return m;
}

PairSort parse_pair_sort(const std::string& name) {
  if (name == "l2_asc") return PairSort::PerturbationAscending;
  if (name == "l2_desc") return PairSort::PerturbationDescending;
  if (name == "benign_prob_desc") return PairSort::BenignProbabilityDescending;
  if (name == "adv_prob_asc") return PairSort::AdversarialProbabilityAscending;
  throw ValidationError("unknown sort '" + name + "'", "sort");
}

std::string to_string(PairSort sort) {
  switch (sort) {
    case PairSort::PerturbationAscending: return "l2_asc";
    case PairSort::PerturbationDescending: return "l2_desc";
    case PairSort::BenignProbabilityDescending: return "benign_prob_desc";
    case PairSort::AdversarialProbabilityAscending: return "adv_prob_asc";
  }
  return "l2_asc";
}

std::vector<std::size_t> sort_pairs(const std::vector<InstancePair>& pairs, PairSort measure) {
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  auto key = [&](const InstancePair& p) {
    switch (measure) {
      case PairSort::PerturbationAscending: return p.perturbation_l2;
      case PairSort::PerturbationDescending: return -p.perturbation_l2;
      case PairSort::BenignProbabilityDescending: return -p.benign_probabilities.at(p.benign_label);
      case PairSort::AdversarialProbabilityAscending:
        return p.adversarial_probabilities.at(p.adversarial_label);
    }
    return 0.0;
  };
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double ka = key(pairs[a]), kb = key(pairs[b]);
    if (ka != kb) return ka < kb;
    return pairs[a].id < pairs[b].id;
  });
  std::vector<std::size_t> ids;
  ids.reserve(order.size());
  for (std::size_t i : order) ids.push_back(pairs[i].id);
  return ids;
}

std::vector<InstancePair> cell_pairs(const std::vector<InstancePair>& pairs, std::size_t true_label,
                                     std::size_t adv_label) {
  std::vector<InstancePair> out;
  for (const auto& p : pairs) {
    if (p.benign_label == true_label && p.adversarial_label == adv_label) out.push_back(p);
  }
  return out;
}

ImageSide parse_side(const std::string& name) {
  if (name == "benign" || name == "b") return ImageSide::Benign;
  if (name == "adversarial" || name == "adv" || name == "a") return ImageSide::Adversarial;
  throw ValidationError("unknown side '" + name + "'", "side");
}

std::string to_string(ImageSide side) { return side == ImageSide::Benign ? "benign" : "adversarial"; }

ProjectionMethod parse_projection(const std::string& name) {
  if (name == "pca") return ProjectionMethod::Pca;
  if (name == "tsne") return ProjectionMethod::Tsne;
  throw ValidationError("unknown projection method '" + name + "'", "method");
}

std::string to_string(ProjectionMethod method) { return method == ProjectionMethod::Pca ? "pca" : "tsne"; }

Workspace::Workspace(std::filesystem::path run_dir, RunInfo info, Model<float> model,
                     std::vector<InstancePair> pairs, std::size_t threads)
    : run_dir_(std::move(run_dir)), info_(std::move(info)), model_(std::move(model)), pairs_(std::move(pairs)) {
  if (model_.spec.input_shape() != Shape{info_.channels, info_.height, info_.width}) {
    throw ValidationError("run images do not match the model input", "model");
  }
  std::vector<Tensor<float>> benign, adversarial;
  for (const auto& p : pairs_) {
    benign.push_back(p.benign);
    adversarial.push_back(p.adversarial);
  }
  benign_traces_ = forward_many(model_, std::span<const Tensor<float>>(benign), threads);
  adversarial_traces_ = forward_many(model_, std::span<const Tensor<float>>(adversarial), threads);
}

Workspace Workspace::open(const std::filesystem::path& run_dir, std::size_t threads) {
  LoadedRun run = load_run(run_dir);
  std::filesystem::path model_path = run.info.model_path;
  if (model_path.is_relative()) model_path = run_dir / model_path;
  Model<float> model = load_model(model_path);
  return Workspace(run_dir, std::move(run.info), std::move(model), std::move(run.pairs), threads);
}

const InstancePair& Workspace::pair(std::size_t id) const {
  if (id >= pairs_.size()) throw NotFoundError("pair " + std::to_string(id) + " does not exist");
  return pairs_[id];
}

const ForwardTrace& Workspace::trace(std::size_t id, ImageSide side) const {
  (void)pair(id);
  return side == ImageSide::Benign ? benign_traces_[id] : adversarial_traces_[id];
}

ProjectionResult Workspace::project(ImageSide side, ProjectionMethod method, std::uint64_t seed) const {
  if (pairs_.size() < 3) throw ValidationError("projection needs at least 3 pairs", "pairs");
  FeatureRows rows;
  for (std::size_t i = 0; i < pairs_.size(); ++i) rows.push_back(trace(i, side).pooled);
  ProjectionResult result;
  result.side = side;
  result.method = method;
  result.seed = seed;
  if (method == ProjectionMethod::Pca) {
    result.points = pca_2d(rows);
  } else {
    TsneConfig config;
    config.seed = seed;
    result.points = tsne_2d(rows, config).coordinates;
  }
  return result;
}

}  // namespace advscope
