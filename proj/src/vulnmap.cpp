#include "advscope/vulnmap.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

#include "advscope/binary_io.hpp"
#include "advscope/parallel.hpp"
#include "json.hpp"

namespace advscope {

using nlohmann::json;

ValueSpace parse_value_space(const std::string& name) {
  if (name == "probability" || name == "prob") return ValueSpace::Probability;
  if (name == "logit") return ValueSpace::Logit;
  throw ValidationError("unknown value space '" + name + "'", "space");
}

std::string to_string(ValueSpace space) { return space == ValueSpace::Probability ? "probability" : "logit"; }

MapKind parse_map_kind(const std::string& name) {
  if (name == "benign" || name == "b") return MapKind::BenignDrop;
  if (name == "adv" || name == "adversarial" || name == "a") return MapKind::AdversarialRise;
  throw ValidationError("unknown map '" + name + "'", "which");
}

std::string to_string(MapKind kind) { return kind == MapKind::BenignDrop ? "benign" : "adv"; }

void VulnParams::validate(std::size_t height, std::size_t width) const {
  if (k < 1) throw ValidationError("k must be at least 1", "k");
  if (s < 1 || s > std::min(height, width)) throw ValidationError("s must lie in [1, min(w, h)]", "s");
}

bool VulnerabilityMap::operator==(const VulnerabilityMap& o) const {
  return height == o.height && width == o.width && rows == o.rows && cols == o.cols && params.k == o.params.k &&
         params.s == o.params.s && params.space == o.params.space && benign_label == o.benign_label &&
         adversarial_label == o.adversarial_label && b_map == o.b_map && a_map == o.a_map;
}

namespace {

std::vector<double> class_values(const Model<float>& model, const Tensor<float>& batch, ValueSpace space) {
  Tensor<float> logits = forward_batch(model, batch, Mode::Inference);
  std::vector<double> values(logits.span().begin(), logits.span().end());
  return space == ValueSpace::Logit ? values : softmax(values);
}

}  // namespace

VulnerabilityMap vulnerability_maps(const Model<float>& model, const Tensor<float>& benign,
                                    const Tensor<float>& adversarial, std::size_t benign_label,
                                    std::size_t adversarial_label, const VulnParams& params,
                                    std::size_t threads, const ProgressFn& progress) {
  const Shape in = model.spec.input_shape();
  if (benign.shape() != in || adversarial.shape() != in) {
    throw ValidationError("images do not match the model input", "image");
  }
  if (benign_label >= model.spec.class_count || adversarial_label >= model.spec.class_count) {
    throw ValidationError("label out of range", "label");
  }
  const std::size_t channels = in[0], h = in[1], w = in[2];
  params.validate(h, w);

  VulnerabilityMap map;
  map.height = h;
  map.width = w;
  map.params = params;
  map.rows = (h + params.s - 1) / params.s;
  map.cols = (w + params.s - 1) / params.s;
  map.benign_label = benign_label;
  map.adversarial_label = adversarial_label;
  map.b_map.assign(map.rows * map.cols, 0.0f);
  map.a_map.assign(map.rows * map.cols, 0.0f);

  const Shape batch_shape{1, channels, h, w};
  const std::vector<double> base = class_values(model, Tensor<float>(batch_shape, benign.values()), params.space);
  const std::size_t total = map.rows * map.cols;
  std::atomic<std::size_t> done{0};
  parallel_for(total, threads, [&](std::size_t cell) {
    const std::size_t i = (cell / map.cols) * params.s;
    const std::size_t j = (cell % map.cols) * params.s;
    const std::size_t r0 = i >= params.k ? i - params.k : 0, r1 = std::min(h, i + params.k);
    const std::size_t c0 = j >= params.k ? j - params.k : 0, c1 = std::min(w, j + params.k);
    Tensor<float> substituted(batch_shape, benign.values());
    for (std::size_t ch = 0; ch < channels; ++ch) {
      for (std::size_t r = r0; r < r1; ++r) {
        const std::size_t offset = (ch * h + r) * w;
        std::copy(adversarial.data() + offset + c0, adversarial.data() + offset + c1,
                  substituted.data() + offset + c0);
      }
    }
    const std::vector<double> y = class_values(model, substituted, params.space);
    map.b_map[cell] = static_cast<float>(y[benign_label] - base[benign_label]);
    map.a_map[cell] = static_cast<float>(base[adversarial_label] - y[adversarial_label]);
    const std::size_t finished = ++done;
    if (progress) progress(finished, total);
  });
  return map;
}

ScoreGrid vulnerability_score(const VulnerabilityMap& map, MapKind kind) {
  const auto& source = kind == MapKind::BenignDrop ? map.b_map : map.a_map;
  ScoreGrid grid;
  grid.height = map.height;
  grid.width = map.width;
  grid.values.resize(map.height * map.width);
  const std::size_t s = map.params.s;
  for (std::size_t r = 0; r < map.height; ++r) {
    for (std::size_t c = 0; c < map.width; ++c) {
      const double v = -static_cast<double>(source[(r / s) * map.cols + c / s]);
      grid.values[r * map.width + c] = v > 0 ? v : 0.0;
    }
  }
  return grid;
}

Mask binarize_top_q(const ScoreGrid& score, double q) {
  if (!(q > 0 && q <= 1)) throw ValidationError("q must lie in (0, 1]", "q");
  const std::size_t n = score.values.size();
  if (n != score.height * score.width) throw ValidationError("score grid size mismatch", "score");
  const auto keep = static_cast<std::size_t>(std::llround(q * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score.values[a] > score.values[b]; });
  Mask mask(score.height, score.width);
  for (std::size_t i = 0; i < std::min(keep, n); ++i) mask.bits[order[i]] = 1;
  return mask;
}

std::vector<NeuronIou> rank_neurons_by_iou(const std::vector<ReceptiveField>& benign_rfs, const Mask& binarized) {
  std::vector<NeuronIou> out;
  out.reserve(benign_rfs.size());
  for (std::size_t k = 0; k < benign_rfs.size(); ++k) out.push_back({k, iou(benign_rfs[k].mask, binarized)});
  std::stable_sort(out.begin(), out.end(), [](const NeuronIou& a, const NeuronIou& b) { return a.iou > b.iou; });
  return out;
}

std::vector<NeuronIou> rank_neurons_by_iou(const Workspace& workspace, std::size_t pair_id,
                                           const VulnerabilityMap& map, MapKind kind, const RfParams& rf,
                                           double q) {
  const InstancePair& pair = workspace.pair(pair_id);
  RfParams p = resolve(rf, workspace.model().spec);
  // RF masks must overlay the map pixel for pixel.
  p.rf_size = map.height;
  if (map.height != map.width) throw ValidationError("IoU ranking needs square images", "image");
  const auto rfs = all_receptive_fields(workspace.trace(pair_id, ImageSide::Benign), pair.benign, p);
  return rank_neurons_by_iou(rfs, binarize_top_q(vulnerability_score(map, kind), q));
}

std::string vulnmap_cache_name(std::size_t pair_id, const VulnParams& params) {
  return "vuln_" + std::to_string(pair_id) + "_" + std::to_string(params.k) + "_" + std::to_string(params.s) + "_" +
         to_string(params.space) + ".bin";
}

constexpr std::string_view kVulnMagic{"VMAP1\0", 6};

void save_vulnmap(const VulnerabilityMap& map, std::size_t pair_id, const std::filesystem::path& path) {
  json header{{"pair", pair_id},
              {"k", map.params.k},
              {"s", map.params.s},
              {"space", to_string(map.params.space)},
              {"height", map.height},
              {"width", map.width},
              {"rows", map.rows},
              {"cols", map.cols},
              {"benign_label", map.benign_label},
              {"adversarial_label", map.adversarial_label}};
  const std::string text = header.dump();
  Bytes out;
  put_bytes(out, kVulnMagic);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  put_bytes(out, text);
  put_f32s(out, map.b_map);
  put_f32s(out, map.a_map);
  write_file_atomic(path, out);
}

VulnerabilityMap load_vulnmap(const std::filesystem::path& path) {
  const Bytes bytes = read_file(path);
  ByteReader reader(bytes, path.string());
  reader.expect(kVulnMagic);
  auto header_bytes = reader.take(reader.u32());
  VulnerabilityMap map;
  try {
    json h = json::parse(header_bytes.begin(), header_bytes.end());
    map.params.k = h.at("k");
    map.params.s = h.at("s");
    map.params.space = parse_value_space(h.at("space"));
    map.height = h.at("height");
    map.width = h.at("width");
    map.rows = h.at("rows");
    map.cols = h.at("cols");
    map.benign_label = h.at("benign_label");
    map.adversarial_label = h.at("adversarial_label");
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  const std::size_t cells = map.rows * map.cols;
  if (map.params.s == 0 || map.rows != (map.height + map.params.s - 1) / map.params.s ||
      map.cols != (map.width + map.params.s - 1) / map.params.s || reader.remaining() != 8 * cells) {
    throw FormatError(path.string() + ": grid size mismatch");
  }
  map.b_map.resize(cells);
  map.a_map.resize(cells);
  reader.f32s(map.b_map);
  reader.f32s(map.a_map);
  return map;
}

}  // namespace advscope
