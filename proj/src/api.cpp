#include "advscope/api.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "advscope/artifacts.hpp"
#include "advscope/image_ops.hpp"
#include "advscope/neuron_measures.hpp"
#include "advscope/rf.hpp"
#include "json.hpp"

namespace advscope {

using nlohmann::json;

std::size_t JobRegistry::start(const std::string& key, std::size_t total) {
  std::lock_guard lock(mutex_);
  const std::size_t id = next_++;
  jobs_[id] = {id, key, 0, total, "running"};
  while (jobs_.size() > 128) jobs_.erase(jobs_.begin());
  return id;
}

void JobRegistry::update(std::size_t id, std::size_t done) {
  std::lock_guard lock(mutex_);
  if (auto it = jobs_.find(id); it != jobs_.end()) it->second.done = std::max(it->second.done, done);
}

void JobRegistry::finish(std::size_t id, bool ok) {
  std::lock_guard lock(mutex_);
  if (auto it = jobs_.find(id); it != jobs_.end()) {
    it->second.state = ok ? "done" : "failed";
    if (ok) it->second.done = it->second.total;
  }
}

std::vector<JobStatus> JobRegistry::list() const {
  std::lock_guard lock(mutex_);
  std::vector<JobStatus> out;
  for (const auto& [id, job] : jobs_) out.push_back(job);
  return out;
}

std::optional<JobStatus> JobRegistry::get(std::size_t id) const {
  std::lock_guard lock(mutex_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second;
}

namespace {

std::size_t parse_index(const std::string& text, const std::string& field) {
  std::size_t value = 0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || end != text.data() + text.size() || text.empty()) {
    throw ValidationError("'" + text + "' is not a nonnegative integer", field);
  }
  return value;
}

std::size_t param_size(const QueryParams& params, const std::string& name, std::size_t fallback) {
  auto it = params.find(name);
  return it == params.end() || it->second.empty() ? fallback : parse_index(it->second, name);
}

double param_double(const QueryParams& params, const std::string& name, double fallback) {
  auto it = params.find(name);
  if (it == params.end() || it->second.empty()) return fallback;
  try {
    std::size_t used = 0;
    const double value = std::stod(it->second, &used);
    if (used != it->second.size() || !std::isfinite(value)) throw std::invalid_argument("trailing");
    return value;
  } catch (const std::exception&) {
    throw ValidationError("'" + it->second + "' is not a number", name);
  }
}

std::string param_string(const QueryParams& params, const std::string& name, const std::string& fallback) {
  auto it = params.find(name);
  return it == params.end() || it->second.empty() ? fallback : it->second;
}

bool param_flag(const QueryParams& params, const std::string& name) {
  const std::string v = param_string(params, name, "0");
  return v == "1" || v == "true" || v == "yes";
}

std::vector<std::size_t> param_list(const QueryParams& params, const std::string& name) {
  std::vector<std::size_t> out;
  const std::string text = param_string(params, name, "");
  std::size_t start = 0;
  while (start <= text.size() && !text.empty()) {
    const std::size_t comma = text.find(',', start);
    const std::string item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    out.push_back(parse_index(item, name));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

ApiResponse json_response(const json& body) { return {200, "application/json", body.dump(), {}}; }

ApiResponse error_response(int status, const std::string& message, const std::string& field = {}) {
  json body{{"error", message}, {"status", status}};
  if (!field.empty()) body["field"] = field;
  return {status, "application/json", body.dump(), {}};
}

json mask_json(const Mask& mask) {
  return {{"height", mask.height}, {"width", mask.width}, {"count", mask.count()}, {"runs", mask.run_lengths()}};
}

json rf_json(const ReceptiveField& rf, const std::vector<double>& probabilities, std::size_t label) {
  return {{"png", base64_encode(encode_png(rf.image))},
          {"mask", mask_json(rf.mask)},
          {"dead", rf.dead},
          {"label", label},
          {"probabilities", probabilities}};
}

}  // namespace

// Effective analysis parameters, echoed in every pair-level response.
struct Api::Effective {
  VulnParams vuln;
  RfParams rf;
  double q = 0.2;
  double gamma = 0.95;
  Linkage linkage = Linkage::Average;

  Effective(const QueryParams& params, const Workspace& ws) {
    vuln.k = param_size(params, "k", 2);
    vuln.s = param_size(params, "s", 1);
    vuln.space = parse_value_space(param_string(params, "space", "probability"));
    vuln.validate(ws.info().height, ws.info().width);
    rf.threshold = param_double(params, "t", 0.5);
    rf.rf_size = param_size(params, "rf_size", 0);
    rf = resolve(rf, ws.model().spec);
    if (!(rf.threshold > 0 && rf.threshold <= 1)) throw ValidationError("t must lie in (0, 1]", "t");
    const auto [fh, fw] = ws.model().spec.feature_map_size();
    if (rf.rf_size < std::max(fh, fw) || rf.rf_size > 1024) {
      throw ValidationError("rf_size must lie between the feature map size and 1024", "rf_size");
    }
    q = param_double(params, "q", 0.2);
    if (!(q > 0 && q <= 1)) throw ValidationError("q must lie in (0, 1]", "q");
    gamma = param_double(params, "gamma", 0.95);
    if (!(gamma > 0 && gamma < 1)) throw ValidationError("gamma must lie in (0, 1)", "gamma");
    linkage = parse_linkage(param_string(params, "linkage", "average"));
  }

  json to_json() const {
    return {{"k", vuln.k},         {"s", vuln.s},          {"space", to_string(vuln.space)},
            {"t", rf.threshold},   {"rf_size", rf.rf_size}, {"q", q},
            {"gamma", gamma},      {"linkage", to_string(linkage)}};
  }
};

Api::Api(std::shared_ptr<const Workspace> workspace, ApiOptions options)
    : workspace_(std::move(workspace)),
      options_(options),
      maps_(options.cache_bytes / 2,
            [](const VulnerabilityMap& m) { return sizeof(VulnerabilityMap) + 4 * (m.b_map.size() + m.a_map.size()); }),
      trees_(options.cache_bytes / 4,
             [](const Dendrogram& t) {
               return sizeof(Dendrogram) + t.merges.size() * sizeof(Merge) + 8 * t.leaf_order.size();
             }),
      bodies_(options.cache_bytes / 4, [](const std::string& s) { return s.size(); }) {}

ApiResponse Api::handle(const std::string& path, const QueryParams& params) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (start < path.size()) {
    std::size_t slash = path.find('/', start);
    if (slash == std::string::npos) slash = path.size();
    if (slash > start) parts.push_back(path.substr(start, slash - start));
    start = slash + 1;
  }
  try {
    return route(parts, params);
  } catch (const ValidationError& e) {
    return error_response(400, e.what(), e.field());
  } catch (const NotFoundError& e) {
    return error_response(404, e.what());
  } catch (const InsufficientMembersError& e) {
    return error_response(422, e.what());
  } catch (const std::exception& e) {
    return error_response(500, e.what());
  }
}

ApiResponse Api::route(const std::vector<std::string>& parts, const QueryParams& params) {
  const std::size_t n = parts.size();
  const Effective eff(params, *workspace_);
  if (n == 1 && parts[0] == "health") {
    return json_response({{"status", "ok"}, {"pairs", workspace_->pairs().size()}, {"params", eff.to_json()}});
  }
  if (n == 1 && parts[0] == "overview") return overview(params);
  if (n == 1 && parts[0] == "matrix") return matrix(params);
  if (n >= 1 && parts[0] == "jobs") return jobs(parts, params);
  if (n == 4 && parts[0] == "cell" && parts[3] == "pairs") {
    return cell(parse_index(parts[1], "true"), parse_index(parts[2], "adv"), params);
  }
  if (n >= 2 && parts[0] == "pair") {
    const std::size_t id = parse_index(parts[1], "id");
    (void)workspace_->pair(id);
    if (n == 2) return pair_summary(id, params);
    if (n == 3 && parts[2] == "neurons") return neurons(id, params);
    if (n == 3 && parts[2] == "vulnmap") return vulnmap(id, params, false);
    if (n == 3 && parts[2] == "vulnmap.png") return vulnmap(id, params, true);
    if (n == 3 && parts[2] == "dendrogram") return dendrogram(id, params);
    if (n == 3 && parts[2] == "cluster-rf") return cluster(id, params);
    if (n == 4 && parts[2] == "image") {
      const InstancePair& pair = workspace_->pair(id);
      if (parts[3] == "benign.png") return {200, "image/png", [&] { auto b = encode_png(pair.benign); return std::string(b.begin(), b.end()); }(), {}};
      if (parts[3] == "adversarial.png") {
        auto b = encode_png(pair.adversarial);
        return {200, "image/png", std::string(b.begin(), b.end()), {}};
      }
      throw NotFoundError("unknown image '" + parts[3] + "'");
    }
    if (n == 5 && parts[2] == "neuron") {
      const std::size_t k = parse_index(parts[3], "neuron");
      if (k >= workspace_->neuron_count()) throw NotFoundError("neuron " + parts[3] + " does not exist");
      if (parts[4] == "rf") return neuron_rf(id, k, params);
      if (parts[4] == "context") return context(id, k, params);
    }
  }
  std::string path;
  for (const auto& p : parts) path += "/" + p;
  throw NotFoundError("no route for '" + (path.empty() ? "/" : path) + "'");
}

ApiResponse Api::overview(const QueryParams& params) {
  const std::string color_by = param_string(params, "color_by", "true");
  if (color_by != "true" && color_by != "predicted") throw ValidationError("color_by must be true or predicted", "color_by");
  const ProjectionMethod method = parse_projection(param_string(params, "method", "pca"));
  const std::size_t seed = param_size(params, "seed", 0);
  const json echo = Effective(params, *workspace_).to_json();
  const std::string key =
      "overview/" + color_by + "/" + to_string(method) + "/" + std::to_string(seed) + "/" + echo.dump();
  auto body = bodies_.get_or_compute(key, [&] {
    const auto& pairs = workspace_->pairs();
    json j;
    j["params"] = echo;
    j["class_names"] = workspace_->info().class_names;
    j["color_by"] = color_by;
    j["method"] = to_string(method);
    j["seed"] = seed;
    j["pair_ids"] = json::array();
    for (const auto& p : pairs) j["pair_ids"].push_back(p.id);
    for (ImageSide side : {ImageSide::Benign, ImageSide::Adversarial}) {
      json view;
      view["points"] = json::array();
      view["labels"] = json::array();
      std::vector<Point2> points(pairs.size(), Point2{0, 0});
      if (pairs.size() >= 3) points = workspace_->project(side, method, seed).points;
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        view["points"].push_back({points[i][0], points[i][1]});
        const bool predicted = color_by == "predicted" && side == ImageSide::Adversarial;
        view["labels"].push_back(predicted ? pairs[i].adversarial_label : pairs[i].benign_label);
      }
      j[to_string(side)] = view;
    }
    return j.dump();
  });
  return {200, "application/json", *body, {}};
}

ApiResponse Api::matrix(const QueryParams& params) {
  const auto m = build_prediction_matrix(workspace_->pairs(), workspace_->class_count());
  json counts = json::array();
  for (std::size_t i = 0; i < m.classes; ++i) {
    json row = json::array();
    for (std::size_t j = 0; j < m.classes; ++j) row.push_back(m.at(i, j));
    counts.push_back(row);
  }
  return json_response({{"classes", m.classes},
                        {"class_names", workspace_->info().class_names},
                        {"counts", counts},
                        {"total", m.total()},
                        {"pair_count", workspace_->pairs().size()},
                        {"params", Effective(params, *workspace_).to_json()}});
}

ApiResponse Api::cell(std::size_t true_label, std::size_t adv_label, const QueryParams& params) {
  const std::size_t c = workspace_->class_count();
  if (true_label >= c) throw NotFoundError("class " + std::to_string(true_label) + " does not exist");
  if (adv_label >= c) throw NotFoundError("class " + std::to_string(adv_label) + " does not exist");
  const PairSort sort = parse_pair_sort(param_string(params, "sort", "l2_asc"));
  const bool thumbs = param_string(params, "thumbs", "1") != "0";
  const auto members = cell_pairs(workspace_->pairs(), true_label, adv_label);
  json list = json::array();
  for (std::size_t id : sort_pairs(members, sort)) {
    const InstancePair& p = workspace_->pair(id);
    json item{{"id", id},
              {"y", p.benign_label},
              {"adv_label", p.adversarial_label},
              {"p_benign", p.benign_probabilities},
              {"p_adv", p.adversarial_probabilities},
              {"l2", p.perturbation_l2},
              {"image_benign", "/pair/" + std::to_string(id) + "/image/benign.png"},
              {"image_adv", "/pair/" + std::to_string(id) + "/image/adversarial.png"}};
    if (thumbs) {
      item["thumb_benign"] = base64_encode(encode_png(p.benign));
      item["thumb_adv"] = base64_encode(encode_png(p.adversarial));
    }
    list.push_back(std::move(item));
  }
  return json_response({{"true_label", true_label},
                        {"adv_label", adv_label},
                        {"sort", to_string(sort)},
                        {"params", Effective(params, *workspace_).to_json()},
                        {"pairs", list}});
}

ApiResponse Api::pair_summary(std::size_t id, const QueryParams& params) {
  const Effective eff(params, *workspace_);
  const InstancePair& p = workspace_->pair(id);
  return json_response({{"id", id},
                        {"source_index", p.source_index},
                        {"y", p.benign_label},
                        {"adv_label", p.adversarial_label},
                        {"p_benign", p.benign_probabilities},
                        {"p_adv", p.adversarial_probabilities},
                        {"l2", p.perturbation_l2},
                        {"neurons", workspace_->neuron_count()},
                        {"params", eff.to_json()}});
}

std::shared_ptr<const VulnerabilityMap> Api::map_for(std::size_t id, const VulnParams& params, bool force, bool* hit) {
  auto compute = [&] {
    const std::string key = "vulnmap pair=" + std::to_string(id) + " k=" + std::to_string(params.k) +
                            " s=" + std::to_string(params.s) + " space=" + to_string(params.space);
    const InstancePair& pair = workspace_->pair(id);
    const std::size_t cells = ((pair.benign.dim(1) + params.s - 1) / params.s) * ((pair.benign.dim(2) + params.s - 1) / params.s);
    const std::size_t job = jobs_.start(key, cells);
    try {
      auto map = vulnerability_maps(workspace_->model(), pair, params, options_.threads,
                                    [&](std::size_t done, std::size_t) { jobs_.update(job, done); });
      jobs_.finish(job, true);
      return map;
    } catch (...) {
      jobs_.finish(job, false);
      throw;
    }
  };
  if (force) {
    if (hit) *hit = false;
    return std::make_shared<const VulnerabilityMap>(compute());
  }
  // Maps read back from the precompute cache count as hits.
  bool from_disk = false;
  auto map = maps_.get_or_compute(vulnmap_cache_name(id, params), [&] {
    if (auto cached = load_cached_vulnmap(*workspace_, id, params)) {
      from_disk = true;
      return *cached;
    }
    return compute();
  }, hit);
  if (hit && from_disk) *hit = true;
  return map;
}

std::shared_ptr<const Dendrogram> Api::tree_for(std::size_t id, const RfParams& rf, Linkage linkage, bool force,
                                                bool* hit) {
  const bool default_size = rf.rf_size == resolve(RfParams{}, workspace_->model().spec).rf_size;
  auto compute = [&] { return pair_dendrogram(*workspace_, id, rf, linkage, options_.threads); };
  if (force) {
    if (hit) *hit = false;
    return std::make_shared<const Dendrogram>(compute());
  }
  const std::string key = dendrogram_cache_name(id, rf.threshold, linkage) + "@" + std::to_string(rf.rf_size);
  bool from_disk = false;
  auto tree = trees_.get_or_compute(key, [&] {
    if (default_size) {
      if (auto cached = load_cached_dendrogram(*workspace_, id, rf.threshold, linkage)) {
        from_disk = true;
        return *cached;
      }
    }
    return compute();
  }, hit);
  if (hit && from_disk) *hit = true;
  return tree;
}

ApiResponse Api::neurons(std::size_t id, const QueryParams& params) {
  const Effective eff(params, *workspace_);
  const std::string sort = param_string(params, "sort", "gap");
  if (sort != "gap" && sort != "iou_b" && sort != "iou_a") throw ValidationError("sort must be gap, iou_b or iou_a", "sort");
  const bool force = param_flag(params, "force");
  const InstancePair& pair = workspace_->pair(id);
  const auto rows = neuron_rows(*workspace_, id, eff.gamma);

  std::vector<double> keys(rows.size());
  std::vector<std::size_t> order;
  bool hit = true;
  if (sort == "gap") {
    for (const auto& r : rows) keys[r.neuron] = r.bg;
    order = rank_by_gap(keys);
  } else {
    const auto map = map_for(id, eff.vuln, force, &hit);
    const MapKind kind = sort == "iou_b" ? MapKind::BenignDrop : MapKind::AdversarialRise;
    for (const auto& ranked : rank_neurons_by_iou(*workspace_, id, *map, kind, eff.rf, eff.q)) {
      order.push_back(ranked.neuron);
      keys[ranked.neuron] = ranked.iou;
    }
  }
  json list = json::array();
  for (std::size_t k : order) {
    const NeuronRow& r = rows[k];
    json item{{"id", k},
              {"curve_b", r.curve_b},
              {"curve_a", r.curve_a},
              {"band_b", {r.band_b.first, r.band_b.second}},
              {"band_a", {r.band_a.first, r.band_a.second}},
              {"bg", r.bg},
              {"key", keys[k]}};
    if (sort != "gap") item["iou"] = keys[k];
    list.push_back(std::move(item));
  }
  ApiResponse response = json_response({{"pair", id},
                                        {"sort", sort},
                                        {"y", pair.benign_label},
                                        {"adv_label", pair.adversarial_label},
                                        {"params", eff.to_json()},
                                        {"neurons", list}});
  if (sort != "gap") response.headers["X-Cache"] = hit ? "hit" : "miss";
  return response;
}

ApiResponse Api::neuron_rf(std::size_t id, std::size_t neuron, const QueryParams& params) {
  const Effective eff(params, *workspace_);
  const std::string side = param_string(params, "side", "both");
  if (side != "both") (void)parse_side(side);
  const InstancePair& pair = workspace_->pair(id);
  json j{{"pair", id}, {"neuron", neuron}, {"params", eff.to_json()}};
  if (side == "both" || parse_side(side) == ImageSide::Benign) {
    const auto rf = receptive_field(workspace_->trace(id, ImageSide::Benign), neuron, pair.benign, eff.rf);
    j["benign"] = rf_json(rf, pair.benign_probabilities, pair.benign_label);
  }
  if (side == "both" || parse_side(side) == ImageSide::Adversarial) {
    const auto rf = receptive_field(workspace_->trace(id, ImageSide::Adversarial), neuron, pair.adversarial, eff.rf);
    j["adversarial"] = rf_json(rf, pair.adversarial_probabilities, pair.adversarial_label);
  }
  return json_response(j);
}

ApiResponse Api::context(std::size_t id, std::size_t neuron, const QueryParams& params) {
  const Effective eff(params, *workspace_);
  const ContextSort sort = parse_context_sort(param_string(params, "sort", "activation"));
  const std::size_t m = param_size(params, "m", 6);
  if (m == 0) throw ValidationError("m must be at least 1", "m");
  const std::string scope = param_string(params, "subset", "all");
  const InstancePair& pair = workspace_->pair(id);
  std::vector<std::size_t> subset;
  for (const auto& p : workspace_->pairs()) {
    if (scope == "all" || (p.benign_label == pair.benign_label && p.adversarial_label == pair.adversarial_label)) {
      subset.push_back(p.id);
    }
  }
  if (scope != "all" && scope != "cell") throw ValidationError("subset must be all or cell", "subset");
  json list = json::array();
  for (const auto& ctx : context_images(*workspace_, neuron, subset, sort, m, eff.rf)) {
    const InstancePair& p = workspace_->pair(ctx.pair_id);
    list.push_back({{"pair", ctx.pair_id},
                    {"score", ctx.score},
                    {"benign", rf_json(ctx.benign, p.benign_probabilities, p.benign_label)},
                    {"adversarial", rf_json(ctx.adversarial, p.adversarial_probabilities, p.adversarial_label)}});
  }
  return json_response({{"pair", id},
                        {"neuron", neuron},
                        {"sort", to_string(sort)},
                        {"m", m},
                        {"subset", scope},
                        {"params", eff.to_json()},
                        {"images", list}});
}

ApiResponse Api::vulnmap(std::size_t id, const QueryParams& params, bool png) {
  const Effective eff(params, *workspace_);
  const MapKind kind = parse_map_kind(param_string(params, "which", "benign"));
  const bool force = param_flag(params, "force");
  bool hit = false;
  const auto map = map_for(id, eff.vuln, force, &hit);
  const ScoreGrid score = vulnerability_score(*map, kind);
  ApiResponse response;
  if (png) {
    const auto bytes = encode_heatmap_png(score.values, score.height, score.width);
    response = {200, "image/png", std::string(bytes.begin(), bytes.end()), {}};
  } else {
    const Mask binary = binarize_top_q(score, eff.q);
    const auto& lattice = kind == MapKind::BenignDrop ? map->b_map : map->a_map;
    response = json_response({{"pair", id},
                              {"which", to_string(kind)},
                              {"params", eff.to_json()},
                              {"lattice", {{"rows", map->rows}, {"cols", map->cols}, {"values", lattice}}},
                              {"score", {{"height", score.height}, {"width", score.width}, {"values", score.values}}},
                              {"binarized", mask_json(binary)},
                              {"overlay_png", base64_encode(encode_heatmap_png(score.values, score.height, score.width))}});
  }
  response.headers["X-Cache"] = hit ? "hit" : "miss";
  return response;
}

ApiResponse Api::dendrogram(std::size_t id, const QueryParams& params) {
  const Effective eff(params, *workspace_);
  bool hit = false;
  const auto tree = tree_for(id, eff.rf, eff.linkage, param_flag(params, "force"), &hit);
  json j = json::parse(dendrogram_json(*tree, eff.linkage));
  j["pair"] = id;
  j["params"] = eff.to_json();
  if (params.count("neuron")) {
    const std::size_t k = param_size(params, "neuron", 0);
    if (k >= tree->leaves) throw NotFoundError("neuron " + std::to_string(k) + " does not exist");
    j["path"] = tree->path_to_root(k);
  }
  ApiResponse response = json_response(j);
  response.headers["X-Cache"] = hit ? "hit" : "miss";
  return response;
}

ApiResponse Api::cluster(std::size_t id, const QueryParams& params) {
  const Effective eff(params, *workspace_);
  const auto nodes = param_list(params, "nodes");
  if (nodes.empty()) throw ValidationError("nodes must list at least one dendrogram node", "nodes");
  const MaskOp op = parse_mask_op(param_string(params, "op", "union"));
  const ImageSide side = parse_side(param_string(params, "side", "benign"));
  const auto tree = tree_for(id, eff.rf, eff.linkage, false, nullptr);
  const auto neurons = select_subtree(*tree, nodes);
  const ClusterRf rf = cluster_rf(*workspace_, id, neurons, op, side, eff.rf);
  return json_response({{"pair", id},
                        {"nodes", nodes},
                        {"neurons", rf.neurons},
                        {"op", to_string(op)},
                        {"side", to_string(side)},
                        {"params", eff.to_json()},
                        {"mask", mask_json(rf.mask)},
                        {"png", base64_encode(encode_png(rf.image))}});
}

ApiResponse Api::jobs(const std::vector<std::string>& parts, const QueryParams& params) {
  const json echo = Effective(params, *workspace_).to_json();
  auto to_json = [](const JobStatus& s) {
    return json{{"id", s.id}, {"key", s.key}, {"done", s.done}, {"total", s.total}, {"state", s.state}};
  };
  if (parts.size() == 1) {
    json list = json::array();
    for (const auto& s : jobs_.list()) list.push_back(to_json(s));
    return json_response({{"jobs", list}, {"params", echo}});
  }
  if (parts.size() == 2) {
    const auto status = jobs_.get(parse_index(parts[1], "id"));
    if (!status) throw NotFoundError("job " + parts[1] + " does not exist");
    json j = to_json(*status);
    j["params"] = echo;
    return json_response(j);
  }
  throw NotFoundError("no route");
}

}  // namespace advscope
