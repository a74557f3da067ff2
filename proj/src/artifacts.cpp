#include "advscope/artifacts.hpp"

#include <cstdio>

#include "advscope/binary_io.hpp"
#include "json.hpp"

namespace advscope {

using nlohmann::json;

std::filesystem::path cache_dir(const std::filesystem::path& run_dir) { return run_dir / "cache"; }

std::string format_threshold(double t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", t);
  return buf;
}

std::string dendrogram_cache_name(std::size_t pair_id, double threshold, Linkage linkage) {
  return "dendro_" + std::to_string(pair_id) + "_" + format_threshold(threshold) + "_" + to_string(linkage) + ".json";
}

Dendrogram dendrogram_from_json(const std::string& text) {
  Dendrogram tree;
  try {
    json j = json::parse(text);
    tree.leaves = j.at("leaves");
    for (const auto& m : j.at("merges")) tree.merges.push_back({m.at("left"), m.at("right"), m.at("height"), m.at("count")});
    tree.leaf_order = j.at("leaf_order").get<std::vector<std::size_t>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("dendrogram: ") + e.what());
  }
  try {
    validate_dendrogram(tree);
  } catch (const ComputeError& e) {
    throw FormatError(std::string("dendrogram: ") + e.what());
  }
  return tree;
}

std::optional<VulnerabilityMap> load_cached_vulnmap(const Workspace& workspace, std::size_t pair_id,
                                                    const VulnParams& params) {
  const auto path = cache_dir(workspace.run_dir()) / vulnmap_cache_name(pair_id, params);
  if (!std::filesystem::exists(path)) return std::nullopt;
  VulnerabilityMap map = load_vulnmap(path);
  const InstancePair& pair = workspace.pair(pair_id);
  if (map.params.k != params.k || map.params.s != params.s || map.params.space != params.space ||
      map.benign_label != pair.benign_label || map.adversarial_label != pair.adversarial_label ||
      map.height != workspace.info().height || map.width != workspace.info().width) {
    throw FormatError(path.string() + ": cached map does not match the run");
  }
  return map;
}

std::optional<Dendrogram> load_cached_dendrogram(const Workspace& workspace, std::size_t pair_id, double threshold,
                                                 Linkage linkage) {
  const auto path = cache_dir(workspace.run_dir()) / dendrogram_cache_name(pair_id, threshold, linkage);
  if (!std::filesystem::exists(path)) return std::nullopt;
  Dendrogram tree = dendrogram_from_json(read_text(path));
  if (tree.leaves != workspace.neuron_count()) throw FormatError(path.string() + ": leaf count mismatch");
  return tree;
}

PrecomputeReport precompute(const Workspace& workspace, const PrecomputeOptions& options,
                            const std::function<void(std::size_t, std::size_t)>& progress) {
  options.vuln.validate(workspace.info().height, workspace.info().width);
  if (!(options.q > 0 && options.q <= 1)) throw ValidationError("q must lie in (0, 1]", "q");
  const RfParams rf = resolve(options.rf, workspace.model().spec);
  if (!(rf.threshold > 0 && rf.threshold <= 1)) throw ValidationError("threshold must lie in (0, 1]", "t");
  // Cached dendrogram names carry no rf_size, so only the default is cached.
  if (rf.rf_size != resolve(RfParams{}, workspace.model().spec).rf_size) {
    throw ValidationError("precompute only supports the default rf_size", "rf_size");
  }
  const auto dir = cache_dir(workspace.run_dir());
  std::filesystem::create_directories(dir);

  PrecomputeReport report;
  report.pairs = workspace.pairs().size();
  for (std::size_t id = 0; id < workspace.pairs().size(); ++id) {
    if (load_cached_vulnmap(workspace, id, options.vuln)) {
      ++report.map_hits;
    } else {
      const VulnerabilityMap map = vulnerability_maps(workspace.model(), workspace.pair(id), options.vuln, options.threads);
      save_vulnmap(map, id, dir / vulnmap_cache_name(id, options.vuln));
      ++report.maps_computed;
    }
    if (load_cached_dendrogram(workspace, id, rf.threshold, options.linkage)) {
      ++report.dendrogram_hits;
    } else {
      const Dendrogram tree = pair_dendrogram(workspace, id, rf, options.linkage, options.threads);
      write_text_atomic(dir / dendrogram_cache_name(id, rf.threshold, options.linkage),
                        dendrogram_json(tree, options.linkage));
      ++report.dendrograms_computed;
    }
    if (progress) progress(id + 1, workspace.pairs().size());
  }
  json params{{"k", options.vuln.k},
              {"s", options.vuln.s},
              {"space", to_string(options.vuln.space)},
              {"q", options.q},
              {"t", rf.threshold},
              {"rf_size", rf.rf_size},
              {"linkage", to_string(options.linkage)}};
  write_text_atomic(dir / "precompute.json", params.dump(1));
  return report;
}

}  // namespace advscope
