#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include "advscope/cluster.hpp"
#include "advscope/vulnmap.hpp"
#include "advscope/workspace.hpp"

namespace advscope {

// On-disk artifact cache inside a run directory:
//   cache/vuln_{pair}_{k}_{s}_{space}.bin
//   cache/dendro_{pair}_{t}_{linkage}.json

std::filesystem::path cache_dir(const std::filesystem::path& run_dir);
std::string format_threshold(double t);
std::string dendrogram_cache_name(std::size_t pair_id, double threshold, Linkage linkage);

Dendrogram dendrogram_from_json(const std::string& text);

/// Cached map for the pair if present and consistent with it.
std::optional<VulnerabilityMap> load_cached_vulnmap(const Workspace& workspace, std::size_t pair_id,
                                                    const VulnParams& params);
std::optional<Dendrogram> load_cached_dendrogram(const Workspace& workspace, std::size_t pair_id,
                                                 double threshold, Linkage linkage);

struct PrecomputeOptions {
  VulnParams vuln;
  double q = 0.2;
  RfParams rf;
  Linkage linkage = Linkage::Average;
  std::size_t threads = 0;
};

struct PrecomputeReport {
  std::size_t pairs = 0;
  std::size_t map_hits = 0;
  std::size_t maps_computed = 0;
  std::size_t dendrogram_hits = 0;
  std::size_t dendrograms_computed = 0;

  double hit_rate() const {
    const std::size_t total = map_hits + maps_computed + dendrogram_hits + dendrograms_computed;
    return total ? static_cast<double>(map_hits + dendrogram_hits) / static_cast<double>(total) : 1.0;
  }
};

/// Writes every missing vulnerability map and dendrogram for all pairs.
PrecomputeReport precompute(const Workspace& workspace, const PrecomputeOptions& options,
                            const std::function<void(std::size_t done, std::size_t total)>& progress = {});

}  // namespace advscope
