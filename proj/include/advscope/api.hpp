#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "advscope/cache.hpp"
#include "advscope/cluster.hpp"
#include "advscope/vulnmap.hpp"
#include "advscope/workspace.hpp"

namespace advscope {

using QueryParams = std::map<std::string, std::string>;

struct ApiResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
  std::map<std::string, std::string> headers;
};

struct ApiOptions {
  std::size_t cache_bytes = std::size_t{256} << 20;
  std::size_t threads = 0;
};

/// Progress of long-running computations, polled through /jobs.
struct JobStatus {
  std::size_t id = 0;
  std::string key;
  std::size_t done = 0;
  std::size_t total = 0;
  std::string state;  // "running", "done" or "failed"
};

class JobRegistry {
 public:
  std::size_t start(const std::string& key, std::size_t total);
  void update(std::size_t id, std::size_t done);
  void finish(std::size_t id, bool ok);
  std::vector<JobStatus> list() const;
  std::optional<JobStatus> get(std::size_t id) const;

 private:
  mutable std::mutex mutex_;
  std::size_t next_ = 1;
  std::map<std::size_t, JobStatus> jobs_;
};

/// Read-only JSON API over one workspace. handle() is thread-safe; expensive
/// artifacts (vulnerability maps, dendrograms, projections) are cached in
/// memory and read from the run's precompute cache when present.
///
/// Routes (all GET):
///   /health  /matrix  /overview  /jobs  /jobs/{id}
///   /cell/{true}/{adv}/pairs
///   /pair/{id}  /pair/{id}/image/{benign|adversarial}.png
///   /pair/{id}/neurons  /pair/{id}/neuron/{k}/rf  /pair/{id}/neuron/{k}/context
///   /pair/{id}/vulnmap  /pair/{id}/vulnmap.png
///   /pair/{id}/dendrogram  /pair/{id}/cluster-rf
class Api {
 public:
  Api(std::shared_ptr<const Workspace> workspace, ApiOptions options = {});

  ApiResponse handle(const std::string& path, const QueryParams& params);

  const Workspace& workspace() const { return *workspace_; }
  CacheStats map_cache_stats() const { return maps_.stats(); }
  CacheStats dendrogram_cache_stats() const { return trees_.stats(); }

 private:
  struct Effective;

  ApiResponse route(const std::vector<std::string>& parts, const QueryParams& params);
  ApiResponse overview(const QueryParams& params);
  ApiResponse matrix(const QueryParams& params);
  ApiResponse cell(std::size_t true_label, std::size_t adv_label, const QueryParams& params);
  ApiResponse pair_summary(std::size_t id, const QueryParams& params);
  ApiResponse neurons(std::size_t id, const QueryParams& params);
  ApiResponse neuron_rf(std::size_t id, std::size_t neuron, const QueryParams& params);
  ApiResponse context(std::size_t id, std::size_t neuron, const QueryParams& params);
  ApiResponse vulnmap(std::size_t id, const QueryParams& params, bool png);
  ApiResponse dendrogram(std::size_t id, const QueryParams& params);
  ApiResponse cluster(std::size_t id, const QueryParams& params);
  ApiResponse jobs(const std::vector<std::string>& parts, const QueryParams& params);

  std::shared_ptr<const VulnerabilityMap> map_for(std::size_t id, const VulnParams& params, bool force, bool* hit);
  std::shared_ptr<const Dendrogram> tree_for(std::size_t id, const RfParams& rf, Linkage linkage, bool force,
                                             bool* hit);

  std::shared_ptr<const Workspace> workspace_;
  ApiOptions options_;
  JobRegistry jobs_;
  LruCache<VulnerabilityMap> maps_;
  LruCache<Dendrogram> trees_;
  LruCache<std::string> bodies_;
};

}  // namespace advscope
