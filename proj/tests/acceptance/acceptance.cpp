// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero when any criterion fails. Pass criterion names as arguments
// to run a subset; the pipeline run is built whenever a later check needs it.

#include <chrono>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include "advscope/api.hpp"
#include "advscope/artifacts.hpp"
#include "advscope/cli.hpp"
#include "advscope/neuron_measures.hpp"
#include "advscope/rf.hpp"
#include "advscope/server.hpp"
#include "advscope/train.hpp"
#include "advscope/vulnmap.hpp"
#include "httplib.h"
#include "json.hpp"
#include "schema.hpp"
#include "support.hpp"

using namespace advscope;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      if (!pass) detail << "; ";
      detail << "failed: " << what;
      pass = false;
    }
  }
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int run_quiet(const fs::path& workdir, std::vector<std::string> args) {
  args.insert(args.begin(), {"--workdir", workdir.string()});
  std::ostringstream sink;
  auto* old = std::cout.rdbuf(sink.rdbuf());
  const int code = run_cli(args);
  std::cout.rdbuf(old);
  return code;
}

// ---------------------------------------------------------------------------

struct Pipeline {
  fs::path dir;
  double seconds = 0;
  double test_accuracy = 0;
  int failed_step = 0;
};

Pipeline run_pipeline(const fs::path& dir) {
  Pipeline p;
  p.dir = dir;
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto start = Clock::now();
  const std::vector<std::vector<std::string>> steps = {
      {"gen-data", "--seed", "7", "--per-class", "500", "--out", "shapes.ds"},
      {"train", "--data", "shapes.ds", "--epochs", "10", "--seed", "7", "--out", "model.mnet"},
      {"attack", "--model", "model.mnet", "--data", "shapes.ds", "--split", "test", "--seed", "7", "--out", "run"},
      {"precompute", "--run", "run"},
  };
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (run_quiet(dir, steps[i]) != kExitOk) {
      p.failed_step = static_cast<int>(i + 1);
      return p;
    }
  }
  p.seconds = seconds_since(start);
  p.test_accuracy = json::parse(read_file(dir / "model.mnet.report.json")).value("test_accuracy", 0.0);
  return p;
}

std::map<std::string, std::string> artifact_bytes(const fs::path& run) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(run)) {
    if (entry.is_regular_file()) out[fs::relative(entry.path(), run).generic_string()] = read_file(entry.path());
  }
  return out;
}

struct Shared {
  fs::path root;
  std::optional<Pipeline> first;
  std::optional<Pipeline> second;
  std::shared_ptr<const Workspace> workspace;

  const Pipeline& pipeline() {
    if (!first) {
      first = run_pipeline(root / "a");
      if (first->failed_step == 0) {
        workspace = std::make_shared<const Workspace>(Workspace::open(first->dir / "run"));
      }
    }
    return *first;
  }
  bool ready() { return pipeline().failed_step == 0 && workspace && !workspace->pairs().empty(); }
};

// ---------------------------------------------------------------------------

void gradients(Shared&, Outcome& out) {
  const auto start = Clock::now();
  SplitMix64 rng(2024);
  double worst = 0;
  std::size_t probes = 0, skipped = 0;
  for (std::size_t instance = 0; instance < 20; ++instance) {
    Model<double> model = init_model<double>(ModelSpec::mininet(shape_class_names()), rng.next());
    test::randomize_batchnorm(model, rng);
    Tensor<double> batch({2, 3, 32, 32});
    for (auto& v : batch.span()) v = rng.uniform();
    const std::vector<std::size_t> labels{rng.below(4), rng.below(4)};
    const Mode mode = instance % 2 ? Mode::Training : Mode::Inference;
    const auto check = test::check_gradients(model, batch, labels, mode, rng, 25, 25);
    worst = std::max(worst, check.max_relative_error);
    probes += check.probes;
    skipped += check.skipped_kinks;
    out.require(check.probes == 50, "instance " + std::to_string(instance) + " ran out of smooth probes");
  }
  const double elapsed = seconds_since(start);
  out.require(worst < 1e-4, "max relative error below 1e-4");
  out.require(elapsed < 60, "runtime below 60 s");
  out.detail << (out.pass ? "" : "; ") << "max rel err " << worst << " over " << probes << " probes (" << skipped
             << " kink probes redrawn), " << elapsed << " s";
}

void pgd(Shared& shared, Outcome& out) {
  if (!shared.ready()) return out.require(false, "pipeline run unavailable");
  const Workspace& ws = *shared.workspace;
  const double eps = ws.info().attack.eps;
  out.require(ws.info().attack.steps == 7 && eps == 8.0 / 255.0 && ws.info().attack.alpha == 2.0 / 255.0,
              "run uses the default attack settings");
  for (const auto& pair : ws.pairs()) {
    double linf = 0, lo = 1, hi = 0;
    for (std::size_t i = 0; i < pair.benign.size(); ++i) {
      linf = std::max(linf, std::abs(static_cast<double>(pair.adversarial[i]) - pair.benign[i]));
      lo = std::min(lo, static_cast<double>(pair.adversarial[i]));
      hi = std::max(hi, static_cast<double>(pair.adversarial[i]));
    }
    if (linf > eps + 1e-6 || lo < 0 || hi > 1 || pair.benign_label == pair.adversarial_label) {
      out.require(false, "pair " + std::to_string(pair.id) + " violates the contract");
      break;
    }
  }
  const Model<float> model = load_model(shared.first->dir / "model.mnet");
  const Dataset test_set = split_dataset(load_dataset(shared.first->dir / "shapes.ds"), 0.2).test;
  AttackSummary s8, s16;
  AttackConfig config = ws.info().attack;
  attack_dataset(model, test_set, config, 0, &s8);
  config.eps = 16.0 / 255.0;
  attack_dataset(model, test_set, config, 0, &s16);
  out.require(s8.successes == ws.pairs().size(), "run pair count matches a fresh attack");
  out.require(s8.success_rate() >= 0.5, "success rate at 8/255 at least 0.5");
  out.require(s16.success_rate() >= s8.success_rate(), "success(16/255) >= success(8/255)");
  out.detail << (out.pass ? "" : "; ") << ws.pairs().size() << " pairs checked, success " << s8.success_rate()
             << " at 8/255 and " << s16.success_rate() << " at 16/255 (" << s8.true_positives
             << " correctly classified)";
}

void algorithm1(Shared& shared, Outcome& out) {
  if (!shared.ready()) return out.require(false, "pipeline run unavailable");
  const Workspace& ws = *shared.workspace;
  const Model<float>& model = ws.model();
  const std::size_t h = ws.info().height, w = ws.info().width;
  const InstancePair& pair = ws.pair(0);

  // (a) identical images
  for (ValueSpace space : {ValueSpace::Probability, ValueSpace::Logit}) {
    const auto same = vulnerability_maps(model, pair.benign, pair.benign, pair.benign_label, pair.adversarial_label,
                                         {2, 1, space}, 0);
    bool zero = true;
    for (float v : same.b_map) zero &= v == 0.0f;
    for (float v : same.a_map) zero &= v == 0.0f;
    out.require(zero, "(a) identical images give all-zero maps");
  }

  // (b) one window covering the whole image
  const auto full = vulnerability_maps(model, pair, {std::max(h, w), std::max(h, w), ValueSpace::Probability}, 0);
  const auto yb = forward(model, pair.benign).probabilities, ya = forward(model, pair.adversarial).probabilities;
  const double db = std::abs(full.b_map[0] - (ya[pair.benign_label] - yb[pair.benign_label]));
  const double da = std::abs(full.a_map[0] - (yb[pair.adversarial_label] - ya[pair.adversarial_label]));
  out.require(full.rows == 1 && full.cols == 1 && db < 1e-6 && da < 1e-6, "(b) full-image cell equals the class deltas");

  // (c) stride 2 is the stride-1 lattice sampled at even positions
  bool sampled = true;
  for (std::size_t id = 0; id < std::min<std::size_t>(3, ws.pairs().size()); ++id) {
    const auto one = vulnerability_maps(model, ws.pair(id), {2, 1, ValueSpace::Probability}, 0);
    const auto two = vulnerability_maps(model, ws.pair(id), {2, 2, ValueSpace::Probability}, 0);
    for (std::size_t r = 0; r < two.rows; ++r) {
      for (std::size_t c = 0; c < two.cols; ++c) {
        sampled &= two.b_map[r * two.cols + c] == one.b_map[2 * r * one.cols + 2 * c];
        sampled &= two.a_map[r * two.cols + c] == one.a_map[2 * r * one.cols + 2 * c];
      }
    }
  }
  out.require(sampled, "(c) stride-2 map equals the sampled stride-1 map");

  // (d) runtime
  const auto start = Clock::now();
  vulnerability_maps(model, pair, {2, 1, ValueSpace::Probability}, 4);
  const double elapsed = seconds_since(start);
  out.require(h == 32 && w == 32 && elapsed < 10, "(d) 32x32 s=1 k=2 map under 10 s");
  out.detail << (out.pass ? "" : "; ") << "(d) " << elapsed << " s on 4 threads ("
             << std::thread::hardware_concurrency() << " hardware threads)";
}

void band_gap_criterion(Shared& shared, Outcome& out) {
  out.require(band_gap(0, 1, 2, 3) == -1, "fixture (0,1) vs (2,3) gives -1");
  out.require(band_gap(2, 3, 0, 1) == 1, "fixture (2,3) vs (0,1) gives +1");
  out.require(band_gap(0, 2, 1, 3) == 0, "fixture (0,2) vs (1,3) gives 0");
  SplitMix64 rng(99);
  std::size_t antisymmetric = 0;
  for (std::size_t i = 0; i < 10000; ++i) {
    // Two disjoint intervals in random order.
    double p[4];
    for (double& v : p) v = rng.uniform(-10, 10);
    std::sort(p, p + 4);
    if (p[1] == p[2]) p[2] = std::nextafter(p[2], 11.0);
    const bool swap = rng.below(2);
    const double al = swap ? p[2] : p[0], au = swap ? p[3] : p[1];
    const double bl = swap ? p[0] : p[2], bu = swap ? p[1] : p[3];
    const double ab = band_gap(al, au, bl, bu), ba = band_gap(bl, bu, al, au);
    antisymmetric += ab == -ba && ab != 0;
  }
  out.require(antisymmetric == 10000, "BG(A,B) == -BG(B,A) on 10,000 disjoint band pairs");

  if (!shared.ready()) return out.require(false, "pipeline run unavailable");
  const Workspace& ws = *shared.workspace;
  double worst = 0;
  std::size_t traces = 0;
  for (const auto& pair : ws.pairs()) {
    for (ImageSide side : {ImageSide::Benign, ImageSide::Adversarial}) {
      const ForwardTrace& trace = ws.trace(pair.id, side);
      ++traces;
      for (std::size_t c = 0; c < ws.class_count(); ++c) {
        const auto v = contribution(ws.model(), trace, c);
        double sum = ws.model().dense_bias()[c];
        for (double x : v.values) sum += x;
        worst = std::max(worst, std::abs(sum - trace.logits[c]));
      }
    }
  }
  out.require(worst <= 1e-5, "contribution decomposition within 1e-5");
  out.detail << (out.pass ? "" : "; ") << "antisymmetric " << antisymmetric << "/10000, decomposition max err "
             << worst << " over " << traces << " traces";
}

void iou_rf(Shared& shared, Outcome& out) {
  SplitMix64 rng(5);
  std::size_t good = 0;
  for (std::size_t i = 0; i < 10000; ++i) {
    const std::size_t h = 1 + rng.below(20), w = 1 + rng.below(20);
    const Mask a = test::random_mask(rng, h, w, rng.uniform()), b = test::random_mask(rng, h, w, rng.uniform());
    const double ab = iou(a, b), ba = iou(b, a), aa = iou(a, a);
    const bool empty = a.count() == 0;
    good += ab == ba && ab >= 0 && ab <= 1 && aa == (empty ? 0.0 : 1.0);
  }
  out.require(good == 10000, "IoU symmetry, bounds and identity");

  if (!shared.ready()) return out.require(false, "pipeline run unavailable");
  const Workspace& ws = *shared.workspace;
  std::size_t monotone = 0, traces = 0;
  for (std::size_t i = 0; i < 1000; ++i) {
    // Run traces first, then fresh random images through the trained model.
    ForwardTrace fresh;
    const ForwardTrace* trace = nullptr;
    Tensor<float> image;
    if (i < 2 * ws.pairs().size()) {
      const auto& pair = ws.pair(i / 2);
      const ImageSide side = i % 2 ? ImageSide::Adversarial : ImageSide::Benign;
      trace = &ws.trace(pair.id, side);
      image = side == ImageSide::Benign ? pair.benign : pair.adversarial;
    } else {
      image = test::random_image(rng, 3, ws.info().height, ws.info().width);
      fresh = forward(ws.model(), image);
      trace = &fresh;
    }
    ++traces;
    const std::size_t neuron = rng.below(ws.neuron_count());
    double t1 = rng.uniform(0.01, 1.0), t2 = rng.uniform(0.01, 1.0);
    if (t1 > t2) std::swap(t1, t2);
    const auto low = receptive_field(*trace, neuron, image, resolve(RfParams{0, t1}, ws.model().spec));
    const auto high = receptive_field(*trace, neuron, image, resolve(RfParams{0, t2}, ws.model().spec));
    bool subset = true;
    for (std::size_t p = 0; p < high.mask.bits.size(); ++p) subset &= !high.mask.bits[p] || low.mask.bits[p];
    monotone += subset;
  }
  out.require(monotone == traces, "RF mask shrinks as the threshold grows");

  std::size_t exact = 0;
  for (std::size_t i = 0; i < 1000; ++i) {
    ScoreGrid grid;
    grid.height = 1 + rng.below(40);
    grid.width = 1 + rng.below(40);
    grid.values.resize(grid.height * grid.width);
    // Coarse values force ties.
    for (auto& v : grid.values) v = static_cast<double>(rng.below(5));
    const double q = i == 0 ? 1.0 : rng.uniform(0.001, 1.0);
    const double n = static_cast<double>(grid.values.size());
    const double fraction = static_cast<double>(binarize_top_q(grid, q).count()) / n;
    exact += std::abs(fraction - q) <= 1.0 / n;
  }
  out.require(exact == 1000, "top-q fraction within 1/(w*h)");
  out.detail << (out.pass ? "" : "; ") << "IoU " << good << "/10000, monotone " << monotone << "/" << traces
             << ", top-q " << exact << "/1000";
}

void clustering(Shared& shared, Outcome& out) {
  SplitMix64 rng(17);
  std::size_t matches = 0, trees = 0;
  double worst = 0;
  for (std::size_t m = 0; m < 100; ++m) {
    const DistanceMatrix d = test::random_distance_matrix(rng, 32);
    for (Linkage linkage : {Linkage::Single, Linkage::Complete, Linkage::Average}) {
      const Dendrogram tree = agglomerate(d, linkage);
      const auto oracle = test::naive_agglomerate(d, linkage);
      bool same = tree.merges.size() == oracle.size();
      for (std::size_t i = 0; same && i < oracle.size(); ++i) {
        same = tree.merges[i].left == oracle[i].left && tree.merges[i].right == oracle[i].right &&
               tree.merges[i].count == oracle[i].count;
        worst = std::max(worst, std::abs(tree.merges[i].height - oracle[i].height));
      }
      matches += same;
      try {
        validate_dendrogram(tree);
        ++trees;
      } catch (const std::exception&) {
      }
    }
  }
  out.require(matches == 300 && worst <= 1e-9, "merges match the naive oracle within 1e-9");
  std::size_t generated = 300;
  if (shared.ready()) {
    const Workspace& ws = *shared.workspace;
    for (const auto& pair : ws.pairs()) {
      auto tree = load_cached_dendrogram(ws, pair.id, RfParams{}.threshold, Linkage::Average);
      if (!tree) tree = pair_dendrogram(ws, pair.id, RfParams{}, Linkage::Average);
      ++generated;
      try {
        validate_dendrogram(*tree);
        ++trees;
      } catch (const std::exception&) {
      }
    }
  }
  out.require(trees == generated, "structural invariants on every tree");
  out.detail << (out.pass ? "" : "; ") << matches << "/300 oracle matches, max height err " << worst << ", "
             << trees << "/" << generated << " trees valid";
}

void reproducibility(Shared& shared, Outcome& out) {
  const Pipeline& a = shared.pipeline();
  if (!shared.second) shared.second = run_pipeline(shared.root / "b");
  const Pipeline& b = *shared.second;
  out.require(a.failed_step == 0 && b.failed_step == 0, "both pipelines complete");
  if (!out.pass) return;
  const auto fa = artifact_bytes(a.dir / "run"), fb = artifact_bytes(b.dir / "run");
  std::size_t maps = 0, trees = 0;
  for (const auto& [name, bytes] : fa) {
    maps += name.rfind("cache/vuln_", 0) == 0;
    trees += name.rfind("cache/dendro_", 0) == 0;
  }
  out.require(fa == fb, "run directories bitwise identical");
  out.require(maps > 0 && trees > 0, "maps and dendrograms were written");
  out.require(std::max(a.seconds, b.seconds) < 600, "pipeline under 10 min");
  out.require(a.test_accuracy >= 0.90, "test accuracy at least 0.90");
  out.detail << (out.pass ? "" : "; ") << fa.size() << " files identical (" << maps << " maps, " << trees
             << " dendrograms), pipeline " << a.seconds << " s and " << b.seconds << " s, test accuracy "
             << a.test_accuracy;
}

void api_contract(Shared& shared, Outcome& out) {
  if (!shared.ready()) return out.require(false, "pipeline run unavailable");
  const Workspace& ws = *shared.workspace;
  test::SchemaChecker schema(fs::path(ADVSCOPE_SOURCE_DIR) / "docs" / "api_schema.json");
  auto api = std::make_shared<Api>(shared.workspace);
  std::size_t checked = 0;
  auto get = [&](const std::string& path, const QueryParams& params, const std::string& endpoint) {
    const ApiResponse r = api->handle(path, params);
    ++checked;
    if (r.status != 200) {
      out.require(false, path + " returned " + std::to_string(r.status));
      return json();
    }
    const json body = json::parse(r.body);
    for (const auto& e : schema.check(body, schema.endpoint(endpoint))) out.require(false, path + ": " + e);
    return body;
  };

  get("/health", {}, "/health");
  const json matrix = get("/matrix", {}, "/matrix");
  out.require(matrix.value("total", 0u) == ws.pairs().size(), "/matrix total equals the pair count");
  get("/overview", {}, "/overview");
  get("/overview", {{"method", "pca"}, {"color_by", "predicted"}}, "/overview");
  const auto& p0 = ws.pair(0);
  get("/cell/" + std::to_string(p0.benign_label) + "/" + std::to_string(p0.adversarial_label) + "/pairs", {},
      "/cell/{true}/{adv}/pairs");
  get("/jobs", {}, "/jobs");

  SplitMix64 rng(8);
  std::vector<std::size_t> sample{0};
  for (int i = 0; i < 2; ++i) sample.push_back(rng.below(ws.pairs().size()));
  std::size_t rankings = 0;
  for (std::size_t id : sample) {
    const std::string base = "/pair/" + std::to_string(id);
    get(base, {}, "/pair/{id}");
    for (const std::string sort : {"gap", "iou_b", "iou_a"}) {
      const ApiResponse r = api->handle(base + "/neurons", {{"sort", sort}});
      if (r.status == 422) continue;  // a class with a single member has no band
      const json body = get(base + "/neurons", {{"sort", sort}}, "/pair/{id}/neurons");
      if (body.is_null()) continue;
      std::vector<std::size_t> ids;
      bool monotone = true;
      for (std::size_t i = 0; i < body["neurons"].size(); ++i) {
        ids.push_back(body["neurons"][i]["id"]);
        if (i > 0) monotone &= body["neurons"][i - 1]["key"].get<double>() >= body["neurons"][i]["key"].get<double>();
      }
      std::vector<std::size_t> sorted = ids;
      std::sort(sorted.begin(), sorted.end());
      bool permutation = sorted.size() == ws.neuron_count();
      for (std::size_t i = 0; permutation && i < sorted.size(); ++i) permutation = sorted[i] == i;
      out.require(permutation && monotone, base + " " + sort + " ranking is a monotone permutation");
      ++rankings;
    }
    get(base + "/neuron/0/rf", {}, "/pair/{id}/neuron/{k}/rf");
    get(base + "/neuron/0/context", {}, "/pair/{id}/neuron/{k}/context");
    const json tree = get(base + "/dendrogram", {{"neuron", "3"}}, "/pair/{id}/dendrogram");
    get(base + "/cluster-rf", {{"nodes", "0,1,2"}, {"op", "union"}}, "/pair/{id}/cluster-rf");

    for (const std::string which : {"benign", "adv"}) {
      get(base + "/vulnmap", {{"which", which}}, "/pair/{id}/vulnmap");
      const std::string cached = api->handle(base + "/vulnmap", {{"which", which}}).body;
      const std::string forced = api->handle(base + "/vulnmap", {{"which", which}, {"force", "1"}}).body;
      out.require(cached == forced, base + " cached and recomputed vulnmap bodies are equal");
    }
    const std::string cached = api->handle(base + "/dendrogram", {}).body;
    const std::string forced = api->handle(base + "/dendrogram", {{"force", "1"}}).body;
    out.require(cached == forced, base + " cached and recomputed dendrogram bodies are equal");
  }
  const json jobs = get("/jobs", {}, "/jobs");
  if (!jobs.is_null() && !jobs["jobs"].empty()) {
    get("/jobs/" + std::to_string(jobs["jobs"][0]["id"].get<std::size_t>()), {}, "/jobs/{id}");
  }
  out.require(rankings > 0, "at least one ranking was checked");

  // Same bodies over HTTP, with no static UI mounted.
  ServerOptions options;
  options.port = 0;
  Server server(api, options);
  std::promise<int> bound;
  std::thread thread([&] { server.run([&](int port) { bound.set_value(port); }); });
  const int port = bound.get_future().get();
  httplib::Client client("127.0.0.1", port);
  const auto health = client.Get("/api/health");
  const auto matrix_http = client.Get("/api/matrix");
  const auto missing = client.Get("/api/pair/999999");
  out.require(health && health->status == 200, "HTTP /api/health");
  out.require(matrix_http && matrix_http->body == api->handle("/matrix", {}).body, "HTTP /api/matrix body");
  out.require(missing && missing->status == 404, "HTTP 404 for a missing pair");
  server.stop();
  thread.join();
  out.detail << (out.pass ? "" : "; ") << checked << " responses schema-checked, " << rankings
             << " rankings, HTTP port " << port;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<void(Shared&, Outcome&)>>> criteria = {
      {"gradients", gradients},      {"pgd", pgd},
      {"algorithm1", algorithm1},    {"band-gap", band_gap_criterion},
      {"iou-rf", iou_rf},            {"clustering", clustering},
      {"reproducibility", reproducibility}, {"api-contract", api_contract},
  };
  std::set<std::string> wanted(argv + 1, argv + argc);
  Shared shared;
  shared.root = fs::temp_directory_path() / ("advscope_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(shared.root);
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    if (!wanted.empty() && !wanted.count(name)) continue;
    Outcome out;
    const auto start = Clock::now();
    try {
      check(shared, out);
    } catch (const std::exception& e) {
      out.require(false, std::string("exception: ") + e.what());
    }
    failures += !out.pass;
    std::cout << (out.pass ? "PASS " : "FAIL ") << name << ": " << out.detail.str() << " [" << seconds_since(start)
              << " s]" << std::endl;
  }
  fs::remove_all(shared.root);
  return failures == 0 ? 0 : 1;
}
