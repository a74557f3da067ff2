#include "advscope/cli.hpp"

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "advscope/api.hpp"
#include "advscope/artifacts.hpp"
#include "advscope/attack.hpp"
#include "advscope/dataset.hpp"
#include "advscope/error.hpp"
#include "advscope/image_ops.hpp"
#include "advscope/model_io.hpp"
#include "advscope/parallel.hpp"
#include "advscope/random.hpp"
#include "advscope/rf.hpp"
#include "advscope/server.hpp"
#include "advscope/train.hpp"
#include "advscope/workspace.hpp"
#include "json.hpp"

namespace advscope {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Accepts decimals and simple fractions such as "8/255".
double parse_fraction(const std::string& text, const std::string& field) {
  try {
    const auto slash = text.find('/');
    std::size_t used = 0;
    if (slash == std::string::npos) {
      const double v = std::stod(text, &used);
      if (used == text.size()) return v;
    } else {
      const std::string num = text.substr(0, slash), den = text.substr(slash + 1);
      std::size_t used_den = 0;
      const double a = std::stod(num, &used), b = std::stod(den, &used_den);
      if (used == num.size() && used_den == den.size() && b != 0) return a / b;
    }
  } catch (const std::exception&) {
  }
  throw ValidationError("'" + text + "' is not a number or fraction", field);
}

CifarSplit parse_cifar_split(const std::string& name) {
  if (name == "train") return CifarSplit::Train;
  if (name == "test") return CifarSplit::Test;
  if (name == "all") return CifarSplit::All;
  throw ValidationError("split must be train, test or all", "split");
}

// Archives are split with the stratified test fraction; CIFAR-10 directories
// use their own train/test batches.
Dataset load_split(const fs::path& path, const std::string& split, double test_fraction) {
  const CifarSplit which = parse_cifar_split(split);
  if (fs::is_directory(path)) return load_cifar10(path, which);
  Dataset data = load_dataset(path);
  if (which == CifarSplit::All) return data;
  DatasetSplit parts = split_dataset(data, test_fraction);
  return which == CifarSplit::Train ? std::move(parts.train) : std::move(parts.test);
}

std::string percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f%%", 100.0 * fraction);
  return buf;
}

Server* g_server = nullptr;

void handle_signal(int) {
  if (g_server) g_server->stop();
}

struct Context {
  std::string workdir = ".";
  std::size_t threads = 0;

  fs::path path(const std::string& p) const {
    const fs::path candidate(p);
    return candidate.is_absolute() ? candidate : fs::path(workdir) / candidate;
  }
};

int gen_data(const Context& ctx, std::uint64_t seed, std::size_t per_class, std::size_t size, const std::string& out) {
  if (per_class == 0) throw ValidationError("per-class must be at least 1", "per-class");
  const Dataset data = generate_shapes_dataset(seed, per_class, size);
  save_dataset(data, ctx.path(out));
  std::cout << "wrote " << data.size() << " images (" << data.class_names.size() << " classes, " << size << "x"
            << size << ") to " << out << "\n";
  return kExitOk;
}

int train_cmd(const Context& ctx, const std::string& data_path, const TrainConfig& config, double test_fraction,
              const std::string& out) {
  config.validate();
  const fs::path path = ctx.path(data_path);
  Dataset train_set = load_split(path, "train", test_fraction);
  Dataset test_set = load_split(path, "test", test_fraction);
  if (train_set.empty()) throw ValidationError("training split is empty", "data");
  if (train_set.height != train_set.width) throw ValidationError("images must be square", "data");
  const ModelSpec spec = ModelSpec::mininet(train_set.class_names, train_set.height);
  Model<float> model = init_model<float>(spec, derive_seed(config.seed, 1));
  TrainResult result = train(std::move(model), train_set, test_set.empty() ? nullptr : &test_set, config,
                             [](const EpochReport& r) {
                               std::fprintf(stderr, "epoch %zu  loss %.4f  train %.4f  test %.4f\n", r.epoch,
                                            r.mean_loss, r.train_accuracy, r.test_accuracy);
                             });
  save_model(result.model, ctx.path(out));

  const EpochReport& last = result.history.back();
  json report{{"model", out},
              {"data", data_path},
              {"train_images", train_set.size()},
              {"test_images", test_set.size()},
              {"epochs", config.epochs},
              {"batch_size", config.batch_size},
              {"lr", config.learning_rate},
              {"momentum", config.momentum},
              {"seed", config.seed},
              {"test_fraction", test_fraction},
              {"train_accuracy", last.train_accuracy},
              {"history", json::array()}};
  if (!test_set.empty()) report["test_accuracy"] = last.test_accuracy;
  for (const auto& r : result.history) {
    json row{{"epoch", r.epoch}, {"loss", r.mean_loss}, {"train_accuracy", r.train_accuracy}};
    if (!test_set.empty()) row["test_accuracy"] = r.test_accuracy;
    report["history"].push_back(row);
  }
  write_text_atomic(ctx.path(out + ".report.json"), report.dump(1) + "\n");
  std::cout << "train accuracy " << last.train_accuracy;
  if (!test_set.empty()) std::cout << ", test accuracy " << last.test_accuracy;
  std::cout << "\nwrote " << out << "\n";
  return kExitOk;
}

int attack_cmd(const Context& ctx, const std::string& model_path, const std::string& data_path,
               const std::string& split, double test_fraction, const AttackConfig& config, const std::string& out) {
  config.validate();
  const fs::path run_dir = ctx.path(out);
  const fs::path model_file = ctx.path(model_path);
  Model<float> model = load_model(model_file);
  Dataset data = load_split(ctx.path(data_path), split, test_fraction);
  if (data.class_names != model.spec.class_names) {
    throw ValidationError("dataset classes do not match the model's classes", "data");
  }
  if (config.target && *config.target >= model.spec.class_count) {
    throw ValidationError("target class does not exist", "target");
  }

  RunInfo info;
  info.attack = config;
  info.class_names = model.spec.class_names;
  info.height = data.height;
  info.width = data.width;
  info.data_path = data_path;
  info.data_split = split;
  info.test_fraction = test_fraction;
  fs::create_directories(run_dir);
  info.model_path = fs::absolute(model_file).lexically_normal().lexically_relative(fs::absolute(run_dir).lexically_normal()).generic_string();

  std::vector<InstancePair> pairs;
  AttackSummary summary;
  if (config.eps == 0) {
    std::cerr << "warning: eps is 0, no perturbation is possible; writing an empty run\n";
  } else {
    pairs = attack_dataset(model, data, config, ctx.threads, &summary);
  }
  save_run(run_dir, info, pairs);
  std::cout << "attacked " << summary.attempted << " images, " << summary.true_positives
            << " correctly classified, " << summary.successes << " flipped (success rate "
            << percent(summary.success_rate()) << ")\nwrote " << out << "\n";
  return kExitOk;
}

int precompute_cmd(const Context& ctx, const std::string& run, const PrecomputeOptions& options) {
  const Workspace workspace = Workspace::open(ctx.path(run), ctx.threads);
  const PrecomputeReport report = precompute(workspace, options, [](std::size_t done, std::size_t total) {
    std::fprintf(stderr, "\rprecompute %zu/%zu", done, total);
    if (done == total) std::fputc('\n', stderr);
  });
  const std::size_t hits = report.map_hits + report.dendrogram_hits;
  const std::size_t total = hits + report.maps_computed + report.dendrograms_computed;
  std::cout << report.pairs << " pairs: maps " << report.map_hits << " cached, " << report.maps_computed
            << " computed; dendrograms " << report.dendrogram_hits << " cached, " << report.dendrograms_computed
            << " computed\ncache hits " << hits << "/" << total << " (" << percent(report.hit_rate()) << ")\n";
  return kExitOk;
}

int serve_cmd(const Context& ctx, const std::string& run, std::string address, const std::string& static_dir,
              std::size_t cache_mb, std::size_t http_threads) {
  if (address.empty()) {
    const char* env = std::getenv("ADVSCOPE_ADDR");
    address = env && *env ? env : "127.0.0.1:8080";
  }
  ServerOptions options;
  parse_address(address, options.host, options.port);
  if (!static_dir.empty()) options.static_dir = ctx.path(static_dir).string();
  options.http_threads = http_threads;
  auto workspace = std::make_shared<const Workspace>(Workspace::open(ctx.path(run), ctx.threads));
  ApiOptions api_options;
  api_options.cache_bytes = cache_mb << 20;
  api_options.threads = ctx.threads;
  auto api = std::make_shared<Api>(workspace, api_options);
  Server server(api, options);
  g_server = &server;
  std::signal(SIGINT, handle_signal);
  std::signal(SIGTERM, handle_signal);
  server.run([&](int port) {
    std::cout << "serving " << workspace->pairs().size() << " pairs on http://" << options.host << ":" << port
              << "/api" << std::endl;
  });
  g_server = nullptr;
  return kExitOk;
}

void write_response(const ApiResponse& response, const fs::path& path) {
  if (response.status != 200) {
    const json body = json::parse(response.body, nullptr, false);
    const std::string message = body.is_object() ? body.value("error", response.body) : response.body;
    const std::string field = body.is_object() ? body.value("field", "") : "";
    if (response.status == 400) throw ValidationError(message, field);
    if (response.status == 404) throw ValidationError(message, field.empty() ? "pair" : field);
    throw ComputeError(message);
  }
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(response.body.data()), response.body.size()));
  std::cout << "wrote " << path.string() << "\n";
}

int export_cmd(const Context& ctx, const std::string& run, std::size_t pair, const std::string& what,
               std::size_t neuron, const QueryParams& params, const std::string& out) {
  auto workspace = std::make_shared<const Workspace>(Workspace::open(ctx.path(run), ctx.threads));
  ApiOptions api_options;
  api_options.threads = ctx.threads;
  Api api(workspace, api_options);
  const fs::path dir = ctx.path(out);
  fs::create_directories(dir);
  const std::string base = "/pair/" + std::to_string(pair);
  const std::string stem = "pair" + std::to_string(pair);
  if (what == "rf") {
    const std::string n = std::to_string(neuron);
    write_response(api.handle(base + "/neuron/" + n + "/rf", params), dir / (stem + "_neuron" + n + "_rf.json"));
    RfParams rf;
    if (params.count("t")) rf.threshold = parse_fraction(params.at("t"), "t");
    rf = resolve(rf, workspace->model().spec);
    const InstancePair& p = workspace->pair(pair);
    for (const ImageSide side : {ImageSide::Benign, ImageSide::Adversarial}) {
      const auto field = receptive_field(workspace->trace(pair, side), neuron,
                                         side == ImageSide::Benign ? p.benign : p.adversarial, rf);
      write_file_atomic(dir / (stem + "_neuron" + n + "_rf_" + to_string(side) + ".png"), encode_png(field.image));
    }
  } else if (what == "vulnmap") {
    for (const std::string which : {"benign", "adv"}) {
      QueryParams p = params;
      p["which"] = which;
      write_response(api.handle(base + "/vulnmap", p), dir / (stem + "_vulnmap_" + which + ".json"));
      write_response(api.handle(base + "/vulnmap.png", p), dir / (stem + "_vulnmap_" + which + ".png"));
    }
  } else if (what == "dendrogram") {
    write_response(api.handle(base + "/dendrogram", params), dir / (stem + "_dendrogram.json"));
  } else {
    throw ValidationError("what must be rf, vulnmap or dendrogram", "what");
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"advscope: adversarial attack interpretability workbench"};
  app.require_subcommand(1);
  Context ctx;
  app.add_option("--workdir", ctx.workdir, "Base directory for relative paths")->capture_default_str();
  app.add_option("--threads", ctx.threads, "Worker threads (0 = all cores)");

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic shapes dataset");
  std::uint64_t gen_seed = 7;
  std::size_t per_class = 500, size = 32;
  std::string gen_out = "shapes.ds";
  gen->add_option("--seed", gen_seed)->capture_default_str();
  gen->add_option("--per-class", per_class)->capture_default_str();
  gen->add_option("--size", size)->capture_default_str();
  gen->add_option("--out", gen_out)->capture_default_str();

  auto* tr = app.add_subcommand("train", "Train the model on a dataset");
  TrainConfig train_config;
  train_config.seed = 7;
  double train_fraction = 0.2;
  std::string train_data = "shapes.ds", train_out = "model.mnet";
  tr->add_option("--data", train_data, "Dataset archive or CIFAR-10 directory")->capture_default_str();
  tr->add_option("--epochs", train_config.epochs)->capture_default_str();
  tr->add_option("--lr", train_config.learning_rate)->capture_default_str();
  tr->add_option("--momentum", train_config.momentum)->capture_default_str();
  tr->add_option("--batch-size", train_config.batch_size)->capture_default_str();
  tr->add_option("--seed", train_config.seed)->capture_default_str();
  tr->add_option("--test-fraction", train_fraction)->capture_default_str();
  tr->add_option("--out", train_out)->capture_default_str();

  auto* at = app.add_subcommand("attack", "Attack every correctly classified image");
  AttackConfig attack_config;
  std::string eps_text = "8/255", alpha_text = "2/255", attack_model = "model.mnet", attack_data = "shapes.ds",
              attack_out = "run", split = "test";
  double attack_fraction = 0.2;
  std::optional<std::size_t> target;
  bool no_random_start = false;
  at->add_option("--model", attack_model)->capture_default_str();
  at->add_option("--data", attack_data)->capture_default_str();
  at->add_option("--split", split, "train, test or all")->capture_default_str();
  at->add_option("--test-fraction", attack_fraction)->capture_default_str();
  at->add_option("--eps", eps_text)->capture_default_str();
  at->add_option("--alpha", alpha_text)->capture_default_str();
  at->add_option("--steps", attack_config.steps)->capture_default_str();
  at->add_option("--seed", attack_config.seed)->capture_default_str();
  at->add_option("--target", target, "Targeted attack toward this class");
  at->add_flag("--no-random-start", no_random_start);
  at->add_option("--out", attack_out)->capture_default_str();

  auto* pre = app.add_subcommand("precompute", "Fill the run's vulnerability-map and dendrogram cache");
  PrecomputeOptions pre_options;
  std::string pre_run = "run", pre_space = "probability", pre_linkage = "average";
  pre->add_option("--run", pre_run)->capture_default_str();
  pre->add_option("--k", pre_options.vuln.k)->capture_default_str();
  pre->add_option("--s", pre_options.vuln.s)->capture_default_str();
  pre->add_option("--q", pre_options.q)->capture_default_str();
  pre->add_option("--t", pre_options.rf.threshold)->capture_default_str();
  pre->add_option("--space", pre_space)->capture_default_str();
  pre->add_option("--linkage", pre_linkage)->capture_default_str();

  auto* serve = app.add_subcommand("serve", "Serve the analysis API for a run");
  std::string serve_run = "run", address, static_dir;
  std::size_t cache_mb = 256, http_threads = 8;
  serve->add_option("--run", serve_run)->capture_default_str();
  serve->add_option("--addr", address, "host:port (default $ADVSCOPE_ADDR or 127.0.0.1:8080)");
  serve->add_option("--static", static_dir, "Directory of static files served at /");
  serve->add_option("--cache-mb", cache_mb)->capture_default_str();
  serve->add_option("--http-threads", http_threads)->capture_default_str();

  auto* ex = app.add_subcommand("export", "Write PNG/JSON artifacts for one pair");
  std::string ex_run = "run", what, ex_out = "export";
  std::size_t ex_pair = 0, ex_neuron = 0;
  std::map<std::string, std::string> ex_params;
  std::string ex_t, ex_k, ex_s, ex_q, ex_space, ex_linkage;
  ex->add_option("--run", ex_run)->capture_default_str();
  ex->add_option("--pair", ex_pair)->required();
  ex->add_option("--what", what, "rf, vulnmap or dendrogram")->required();
  ex->add_option("--neuron", ex_neuron)->capture_default_str();
  ex->add_option("--t", ex_t);
  ex->add_option("--k", ex_k);
  ex->add_option("--s", ex_s);
  ex->add_option("--q", ex_q);
  ex->add_option("--space", ex_space);
  ex->add_option("--linkage", ex_linkage);
  ex->add_option("--out", ex_out)->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }

  try {
    if (ctx.threads) set_default_threads(ctx.threads);
    if (*gen) return gen_data(ctx, gen_seed, per_class, size, gen_out);
    if (*tr) return train_cmd(ctx, train_data, train_config, train_fraction, train_out);
    if (*at) {
      attack_config.eps = parse_fraction(eps_text, "eps");
      attack_config.alpha = parse_fraction(alpha_text, "alpha");
      attack_config.random_start = !no_random_start;
      attack_config.target = target;
      return attack_cmd(ctx, attack_model, attack_data, split, attack_fraction, attack_config, attack_out);
    }
    if (*pre) {
      pre_options.vuln.space = parse_value_space(pre_space);
      pre_options.linkage = parse_linkage(pre_linkage);
      pre_options.threads = ctx.threads;
      return precompute_cmd(ctx, pre_run, pre_options);
    }
    if (*serve) return serve_cmd(ctx, serve_run, address, static_dir, cache_mb, http_threads);
    if (*ex) {
      const std::pair<const char*, std::string*> named[] = {{"t", &ex_t},         {"k", &ex_k},
                                                            {"s", &ex_s},         {"q", &ex_q},
                                                            {"space", &ex_space}, {"linkage", &ex_linkage}};
      for (const auto& [key, value] : named) {
        if (!value->empty()) ex_params[key] = *value;
      }
      return export_cmd(ctx, ex_run, ex_pair, what, ex_neuron, ex_params, ex_out);
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << (e.field().empty() ? "" : " (" + e.field() + ")") << "\n";
    return kExitValidation;
  } catch (const NotFoundError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCompute;
  }
  return kExitValidation;
}

}  // namespace advscope
