#include <fstream>
#include <iostream>
#include <sstream>

#include "advscope/cli.hpp"
#include "doctest.h"
#include "json.hpp"
#include "support.hpp"

using namespace advscope;

namespace {

int cli(const test::TempDir& dir, std::vector<std::string> args) {
  args.insert(args.begin(), {"--workdir", dir.path().string(), "--threads", "1"});
  return run_cli(args);
}

// Runs the CLI with stdout captured.
std::string cli_output(const test::TempDir& dir, std::vector<std::string> args, int& code) {
  std::ostringstream captured;
  auto* old = std::cout.rdbuf(captured.rdbuf());
  code = cli(dir, std::move(args));
  std::cout.rdbuf(old);
  return captured.str();
}

}  // namespace

TEST_CASE("cli pipeline and exit codes") {
  test::TempDir dir("cli");
  CHECK(cli(dir, {"gen-data", "--per-class", "30", "--size", "16", "--out", "d.ds"}) == kExitOk);
  CHECK(cli(dir, {"train", "--data", "d.ds", "--epochs", "2", "--out", "m.mnet"}) == kExitOk);
  CHECK(std::filesystem::exists(dir.path() / "m.mnet.report.json"));
  CHECK(cli(dir, {"attack", "--model", "m.mnet", "--data", "d.ds", "--eps", "16/255", "--out", "run"}) == kExitOk);
  const auto manifest = nlohmann::json::parse(std::ifstream(dir.path() / "run" / "manifest.json"));
  CHECK(manifest["model_path"] == "../m.mnet");

  SUBCASE("validation and io failures") {
    CHECK(cli(dir, {"attack", "--model", "m.mnet", "--data", "d.ds", "--eps", "2"}) == kExitValidation);
    CHECK(cli(dir, {"attack", "--model", "m.mnet", "--data", "d.ds", "--eps", "1/0"}) == kExitValidation);
    CHECK(cli(dir, {"attack", "--model", "missing.mnet", "--data", "d.ds"}) == kExitIo);
    CHECK(cli(dir, {"train", "--data", "d.ds", "--lr", "-1"}) == kExitValidation);
    CHECK(cli(dir, {"precompute", "--run", "nowhere"}) == kExitIo);
    CHECK(cli(dir, {"precompute", "--run", "run", "--linkage", "ward"}) == kExitValidation);
    CHECK(cli(dir, {"bogus"}) == kExitValidation);
    CHECK(cli(dir, {"export", "--run", "run", "--what", "rf"}) == kExitValidation);
    CHECK(cli(dir, {"export", "--run", "run", "--pair", "100000", "--what", "rf"}) == kExitValidation);
    CHECK(cli(dir, {"serve", "--run", "run", "--addr", "host:notaport"}) == kExitValidation);
    std::ofstream(dir.path() / "junk.mnet") << "not a model";
    CHECK(cli(dir, {"attack", "--model", "junk.mnet", "--data", "d.ds"}) == kExitIo);
  }

  SUBCASE("zero budget writes an empty run") {
    CHECK(cli(dir, {"attack", "--model", "m.mnet", "--data", "d.ds", "--eps", "0", "--out", "empty"}) == kExitOk);
    const auto empty = nlohmann::json::parse(std::ifstream(dir.path() / "empty" / "manifest.json"));
    CHECK(empty["pairs"].empty());
  }

  SUBCASE("precompute twice and export") {
    int code = -1;
    cli_output(dir, {"precompute", "--run", "run", "--s", "4"}, code);
    CHECK(code == kExitOk);
    const std::string second = cli_output(dir, {"precompute", "--run", "run", "--s", "4"}, code);
    CHECK(code == kExitOk);
    CHECK(second.find("(100.0%)") != std::string::npos);
    if (!manifest["pairs"].empty()) {
      CHECK(cli(dir, {"export", "--run", "run", "--pair", "0", "--what", "vulnmap", "--s", "4"}) == kExitOk);
      CHECK(cli(dir, {"export", "--run", "run", "--pair", "0", "--what", "rf", "--neuron", "1"}) == kExitOk);
      CHECK(cli(dir, {"export", "--run", "run", "--pair", "0", "--what", "dendrogram"}) == kExitOk);
      for (const char* name : {"pair0_vulnmap_adv.png", "pair0_vulnmap_benign.json", "pair0_neuron1_rf.json",
                               "pair0_neuron1_rf_benign.png", "pair0_dendrogram.json"}) {
        CHECK_MESSAGE(std::filesystem::exists(dir.path() / "export" / name), name);
      }
    }
  }
}
