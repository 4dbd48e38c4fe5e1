// Drives the real `pf` binary (path injected by the build as PF_CLI_PATH)
// through temp working directories: exit-code contract, prerequisite
// messages, the tiny end-to-end pipeline, and run-to-run determinism.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"

namespace fs = std::filesystem;
using doctest::Contains;

namespace {

struct RunResult {
  int rc = -1;
  std::string output;  // stdout + stderr combined
};

fs::path tmp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("pf_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

RunResult run(const fs::path& cwd, const std::string& args, const std::string& env = "") {
  const fs::path log = cwd / ".cli_output";
  const std::string cmd = "cd '" + cwd.string() + "' && " + env + (env.empty() ? "" : " ") +
                          "'" + PF_CLI_PATH + "' " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult res;
  res.rc = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  res.output = slurp(log);
  return res;
}

constexpr const char* kTinyConfig = R"({
  "seed": 3,
  "views": ["pitch", "timbre"],
  "synth": {"classes": 4, "clips_per_class": 7, "seconds": 1.0},
  "encoder": {"d_model": 16, "n_layers": 2, "n_heads": 2, "head_dim": 8,
              "mlp_dim": 32, "head_hidden": 64, "dropout": 0.1},
  "train": {"epochs": 3, "batch_size": 8, "checkpoint_every": 5},
  "head_train": {"epochs": 3, "batch_size": 8}
})";

void write_tiny_config(const fs::path& dir) {
  std::ofstream(dir / "run.json") << kTinyConfig;
}

}  // namespace

TEST_CASE("help exits 0 and lists every subcommand") {
  auto dir = tmp_dir("help");
  RunResult r = run(dir, "--help");
  CHECK(r.rc == 0);
  for (const char* sub : {"synth-data", "features", "train-encoder", "embed", "train-head",
                          "eval", "gradcheck", "pipeline"})
    CHECK_MESSAGE(r.output.find(sub) != std::string::npos, "missing ", sub, " in help");
  CHECK(run(dir, "gradcheck --help").rc == 0);
}

TEST_CASE("unknown subcommands, flags, and views exit 1") {
  auto dir = tmp_dir("badargs");
  CHECK(run(dir, "frobnicate").rc == 1);
  CHECK(run(dir, "features --view pitch --frobnicate").rc == 1);
  CHECK(run(dir, "features").rc == 1);  // --view is required

  RunResult r = run(dir, "train-head --views pitch,unknown");
  CHECK(r.rc == 1);
  CHECK_MESSAGE(r.output.find("unknown view") != std::string::npos, r.output);
}

TEST_CASE("stages demand their prerequisites by name") {
  auto dir = tmp_dir("prereq");
  write_tiny_config(dir);

  RunResult r = run(dir, "train-encoder --view pitch");
  CHECK(r.rc == 1);
  CHECK(r.output.find("data/manifest.csv") != std::string::npos);
  CHECK(r.output.find("pf synth-data") != std::string::npos);

  CHECK(run(dir, "synth-data").rc == 0);
  r = run(dir, "train-encoder --view pitch");
  CHECK(r.rc == 1);
  CHECK(r.output.find("cache/features_pitch.pfv") != std::string::npos);
  CHECK(r.output.find("pf features --view pitch") != std::string::npos);

  r = run(dir, "eval --views pitch,timbre");
  CHECK(r.rc == 1);
  CHECK(r.output.find("cache/embeds_pitch.pfv") != std::string::npos);
  CHECK(r.output.find("pf embed --view pitch") != std::string::npos);
}

TEST_CASE("config problems exit 1 and point at the offending field") {
  auto dir = tmp_dir("badconfig");
  std::ofstream(dir / "run.json") << R"({"train": {"epochs": -1}})";
  RunResult r = run(dir, "synth-data");
  CHECK(r.rc == 1);
  CHECK_MESSAGE(r.output.find("config error at /train/epochs") != std::string::npos, r.output);

  r = run(dir, "synth-data --config nowhere.json");
  CHECK(r.rc == 1);
  CHECK(r.output.find("cannot open config 'nowhere.json'") != std::string::npos);
}

TEST_CASE("tiny pipeline produces every artifact and identical reruns") {
  auto a = tmp_dir("pipe_a");
  write_tiny_config(a);
  RunResult r = run(a, "pipeline --config run.json");
  CHECK_MESSAGE(r.rc == 0, r.output);
  CHECK(r.output.find("synth-data:") != std::string::npos);
  CHECK(r.output.find("eval: wrote") != std::string::npos);

  for (const char* rel :
       {"data/manifest.csv", "data/vocab.txt", "cache/features_pitch.pfv",
        "cache/features_timbre.pfv", "cache/embeds_pitch.pfv", "cache/embeds_timbre.pfv",
        "checkpoints/pitch/final.pfck", "checkpoints/timbre/final.pfck",
        "checkpoints/head_pitch+timbre/final.pfck", "reports/metrics_test.csv",
        "reports/metrics_test.json", "reports/resolved_config.json", "reports/version.txt"})
    CHECK_MESSAGE(fs::exists(a / rel), "missing ", rel);

  // the echoed config is the resolved one: overrides visible, defaults filled
  const std::string echoed = slurp(a / "reports" / "resolved_config.json");
  CHECK(echoed.find("\"epochs\": 3") != std::string::npos);
  CHECK(echoed.find("\"d_model\": 16") != std::string::npos);
  CHECK(echoed.find("\"beta1\"") != std::string::npos);
  CHECK(slurp(a / "reports" / "version.txt") == "polyfuse-0.1.0\n");

  const std::string metrics = slurp(a / "reports" / "metrics_test.csv");
  CHECK(metrics.find("metric,value") == 0);
  CHECK(metrics.find("map_macro,") != std::string::npos);

  // same config, fresh directory: checkpoints and metrics byte-identical
  auto b = tmp_dir("pipe_b");
  write_tiny_config(b);
  CHECK(run(b, "pipeline --config run.json").rc == 0);
  for (const char* rel : {"checkpoints/pitch/final.pfck",
                          "checkpoints/head_pitch+timbre/final.pfck",
                          "reports/metrics_test.csv"})
    CHECK_MESSAGE(slurp(a / rel) == slurp(b / rel), rel, " differs between identical runs");

  // a second eval against existing artifacts, non-default split
  r = run(a, "eval --views pitch,timbre --split val");
  CHECK_MESSAGE(r.rc == 0, r.output);
  CHECK(fs::exists(a / "reports" / "metrics_val.csv"));
}

TEST_CASE("PF_CACHE_DIR redirects the cache") {
  auto dir = tmp_dir("envcache");
  write_tiny_config(dir);
  CHECK(run(dir, "synth-data").rc == 0);
  RunResult r = run(dir, "features --view pitch", "PF_CACHE_DIR=altcache");
  CHECK_MESSAGE(r.rc == 0, r.output);
  CHECK(fs::exists(dir / "altcache" / "features_pitch.pfv"));
  CHECK(!fs::exists(dir / "cache" / "features_pitch.pfv"));
}
