// Drives the d2nn executable as a user would.

#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "oracles.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string output;  // stdout and stderr
};

Outcome run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " '" + std::string(D2NN_CLI) + "' " + args + " 2>&1";
  Outcome o;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe) != nullptr) o.output += buf;
  const int status = pclose(pipe);
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return o;
}

bool has(const Outcome& o, const std::string& s) { return o.output.find(s) != std::string::npos; }

const fs::path kFixture = fs::path(D2NN_FIXTURE_DIR) / "cifar-synth";

}  // namespace

TEST_CASE("usage errors") {
  const auto none = run("");
  CHECK(none.code == 1);
  CHECK(has(none, "prepare"));
  const auto unknown = run("frobnicate");
  CHECK(unknown.code == 1);
  CHECK(has(unknown, "Usage"));
  CHECK(run("train --profile giant").code == 1);
  CHECK(run("train --workers 0").code == 1);
  CHECK(run("train --config /does/not/exist.json").code == 1);
  const auto help = run("--help");
  CHECK(help.code == 0);
  CHECK(has(help, "D2NN_DATA_DIR"));
}

TEST_CASE("missing data names the file") {
  const auto dir = oracle::temp_dir("cli-empty");
  const auto o = run("prepare --output " + (dir / "run").string(), "D2NN_DATA_DIR=" + dir.string());
  CHECK(o.code == 3);
  CHECK(has(o, "data_batch_1.bin"));
  const auto no_dir = run("prepare --output " + (dir / "run").string(), "D2NN_DATA_DIR=");
  CHECK(no_dir.code == 2);
  CHECK(has(no_dir, "data_dir"));
  fs::remove_all(dir);
}

TEST_CASE("a full run from the command line") {
  REQUIRE(fs::exists(kFixture / "data_batch_1.bin"));
  const auto dir = oracle::temp_dir("cli");
  const auto cfg = dir / "config.json";
  std::ofstream(cfg) << R"({"data_dir": "/nowhere", "pool": {"total": 3},
  "subsets": {"train": 80, "validation": 50, "test": 40}, "validation_count": 100,
  "train": {"epochs": 1}, "pruning": [{"name": "cli", "n_max": 2, "opt_steps": 10, "T": 2}]})";
  const std::string common = "--config " + cfg.string() + " --output " + (dir / "run").string();
  const std::string env = "D2NN_DATA_DIR=" + kFixture.string();

  CHECK(run("prepare " + common).code == 3);  // /nowhere, without the override

  const auto prep = run("prepare " + common, env);
  CHECK(prep.code == 0);
  CHECK(has(prep, "pool of 3 networks"));
  CHECK(run("report " + common, env).code == 5);
  CHECK(run("train " + common + " --workers 2", env).code == 0);
  const auto cache = run("cache " + common + " --csv " + (dir / "v.csv").string(), env);
  CHECK(cache.code == 0);
  CHECK(fs::exists(dir / "v.csv"));
  CHECK(run("train " + common + " --seed 4", env).code == 5);

  const auto prune = run("prune " + common + " --repeat 3", env);
  CHECK(prune.code == 0);
  CHECK(has(prune, "over 3 repeats"));
  CHECK(has(prune, "+/-"));
  for (int r = 0; r < 3; ++r) CHECK(fs::exists(dir / "run" / "pruning" / "cli" / ("trace_r" + std::to_string(r) + ".json")));

  const auto report = run("report " + common + " --repeat 3", env);
  CHECK(report.code == 0);
  CHECK(has(report, "ensemble test accuracy"));
  CHECK(has(report, "test isolation audit: passed"));
  CHECK(fs::exists(dir / "run" / "report" / "accuracy.txt"));
  CHECK(fs::exists(dir / "run" / "report" / "tpr.svg"));

  // the stage order is enforced on a fresh directory
  CHECK(run("prune --config " + cfg.string() + " --output " + (dir / "other").string(), env).code == 5);
  fs::remove_all(dir);
}
