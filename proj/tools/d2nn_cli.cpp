// d2nn command-line front end. Uses only the public C interface.

#include <cstdio>
#include <cstdlib>
#include <string>

#include <CLI11.hpp>

#include "d2nn/d2nn.h"

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kConfig = 2, kData = 3, kNumeric = 4, kStale = 5, kOther = 6 };

int exit_code(d2nn_status s) {
  switch (s) {
    case D2NN_OK: return kOk;
    case D2NN_ERR_CONFIG: return kConfig;
    case D2NN_ERR_DATA: return kData;
    case D2NN_ERR_NUMERIC:
    case D2NN_ERR_DEGENERATE: return kNumeric;
    case D2NN_ERR_STALE: return kStale;
    default: return kOther;
  }
}

void print_log(int level, const char* message, void*) {
  std::fprintf(level == D2NN_LOG_WARNING ? stderr : stdout, "%s%s\n", level == D2NN_LOG_WARNING ? "warning: " : "",
               message);
  std::fflush(level == D2NN_LOG_WARNING ? stderr : stdout);
}

int report_failure(const char* what, d2nn_status s) {
  std::fprintf(stderr, "d2nn %s: %s: %s\n", what, d2nn_status_name(s), d2nn_last_error());
  return exit_code(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ensemble learning of diffractive optical networks"};
  app.name("d2nn");
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, profile, output;
  std::uint64_t seed = 0;
  int workers = 0, repeat = 0;
  std::string csv;
  app.add_option("--config", config_path, "run configuration (JSON)")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "run seed");
  app.add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--profile", profile, "optical profile")->check(CLI::IsMember({"paper", "desk"}));
  app.add_option("--repeat", repeat, "independent pruning repeats")->check(CLI::PositiveNumber);
  app.add_option("--output", output, "run directory (overrides output_dir)");

  const char* stages[] = {"prepare", "train", "cache", "prune", "report"};
  const char* help[] = {"load and split the data, write the manifest and pool",
                        "train every pool member (resumable)",
                        "score the validation split with every trained network",
                        "iterative ensemble pruning on the validation cache",
                        "score the test split and write tables and plots"};
  for (int i = 0; i < 5; ++i) {
    auto* sub = app.add_subcommand(stages[i], help[i]);
    if (std::string(stages[i]) == "cache") sub->add_option("--csv", csv, "also export the cache as CSV");
  }
  app.footer("Environment: D2NN_DATA_DIR overrides the configured data directory.\n"
             "Exit codes: 0 ok, 1 usage, 2 config, 3 data, 4 numeric, 5 stale upstream, 6 other.");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "%s\n\n%s", e.what(), app.help().c_str());
    return kUsage;
  }

  d2nn_overrides ov{};
  const char* env_dir = std::getenv("D2NN_DATA_DIR");
  if (env_dir != nullptr && *env_dir != '\0') ov.data_dir = env_dir;
  if (!output.empty()) ov.output_dir = output.c_str();
  if (!profile.empty()) ov.profile = profile.c_str();
  if (seed_opt->count() > 0) {
    ov.has_seed = 1;
    ov.seed = seed;
  }
  ov.workers = workers;
  ov.repeat = repeat;

  d2nn_run* run = nullptr;
  d2nn_status s = d2nn_run_open(config_path.empty() ? nullptr : config_path.c_str(), &ov, print_log, nullptr, &run);
  if (s != D2NN_OK) return report_failure("config", s);

  const std::string stage = app.get_subcommands().front()->get_name();
  if (stage == "prepare") {
    s = d2nn_run_prepare(run);
  } else if (stage == "train") {
    s = d2nn_run_train(run);
  } else if (stage == "cache") {
    s = d2nn_run_cache(run);
    if (s == D2NN_OK && !csv.empty()) {
      d2nn_cache* cache = nullptr;
      const std::string path = std::string(d2nn_run_output_dir(run)) + "/caches/validation.d2sc";
      s = d2nn_cache_load(path.c_str(), &cache);
      if (s == D2NN_OK) s = d2nn_cache_export_csv(cache, csv.c_str());
      d2nn_cache_free(cache);
    }
  } else if (stage == "prune") {
    s = d2nn_run_prune(run);
  } else {
    s = d2nn_run_report(run);
  }
  const int code = s == D2NN_OK ? kOk : report_failure(stage.c_str(), s);
  d2nn_run_free(run);
  return code;
}
