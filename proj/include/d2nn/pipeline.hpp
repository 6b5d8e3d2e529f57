#pragma once

// Run configuration and the staged batch pipeline:
// prepare -> train -> cache -> prune -> report.
//
// Layout of a run directory:
//   config.json          frozen resolved configuration (all seeds included)
//   manifest.json        split sizes and content hashes
//   pool.json            sampled front-end specs
//   audit.log            hash-chained record of decoded split accesses
//   networks/net_NNNN.{d2nn,json,log.jsonl}
//   caches/{validation,test}.d2sc, caches/*.json
//   pruning/<name>/trace_rK.json, pruning/<name>/summary.json
//   report/*.tsv, report/*.svg, report/summary.json

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "d2nn/ensemble.hpp"
#include "d2nn/frontend.hpp"
#include "d2nn/trainer.hpp"

namespace d2nn {

struct PruningRun {
  std::string name = "default";
  PruningConfig config;
};

struct SubsetSizes {
  std::size_t train = 0;  // 0 keeps the whole split
  std::size_t validation = 0;
  std::size_t test = 0;
};

/// Every field except data_dir has a default; several defaults depend on the
/// profile (desk: 16 networks, 5 epochs, 5K/1K/1K subsets, 500 optimizer
/// steps; paper: 1252 networks, 50 epochs, full splits, 10000 steps
/// evaluated every 50).
struct RunConfig {
  std::filesystem::path data_dir;
  std::filesystem::path output_dir = "d2nn-run";
  OpticalProfile profile;
  std::uint64_t seed = 1;
  int workers = 1;
  int repeat = 3;
  PoolCounts pool;
  SubsetSizes subsets;
  std::size_t validation_count = kDefaultValidationCount;
  TrainHyperparams train;
  std::vector<PruningRun> pruning;
  SamplerRanges sampler;

  void validate() const;
};

/// Command-line and environment overrides, applied before defaults resolve.
struct ConfigOverrides {
  std::optional<std::string> data_dir;
  std::optional<std::string> output_dir;
  std::optional<std::string> profile;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<int> repeat;
};

/// Strict parse: unknown keys and wrong types raise Config.
RunConfig parse_run_config(const nlohmann::json& j, const ConfigOverrides& overrides = {});
RunConfig load_run_config(const std::filesystem::path& path, const ConfigOverrides& overrides = {});
nlohmann::json to_json(const RunConfig& cfg);

/// Seeds derived from the run seed.
std::uint64_t pool_sampling_seed(const RunConfig& cfg);
std::uint64_t training_seed(const RunConfig& cfg);
std::uint64_t pruning_seed(const RunConfig& cfg, std::size_t run_index, int repeat);

enum class LogLevel { Info, Warning };
using LogSink = std::function<void(LogLevel, const std::string&)>;

struct EnsembleOutcome {
  std::string name;
  int n_max = 0;
  std::vector<std::size_t> sizes;  // selected ensemble size per repeat
  std::vector<double> validation_accuracy;  // percent, per repeat
  std::vector<double> test_accuracy;
  std::vector<double> equal_weights_test_accuracy;
};

struct ReportSummary {
  std::vector<std::string> networks;
  std::vector<double> individual_validation;  // percent
  std::vector<double> individual_test;
  std::vector<EnsembleOutcome> ensembles;
  bool test_isolated = false;  // audit chain intact and test untouched before report
  std::size_t degenerate_scores = 0;

  nlohmann::json to_json() const;
};

double mean(const std::vector<double>& v);
/// Sample standard deviation; 0 for fewer than two values.
double stddev(const std::vector<double>& v);

/// Writes the report tables, plots and summary for already-built caches and
/// traces. `traces[j][r]` belongs to pruning run j, repeat r. Returns the
/// summary; the accuracy line is sent to `log`.
ReportSummary write_report(const std::filesystem::path& out_dir, const ScoreCache& validation,
                           const ScoreCache& test, const std::vector<PruningRun>& runs,
                           const std::vector<std::vector<PruningTrace>>& traces, const LogSink& log = {});

class Pipeline {
 public:
  Pipeline(RunConfig config, LogSink log = {});

  void prepare();
  void train();
  void cache();
  void prune();
  ReportSummary report();

  const RunConfig& config() const { return config_; }
  std::filesystem::path run_dir() const { return config_.output_dir; }

 private:
  void info(const std::string& msg) const;
  void warn(const std::string& msg) const;
  /// Refuses to run against a run directory prepared with another config.
  void check_frozen_config() const;
  nlohmann::json load_manifest() const;
  std::vector<FrontEndSpec> load_pool() const;
  std::pair<Split, Split> load_train_validation(const std::string& stage) const;
  /// Trained members (index, id) with valid checkpoints; warns about gaps.
  std::vector<std::size_t> trained_members(std::size_t pool_size) const;

  RunConfig config_;
  LogSink log_;
};

std::string network_id(std::size_t index);

}  // namespace d2nn
