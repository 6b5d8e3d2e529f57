#include "d2nn/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>

#include "binary_io.hpp"
#include "json_util.hpp"

namespace d2nn {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------- config

namespace {

template <typename T>
T get_as(const json& j, const char* key, T fallback, const std::string& context) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::Config, context + "." + key + ": wrong type");
  }
}

bool valid_name(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
  });
}

PoolCounts parse_pool(const json& j, bool paper) {
  if (j.is_null()) return PoolCounts::proportional(paper ? 1252 : 16);
  jsonutil::check_keys(j, {"total", "amplitude_object", "amplitude_fourier", "phase_object", "phase_fourier"}, "pool");
  const bool explicit_counts = j.contains("amplitude_object") || j.contains("amplitude_fourier") ||
                               j.contains("phase_object") || j.contains("phase_fourier");
  if (!explicit_counts) return PoolCounts::proportional(get_as<int>(j, "total", paper ? 1252 : 16, "pool"));
  PoolCounts c{get_as<int>(j, "amplitude_object", 0, "pool"), get_as<int>(j, "amplitude_fourier", 0, "pool"),
               get_as<int>(j, "phase_object", 0, "pool"), get_as<int>(j, "phase_fourier", 0, "pool")};
  if (j.contains("total")) {
    require(get_as<int>(j, "total", 0, "pool") == c.total(), ErrorKind::Config,
            "pool.total disagrees with the per-category counts");
  }
  return c;
}

json pool_json(const PoolCounts& c) {
  return {{"amplitude_object", c.amplitude_object},
          {"amplitude_fourier", c.amplitude_fourier},
          {"phase_object", c.phase_object},
          {"phase_fourier", c.phase_fourier},
          {"total", c.total()}};
}

TrainHyperparams parse_train(const json& j, bool paper) {
  TrainHyperparams hp;
  hp.epochs = paper ? 50 : 5;
  if (j.is_null()) return hp;
  jsonutil::check_keys(j, {"batch_size", "epochs", "lr0", "lr_decay", "decay_every", "flip_probability", "precision"},
                       "train");
  hp.batch_size = get_as<int>(j, "batch_size", hp.batch_size, "train");
  hp.epochs = get_as<int>(j, "epochs", hp.epochs, "train");
  hp.lr0 = get_as<double>(j, "lr0", hp.lr0, "train");
  hp.lr_decay = get_as<double>(j, "lr_decay", hp.lr_decay, "train");
  hp.decay_every = get_as<int>(j, "decay_every", hp.decay_every, "train");
  hp.flip_probability = get_as<double>(j, "flip_probability", hp.flip_probability, "train");
  const auto precision = get_as<std::string>(j, "precision", "double", "train");
  if (precision == "double") {
    hp.precision = Precision::Double;
  } else if (precision == "single") {
    hp.precision = Precision::Single;
  } else {
    fail(ErrorKind::Config, "train.precision must be 'double' or 'single'");
  }
  return hp;
}

json train_json(const TrainHyperparams& hp) {
  return {{"batch_size", hp.batch_size},
          {"epochs", hp.epochs},
          {"lr0", hp.lr0},
          {"lr_decay", hp.lr_decay},
          {"decay_every", hp.decay_every},
          {"flip_probability", hp.flip_probability},
          {"precision", hp.precision == Precision::Double ? "double" : "single"}};
}

PruningRun default_pruning(bool paper) {
  PruningRun run;
  run.config.random_interval = 10;
  run.config.random_multiplier = 3;
  run.config.scheme = RetainScheme::III;
  run.config.n_max = 6;
  run.config.optimize.steps = paper ? 10000 : 500;
  run.config.optimize.eval_every = paper ? 50 : 1;
  return run;
}

PruningRun parse_pruning(const json& j, bool paper) {
  jsonutil::check_keys(j, {"name", "T", "m", "p", "scheme", "n_max", "alpha", "opt_steps", "eval_every", "lr"},
                       "pruning entry");
  PruningRun run = default_pruning(paper);
  run.name = get_as<std::string>(j, "name", run.name, "pruning");
  if (j.contains("T")) {
    const auto& t = j.at("T");
    if (t.is_string() && t.get<std::string>() == "inf") {
      run.config.random_interval.reset();
    } else if (t.is_number_integer()) {
      run.config.random_interval = t.get<int>();
    } else {
      fail(ErrorKind::Config, "pruning.T must be a positive integer or \"inf\"");
    }
  }
  run.config.random_multiplier = get_as<int>(j, "m", run.config.random_multiplier, "pruning");
  run.config.random_pool_fraction = get_as<double>(j, "p", run.config.random_pool_fraction, "pruning");
  run.config.scheme = retain_scheme_from_string(get_as<std::string>(j, "scheme", "iii", "pruning"));
  run.config.n_max = get_as<int>(j, "n_max", run.config.n_max, "pruning");
  run.config.optimize.alpha = get_as<double>(j, "alpha", run.config.optimize.alpha, "pruning");
  run.config.optimize.steps = get_as<int>(j, "opt_steps", run.config.optimize.steps, "pruning");
  run.config.optimize.eval_every = get_as<int>(j, "eval_every", run.config.optimize.eval_every, "pruning");
  run.config.optimize.lr = get_as<double>(j, "lr", run.config.optimize.lr, "pruning");
  return run;
}

json pruning_json(const PruningRun& run) {
  const auto& c = run.config;
  return {{"name", run.name},
          {"T", c.random_interval ? json(*c.random_interval) : json("inf")},
          {"m", c.random_multiplier},
          {"p", c.random_pool_fraction},
          {"scheme", to_string(c.scheme)},
          {"n_max", c.n_max},
          {"alpha", c.optimize.alpha},
          {"opt_steps", c.optimize.steps},
          {"eval_every", c.optimize.eval_every},
          {"lr", c.optimize.lr}};
}

SamplerRanges parse_sampler(const json& j) {
  SamplerRanges r;
  if (j.is_null()) return r;
  jsonutil::check_keys(j, {"sigma_min", "sigma_max", "window_min", "window_max", "period_min", "period_max",
                           "zone_focal_min", "zone_focal_max", "min_transmission", "annular_rings"},
                       "sampler");
  r.sigma_min = get_as<double>(j, "sigma_min", r.sigma_min, "sampler");
  r.sigma_max = get_as<double>(j, "sigma_max", r.sigma_max, "sampler");
  r.window_min = get_as<double>(j, "window_min", r.window_min, "sampler");
  r.window_max = get_as<double>(j, "window_max", r.window_max, "sampler");
  r.period_min = get_as<double>(j, "period_min", r.period_min, "sampler");
  r.period_max = get_as<double>(j, "period_max", r.period_max, "sampler");
  r.zone_focal_min = get_as<double>(j, "zone_focal_min", r.zone_focal_min, "sampler");
  r.zone_focal_max = get_as<double>(j, "zone_focal_max", r.zone_focal_max, "sampler");
  r.min_transmission = get_as<double>(j, "min_transmission", r.min_transmission, "sampler");
  r.annular_rings = get_as<int>(j, "annular_rings", r.annular_rings, "sampler");
  return r;
}

json sampler_json(const SamplerRanges& r) {
  return {{"sigma_min", r.sigma_min},         {"sigma_max", r.sigma_max},
          {"window_min", r.window_min},       {"window_max", r.window_max},
          {"period_min", r.period_min},       {"period_max", r.period_max},
          {"zone_focal_min", r.zone_focal_min}, {"zone_focal_max", r.zone_focal_max},
          {"min_transmission", r.min_transmission}, {"annular_rings", r.annular_rings}};
}

json seeds_json(const RunConfig& cfg) {
  json runs = json::array();
  for (std::size_t j = 0; j < cfg.pruning.size(); ++j) {
    json reps = json::array();
    for (int r = 0; r < cfg.repeat; ++r) reps.push_back(pruning_seed(cfg, j, r));
    runs.push_back(reps);
  }
  return {{"pool_sampling", pool_sampling_seed(cfg)}, {"training", training_seed(cfg)}, {"pruning", runs}};
}

// Recorded seeds must agree with the derived ones wherever both exist; a
// repeat override may lengthen or shorten the pruning lists.
bool seeds_consistent(const json& recorded, const RunConfig& cfg) {
  const json derived = seeds_json(cfg);
  if (!recorded.is_object() || recorded.value("pool_sampling", json()) != derived["pool_sampling"] ||
      recorded.value("training", json()) != derived["training"]) {
    return false;
  }
  const json runs = recorded.value("pruning", json::array());
  if (!runs.is_array()) return false;
  for (std::size_t j = 0; j < runs.size() && j < derived["pruning"].size(); ++j) {
    if (!runs[j].is_array()) return false;
    for (std::size_t r = 0; r < runs[j].size() && r < derived["pruning"][j].size(); ++r) {
      if (runs[j][r] != derived["pruning"][j][r]) return false;
    }
  }
  return true;
}

}  // namespace

void RunConfig::validate() const {
  require(!data_dir.empty(), ErrorKind::Config, "data_dir is required (config key or D2NN_DATA_DIR)");
  require(!output_dir.empty(), ErrorKind::Config, "output_dir must not be empty");
  try {
    profile.validate();
  } catch (const Error& e) {
    fail(ErrorKind::Config, std::string("profile: ") + e.what());
  }
  require(workers >= 1, ErrorKind::Config, "workers must be >= 1");
  require(repeat >= 1, ErrorKind::Config, "repeat must be >= 1");
  require(pool.amplitude_object >= 0 && pool.amplitude_fourier >= 0 && pool.phase_object >= 0 &&
              pool.phase_fourier >= 0 && pool.total() >= 1,
          ErrorKind::Config, "pool must contain at least one network and no negative counts");
  require(validation_count >= 1, ErrorKind::Config, "validation_count must be >= 1");
  train.validate();
  require(!pruning.empty(), ErrorKind::Config, "at least one pruning entry is required");
  std::set<std::string> names;
  for (const auto& p : pruning) {
    require(valid_name(p.name), ErrorKind::Config, "pruning name '" + p.name + "' must be [A-Za-z0-9_-]+");
    require(names.insert(p.name).second, ErrorKind::Config, "duplicate pruning name '" + p.name + "'");
    p.config.validate();
  }
}

RunConfig parse_run_config(const json& input, const ConfigOverrides& ov) {
  json j = input.is_null() ? json::object() : input;
  if (!j.is_object()) fail(ErrorKind::Config, "config: expected a JSON object");
  if (ov.data_dir) j["data_dir"] = *ov.data_dir;
  if (ov.output_dir) j["output_dir"] = *ov.output_dir;
  if (ov.profile) j["profile"] = *ov.profile;
  if (ov.seed) j["seed"] = *ov.seed;
  if (ov.workers) j["workers"] = *ov.workers;
  if (ov.repeat) j["repeat"] = *ov.repeat;
  jsonutil::check_keys(j, {"data_dir", "output_dir", "profile", "seed", "workers", "repeat", "pool", "subsets",
                           "validation_count", "train", "pruning", "sampler", "seeds"},
                       "config");
  RunConfig cfg;
  try {
    cfg.data_dir = get_as<std::string>(j, "data_dir", "", "config");
    cfg.output_dir = get_as<std::string>(j, "output_dir", cfg.output_dir.string(), "config");
    if (j.contains("profile")) {
      const auto& p = j.at("profile");
      cfg.profile = p.is_string() ? OpticalProfile::named(p.get<std::string>()) : p.get<OpticalProfile>();
    } else {
      cfg.profile = OpticalProfile::desk();
    }
    const bool paper = cfg.profile.name == "paper";
    cfg.seed = get_as<std::uint64_t>(j, "seed", cfg.seed, "config");
    cfg.workers = get_as<int>(j, "workers", cfg.workers, "config");
    cfg.repeat = get_as<int>(j, "repeat", cfg.repeat, "config");
    cfg.pool = parse_pool(j.value("pool", json()), paper);
    cfg.subsets = paper ? SubsetSizes{} : SubsetSizes{5000, 1000, 1000};
    if (j.contains("subsets")) {
      const auto& s = j.at("subsets");
      jsonutil::check_keys(s, {"train", "validation", "test"}, "subsets");
      cfg.subsets.train = get_as<std::size_t>(s, "train", cfg.subsets.train, "subsets");
      cfg.subsets.validation = get_as<std::size_t>(s, "validation", cfg.subsets.validation, "subsets");
      cfg.subsets.test = get_as<std::size_t>(s, "test", cfg.subsets.test, "subsets");
    }
    cfg.validation_count = get_as<std::size_t>(j, "validation_count", cfg.validation_count, "config");
    cfg.train = parse_train(j.value("train", json()), paper);
    if (j.contains("pruning")) {
      require(j.at("pruning").is_array(), ErrorKind::Config, "pruning must be an array");
      for (const auto& p : j.at("pruning")) cfg.pruning.push_back(parse_pruning(p, paper));
    } else {
      cfg.pruning.push_back(default_pruning(paper));
    }
    cfg.sampler = parse_sampler(j.value("sampler", json()));
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("config: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Config) throw;
    fail(ErrorKind::Config, e.what());
  }
  cfg.validate();
  if (j.contains("seeds") && !seeds_consistent(j.at("seeds"), cfg)) {
    fail(ErrorKind::Config, "config: recorded seeds do not match the run seed; the file was edited");
  }
  return cfg;
}

RunConfig load_run_config(const fs::path& path, const ConfigOverrides& overrides) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Config, "cannot read config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, "config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(j, overrides);
}

json to_json(const RunConfig& cfg) {
  json pruning = json::array();
  for (const auto& p : cfg.pruning) pruning.push_back(pruning_json(p));
  return {{"data_dir", cfg.data_dir.string()},
          {"output_dir", cfg.output_dir.string()},
          {"profile", cfg.profile},
          {"seed", cfg.seed},
          {"workers", cfg.workers},
          {"repeat", cfg.repeat},
          {"pool", pool_json(cfg.pool)},
          {"subsets", {{"train", cfg.subsets.train}, {"validation", cfg.subsets.validation}, {"test", cfg.subsets.test}}},
          {"validation_count", cfg.validation_count},
          {"train", train_json(cfg.train)},
          {"pruning", pruning},
          {"sampler", sampler_json(cfg.sampler)},
          {"seeds", seeds_json(cfg)}};
}

std::uint64_t pool_sampling_seed(const RunConfig& cfg) { return mix_seed(cfg.seed, 1); }
std::uint64_t training_seed(const RunConfig& cfg) { return mix_seed(cfg.seed, 2); }
std::uint64_t pruning_seed(const RunConfig& cfg, std::size_t run_index, int repeat) {
  return mix_seed(mix_seed(cfg.seed, 3 + run_index), static_cast<std::uint64_t>(repeat));
}

std::string network_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "net_%04zu", index);
  return buf;
}

// ---------------------------------------------------------------- helpers

namespace {

std::string sha256_file(const fs::path& path) { return detail::sha256_hex(detail::read_file(path)); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, path.string() + " is not valid JSON: " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) { detail::write_text_atomic(path, j.dump(2) + "\n"); }

// Keys that decide prepare/train/cache outputs. Pruning settings are keyed
// per trace and re-frozen by 'prune'.
json comparable(json j) {
  for (const char* key : {"data_dir", "output_dir", "workers", "repeat", "pruning"}) j.erase(key);
  if (j.contains("seeds")) j["seeds"].erase("pruning");
  return j;
}

json trace_json(const PruningTrace& trace) {
  json records = json::array();
  for (const auto& rec : trace.records) {
    json weights = json::array();
    for (std::size_t k = 0; k < rec.weights.networks; ++k) {
      json row = json::array();
      for (int c = 0; c < rec.weights.classes; ++c) row.push_back(rec.weights.at(k, c));
      weights.push_back(row);
    }
    records.push_back({{"iteration", rec.iteration},
                       {"members", rec.members},
                       {"n", rec.members.size()},
                       {"validation_accuracy", rec.validation_accuracy},
                       {"kind", to_string(rec.kind)},
                       {"weights", weights}});
  }
  return records;
}

PruningTrace trace_from_json(const json& records, int classes) {
  PruningTrace trace;
  for (const auto& r : records) {
    PruningRecord rec;
    rec.iteration = r.at("iteration").get<int>();
    rec.members = r.at("members").get<std::vector<std::size_t>>();
    rec.validation_accuracy = r.at("validation_accuracy").get<double>();
    const auto kind = r.at("kind").get<std::string>();
    rec.kind = kind == "random" ? EliminationKind::Random
                                : (kind == "terminal" ? EliminationKind::Terminal : EliminationKind::Ranked);
    rec.weights = WeightMatrix::filled(rec.members.size(), classes, 0.0);
    const auto& w = r.at("weights");
    for (std::size_t k = 0; k < rec.members.size(); ++k) {
      for (int c = 0; c < classes; ++c) rec.weights.at(k, c) = w.at(k).at(c).get<double>();
    }
    trace.records.push_back(std::move(rec));
  }
  return trace;
}

}  // namespace

// ---------------------------------------------------------------- stages

Pipeline::Pipeline(RunConfig config, LogSink log) : config_(std::move(config)), log_(std::move(log)) {
  config_.validate();
}

void Pipeline::info(const std::string& msg) const {
  if (log_) log_(LogLevel::Info, msg);
}

void Pipeline::warn(const std::string& msg) const {
  if (log_) log_(LogLevel::Warning, msg);
}

void Pipeline::check_frozen_config() const {
  const fs::path frozen = run_dir() / "config.json";
  if (!fs::exists(frozen)) {
    fail(ErrorKind::Stale, "run directory " + run_dir().string() + " has not been prepared; run 'prepare' first");
  }
  const json stored = comparable(read_json(frozen));
  const json current = comparable(to_json(config_));
  if (stored != current) {
    std::string keys;
    for (const auto& item : current.items()) {
      if (!stored.contains(item.key()) || stored.at(item.key()) != item.value()) keys += " " + item.key();
    }
    fail(ErrorKind::Stale, "configuration differs from the one frozen by 'prepare' in" + keys +
                               "; rerun 'prepare' (downstream artifacts will be refused as stale) or use a new "
                               "output_dir");
  }
}

json Pipeline::load_manifest() const {
  const fs::path path = run_dir() / "manifest.json";
  if (!fs::exists(path)) fail(ErrorKind::Stale, "manifest missing; run 'prepare' first");
  return read_json(path);
}

std::vector<FrontEndSpec> Pipeline::load_pool() const {
  const json j = read_json(run_dir() / "pool.json");
  std::vector<FrontEndSpec> specs;
  for (const auto& s : j.at("specs")) specs.push_back(s.get<FrontEndSpec>());
  return specs;
}

std::pair<Split, Split> Pipeline::load_train_validation(const std::string& stage) const {
  SplitAudit audit(run_dir() / "audit.log");
  audit.record(stage, SplitKind::Train, "decode");
  audit.record(stage, SplitKind::Validation, "decode");
  auto splits = d2nn::load_train_validation(config_.data_dir, config_.validation_count);
  const json manifest = load_manifest();
  const auto& m = manifest.at("splits");
  if (split_content_hash(splits.first) != m.at("train").at("sha256").get<std::string>() ||
      split_content_hash(splits.second) != m.at("validation").at("sha256").get<std::string>()) {
    fail(ErrorKind::Stale, "data in " + config_.data_dir.string() +
                               " changed since 'prepare' (split hashes differ); rerun 'prepare'");
  }
  return {splits.first.head(config_.subsets.train), splits.second.head(config_.subsets.validation)};
}

void Pipeline::prepare() {
  fs::create_directories(run_dir());
  const auto files = cifar_batch_files();
  for (const auto& name : files) {
    if (!fs::is_regular_file(config_.data_dir / name)) {
      fail(ErrorKind::Data, "missing CIFAR-10 batch file: " + (config_.data_dir / name).string());
    }
  }
  SplitAudit audit(run_dir() / "audit.log");
  audit.record("prepare", SplitKind::Train, "decode");
  audit.record("prepare", SplitKind::Validation, "decode");
  auto [train, validation] = d2nn::load_train_validation(config_.data_dir, config_.validation_count);

  // The test file is only sized here; its contents are first read by 'report'.
  const fs::path test_path = config_.data_dir / files[5];
  const auto test_bytes = fs::file_size(test_path);
  require(test_bytes > 0 && test_bytes % kCifarRecordBytes == 0, ErrorKind::Data,
          "short or truncated CIFAR-10 batch file: " + test_path.string());

  json file_hashes = json::object();
  for (std::size_t f = 0; f < 5; ++f) {
    const auto bytes = detail::read_file(config_.data_dir / files[f]);
    file_hashes[files[f]] = {{"bytes", bytes.size()}, {"sha256", detail::sha256_hex(bytes)}};
  }
  const json manifest = {
      {"format", "d2nn-manifest-1"},
      {"files", file_hashes},
      {"test_file", {{"name", files[5]}, {"bytes", test_bytes}}},
      {"validation_count", config_.validation_count},
      {"splits",
       {{"train", {{"size", train.size()}, {"sha256", split_content_hash(train)}}},
        {"validation", {{"size", validation.size()}, {"sha256", split_content_hash(validation)}}},
        {"test", {{"size", test_bytes / kCifarRecordBytes}}}}},
      {"subsets",
       {{"train", train.head(config_.subsets.train).size()},
        {"validation", validation.head(config_.subsets.validation).size()},
        {"test", config_.subsets.test == 0 ? test_bytes / kCifarRecordBytes
                                           : std::min<std::size_t>(config_.subsets.test, test_bytes / kCifarRecordBytes)}}}};
  write_json(run_dir() / "manifest.json", manifest);
  write_json(run_dir() / "config.json", to_json(config_));

  const auto specs = sample_pool_specs(pool_sampling_seed(config_), config_.pool, config_.profile, config_.sampler);
  json pool = {{"seed", pool_sampling_seed(config_)}, {"specs", json::array()}};
  for (const auto& s : specs) pool["specs"].push_back(s);
  write_json(run_dir() / "pool.json", pool);

  info("prepared " + run_dir().string() + ": train " + std::to_string(train.size()) + ", validation " +
       std::to_string(validation.size()) + ", test " + std::to_string(test_bytes / kCifarRecordBytes) +
       " records; pool of " + std::to_string(specs.size()) + " networks");
}

namespace {

json member_fingerprint(const RunConfig& cfg, const std::string& manifest_sha, const FrontEndSpec& spec,
                        std::uint64_t seed) {
  return {{"manifest_sha256", manifest_sha},
          {"profile", cfg.profile},
          {"spec", spec},
          {"seed", seed},
          {"train", train_json(cfg.train)},
          {"subsets", {{"train", cfg.subsets.train}, {"validation", cfg.subsets.validation}}}};
}

}  // namespace

void Pipeline::train() {
  check_frozen_config();
  const std::string manifest_sha = sha256_file(run_dir() / "manifest.json");
  const auto specs = load_pool();
  const fs::path net_dir = run_dir() / "networks";
  fs::create_directories(net_dir);

  // Resume: members whose checkpoint and fingerprint are current are skipped.
  std::vector<bool> done(specs.size(), false);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const fs::path meta_path = net_dir / (network_id(i) + ".json");
    if (!fs::exists(meta_path)) continue;
    const json meta = read_json(meta_path);
    const json expected = member_fingerprint(config_, manifest_sha, specs[i], member_seed(training_seed(config_), i));
    if (meta.value("fingerprint", json()) != expected) {
      fail(ErrorKind::Stale, network_id(i) + " was trained against a different manifest or configuration; "
                                             "remove " + net_dir.string() + " or choose a new output_dir");
    }
    try {
      (void)load_checkpoint(net_dir / (network_id(i) + ".d2nn"));
      done[i] = true;
    } catch (const Error& e) {
      warn(network_id(i) + ": existing checkpoint unusable (" + e.what() + "); retraining");
    }
  }
  const auto remaining = static_cast<std::size_t>(std::count(done.begin(), done.end(), false));
  if (remaining == 0) {
    info("all " + std::to_string(specs.size()) + " networks already trained");
    return;
  }
  auto [train, validation] = load_train_validation("train");
  info("training " + std::to_string(remaining) + " of " + std::to_string(specs.size()) + " networks on " +
       std::to_string(train.size()) + " images (" + std::to_string(config_.train.epochs) + " epochs, " +
       std::to_string(config_.workers) + " workers)");

  std::mutex log_mutex;
  PoolCallbacks cb;
  cb.skip = [&](std::size_t i) { return static_cast<bool>(done[i]); };
  cb.on_epoch = [&](std::size_t i, const EpochRecord& rec) {
    const fs::path log_path = net_dir / (network_id(i) + ".log.jsonl");
    std::ofstream out(log_path, rec.epoch == 0 ? std::ios::trunc : std::ios::app);
    out << rec.to_json_line() << '\n';
  };
  cb.on_complete = [&](std::size_t i, const TrainResult& r) {
    const std::string id = network_id(i);
    const fs::path ckpt = net_dir / (id + ".d2nn");
    save_checkpoint(r.best, ckpt);
    const json meta = {
        {"id", id},
        {"fingerprint", member_fingerprint(config_, manifest_sha, specs[i], member_seed(training_seed(config_), i))},
        {"best_epoch", r.best_epoch},
        {"best_validation_accuracy", r.best_validation_accuracy},
        {"final_loss", r.log.back().loss},
        {"checkpoint_sha256", sha256_file(ckpt)}};
    write_json(net_dir / (id + ".json"), meta);
    std::lock_guard lock(log_mutex);
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s: best validation accuracy %.2f%% at epoch %d", id.c_str(),
                  100.0 * r.best_validation_accuracy, r.best_epoch);
    info(buf);
  };
  const auto members = train_pool(specs, config_.profile, train, validation, config_.train, training_seed(config_),
                                   config_.workers, cb);
  std::string failed;
  for (const auto& m : members) {
    if (!m.error.empty()) {
      failed += " " + network_id(m.index);
      warn(network_id(m.index) + " failed: " + m.error);
    }
  }
  if (!failed.empty()) warn("partial pool; failed members:" + failed);
}

std::vector<std::size_t> Pipeline::trained_members(std::size_t pool_size) const {
  std::vector<std::size_t> present;
  std::string missing;
  for (std::size_t i = 0; i < pool_size; ++i) {
    const fs::path meta = run_dir() / "networks" / (network_id(i) + ".json");
    if (fs::exists(meta) && fs::exists(run_dir() / "networks" / (network_id(i) + ".d2nn"))) {
      present.push_back(i);
    } else {
      missing += " " + network_id(i);
    }
  }
  if (!missing.empty()) warn("partial pool; missing members:" + missing);
  require(!present.empty(), ErrorKind::Stale, "no trained networks found; run 'train' first");
  return present;
}

namespace {

struct CacheInputs {
  std::vector<std::string> ids;
  json fingerprint;
};

CacheInputs cache_inputs(const fs::path& run, const std::vector<std::size_t>& members, const std::string& extra) {
  CacheInputs in;
  json checkpoints = json::array();
  for (auto i : members) {
    const std::string id = network_id(i);
    in.ids.push_back(id);
    const json meta = read_json(run / "networks" / (id + ".json"));
    checkpoints.push_back({{"id", id}, {"sha256", meta.at("checkpoint_sha256")}});
  }
  in.fingerprint = {{"checkpoints", checkpoints}, {"data", extra}};
  return in;
}

ScoreCache build_or_reuse_cache(const fs::path& run, const std::string& name, const std::vector<std::size_t>& members,
                                const std::string& data_key, const std::function<Split()>& load_split, int workers,
                                const LogSink& log, bool* rebuilt = nullptr) {
  const fs::path cache_path = run / "caches" / (name + ".d2sc");
  const fs::path meta_path = run / "caches" / (name + ".json");
  const auto inputs = cache_inputs(run, members, data_key);
  if (fs::exists(cache_path) && fs::exists(meta_path)) {
    const json meta = read_json(meta_path);
    if (meta.value("fingerprint", json()) == inputs.fingerprint &&
        meta.value("cache_sha256", std::string()) == sha256_file(cache_path)) {
      if (rebuilt != nullptr) *rebuilt = false;
      return load_score_cache(cache_path);
    }
  }
  const Split split = load_split();
  std::vector<D2nnModel> models;
  for (auto i : members) models.push_back(load_checkpoint(run / "networks" / (network_id(i) + ".d2nn")));
  ScoreCache cache = build_score_cache(models, inputs.ids, split, workers);
  if (cache.degenerate > 0 && log) {
    log(LogLevel::Warning, name + " cache: " + std::to_string(cache.degenerate) +
                               " class scores had no light at their detectors and were set to 0");
  }
  save_score_cache(cache, cache_path);
  write_json(meta_path, {{"fingerprint", inputs.fingerprint},
                         {"cache_sha256", sha256_file(cache_path)},
                         {"samples", cache.samples},
                         {"networks", cache.networks},
                         {"degenerate_scores", cache.degenerate}});
  if (rebuilt != nullptr) *rebuilt = true;
  return cache;
}

}  // namespace

void Pipeline::cache() {
  check_frozen_config();
  const std::string manifest_sha = sha256_file(run_dir() / "manifest.json");
  const auto members = trained_members(load_pool().size());
  fs::create_directories(run_dir() / "caches");
  bool rebuilt = false;
  const ScoreCache c = build_or_reuse_cache(
      run_dir(), "validation", members, manifest_sha, [&] { return load_train_validation("cache").second; },
      config_.workers, log_, &rebuilt);
  info(std::string(rebuilt ? "built" : "reused") + " validation score cache: " + std::to_string(c.samples) +
       " samples x " + std::to_string(c.networks) + " networks");
}

namespace {

// Cache file must be current with respect to the trained checkpoints.
ScoreCache load_current_cache(const fs::path& run, const std::string& name, const std::vector<std::size_t>& members,
                              const std::string& data_key, std::string* cache_sha) {
  const fs::path cache_path = run / "caches" / (name + ".d2sc");
  const fs::path meta_path = run / "caches" / (name + ".json");
  if (!fs::exists(cache_path) || !fs::exists(meta_path)) {
    fail(ErrorKind::Stale, name + " score cache missing; run 'cache' first");
  }
  const json meta = read_json(meta_path);
  if (meta.value("fingerprint", json()) != cache_inputs(run, members, data_key).fingerprint) {
    fail(ErrorKind::Stale, name + " score cache is older than the trained checkpoints; rerun 'cache'");
  }
  *cache_sha = sha256_file(cache_path);
  if (meta.value("cache_sha256", std::string()) != *cache_sha) {
    fail(ErrorKind::Stale, name + " score cache file does not match its metadata; rerun 'cache'");
  }
  return load_score_cache(cache_path);
}

}  // namespace

void Pipeline::prune() {
  check_frozen_config();
  if (read_json(run_dir() / "config.json") != to_json(config_)) {
    info("pruning settings changed since 'prepare'; updating the frozen config");
    write_json(run_dir() / "config.json", to_json(config_));
  }
  const std::string manifest_sha = sha256_file(run_dir() / "manifest.json");
  const auto members = trained_members(load_pool().size());
  std::string cache_sha;
  const ScoreCache cache = load_current_cache(run_dir(), "validation", members, manifest_sha, &cache_sha);
  require(cache.split == SplitKind::Validation, ErrorKind::Stale, "validation cache holds another split");

  for (std::size_t j = 0; j < config_.pruning.size(); ++j) {
    const auto& run = config_.pruning[j];
    const fs::path dir = run_dir() / "pruning" / run.name;
    fs::create_directories(dir);
    std::vector<double> accs, sizes;
    for (int r = 0; r < config_.repeat; ++r) {
      PruningConfig cfg = run.config;
      cfg.seed = pruning_seed(config_, j, r);
      const fs::path path = dir / ("trace_r" + std::to_string(r) + ".json");
      const json key = {{"cache_sha256", cache_sha}, {"config", pruning_json(run)}, {"seed", cfg.seed}};
      PruningTrace trace;
      bool reused = false;
      if (fs::exists(path)) {
        const json stored = read_json(path);
        if (stored.value("key", json()) == key) {
          trace = trace_from_json(stored.at("records"), cache.classes);
          reused = true;
        }
      }
      if (!reused) {
        trace = run_pruning(cache, cfg);
        write_json(path, {{"key", key},
                          {"name", run.name},
                          {"repeat", r},
                          {"network_ids", cache.network_ids},
                          {"records", trace_json(trace)}});
      }
      const auto& sel = select_ensemble(trace, run.config.n_max);
      accs.push_back(100.0 * sel.validation_accuracy);
      sizes.push_back(static_cast<double>(sel.members.size()));
    }
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s: validation accuracy %.2f +/- %.2f %% (N = %.1f +/- %.1f, N_max = %d) over %d repeats",
                  run.name.c_str(), mean(accs), stddev(accs), mean(sizes), stddev(sizes), run.config.n_max,
                  config_.repeat);
    write_json(dir / "summary.json", {{"name", run.name},
                                      {"validation_accuracy", accs},
                                      {"validation_accuracy_mean", mean(accs)},
                                      {"validation_accuracy_std", stddev(accs)},
                                      {"ensemble_size", sizes},
                                      {"line", buf}});
    info(buf);
  }
}

ReportSummary Pipeline::report() {
  check_frozen_config();
  const json manifest = load_manifest();
  const std::string manifest_sha = sha256_file(run_dir() / "manifest.json");
  const auto members = trained_members(load_pool().size());
  std::string cache_sha;
  const ScoreCache validation = load_current_cache(run_dir(), "validation", members, manifest_sha, &cache_sha);

  std::vector<std::vector<PruningTrace>> traces;
  for (std::size_t j = 0; j < config_.pruning.size(); ++j) {
    const auto& run = config_.pruning[j];
    traces.emplace_back();
    for (int r = 0; r < config_.repeat; ++r) {
      const fs::path path = run_dir() / "pruning" / run.name / ("trace_r" + std::to_string(r) + ".json");
      if (!fs::exists(path)) fail(ErrorKind::Stale, "pruning trace " + path.string() + " missing; run 'prune' first");
      const json stored = read_json(path);
      const json key = {{"cache_sha256", cache_sha}, {"config", pruning_json(run)}, {"seed", pruning_seed(config_, j, r)}};
      if (stored.value("key", json()) != key) {
        fail(ErrorKind::Stale, "pruning trace " + path.string() + " is older than the validation cache; rerun 'prune'");
      }
      traces.back().push_back(trace_from_json(stored.at("records"), validation.classes));
    }
  }

  // First read of the test file in the whole pipeline.
  const fs::path test_path = config_.data_dir / cifar_batch_files()[5];
  const std::string test_key = manifest_sha + ":" + (fs::exists(test_path) ? sha256_file(test_path) : "missing");
  const ScoreCache test = build_or_reuse_cache(
      run_dir(), "test", members, test_key,
      [&] {
        SplitAudit(run_dir() / "audit.log").record("report", SplitKind::Test, "decode");
        Split t = load_test(config_.data_dir);
        require(t.size() == manifest.at("splits").at("test").at("size").get<std::size_t>(), ErrorKind::Stale,
                "test file changed since 'prepare'; rerun 'prepare'");
        return t.head(config_.subsets.test);
      },
      config_.workers, log_);

  ReportSummary summary = write_report(run_dir() / "report", validation, test, config_.pruning, traces, log_);
  summary.test_isolated = SplitAudit::test_untouched_before(run_dir() / "audit.log", "report");
  write_json(run_dir() / "report" / "summary.json", summary.to_json());
  info(std::string("test isolation audit: ") +
       (summary.test_isolated ? "passed (test split first decoded by report)" : "FAILED"));
  return summary;
}

}  // namespace d2nn
