#include "d2nn/d2nn.h"

#include <exception>
#include <new>
#include <string>

#include "d2nn/ensemble.hpp"
#include "d2nn/pipeline.hpp"

struct d2nn_run {
  d2nn::Pipeline pipeline;
  std::string output_dir;
};

struct d2nn_model {
  d2nn::D2nnModel model;
};

struct d2nn_cache {
  d2nn::ScoreCache cache;
};

namespace {

thread_local std::string last_error;

d2nn_status status_of(d2nn::ErrorKind kind) {
  using d2nn::ErrorKind;
  switch (kind) {
    case ErrorKind::InvalidArgument: return D2NN_ERR_INVALID_ARGUMENT;
    case ErrorKind::GridMismatch: return D2NN_ERR_GRID_MISMATCH;
    case ErrorKind::Degenerate: return D2NN_ERR_DEGENERATE;
    case ErrorKind::Numeric: return D2NN_ERR_NUMERIC;
    case ErrorKind::Data: return D2NN_ERR_DATA;
    case ErrorKind::Format: return D2NN_ERR_FORMAT;
    case ErrorKind::Version: return D2NN_ERR_VERSION;
    case ErrorKind::Checksum: return D2NN_ERR_CHECKSUM;
    case ErrorKind::Config: return D2NN_ERR_CONFIG;
    case ErrorKind::Io: return D2NN_ERR_IO;
    case ErrorKind::Stale: return D2NN_ERR_STALE;
  }
  return D2NN_ERR_INTERNAL;
}

template <typename F>
d2nn_status guard(F&& body) {
  try {
    body();
    last_error.clear();
    return D2NN_OK;
  } catch (const d2nn::Error& e) {
    last_error = e.what();
    return status_of(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    last_error = e.what();
    return D2NN_ERR_IO;
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return D2NN_ERR_INTERNAL;
  } catch (const std::exception& e) {
    last_error = e.what();
    return D2NN_ERR_INTERNAL;
  }
}

d2nn_status null_argument(const char* what) {
  last_error = std::string(what) + " must not be NULL";
  return D2NN_ERR_INVALID_ARGUMENT;
}

}  // namespace

extern "C" {

const char* d2nn_version(void) { return "1.0.0"; }

const char* d2nn_status_name(d2nn_status status) {
  switch (status) {
    case D2NN_OK: return "ok";
    case D2NN_ERR_INVALID_ARGUMENT: return "invalid argument";
    case D2NN_ERR_GRID_MISMATCH: return "grid mismatch";
    case D2NN_ERR_DEGENERATE: return "degenerate signal";
    case D2NN_ERR_NUMERIC: return "numeric failure";
    case D2NN_ERR_DATA: return "data error";
    case D2NN_ERR_FORMAT: return "format error";
    case D2NN_ERR_VERSION: return "unsupported version";
    case D2NN_ERR_CHECKSUM: return "checksum mismatch";
    case D2NN_ERR_CONFIG: return "configuration error";
    case D2NN_ERR_IO: return "i/o error";
    case D2NN_ERR_STALE: return "stale upstream artifact";
    case D2NN_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* d2nn_last_error(void) { return last_error.c_str(); }

d2nn_status d2nn_run_open(const char* config_path, const d2nn_overrides* overrides, d2nn_log_fn log, void* user,
                          d2nn_run** out) {
  if (out == nullptr) return null_argument("out");
  *out = nullptr;
  return guard([&] {
    d2nn::ConfigOverrides ov;
    if (overrides != nullptr) {
      if (overrides->data_dir != nullptr) ov.data_dir = overrides->data_dir;
      if (overrides->output_dir != nullptr) ov.output_dir = overrides->output_dir;
      if (overrides->profile != nullptr) ov.profile = overrides->profile;
      if (overrides->has_seed) ov.seed = overrides->seed;
      if (overrides->workers != 0) ov.workers = overrides->workers;
      if (overrides->repeat != 0) ov.repeat = overrides->repeat;
    }
    d2nn::RunConfig cfg = config_path != nullptr ? d2nn::load_run_config(config_path, ov)
                                                 : d2nn::parse_run_config(nlohmann::json::object(), ov);
    d2nn::LogSink sink;
    if (log != nullptr) {
      sink = [log, user](d2nn::LogLevel level, const std::string& msg) {
        log(level == d2nn::LogLevel::Warning ? D2NN_LOG_WARNING : D2NN_LOG_INFO, msg.c_str(), user);
      };
    }
    const std::string dir = cfg.output_dir.string();
    *out = new d2nn_run{d2nn::Pipeline(std::move(cfg), std::move(sink)), dir};
  });
}

#define D2NN_RUN_STAGE(name)                                  \
  d2nn_status d2nn_run_##name(d2nn_run* run) {                \
    if (run == nullptr) return null_argument("run");          \
    return guard([&] { (void)run->pipeline.name(); });        \
  }

D2NN_RUN_STAGE(prepare)
D2NN_RUN_STAGE(train)
D2NN_RUN_STAGE(cache)
D2NN_RUN_STAGE(prune)
D2NN_RUN_STAGE(report)

#undef D2NN_RUN_STAGE

const char* d2nn_run_output_dir(const d2nn_run* run) { return run == nullptr ? "" : run->output_dir.c_str(); }

void d2nn_run_free(d2nn_run* run) { delete run; }

d2nn_status d2nn_model_load(const char* path, d2nn_model** out) {
  if (path == nullptr) return null_argument("path");
  if (out == nullptr) return null_argument("out");
  *out = nullptr;
  return guard([&] { *out = new d2nn_model{d2nn::load_checkpoint(path)}; });
}

d2nn_status d2nn_model_save(const d2nn_model* model, const char* path) {
  if (model == nullptr) return null_argument("model");
  if (path == nullptr) return null_argument("path");
  return guard([&] { d2nn::save_checkpoint(model->model, path); });
}

d2nn_status d2nn_model_class_count(const d2nn_model* model, int* out) {
  if (model == nullptr) return null_argument("model");
  if (out == nullptr) return null_argument("out");
  *out = model->model.class_count();
  last_error.clear();
  return D2NN_OK;
}

d2nn_status d2nn_model_forward(const d2nn_model* model, const float* image, double* scores, size_t score_count) {
  if (model == nullptr) return null_argument("model");
  if (image == nullptr) return null_argument("image");
  if (scores == nullptr) return null_argument("scores");
  return guard([&] {
    d2nn::require(score_count == static_cast<size_t>(model->model.class_count()), d2nn::ErrorKind::InvalidArgument,
                  "score buffer must hold exactly class_count entries");
    const auto r = d2nn::forward(model->model, std::span<const float>(image, d2nn::kImagePixels));
    for (size_t c = 0; c < score_count; ++c) scores[c] = r.scores.z[c];
  });
}

void d2nn_model_free(d2nn_model* model) { delete model; }

d2nn_status d2nn_cache_load(const char* path, d2nn_cache** out) {
  if (path == nullptr) return null_argument("path");
  if (out == nullptr) return null_argument("out");
  *out = nullptr;
  return guard([&] { *out = new d2nn_cache{d2nn::load_score_cache(path)}; });
}

d2nn_status d2nn_cache_dims(const d2nn_cache* cache, size_t* samples, size_t* networks, int* classes) {
  if (cache == nullptr) return null_argument("cache");
  if (samples != nullptr) *samples = cache->cache.samples;
  if (networks != nullptr) *networks = cache->cache.networks;
  if (classes != nullptr) *classes = cache->cache.classes;
  last_error.clear();
  return D2NN_OK;
}

d2nn_status d2nn_cache_score(const d2nn_cache* cache, size_t sample, size_t network, int cls, float* out) {
  if (cache == nullptr) return null_argument("cache");
  if (out == nullptr) return null_argument("out");
  const auto& c = cache->cache;
  if (sample >= c.samples || network >= c.networks || cls < 0 || cls >= c.classes) {
    last_error = "score index out of range";
    return D2NN_ERR_INVALID_ARGUMENT;
  }
  *out = c.at(sample, network, cls);
  last_error.clear();
  return D2NN_OK;
}

d2nn_status d2nn_cache_label(const d2nn_cache* cache, size_t sample, int* out) {
  if (cache == nullptr) return null_argument("cache");
  if (out == nullptr) return null_argument("out");
  if (sample >= cache->cache.samples) {
    last_error = "sample index out of range";
    return D2NN_ERR_INVALID_ARGUMENT;
  }
  *out = cache->cache.labels[sample];
  last_error.clear();
  return D2NN_OK;
}

d2nn_status d2nn_cache_export_csv(const d2nn_cache* cache, const char* path) {
  if (cache == nullptr) return null_argument("cache");
  if (path == nullptr) return null_argument("path");
  return guard([&] { d2nn::export_score_cache_csv(cache->cache, path); });
}

void d2nn_cache_free(d2nn_cache* cache) { delete cache; }

d2nn_status d2nn_write_synthetic_cifar(const char* directory, size_t records_per_train_file, size_t test_records,
                                       uint64_t seed) {
  if (directory == nullptr) return null_argument("directory");
  return guard([&] { d2nn::write_synthetic_cifar(directory, records_per_train_file, test_records, seed); });
}

d2nn_status d2nn_accuracy_per_network(double accuracy_percent, int networks, double* out) {
  if (out == nullptr) return null_argument("out");
  return guard([&] { *out = d2nn::accuracy_per_network(accuracy_percent, networks); });
}

}  // extern "C"
