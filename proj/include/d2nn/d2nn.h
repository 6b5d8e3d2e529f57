/* C interface to the d2nn library. All objects are opaque handles; every
 * call returns a status and the message of the last failure on the calling
 * thread is available from d2nn_last_error(). */
#ifndef D2NN_D2NN_H
#define D2NN_D2NN_H

#include <stddef.h>
#include <stdint.h>

#if defined(D2NN_BUILDING_LIBRARY)
#define D2NN_API __attribute__((visibility("default")))
#else
#define D2NN_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum d2nn_status {
  D2NN_OK = 0,
  D2NN_ERR_INVALID_ARGUMENT = 1,
  D2NN_ERR_GRID_MISMATCH = 2,
  D2NN_ERR_DEGENERATE = 3,
  D2NN_ERR_NUMERIC = 4,
  D2NN_ERR_DATA = 5,
  D2NN_ERR_FORMAT = 6,
  D2NN_ERR_VERSION = 7,
  D2NN_ERR_CHECKSUM = 8,
  D2NN_ERR_CONFIG = 9,
  D2NN_ERR_IO = 10,
  D2NN_ERR_STALE = 11,
  D2NN_ERR_INTERNAL = 12
} d2nn_status;

D2NN_API const char* d2nn_version(void);
D2NN_API const char* d2nn_status_name(d2nn_status status);
/* Message of the most recent failure on this thread; "" after success. */
D2NN_API const char* d2nn_last_error(void);

/* ---- runs ------------------------------------------------------------- */

typedef struct d2nn_run d2nn_run;

enum { D2NN_LOG_INFO = 0, D2NN_LOG_WARNING = 1 };
typedef void (*d2nn_log_fn)(int level, const char* message, void* user);

/* NULL strings and zero counts leave the config value untouched. */
typedef struct d2nn_overrides {
  const char* data_dir;
  const char* output_dir;
  const char* profile; /* "paper" or "desk" */
  int has_seed;
  uint64_t seed;
  int workers;
  int repeat;
} d2nn_overrides;

/* config_path may be NULL (all defaults; data_dir must then come from the
 * overrides). */
D2NN_API d2nn_status d2nn_run_open(const char* config_path, const d2nn_overrides* overrides, d2nn_log_fn log,
                                   void* user, d2nn_run** out);
D2NN_API d2nn_status d2nn_run_prepare(d2nn_run* run);
D2NN_API d2nn_status d2nn_run_train(d2nn_run* run);
D2NN_API d2nn_status d2nn_run_cache(d2nn_run* run);
D2NN_API d2nn_status d2nn_run_prune(d2nn_run* run);
/* Writes <output_dir>/report; the summary is also in report/summary.json. */
D2NN_API d2nn_status d2nn_run_report(d2nn_run* run);
/* Resolved output directory; valid until the run is freed. */
D2NN_API const char* d2nn_run_output_dir(const d2nn_run* run);
D2NN_API void d2nn_run_free(d2nn_run* run);

/* ---- models ----------------------------------------------------------- */

typedef struct d2nn_model d2nn_model;

D2NN_API d2nn_status d2nn_model_load(const char* path, d2nn_model** out);
D2NN_API d2nn_status d2nn_model_save(const d2nn_model* model, const char* path);
D2NN_API d2nn_status d2nn_model_class_count(const d2nn_model* model, int* out);
/* image: 32x32 row-major grayscale in [0, 1]; scores: class_count entries. */
D2NN_API d2nn_status d2nn_model_forward(const d2nn_model* model, const float* image, double* scores,
                                        size_t score_count);
D2NN_API void d2nn_model_free(d2nn_model* model);

/* ---- score caches ----------------------------------------------------- */

typedef struct d2nn_cache d2nn_cache;

D2NN_API d2nn_status d2nn_cache_load(const char* path, d2nn_cache** out);
D2NN_API d2nn_status d2nn_cache_dims(const d2nn_cache* cache, size_t* samples, size_t* networks, int* classes);
D2NN_API d2nn_status d2nn_cache_score(const d2nn_cache* cache, size_t sample, size_t network, int cls, float* out);
D2NN_API d2nn_status d2nn_cache_label(const d2nn_cache* cache, size_t sample, int* out);
D2NN_API d2nn_status d2nn_cache_export_csv(const d2nn_cache* cache, const char* path);
D2NN_API void d2nn_cache_free(d2nn_cache* cache);

/* ---- data ------------------------------------------------------------- */

/* Seeded synthetic dataset in the CIFAR-10 binary layout: five train files
 * of records_per_train_file records each plus a test file. */
D2NN_API d2nn_status d2nn_write_synthetic_cifar(const char* directory, size_t records_per_train_file,
                                                size_t test_records, uint64_t seed);

/* ---- metrics ---------------------------------------------------------- */

/* accuracy (percent) divided by the number of networks. */
D2NN_API d2nn_status d2nn_accuracy_per_network(double accuracy_percent, int networks, double* out);

#ifdef __cplusplus
}
#endif

#endif
