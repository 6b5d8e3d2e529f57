#pragma once

// Adam, the step-decay schedule, single-network training with
// best-on-validation selection, and pool training.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "d2nn/data.hpp"
#include "d2nn/network.hpp"

namespace d2nn {

enum class Precision { Double, Single };

struct TrainHyperparams {
  int batch_size = 8;
  int epochs = 50;
  double lr0 = 0.001;
  double lr_decay = 0.7;
  int decay_every = 8;  // epochs per decay step
  double flip_probability = 0.5;
  std::uint64_t seed = 0;
  Precision precision = Precision::Double;

  /// Throws Config; only double precision is implemented.
  void validate() const;
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  static AdamState zeros(std::size_t n);
};

/// One bias-corrected Adam update in place. Throws Numeric on a non-finite
/// gradient, before touching any state.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr);

/// lr0 * decay^floor(epoch / decay_every).
double lr_schedule(int epoch, const TrainHyperparams& hp = {});

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;  // mean training loss over the epoch
  double train_accuracy = 0.0;
  double validation_accuracy = 0.0;
  double lr = 0.0;
  double wall_time = 0.0;  // seconds since training started

  /// One JSON object, no trailing newline.
  std::string to_json_line() const;
};

struct TrainResult {
  D2nnModel best;
  int best_epoch = -1;
  double best_validation_accuracy = 0.0;
  std::vector<EpochRecord> log;
};

/// Accuracy in [0, 1] with no augmentation. A class whose detectors receive
/// no light scores 0.
double evaluate_accuracy(const D2nnModel& model, const Split& split);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains one network from `hp.seed`. Parameters are rounded to float32 at
/// every epoch end, so the returned model equals its checkpoint.
TrainResult train_network(const FrontEndSpec& spec, const OpticalProfile& profile, const Split& train,
                          const Split& validation, const TrainHyperparams& hp,
                          const EpochCallback& on_epoch = {});

struct PoolMember {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  bool skipped = false;             // skip() returned true
  std::optional<TrainResult> result;  // unset on failure, skip, or when on_complete consumes it
  std::string error;
};

struct PoolCallbacks {
  std::function<bool(std::size_t)> skip;  // member already done
  std::function<void(std::size_t, const TrainResult&)> on_complete;
  std::function<void(std::size_t, const EpochRecord&)> on_epoch;
};

/// Member seed: mix_seed(run_seed, index).
std::uint64_t member_seed(std::uint64_t run_seed, std::size_t index);

/// Trains every spec independently on `workers` threads. Failures are
/// recorded per member. Callbacks run on worker threads.
std::vector<PoolMember> train_pool(const std::vector<FrontEndSpec>& specs, const OpticalProfile& profile,
                                   const Split& train, const Split& validation, TrainHyperparams hp,
                                   std::uint64_t run_seed, int workers, const PoolCallbacks& callbacks = {});

}  // namespace d2nn
