#pragma once

// Score caching, class-weighted ensemble optimization, L1-ranked pruning with
// periodic random elimination, size-capped selection, and metrics.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "d2nn/data.hpp"
#include "d2nn/network.hpp"
#include "d2nn/rng.hpp"

namespace d2nn {

/// Per-sample, per-network, per-class scores, row-major [sample][network][class].
struct ScoreCache {
  SplitKind split = SplitKind::Validation;
  std::size_t samples = 0;
  std::size_t networks = 0;
  int classes = 10;
  std::vector<std::string> network_ids;
  std::vector<std::uint8_t> labels;
  std::vector<float> scores;
  std::size_t degenerate = 0;  // (sample, network, class) entries scored 0; not persisted

  float at(std::size_t s, std::size_t k, int c) const {
    return scores[(s * networks + k) * static_cast<std::size_t>(classes) + static_cast<std::size_t>(c)];
  }
  std::span<const float> row(std::size_t s, std::size_t k) const {
    return {scores.data() + (s * networks + k) * static_cast<std::size_t>(classes),
            static_cast<std::size_t>(classes)};
  }
  /// Shapes, unique ids, labels in range, finite scores.
  void validate() const;
};

/// Scores every sample with every model (tolerant scoring: a class with no
/// light scores 0 and is counted in `degenerate`). Placement is fixed, so the
/// result does not depend on `workers`.
ScoreCache build_score_cache(const std::vector<D2nnModel>& models, const std::vector<std::string>& ids,
                             const Split& split, int workers = 1);

inline constexpr std::uint32_t kScoreCacheVersion = 1;
std::vector<std::uint8_t> serialize_score_cache(const ScoreCache& cache);
ScoreCache deserialize_score_cache(std::span<const std::uint8_t> bytes);
void save_score_cache(const ScoreCache& cache, const std::filesystem::path& path);
ScoreCache load_score_cache(const std::filesystem::path& path);
/// sample,label,network,z0..z{C-1}; one line per (sample, network).
void export_score_cache_csv(const ScoreCache& cache, const std::filesystem::path& path);

/// Rows align with a member list; w[k * classes + c].
struct WeightMatrix {
  std::size_t networks = 0;
  int classes = 10;
  std::vector<double> w;

  static WeightMatrix filled(std::size_t networks, int classes, double value);
  double& at(std::size_t k, int c) { return w[k * static_cast<std::size_t>(classes) + static_cast<std::size_t>(c)]; }
  double at(std::size_t k, int c) const {
    return w[k * static_cast<std::size_t>(classes) + static_cast<std::size_t>(c)];
  }
  double l1(std::size_t k) const;
};

/// All network indices of `cache`, ascending.
std::vector<std::size_t> all_members(const ScoreCache& cache);

/// Mean softmax cross-entropy of sum_k w_ck z_ck over all samples, plus
/// (alpha/2) sum w^2. `members` selects and orders the cache networks.
double pruning_loss(const ScoreCache& cache, std::span<const std::size_t> members, const WeightMatrix& weights,
                    double alpha);
/// Loss and dLoss/dw in one pass.
double pruning_loss_gradient(const ScoreCache& cache, std::span<const std::size_t> members,
                             const WeightMatrix& weights, double alpha, std::vector<double>& gradient);

/// argmax_c sum_k w_ck z_ck for one sample, ties to the lowest class.
int ensemble_predict(const ScoreCache& cache, std::size_t sample, std::span<const std::size_t> members,
                     const WeightMatrix& weights);
/// Equal-weights mode: every w_ck = 1.
int ensemble_predict_equal(const ScoreCache& cache, std::size_t sample, std::span<const std::size_t> members);
std::vector<int> ensemble_predictions(const ScoreCache& cache, std::span<const std::size_t> members,
                                      const WeightMatrix* weights);  // nullptr: equal weights
/// Fraction correct in [0, 1]; nullptr weights means equal weights.
double ensemble_accuracy(const ScoreCache& cache, std::span<const std::size_t> members, const WeightMatrix* weights);
/// Accuracy of one cached network on its own.
double network_accuracy(const ScoreCache& cache, std::size_t network);

struct OptimizeOptions {
  double alpha = 0.001;
  int steps = 500;
  int eval_every = 1;
  double lr = 0.001;
};

struct OptimizeResult {
  WeightMatrix final_weights;
  WeightMatrix best_weights;
  double best_accuracy = 0.0;
  int best_step = 0;
};

/// Full-batch Adam from w = 1/n; the best-accuracy snapshot is tracked from
/// step 0, every eval_every steps and at the last step (ties to the earlier
/// step). Throws Numeric on a non-finite loss.
OptimizeResult optimize_weights(const ScoreCache& cache, std::span<const std::size_t> members,
                                const OptimizeOptions& options);

/// Row indices by descending L1 norm, ties to the lower index.
std::vector<std::size_t> rank_networks(const WeightMatrix& weights);

enum class RetainScheme { I, II, III };
std::string to_string(RetainScheme scheme);
RetainScheme retain_scheme_from_string(const std::string& name);

double retain_fraction(int i, RetainScheme scheme);

struct PruningConfig {
  std::optional<int> random_interval;  // T; nullopt means never
  int random_multiplier = 3;           // m
  double random_pool_fraction = 2.0 / 3.0;  // p
  RetainScheme scheme = RetainScheme::III;
  int n_max = 6;
  OptimizeOptions optimize;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class EliminationKind { Ranked, Random, Terminal };
std::string to_string(EliminationKind kind);

struct PruneStepResult {
  std::vector<std::size_t> members;  // S_{i+1}, ascending
  std::vector<std::size_t> removed;
  EliminationKind kind = EliminationKind::Ranked;
};

/// One elimination. `members` are cache indices aligned with the rows of
/// `weights`. Sizes below 2 return the input unchanged with kind Terminal.
PruneStepResult prune_step(std::span<const std::size_t> members, int i, const PruningConfig& cfg,
                           const WeightMatrix& weights, Rng& rng);

struct PruningRecord {
  int iteration = 0;
  std::vector<std::size_t> members;
  WeightMatrix weights;  // best snapshot
  double validation_accuracy = 0.0;
  EliminationKind kind = EliminationKind::Ranked;  // elimination applied after this record
};

struct PruningTrace {
  std::vector<PruningRecord> records;
};

PruningTrace run_pruning(const ScoreCache& validation_cache, const PruningConfig& cfg);

/// Best validation accuracy among records with n <= n_max; ties to smaller
/// n, then earlier iteration.
const PruningRecord& select_ensemble(const PruningTrace& trace, int n_max);

struct Metrics {
  double accuracy = 0.0;                   // percent
  std::vector<std::optional<double>> tpr;  // percent; nullopt for classes with no samples
  double accuracy_per_network = 0.0;
  std::size_t samples = 0;
};

Metrics report_metrics(std::span<const int> predictions, std::span<const std::uint8_t> labels, int n_networks,
                       int classes = 10);
/// accuracy (percent) / n.
double accuracy_per_network(double accuracy_percent, int n_networks);

}  // namespace d2nn
