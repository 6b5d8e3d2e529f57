#include "d2nn/ensemble.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <thread>

#include "binary_io.hpp"
#include "d2nn/trainer.hpp"

namespace d2nn {

// ---------------------------------------------------------------- cache

void ScoreCache::validate() const {
  require(classes > 0, ErrorKind::Format, "score cache: class count must be positive");
  require(network_ids.size() == networks, ErrorKind::Format, "score cache: id count != network count");
  require(labels.size() == samples, ErrorKind::Format, "score cache: label count != sample count");
  require(scores.size() == samples * networks * static_cast<std::size_t>(classes), ErrorKind::Format,
          "score cache: tensor size mismatch");
  std::set<std::string> unique(network_ids.begin(), network_ids.end());
  require(unique.size() == network_ids.size(), ErrorKind::Format, "score cache: duplicate network ids");
  for (auto l : labels) require(l < classes, ErrorKind::Format, "score cache: label out of range");
  for (float z : scores) require(std::isfinite(z), ErrorKind::Format, "score cache: non-finite score");
}

ScoreCache build_score_cache(const std::vector<D2nnModel>& models, const std::vector<std::string>& ids,
                             const Split& split, int workers) {
  require(models.size() == ids.size(), ErrorKind::InvalidArgument, "one id per model is required");
  require(std::set<std::string>(ids.begin(), ids.end()).size() == ids.size(), ErrorKind::InvalidArgument,
          "network ids must be unique");
  require(!models.empty(), ErrorKind::InvalidArgument, "no models to score");
  require(split.size() > 0, ErrorKind::Data, "cannot cache scores of an empty split");
  require(workers > 0, ErrorKind::Config, "workers must be positive");
  const int classes = models.front().class_count();
  for (const auto& m : models) {
    require(m.class_count() == classes, ErrorKind::InvalidArgument, "models disagree on class count");
  }

  ScoreCache cache;
  cache.split = split.kind;
  cache.samples = split.size();
  cache.networks = models.size();
  cache.classes = classes;
  cache.network_ids = ids;
  for (const auto& img : split.images) cache.labels.push_back(img.label);
  cache.scores.assign(cache.samples * cache.networks * static_cast<std::size_t>(classes), 0.0f);

  std::vector<std::size_t> degenerate(models.size(), 0);
  std::vector<std::string> errors(models.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t k = next++; k < models.size(); k = next++) {
      try {
        const DiffractiveNetwork engine(models[k]);
        const auto phasors = DiffractiveNetwork::prepare(models[k]);
        for (std::size_t s = 0; s < cache.samples; ++s) {
          const auto r = engine.forward(models[k], split.images[s].pixels, ScoreMode::Tolerant, &phasors);
          degenerate[k] += static_cast<std::size_t>(degenerate_classes(r.signals, models[k].detectors));
          float* out = cache.scores.data() + (s * cache.networks + k) * static_cast<std::size_t>(classes);
          for (int c = 0; c < classes; ++c) out[c] = static_cast<float>(r.scores.z[c]);
        }
      } catch (const std::exception& e) {
        errors[k] = e.what();
      }
    }
  };
  const auto n_threads = std::min<std::size_t>(static_cast<std::size_t>(workers), models.size());
  if (n_threads <= 1) {
    work();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < n_threads; ++t) threads.emplace_back(work);
    for (auto& t : threads) t.join();
  }
  for (std::size_t k = 0; k < models.size(); ++k) {
    if (!errors[k].empty()) fail(ErrorKind::Numeric, "scoring network " + ids[k] + " failed: " + errors[k]);
    cache.degenerate += degenerate[k];
  }
  return cache;
}

std::vector<std::uint8_t> serialize_score_cache(const ScoreCache& cache) {
  cache.validate();
  detail::ByteWriter w;
  w.put_bytes({reinterpret_cast<const std::uint8_t*>("D2SC"), 4});
  w.put<std::uint32_t>(kScoreCacheVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(cache.split));
  w.put<std::uint64_t>(cache.samples);
  w.put<std::uint64_t>(cache.networks);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cache.classes));
  for (const auto& id : cache.network_ids) w.put_string(id);
  w.put_bytes(cache.labels);
  w.put_bytes({reinterpret_cast<const std::uint8_t*>(cache.scores.data()), cache.scores.size() * sizeof(float)});
  w.seal();
  return std::move(w.bytes());
}

ScoreCache deserialize_score_cache(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(detail::open_sealed(bytes, "D2SC", kScoreCacheVersion));
  ScoreCache cache;
  const auto tag = r.get<std::uint8_t>();
  require(tag <= static_cast<std::uint8_t>(SplitKind::Test), ErrorKind::Format, "score cache: unknown split tag");
  cache.split = static_cast<SplitKind>(tag);
  cache.samples = r.get<std::uint64_t>();
  cache.networks = r.get<std::uint64_t>();
  cache.classes = static_cast<int>(r.get<std::uint32_t>());
  require(cache.networks < (1u << 24) && cache.samples < (1ull << 32) && cache.classes > 0 && cache.classes < 4096,
          ErrorKind::Format, "score cache: implausible dimensions");
  for (std::size_t k = 0; k < cache.networks; ++k) cache.network_ids.push_back(r.get_string());
  const auto labels = r.get_bytes(cache.samples);
  cache.labels.assign(labels.begin(), labels.end());
  const std::size_t n = cache.samples * cache.networks * static_cast<std::size_t>(cache.classes);
  const auto raw = r.get_bytes(n * sizeof(float));
  cache.scores.resize(n);
  std::memcpy(cache.scores.data(), raw.data(), raw.size());
  require(r.remaining() == 0, ErrorKind::Format, "score cache: trailing bytes");
  cache.validate();
  return cache;
}

void save_score_cache(const ScoreCache& cache, const std::filesystem::path& path) {
  detail::write_file_atomic(path, serialize_score_cache(cache));
}

ScoreCache load_score_cache(const std::filesystem::path& path) {
  return deserialize_score_cache(detail::read_file(path));
}

void export_score_cache_csv(const ScoreCache& cache, const std::filesystem::path& path) {
  std::string text = "sample,label,network";
  for (int c = 0; c < cache.classes; ++c) text += ",z" + std::to_string(c);
  text += '\n';
  char buf[32];
  for (std::size_t s = 0; s < cache.samples; ++s) {
    for (std::size_t k = 0; k < cache.networks; ++k) {
      text += std::to_string(s) + "," + std::to_string(cache.labels[s]) + "," + cache.network_ids[k];
      for (float z : cache.row(s, k)) {
        std::snprintf(buf, sizeof buf, ",%.9g", static_cast<double>(z));
        text += buf;
      }
      text += '\n';
    }
  }
  detail::write_text_atomic(path, text);
}

// ---------------------------------------------------------------- weights

WeightMatrix WeightMatrix::filled(std::size_t networks, int classes, double value) {
  return {networks, classes, std::vector<double>(networks * static_cast<std::size_t>(classes), value)};
}

double WeightMatrix::l1(std::size_t k) const {
  double sum = 0.0;
  for (int c = 0; c < classes; ++c) sum += std::abs(at(k, c));
  return sum;
}

std::vector<std::size_t> all_members(const ScoreCache& cache) {
  std::vector<std::size_t> m(cache.networks);
  std::iota(m.begin(), m.end(), std::size_t{0});
  return m;
}

namespace {

void check_alignment(const ScoreCache& cache, std::span<const std::size_t> members, const WeightMatrix* weights) {
  require(!members.empty(), ErrorKind::InvalidArgument, "ensemble has no members");
  for (auto k : members) require(k < cache.networks, ErrorKind::InvalidArgument, "member index out of range");
  if (weights != nullptr) {
    require(weights->networks == members.size() && weights->classes == cache.classes &&
                weights->w.size() == members.size() * static_cast<std::size_t>(cache.classes),
            ErrorKind::InvalidArgument, "weight matrix does not align with the members");
  }
}

// z_c = sum_k w_kc z_kc; equal weights when w is null.
void combine(const ScoreCache& cache, std::size_t s, std::span<const std::size_t> members, const WeightMatrix* w,
             std::vector<double>& z) {
  z.assign(static_cast<std::size_t>(cache.classes), 0.0);
  for (std::size_t j = 0; j < members.size(); ++j) {
    const auto row = cache.row(s, members[j]);
    for (int c = 0; c < cache.classes; ++c) {
      z[c] += (w != nullptr ? w->at(j, c) : 1.0) * static_cast<double>(row[c]);
    }
  }
}

}  // namespace

double pruning_loss_gradient(const ScoreCache& cache, std::span<const std::size_t> members,
                             const WeightMatrix& weights, double alpha, std::vector<double>& gradient) {
  check_alignment(cache, members, &weights);
  require(cache.samples > 0, ErrorKind::InvalidArgument, "score cache is empty");
  const auto C = static_cast<std::size_t>(cache.classes);
  gradient.assign(weights.w.size(), 0.0);
  std::vector<double> z, p(C);
  double sce = 0.0;
  const double inv_s = 1.0 / static_cast<double>(cache.samples);
  for (std::size_t s = 0; s < cache.samples; ++s) {
    combine(cache, s, members, &weights, z);
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < C; ++c) sum += p[c] = std::exp(z[c] - zmax);
    sce += zmax + std::log(sum) - z[cache.labels[s]];
    for (auto& v : p) v /= sum;
    p[cache.labels[s]] -= 1.0;
    for (std::size_t j = 0; j < members.size(); ++j) {
      const auto row = cache.row(s, members[j]);
      double* g = gradient.data() + j * C;
      for (std::size_t c = 0; c < C; ++c) g[c] += inv_s * p[c] * static_cast<double>(row[c]);
    }
    p[cache.labels[s]] += 1.0;
  }
  double l2 = 0.0;
  for (std::size_t i = 0; i < weights.w.size(); ++i) {
    l2 += weights.w[i] * weights.w[i];
    gradient[i] += alpha * weights.w[i];
  }
  return sce * inv_s + 0.5 * alpha * l2;
}

double pruning_loss(const ScoreCache& cache, std::span<const std::size_t> members, const WeightMatrix& weights,
                    double alpha) {
  std::vector<double> unused;
  return pruning_loss_gradient(cache, members, weights, alpha, unused);
}

int ensemble_predict(const ScoreCache& cache, std::size_t sample, std::span<const std::size_t> members,
                     const WeightMatrix& weights) {
  check_alignment(cache, members, &weights);
  std::vector<double> z;
  combine(cache, sample, members, &weights, z);
  return predicted_class(z);
}

int ensemble_predict_equal(const ScoreCache& cache, std::size_t sample, std::span<const std::size_t> members) {
  check_alignment(cache, members, nullptr);
  std::vector<double> z;
  combine(cache, sample, members, nullptr, z);
  return predicted_class(z);
}

std::vector<int> ensemble_predictions(const ScoreCache& cache, std::span<const std::size_t> members,
                                      const WeightMatrix* weights) {
  check_alignment(cache, members, weights);
  std::vector<int> out(cache.samples);
  std::vector<double> z;
  for (std::size_t s = 0; s < cache.samples; ++s) {
    combine(cache, s, members, weights, z);
    out[s] = predicted_class(z);
  }
  return out;
}

double ensemble_accuracy(const ScoreCache& cache, std::span<const std::size_t> members, const WeightMatrix* weights) {
  require(cache.samples > 0, ErrorKind::InvalidArgument, "score cache is empty");
  const auto pred = ensemble_predictions(cache, members, weights);
  std::size_t correct = 0;
  for (std::size_t s = 0; s < cache.samples; ++s) correct += pred[s] == cache.labels[s];
  return static_cast<double>(correct) / static_cast<double>(cache.samples);
}

double network_accuracy(const ScoreCache& cache, std::size_t network) {
  const std::size_t member[] = {network};
  return ensemble_accuracy(cache, member, nullptr);
}

OptimizeResult optimize_weights(const ScoreCache& cache, std::span<const std::size_t> members,
                                const OptimizeOptions& options) {
  check_alignment(cache, members, nullptr);
  require(cache.samples > 0, ErrorKind::InvalidArgument, "score cache is empty");
  require(options.steps >= 0 && options.eval_every > 0 && options.lr > 0.0 && options.alpha >= 0.0,
          ErrorKind::Config, "invalid weight-optimization options");

  WeightMatrix w = WeightMatrix::filled(members.size(), cache.classes, 1.0 / static_cast<double>(members.size()));
  OptimizeResult result{w, w, ensemble_accuracy(cache, members, &w), 0};
  AdamState adam = AdamState::zeros(w.w.size());
  std::vector<double> grad;
  for (int step = 1; step <= options.steps; ++step) {
    const double loss = pruning_loss_gradient(cache, members, w, options.alpha, grad);
    if (!std::isfinite(loss)) fail(ErrorKind::Numeric, "non-finite pruning loss at step " + std::to_string(step));
    adam_step(w.w, grad, adam, options.lr);
    if (step % options.eval_every == 0 || step == options.steps) {
      const double acc = ensemble_accuracy(cache, members, &w);
      if (acc > result.best_accuracy) {
        result.best_accuracy = acc;
        result.best_weights = w;
        result.best_step = step;
      }
    }
  }
  result.final_weights = std::move(w);
  return result;
}

std::vector<std::size_t> rank_networks(const WeightMatrix& weights) {
  std::vector<std::size_t> order(weights.networks);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> l1(weights.networks);
  for (std::size_t k = 0; k < weights.networks; ++k) l1[k] = weights.l1(k);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return l1[a] > l1[b]; });
  return order;
}

// ---------------------------------------------------------------- pruning

std::string to_string(RetainScheme scheme) {
  switch (scheme) {
    case RetainScheme::I: return "i";
    case RetainScheme::II: return "ii";
    case RetainScheme::III: return "iii";
  }
  return "?";
}

RetainScheme retain_scheme_from_string(const std::string& name) {
  if (name == "i") return RetainScheme::I;
  if (name == "ii") return RetainScheme::II;
  if (name == "iii") return RetainScheme::III;
  fail(ErrorKind::Config, "unknown retain scheme '" + name + "' (expected i, ii or iii)");
}

double retain_fraction(int i, RetainScheme scheme) {
  require(i >= 0, ErrorKind::InvalidArgument, "iteration must be >= 0");
  switch (scheme) {
    case RetainScheme::I: return 0.98;
    case RetainScheme::II: return 0.98 + (0.9 - 0.98) * std::exp(-i / 2.0);
    case RetainScheme::III: return i < 20 ? 0.9 : (i < 40 ? 0.95 : 0.98);
  }
  fail(ErrorKind::Config, "unknown retain scheme");
}

std::string to_string(EliminationKind kind) {
  switch (kind) {
    case EliminationKind::Ranked: return "ranked";
    case EliminationKind::Random: return "random";
    case EliminationKind::Terminal: return "terminal";
  }
  return "?";
}

void PruningConfig::validate() const {
  require(!random_interval || *random_interval > 0, ErrorKind::Config, "random interval T must be positive");
  require(random_multiplier > 0, ErrorKind::Config, "random multiplier m must be positive");
  require(random_pool_fraction > 0.0 && random_pool_fraction <= 1.0, ErrorKind::Config, "p must lie in (0, 1]");
  require(n_max >= 1, ErrorKind::Config, "N_max must be >= 1");
  require(optimize.steps >= 0 && optimize.eval_every > 0 && optimize.lr > 0.0 && optimize.alpha >= 0.0,
          ErrorKind::Config, "invalid weight-optimization options");
}

PruneStepResult prune_step(std::span<const std::size_t> members, int i, const PruningConfig& cfg,
                           const WeightMatrix& weights, Rng& rng) {
  require(weights.networks == members.size(), ErrorKind::InvalidArgument, "weights do not align with members");
  const std::size_t n = members.size();
  PruneStepResult out;
  if (n < 2) {
    out.members.assign(members.begin(), members.end());
    out.kind = EliminationKind::Terminal;
    return out;
  }
  const double r = retain_fraction(i, cfg.scheme);
  const auto n_d = static_cast<std::size_t>(std::max(1.0, std::round(static_cast<double>(n) * (1.0 - r))));
  const auto ranking = rank_networks(weights);

  std::vector<std::size_t> removed_rows;
  if (cfg.random_interval && i % *cfg.random_interval == 0) {
    out.kind = EliminationKind::Random;
    const auto bottom = std::min<std::size_t>(
        n, static_cast<std::size_t>(std::ceil(cfg.random_pool_fraction * static_cast<double>(n) - 1e-9)));
    std::vector<std::size_t> pool(ranking.end() - static_cast<std::ptrdiff_t>(bottom), ranking.end());
    const std::size_t count = std::min({static_cast<std::size_t>(cfg.random_multiplier) * n_d, n - 1, bottom});
    rng.shuffle(std::span<std::size_t>(pool));
    removed_rows.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(count));
  } else {
    out.kind = EliminationKind::Ranked;
    const std::size_t count = std::min(n_d, n - 1);
    removed_rows.assign(ranking.end() - static_cast<std::ptrdiff_t>(count), ranking.end());
  }
  std::vector<bool> drop(n, false);
  for (auto row : removed_rows) drop[row] = true;
  for (std::size_t j = 0; j < n; ++j) (drop[j] ? out.removed : out.members).push_back(members[j]);
  std::sort(out.removed.begin(), out.removed.end());
  return out;
}

PruningTrace run_pruning(const ScoreCache& validation_cache, const PruningConfig& cfg) {
  cfg.validate();
  require(validation_cache.split != SplitKind::Test, ErrorKind::InvalidArgument,
          "pruning must not see the test split");
  Rng rng(mix_seed(cfg.seed, 0x70727565));
  PruningTrace trace;
  std::vector<std::size_t> members = all_members(validation_cache);
  for (int i = 1;; ++i) {
    const auto opt = optimize_weights(validation_cache, members, cfg.optimize);
    PruningRecord rec{i, members, opt.best_weights, opt.best_accuracy, EliminationKind::Terminal};
    if (members.size() < 2) {
      trace.records.push_back(std::move(rec));
      break;
    }
    auto step = prune_step(members, i, cfg, opt.best_weights, rng);
    rec.kind = step.kind;
    trace.records.push_back(std::move(rec));
    members = std::move(step.members);
  }
  return trace;
}

const PruningRecord& select_ensemble(const PruningTrace& trace, int n_max) {
  require(n_max >= 1, ErrorKind::InvalidArgument, "N_max must be >= 1");
  const PruningRecord* best = nullptr;
  for (const auto& rec : trace.records) {
    if (rec.members.size() > static_cast<std::size_t>(n_max)) continue;
    if (best == nullptr || rec.validation_accuracy > best->validation_accuracy ||
        (rec.validation_accuracy == best->validation_accuracy && rec.members.size() < best->members.size())) {
      best = &rec;
    }
  }
  require(best != nullptr, ErrorKind::InvalidArgument, "no pruning record satisfies N_max");
  return *best;
}

// ---------------------------------------------------------------- metrics

double accuracy_per_network(double accuracy_percent, int n_networks) {
  require(n_networks > 0, ErrorKind::InvalidArgument, "network count must be positive");
  return accuracy_percent / n_networks;
}

Metrics report_metrics(std::span<const int> predictions, std::span<const std::uint8_t> labels, int n_networks,
                       int classes) {
  require(predictions.size() == labels.size(), ErrorKind::InvalidArgument, "predictions and labels differ in length");
  require(!labels.empty(), ErrorKind::InvalidArgument, "no predictions to score");
  std::vector<std::size_t> total(classes, 0), hit(classes, 0);
  std::size_t correct = 0;
  for (std::size_t s = 0; s < labels.size(); ++s) {
    require(labels[s] < classes, ErrorKind::InvalidArgument, "label out of range");
    ++total[labels[s]];
    if (predictions[s] == labels[s]) {
      ++hit[labels[s]];
      ++correct;
    }
  }
  Metrics m;
  m.samples = labels.size();
  m.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(labels.size());
  for (int c = 0; c < classes; ++c) {
    if (total[c] == 0) {
      m.tpr.emplace_back(std::nullopt);
    } else {
      m.tpr.emplace_back(100.0 * static_cast<double>(hit[c]) / static_cast<double>(total[c]));
    }
  }
  m.accuracy_per_network = accuracy_per_network(m.accuracy, n_networks);
  return m;
}

}  // namespace d2nn
