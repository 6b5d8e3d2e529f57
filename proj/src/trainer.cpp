#include "d2nn/trainer.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <numeric>
#include <thread>

#include <nlohmann/json.hpp>

#include "d2nn/rng.hpp"

namespace d2nn {

void TrainHyperparams::validate() const {
  require(batch_size > 0, ErrorKind::Config, "batch_size must be positive");
  require(epochs > 0, ErrorKind::Config, "epochs must be positive");
  require(lr0 > 0.0 && std::isfinite(lr0), ErrorKind::Config, "lr0 must be positive");
  require(lr_decay > 0.0 && lr_decay <= 1.0, ErrorKind::Config, "lr_decay must lie in (0, 1]");
  require(decay_every > 0, ErrorKind::Config, "decay_every must be positive");
  require(flip_probability >= 0.0 && flip_probability <= 1.0, ErrorKind::Config,
          "flip_probability must lie in [0, 1]");
  require(precision == Precision::Double, ErrorKind::Config, "only double precision is supported");
}

AdamState AdamState::zeros(std::size_t n) {
  AdamState s;
  s.m.assign(n, 0.0);
  s.v.assign(n, 0.0);
  return s;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr) {
  require(params.size() == grads.size() && state.m.size() == params.size() && state.v.size() == params.size(),
          ErrorKind::InvalidArgument, "Adam: parameter, gradient and moment shapes differ");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      fail(ErrorKind::Numeric, "non-finite gradient at parameter " + std::to_string(i) + " (value " +
                                   std::to_string(grads[i]) + ", Adam step " + std::to_string(state.step + 1) + ")");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
  }
}

double lr_schedule(int epoch, const TrainHyperparams& hp) {
  require(epoch >= 0, ErrorKind::InvalidArgument, "epoch must be >= 0");
  return hp.lr0 * std::pow(hp.lr_decay, epoch / hp.decay_every);
}

std::string EpochRecord::to_json_line() const {
  nlohmann::json j = {{"epoch", epoch},
                      {"loss", loss},
                      {"train_accuracy", train_accuracy},
                      {"validation_accuracy", validation_accuracy},
                      {"lr", lr},
                      {"wall_time", wall_time}};
  return j.dump();
}

double evaluate_accuracy(const D2nnModel& model, const Split& split) {
  require(split.size() > 0, ErrorKind::Data, "cannot evaluate on an empty " + to_string(split.kind) + " split");
  const DiffractiveNetwork engine(model);
  const auto phasors = DiffractiveNetwork::prepare(model);
  std::size_t correct = 0;
  for (const auto& img : split.images) {
    const auto r = engine.forward(model, img.pixels, ScoreMode::Tolerant, &phasors);
    if (predicted_class(r.scores.z) == img.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(split.size());
}

namespace {

std::vector<double> flatten(const D2nnModel& model) {
  std::vector<double> flat;
  flat.reserve(model.parameter_count());
  for (const auto& l : model.layers) flat.insert(flat.end(), l.phase.begin(), l.phase.end());
  flat.insert(flat.end(), model.filter_latent.begin(), model.filter_latent.end());
  return flat;
}

std::vector<double> flatten(const GradientBundle& g) {
  std::vector<double> flat;
  for (const auto& l : g.layers) flat.insert(flat.end(), l.begin(), l.end());
  flat.insert(flat.end(), g.latent.begin(), g.latent.end());
  return flat;
}

void unflatten(std::span<const double> flat, D2nnModel& model) {
  std::size_t k = 0;
  for (auto& l : model.layers) {
    for (auto& p : l.phase) p = flat[k++];
  }
  for (auto& p : model.filter_latent) p = flat[k++];
}

void snap_to_float(D2nnModel& model) {
  for (auto& l : model.layers) {
    for (auto& p : l.phase) p = static_cast<float>(p);
  }
  for (auto& p : model.filter_latent) p = static_cast<float>(p);
}

}  // namespace

TrainResult train_network(const FrontEndSpec& spec, const OpticalProfile& profile, const Split& train,
                          const Split& validation, const TrainHyperparams& hp, const EpochCallback& on_epoch) {
  hp.validate();
  require(train.size() > 0, ErrorKind::Data, "training split is empty");
  require(validation.size() > 0, ErrorKind::Data, "validation split is empty");

  const auto start = std::chrono::steady_clock::now();
  D2nnModel model = D2nnModel::create(spec, profile, mix_seed(hp.seed, 0));
  const DiffractiveNetwork engine(model);
  Rng rng(mix_seed(hp.seed, 1));
  AdamState adam = AdamState::zeros(model.parameter_count());
  std::vector<double> params = flatten(model);

  std::vector<std::size_t> order(train.size());
  TrainResult result{model, -1, -1.0, {}};

  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    const double lr = lr_schedule(epoch, hp);
    double loss_sum = 0.0;
    std::size_t correct = 0;

    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(hp.batch_size)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(hp.batch_size));
      const double weight = 1.0 / static_cast<double>(end - begin);
      GradientBundle grads = GradientBundle::zeros_like(model);
      const auto phasors = DiffractiveNetwork::prepare(model);
      for (std::size_t b = begin; b < end; ++b) {
        const LabeledImage& sample = train.images[order[b]];
        const bool flip = rng.bernoulli(hp.flip_probability);
        const Image pixels = flip ? flip_left_right(sample.pixels) : sample.pixels;
        ForwardResult fwd;
        loss_sum += engine.backward(model, pixels, sample.label, grads, weight, ScoreMode::Train, &fwd, &phasors);
        if (predicted_class(fwd.scores.z) == sample.label) ++correct;
      }
      if (!grads.finite()) {
        fail(ErrorKind::Numeric, "non-finite gradient in epoch " + std::to_string(epoch) + ", batch starting at " +
                                     std::to_string(begin) + " (seed " + std::to_string(hp.seed) + ")");
      }
      const auto flat_grads = flatten(grads);
      adam_step(params, flat_grads, adam, lr);
      unflatten(params, model);
    }

    snap_to_float(model);
    params = flatten(model);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(train.size());
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
    rec.validation_accuracy = evaluate_accuracy(model, validation);
    rec.lr = lr;
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!std::isfinite(rec.loss)) fail(ErrorKind::Numeric, "non-finite loss in epoch " + std::to_string(epoch));
    result.log.push_back(rec);
    if (rec.validation_accuracy > result.best_validation_accuracy) {
      result.best = model;
      result.best_epoch = epoch;
      result.best_validation_accuracy = rec.validation_accuracy;
    }
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

std::uint64_t member_seed(std::uint64_t run_seed, std::size_t index) { return mix_seed(run_seed, index); }

std::vector<PoolMember> train_pool(const std::vector<FrontEndSpec>& specs, const OpticalProfile& profile,
                                   const Split& train, const Split& validation, TrainHyperparams hp,
                                   std::uint64_t run_seed, int workers, const PoolCallbacks& callbacks) {
  require(workers > 0, ErrorKind::Config, "workers must be positive");
  std::vector<PoolMember> members(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    members[i].index = i;
    members[i].seed = member_seed(run_seed, i);
  }
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < specs.size(); i = next++) {
      PoolMember& m = members[i];
      if (callbacks.skip && callbacks.skip(i)) {
        m.skipped = true;
        continue;
      }
      try {
        TrainHyperparams member_hp = hp;
        member_hp.seed = m.seed;
        EpochCallback epoch_cb;
        if (callbacks.on_epoch) epoch_cb = [&](const EpochRecord& r) { callbacks.on_epoch(i, r); };
        TrainResult r = train_network(specs[i], profile, train, validation, member_hp, epoch_cb);
        if (callbacks.on_complete) {
          callbacks.on_complete(i, r);
        } else {
          m.result = std::move(r);
        }
      } catch (const std::exception& e) {
        m.error = e.what();
      }
    }
  };
  const int n_threads = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(workers), specs.size()));
  if (n_threads <= 1) {
    work();
  } else {
    std::vector<std::thread> threads;
    for (int t = 0; t < n_threads; ++t) threads.emplace_back(work);
    for (auto& t : threads) t.join();
  }
  return members;
}

}  // namespace d2nn
