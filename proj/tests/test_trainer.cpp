#include <doctest.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <limits>
#include <mutex>

#include <nlohmann/json.hpp>

#include "d2nn/trainer.hpp"
#include "oracles.hpp"

using namespace d2nn;

namespace {

struct Fixture {
  std::filesystem::path dir;
  Split train, validation;
};

// 5 x 60 train-origin records, 40 of them validation.
const Fixture& small_data() {
  static const Fixture f = [] {
    Fixture x;
    x.dir = oracle::temp_dir("trainer");
    write_synthetic_cifar(x.dir, 60, 10, 3);
    auto [t, v] = load_train_validation(x.dir, 40);
    x.train = t.head(48);
    x.validation = v.head(24);
    std::filesystem::remove_all(x.dir);
    return x;
  }();
  return f;
}

FrontEndSpec object_spec(double sx = 12.0) {
  FrontEndSpec s;
  ObjectFilterSpec f;
  f.family = ObjectFamily::Gaussian;
  f.windows = {{0.0, 0.0, sx, sx, 0.0}};
  s.placement = f;
  return s;
}

TrainHyperparams quick(int epochs) {
  TrainHyperparams hp;
  hp.epochs = epochs;
  hp.seed = 17;
  return hp;
}

}  // namespace

TEST_CASE("Adam against a scalar reference") {
  // f(x, y) = 3 (x - 1)^2 + 0.5 (y + 2)^2 + x y
  auto grad = [](double x, double y) { return std::pair{6 * (x - 1) + y, (y + 2) + x}; };
  std::vector<double> p{0.3, -0.7};
  auto state = AdamState::zeros(2);
  oracle::ScalarAdam ax, ay;
  double rx = 0.3, ry = -0.7;
  for (int t = 0; t < 10; ++t) {
    const auto [gx, gy] = grad(p[0], p[1]);
    const std::vector<double> g{gx, gy};
    adam_step(p, g, state, 0.05);
    const auto [hx, hy] = grad(rx, ry);
    const double nx = ax.update(rx, hx, 0.05), ny = ay.update(ry, hy, 0.05);
    rx = nx;
    ry = ny;
    CHECK(std::abs(p[0] - rx) <= 1e-12);
    CHECK(std::abs(p[1] - ry) <= 1e-12);
  }
  CHECK(state.step == 10);
  CHECK(state.beta1 == 0.9);
  CHECK(state.beta2 == 0.999);
  CHECK(state.epsilon == 1e-8);
}

TEST_CASE("Adam edge cases") {
  SUBCASE("zero gradient from a fresh state") {
    std::vector<double> p{1.0, -2.0, 3.0};
    auto s = AdamState::zeros(3);
    adam_step(p, std::vector<double>(3, 0.0), s, 0.1);
    CHECK(p == std::vector<double>{1.0, -2.0, 3.0});
  }
  SUBCASE("first step with unit gradient") {
    std::vector<double> p(4, 0.0);
    auto s = AdamState::zeros(4);
    adam_step(p, std::vector<double>(4, 1.0), s, 0.01);
    for (double v : p) CHECK(v == doctest::Approx(-0.01 / (1.0 + 1e-8)).epsilon(1e-14));
  }
  SUBCASE("non-finite gradient aborts before any update") {
    std::vector<double> p{1.0, 2.0};
    auto s = AdamState::zeros(2);
    try {
      adam_step(p, std::vector<double>{0.5, std::numeric_limits<double>::quiet_NaN()}, s, 0.1);
      FAIL("expected a numeric error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Numeric);
      CHECK(std::string(e.what()).find("parameter 1") != std::string::npos);
    }
    CHECK(p == std::vector<double>{1.0, 2.0});
    CHECK(s.step == 0);
    CHECK(s.m == std::vector<double>{0.0, 0.0});
  }
}

TEST_CASE("learning-rate schedule") {
  CHECK(lr_schedule(0) == 0.001);
  CHECK(lr_schedule(7) == 0.001);
  CHECK(lr_schedule(8) == 0.0007);
  CHECK(lr_schedule(16) == 0.00049);
  for (int e = 1; e < 60; ++e) CHECK(lr_schedule(e) <= lr_schedule(e - 1));
  CHECK_THROWS_AS(lr_schedule(-1), Error);
}

TEST_CASE("hyperparameter validation") {
  TrainHyperparams hp;
  CHECK_NOTHROW(hp.validate());
  CHECK(hp.batch_size == 8);
  CHECK(hp.epochs == 50);
  auto bad = hp;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = hp;
  bad.flip_probability = 1.5;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = hp;
  bad.precision = Precision::Single;
  try {
    bad.validate();
    FAIL("single precision accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
  }
}

TEST_CASE("single-network training") {
  const auto& data = small_data();
  const auto profile = OpticalProfile::desk();
  const auto hp = quick(3);
  std::vector<EpochRecord> seen;
  const auto a = train_network(object_spec(), profile, data.train, data.validation, hp,
                               [&](const EpochRecord& r) { seen.push_back(r); });
  REQUIRE(a.log.size() == 3);
  CHECK(seen.size() == 3);
  for (int e = 0; e < 3; ++e) {
    CHECK(a.log[e].epoch == e);
    CHECK(a.log[e].lr == lr_schedule(e, hp));
    CHECK(std::isfinite(a.log[e].loss));
  }
  CHECK(a.best_validation_accuracy >= a.log.back().validation_accuracy);
  CHECK(a.best_validation_accuracy == a.log[a.best_epoch].validation_accuracy);
  for (int e = 0; e < a.best_epoch; ++e) CHECK(a.log[e].validation_accuracy < a.best_validation_accuracy);
  CHECK(evaluate_accuracy(a.best, data.validation) == a.best_validation_accuracy);

  // parameters are float32 values, so a checkpoint roundtrip is lossless
  CHECK(deserialize_model(serialize_model(a.best)).layers[0].phase == a.best.layers[0].phase);

  const auto b = train_network(object_spec(), profile, data.train, data.validation, hp);
  REQUIRE(b.log.size() == a.log.size());
  for (std::size_t e = 0; e < a.log.size(); ++e) {
    CHECK(a.log[e].loss == b.log[e].loss);
    CHECK(a.log[e].train_accuracy == b.log[e].train_accuracy);
    CHECK(a.log[e].validation_accuracy == b.log[e].validation_accuracy);
  }
  CHECK(serialize_model(a.best) == serialize_model(b.best));

  const auto line = nlohmann::json::parse(a.log[0].to_json_line());
  for (const char* key : {"epoch", "loss", "train_accuracy", "validation_accuracy", "lr", "wall_time"})
    CHECK(line.contains(key));

  CHECK_THROWS_AS(train_network(object_spec(), profile, Split{}, data.validation, hp), Error);
  CHECK_THROWS_AS(train_network(object_spec(), profile, data.train, Split{}, hp), Error);
}

TEST_CASE("evaluation never augments") {
  const auto& data = small_data();
  const auto model = D2nnModel::create(object_spec(), OpticalProfile::desk(), 5);
  std::size_t correct = 0;
  for (const auto& s : data.validation.images) {
    const auto r = forward(model, s.pixels);
    correct += predicted_class(r.scores.z) == s.label;
  }
  CHECK(evaluate_accuracy(model, data.validation) ==
        static_cast<double>(correct) / static_cast<double>(data.validation.size()));
}

TEST_CASE("pool training") {
  const auto& data = small_data();
  const auto profile = OpticalProfile::desk();
  const auto hp = quick(2);
  const std::vector<FrontEndSpec> specs{object_spec(8.0), object_spec(12.0), object_spec(16.0)};

  CHECK(train_pool({}, profile, data.train, data.validation, hp, 1, 4).empty());

  std::mutex mu;
  std::vector<std::vector<std::uint8_t>> one(3), four(3);
  auto collect = [&](auto& into) {
    PoolCallbacks cb;
    cb.on_complete = [&](std::size_t i, const TrainResult& r) {
      std::lock_guard lock(mu);
      into[i] = serialize_model(r.best);
    };
    return cb;
  };
  const auto r1 = train_pool(specs, profile, data.train, data.validation, hp, 99, 1, collect(one));
  const auto r4 = train_pool(specs, profile, data.train, data.validation, hp, 99, 4, collect(four));
  REQUIRE(r1.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(r1[i].error.empty());
    CHECK(r1[i].seed == member_seed(99, i));
    CHECK(!one[i].empty());
    CHECK(one[i] == four[i]);
  }
  CHECK(one[0] != one[1]);

  SUBCASE("retraining one member alone reproduces it") {
    auto solo = hp;
    solo.seed = member_seed(99, 2);
    const auto r = train_network(specs[2], profile, data.train, data.validation, solo);
    CHECK(serialize_model(r.best) == one[2]);
  }
  SUBCASE("checkpoint files of a pool") {
    const auto dir = oracle::temp_dir("pool");
    PoolCallbacks cb;
    cb.on_complete = [&](std::size_t i, const TrainResult& r) {
      save_checkpoint(r.best, dir / ("net_" + std::to_string(i) + ".d2nn"));
    };
    train_pool(specs, profile, data.train, data.validation, hp, 99, 2, cb);
    for (std::size_t i = 0; i < 3; ++i) {
      const auto m = load_checkpoint(dir / ("net_" + std::to_string(i) + ".d2nn"));
      CHECK(serialize_model(m) == one[i]);
    }
    std::filesystem::remove_all(dir);
  }
  SUBCASE("failures are recorded per member, skips honored") {
    auto broken = specs;
    std::get<ObjectFilterSpec>(broken[1].placement).windows.clear();
    PoolCallbacks cb;
    cb.skip = [](std::size_t i) { return i == 2; };
    const auto r = train_pool(broken, profile, data.train, data.validation, hp, 99, 2, cb);
    CHECK(r[0].error.empty());
    CHECK(r[0].result.has_value());
    CHECK(!r[1].error.empty());
    CHECK(!r[1].result.has_value());
    CHECK(r[2].skipped);
    CHECK(!r[2].result.has_value());
  }
}

TEST_CASE("desk-scale training lowers the loss") {
  const auto dir = oracle::temp_dir("desk");
  write_synthetic_cifar(dir, 1200, 10, 11);
  auto [train, validation] = load_train_validation(dir, 1000);
  std::filesystem::remove_all(dir);
  REQUIRE(train.size() == 5000);
  TrainHyperparams hp;
  hp.epochs = 5;
  hp.seed = 3;
  const auto r = train_network(object_spec(), OpticalProfile::desk(), train, validation.head(500), hp);
  REQUIRE(r.log.size() == 5);
  MESSAGE("epoch losses " << r.log.front().loss << " -> " << r.log.back().loss << ", best validation accuracy "
                          << r.best_validation_accuracy);
  CHECK(r.log.back().loss < r.log.front().loss);
  CHECK(r.best_validation_accuracy > 0.2);
}
