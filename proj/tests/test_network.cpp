#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>

#include "d2nn/network.hpp"
#include "d2nn/rng.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace d2nn;

namespace {

std::vector<float> random_image(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> img(kImagePixels);
  for (auto& v : img) v = static_cast<float>(rng.uniform());
  return img;
}

OpticalProfile desk3() {
  auto p = OpticalProfile::desk();
  p.layers = 3;
  return p;
}

FrontEndSpec object_spec() {
  FrontEndSpec s;
  ObjectFilterSpec f;
  f.family = ObjectFamily::Gaussian;
  f.windows = {{1.0, -2.0, 10.0, 8.0, 0.0}};
  s.placement = f;
  return s;
}

FrontEndSpec trainable_spec() {
  FrontEndSpec s;
  s.encoding = {Channel::Phase, std::numbers::pi};
  FourierPlacement p;
  p.filter.kind = FourierKind::Trainable;
  p.aperture_scale = 1.5;
  s.placement = p;
  return s;
}

void expect_error(ErrorKind kind, const auto& fn) {
  try {
    fn();
    FAIL("no error raised");
  } catch (const Error& e) {
    CHECK(e.kind() == kind);
  }
}

}  // namespace

TEST_CASE("differential scores") {
  const double K = 0.1;
  SUBCASE("examples") {
    const std::vector<double> pos{2.0, 1.5, 3.0}, neg{1.0, 1.5, 0.0};
    const auto s = differential_scores(pos, neg, K);
    CHECK(s.z[0] == doctest::Approx(10.0 / 3.0));
    CHECK(s.z[1] == 0.0);
    CHECK(s.z[2] == 10.0);
  }
  SUBCASE("degenerate pairs") {
    const std::vector<double> pos{1.0, 0.0}, neg{1.0, 0.0};
    expect_error(ErrorKind::Degenerate, [&] { differential_scores(pos, neg, K); });
    const auto train = differential_scores(pos, neg, K, ScoreMode::Train);
    CHECK(std::isfinite(train.z[1]));
    CHECK(train.z[1] == 0.0);
    const auto tolerant = differential_scores(pos, neg, K, ScoreMode::Tolerant);
    CHECK(tolerant.z[1] == 0.0);
  }
  SUBCASE("bound and antisymmetry over random tuples") {
    Rng rng(77);
    for (int t = 0; t < 1000; ++t) {
      std::vector<double> pos(10), neg(10);
      for (int c = 0; c < 10; ++c) {
        pos[c] = rng.uniform() * std::pow(10.0, rng.uniform(-6.0, 3.0));
        neg[c] = rng.uniform() * std::pow(10.0, rng.uniform(-6.0, 3.0));
      }
      if (t % 10 == 0) neg[t % 10] = 0.0;
      const auto a = differential_scores(pos, neg, K);
      const auto b = differential_scores(neg, pos, K);
      for (int c = 0; c < 10; ++c) {
        REQUIRE(std::abs(a.z[c]) <= 10.0);
        REQUIRE(a.z[c] == -b.z[c]);
      }
    }
  }
}

TEST_CASE("softmax cross-entropy") {
  CHECK(std::abs(d2nn_loss({std::vector<double>(10, 3.7)}, 4) - std::log(10.0)) <= 1e-12);
  CHECK(std::abs(d2nn_loss({std::vector<double>(10, -10.0)}, 0) - std::log(10.0)) <= 1e-12);
  std::vector<double> big(10, 0.0);
  big[2] = 1e3;
  CHECK(d2nn_loss({big}, 2) < 1e-300);

  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> z(10);
    for (auto& v : z) v = rng.uniform(-10.0, 10.0);
    const int label = static_cast<int>(rng.below(10));
    CHECK(d2nn_loss({z}, label) == doctest::Approx(oracle::softmax_cross_entropy(z, label)).epsilon(1e-13));
    const auto g = d2nn_loss_gradient({z}, label);
    auto central = [&](int c, double h) {
      auto up = z, down = z;
      up[c] += h;
      down[c] -= h;
      return (oracle::softmax_cross_entropy(up, label) - oracle::softmax_cross_entropy(down, label)) / (2 * h);
    };
    for (int c = 0; c < 10; ++c) {
      const double fd = (4 * central(c, 5e-4) - central(c, 1e-3)) / 3;
      CHECK(std::abs(fd - g[c]) <= 1e-8 * std::max(std::abs(g[c]), 1e-3));
    }
  }
  CHECK(predicted_class(std::vector<double>{1.0, 3.0, 3.0, 2.0}) == 1);
}

TEST_CASE("forward pass") {
  const auto profile = OpticalProfile::desk();
  const auto model = D2nnModel::create(object_spec(), profile, 3);
  CHECK(model.layers.size() == 5);
  CHECK(model.parameter_count() == 5 * 64 * 64);
  const auto img = random_image(1);
  const auto a = forward(model, img);
  const auto b = forward(model, img);
  CHECK(a.signals == b.signals);
  CHECK(a.scores.z == b.scores.z);
  REQUIRE(a.signals.size() == 20);
  for (double s : a.signals) CHECK(s >= 0.0);
  for (double z : a.scores.z) CHECK(std::abs(z) <= 10.0);

  SUBCASE("dark input is degenerate") {
    expect_error(ErrorKind::Degenerate, [&] { forward(model, std::vector<float>(kImagePixels, 0.0f)); });
    const DiffractiveNetwork net(model);
    const auto tolerant = net.forward(model, std::vector<float>(kImagePixels, 0.0f), ScoreMode::Tolerant);
    for (double z : tolerant.scores.z) CHECK(z == 0.0);
  }
  SUBCASE("swapping a class's detectors negates exactly that score") {
    auto swapped = model;
    std::vector<Detector> dets(model.detectors.detectors().begin(), model.detectors.detectors().end());
    for (auto& d : dets)
      if (d.class_index == 3) d.sign = -d.sign;
    swapped.detectors = DetectorLayout(profile.grid, profile.detector_width, dets, 10);
    const auto s = forward(swapped, img);
    for (int c = 0; c < 10; ++c) CHECK(s.scores.z[c] == (c == 3 ? -a.scores.z[c] : a.scores.z[c]));
  }
  SUBCASE("precomputed phasors give identical results") {
    const DiffractiveNetwork net(model);
    const auto ph = DiffractiveNetwork::prepare(model);
    const auto r = net.forward(model, img, ScoreMode::Evaluate, &ph);
    CHECK(r.signals == a.signals);
  }
}

TEST_CASE("gradients match central finite differences") {
  const auto profile = desk3();
  const auto img = random_image(2);
  SUBCASE("object-plane filter") {
    const auto model = D2nnModel::create(object_spec(), profile, 11);
    const auto coords = gradcheck::check(model, img, 6, 200, 0, 1e-4, 1);
    REQUIRE(coords.size() == 200);
    for (const auto& c : coords) CHECK(c.relative_error() <= 1e-4);
  }
  SUBCASE("trainable Fourier filter, latents included") {
    auto model = D2nnModel::create(trainable_spec(), profile, 12);
    Rng rng(4);
    for (auto& l : model.filter_latent) l = rng.uniform(-2.0, 2.0);
    const auto coords = gradcheck::check(model, img, 1, 200, 40, 1e-4, 2);
    REQUIRE(coords.size() == 240);
    for (const auto& c : coords) CHECK(c.relative_error() <= 1e-4);
  }
}

TEST_CASE("gradient properties") {
  const auto profile = desk3();
  const auto model = D2nnModel::create(object_spec(), profile, 21);
  const auto img = random_image(3);
  const DiffractiveNetwork net(model);
  auto g1 = GradientBundle::zeros_like(model);
  auto g3 = GradientBundle::zeros_like(model);
  const double l1 = net.backward(model, img, 4, g1, 1.0);
  const double l3 = net.backward(model, img, 4, g3, 3.0);
  CHECK(l1 == l3);
  REQUIRE(g1.layers.size() == model.layers.size());
  CHECK(g1.latent.empty());
  for (std::size_t l = 0; l < g1.layers.size(); ++l) {
    REQUIRE(g1.layers[l].size() == model.layers[l].phase.size());
    for (std::size_t i = 0; i < g1.layers[l].size(); ++i)
      REQUIRE(g3.layers[l][i] == doctest::Approx(3.0 * g1.layers[l][i]).epsilon(1e-15));
  }

  // directional derivative along random directions
  Rng rng(8);
  for (int t = 0; t < 3; ++t) {
    auto plus = model, minus = model;
    double dot = 0.0;
    const double h = 1e-5;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
      for (std::size_t i = 0; i < model.layers[l].phase.size(); ++i) {
        const double d = rng.uniform(-1.0, 1.0);
        plus.layers[l].phase[i] += h * d;
        minus.layers[l].phase[i] -= h * d;
        dot += g1.layers[l][i] * d;
      }
    }
    const double fd = (gradcheck::loss_at(plus, img, 4) - gradcheck::loss_at(minus, img, 4)) / (2 * h);
    CHECK(std::abs(fd - dot) <= 1e-5 * std::abs(dot));
  }
}

TEST_CASE("checkpoints") {
  const auto dir = oracle::temp_dir("ckpt");
  auto model = D2nnModel::create(trainable_spec(), OpticalProfile::desk(), 31);
  Rng rng(2);
  for (auto& l : model.filter_latent) l = static_cast<float>(rng.uniform(-1.0, 1.0));
  const auto path = dir / "m.d2nn";
  save_checkpoint(model, path);
  const auto back = load_checkpoint(path);
  CHECK(back.profile == model.profile);
  CHECK(back.front_end == model.front_end);
  CHECK(back.filter_latent == model.filter_latent);
  REQUIRE(back.layers.size() == model.layers.size());
  for (std::size_t l = 0; l < model.layers.size(); ++l) CHECK(back.layers[l].phase == model.layers[l].phase);
  CHECK(back.temperature == model.temperature);
  CHECK(serialize_model(back) == serialize_model(model));

  const auto bytes = serialize_model(model);
  CHECK(std::memcmp(bytes.data(), "D2NN", 4) == 0);
  expect_error(ErrorKind::Checksum, [&] {
    deserialize_model(std::span<const std::uint8_t>(bytes).first(bytes.size() - 100));
  });
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x40;
  expect_error(ErrorKind::Checksum, [&] { deserialize_model(flipped); });
  auto magic = bytes;
  magic[0] = 'X';
  expect_error(ErrorKind::Format, [&] { deserialize_model(magic); });
  auto version = bytes;
  version[4] = 99;
  expect_error(ErrorKind::Version, [&] { deserialize_model(version); });

  {
    std::ofstream(dir / "short.d2nn", std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), 50);
  }
  expect_error(ErrorKind::Checksum, [&] { load_checkpoint(dir / "short.d2nn"); });
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.d2nn"), Error);
  std::filesystem::remove_all(dir);
}
