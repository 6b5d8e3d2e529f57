// Exercises the shared library through d2nn.h only.

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "d2nn/d2nn.h"
#include "oracles.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kFixture = fs::path(D2NN_FIXTURE_DIR) / "cifar-synth";

struct Log {
  std::vector<std::string> info, warnings;
  static void sink(int level, const char* msg, void* user) {
    auto* self = static_cast<Log*>(user);
    (level == D2NN_LOG_WARNING ? self->warnings : self->info).emplace_back(msg);
  }
  bool saw(const std::string& s) const {
    for (const auto& m : info)
      if (m.find(s) != std::string::npos) return true;
    return false;
  }
};

std::string tiny_config(const fs::path& out) {
  return R"({"data_dir": ")" + kFixture.string() + R"(", "output_dir": ")" + out.string() +
         R"(", "pool": {"total": 3}, "repeat": 2, "workers": 2,
  "subsets": {"train": 80, "validation": 50, "test": 40}, "validation_count": 100,
  "train": {"epochs": 1}, "pruning": [{"name": "capi", "n_max": 2, "opt_steps": 10}]})";
}

}  // namespace

TEST_CASE("status names and errors") {
  CHECK(std::string(d2nn_version()).size() > 0);
  CHECK(std::string(d2nn_status_name(D2NN_OK)) == "ok");
  CHECK(std::string(d2nn_status_name(D2NN_ERR_CHECKSUM)) == "checksum mismatch");
  CHECK(std::string(d2nn_status_name(static_cast<d2nn_status>(99))) == "unknown status");
  for (int s = 1; s <= 12; ++s) CHECK(std::string(d2nn_status_name(static_cast<d2nn_status>(s))) != "unknown status");

  double apn = 0.0;
  CHECK(d2nn_accuracy_per_network(60.35, 12, &apn) == D2NN_OK);
  CHECK(std::round(apn * 1000) / 1000 == 5.029);
  CHECK(std::string(d2nn_last_error()).empty());
  CHECK(d2nn_accuracy_per_network(60.0, 0, &apn) == D2NN_ERR_INVALID_ARGUMENT);
  CHECK(!std::string(d2nn_last_error()).empty());
  CHECK(d2nn_accuracy_per_network(60.0, 1, nullptr) == D2NN_ERR_INVALID_ARGUMENT);

  d2nn_model* m = nullptr;
  CHECK(d2nn_model_load(nullptr, &m) == D2NN_ERR_INVALID_ARGUMENT);
  CHECK(d2nn_model_load("/nonexistent/model.d2nn", &m) != D2NN_OK);
  CHECK(m == nullptr);
  d2nn_cache* c = nullptr;
  CHECK(d2nn_cache_load("/nonexistent/v.d2sc", &c) != D2NN_OK);
  CHECK(d2nn_write_synthetic_cifar(nullptr, 10, 10, 1) == D2NN_ERR_INVALID_ARGUMENT);
  d2nn_run* run = nullptr;
  CHECK(d2nn_run_open(nullptr, nullptr, nullptr, nullptr, &run) == D2NN_ERR_CONFIG);
  CHECK(std::string(d2nn_last_error()).find("data_dir") != std::string::npos);
  CHECK(d2nn_run_open(nullptr, nullptr, nullptr, nullptr, nullptr) == D2NN_ERR_INVALID_ARGUMENT);
  CHECK(d2nn_run_prepare(nullptr) == D2NN_ERR_INVALID_ARGUMENT);
  d2nn_model_free(nullptr);
  d2nn_cache_free(nullptr);
  d2nn_run_free(nullptr);
}

TEST_CASE("corrupt checkpoint through the C API") {
  const auto dir = oracle::temp_dir("capi-bad");
  std::ofstream(dir / "junk.d2nn", std::ios::binary) << "D2NN plus nothing useful at all, padded to be long enough";
  d2nn_model* m = nullptr;
  CHECK(d2nn_model_load((dir / "junk.d2nn").c_str(), &m) == D2NN_ERR_VERSION);  // bytes 4..7 are " plu"
  std::ofstream(dir / "junk.d2sc", std::ios::binary) << "XXXX plus nothing useful";
  d2nn_cache* c = nullptr;
  CHECK(d2nn_cache_load((dir / "junk.d2sc").c_str(), &c) == D2NN_ERR_FORMAT);
  fs::remove_all(dir);
}

TEST_CASE("a run over the fixture data") {
  REQUIRE(fs::exists(kFixture / "data_batch_1.bin"));
  const auto dir = oracle::temp_dir("capi");
  const auto cfg = dir / "config.json";
  std::ofstream(cfg) << tiny_config(dir / "run");

  Log log;
  d2nn_run* run = nullptr;
  REQUIRE(d2nn_run_open(cfg.c_str(), nullptr, &Log::sink, &log, &run) == D2NN_OK);
  CHECK(fs::path(d2nn_run_output_dir(run)) == dir / "run");
  CHECK(d2nn_run_report(run) == D2NN_ERR_STALE);
  CHECK(d2nn_run_prepare(run) == D2NN_OK);
  CHECK(d2nn_run_train(run) == D2NN_OK);
  CHECK(d2nn_run_cache(run) == D2NN_OK);
  CHECK(d2nn_run_prune(run) == D2NN_OK);
  CHECK(d2nn_run_report(run) == D2NN_OK);
  CHECK(log.saw("over 2 repeats"));
  CHECK(log.saw("test isolation audit: passed"));
  d2nn_run_free(run);
  for (int r = 0; r < 2; ++r) CHECK(fs::exists(dir / "run" / "pruning" / "capi" / ("trace_r" + std::to_string(r) + ".json")));

  SUBCASE("models") {
    d2nn_model* m = nullptr;
    REQUIRE(d2nn_model_load((dir / "run" / "networks" / "net_0001.d2nn").c_str(), &m) == D2NN_OK);
    int classes = 0;
    CHECK(d2nn_model_class_count(m, &classes) == D2NN_OK);
    CHECK(classes == 10);
    std::vector<float> img(1024);
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>((i * 37) % 256) / 255.0f;
    std::vector<double> z1(10), z2(10);
    CHECK(d2nn_model_forward(m, img.data(), z1.data(), z1.size()) == D2NN_OK);
    CHECK(d2nn_model_forward(m, img.data(), z2.data(), z2.size()) == D2NN_OK);
    CHECK(z1 == z2);
    for (double z : z1) CHECK(std::abs(z) <= 10.0);
    CHECK(d2nn_model_forward(m, img.data(), z1.data(), 3) == D2NN_ERR_INVALID_ARGUMENT);
    CHECK(d2nn_model_forward(m, nullptr, z1.data(), 10) == D2NN_ERR_INVALID_ARGUMENT);
    CHECK(d2nn_model_save(m, (dir / "copy.d2nn").c_str()) == D2NN_OK);
    d2nn_model_free(m);
    std::ifstream a(dir / "copy.d2nn", std::ios::binary), b(dir / "run" / "networks" / "net_0001.d2nn", std::ios::binary);
    CHECK(std::string(std::istreambuf_iterator<char>(a), {}) == std::string(std::istreambuf_iterator<char>(b), {}));
  }
  SUBCASE("a dark image through an amplitude-encoded member") {
    std::ifstream in(dir / "run" / "pool.json");
    const auto pool = nlohmann::json::parse(in)["specs"];
    std::size_t k = 0;
    while (k < pool.size() && pool[k]["encoding"]["channel"] != "amplitude") ++k;
    REQUIRE(k < pool.size());
    const auto path = dir / "run" / "networks" / ("net_000" + std::to_string(k) + ".d2nn");
    d2nn_model* m = nullptr;
    REQUIRE(d2nn_model_load(path.c_str(), &m) == D2NN_OK);
    std::vector<float> dark(1024, 0.0f);
    std::vector<double> z(10);
    CHECK(d2nn_model_forward(m, dark.data(), z.data(), z.size()) == D2NN_ERR_DEGENERATE);
    d2nn_model_free(m);
  }
  SUBCASE("caches") {
    d2nn_cache* c = nullptr;
    REQUIRE(d2nn_cache_load((dir / "run" / "caches" / "validation.d2sc").c_str(), &c) == D2NN_OK);
    std::size_t samples = 0, networks = 0;
    int classes = 0;
    CHECK(d2nn_cache_dims(c, &samples, &networks, &classes) == D2NN_OK);
    CHECK(samples == 50);
    CHECK(networks == 3);
    CHECK(classes == 10);
    float z = 0.0f;
    CHECK(d2nn_cache_score(c, 49, 2, 9, &z) == D2NN_OK);
    CHECK(std::abs(z) <= 10.0f);
    CHECK(d2nn_cache_score(c, 50, 0, 0, &z) == D2NN_ERR_INVALID_ARGUMENT);
    CHECK(d2nn_cache_score(c, 0, 3, 0, &z) == D2NN_ERR_INVALID_ARGUMENT);
    CHECK(d2nn_cache_score(c, 0, 0, 10, &z) == D2NN_ERR_INVALID_ARGUMENT);
    int label = -1;
    CHECK(d2nn_cache_label(c, 0, &label) == D2NN_OK);
    CHECK((label >= 0 && label < 10));
    CHECK(d2nn_cache_export_csv(c, (dir / "v.csv").c_str()) == D2NN_OK);
    d2nn_cache_free(c);
    std::ifstream in(dir / "v.csv");
    std::size_t lines = 0;
    for (std::string l; std::getline(in, l);) ++lines;
    CHECK(lines == 1 + 50 * 3);
  }
  SUBCASE("overrides") {
    d2nn_overrides ov{};
    ov.repeat = 1;
    ov.has_seed = 1;
    ov.seed = 99;
    d2nn_run* other = nullptr;
    REQUIRE(d2nn_run_open(cfg.c_str(), &ov, nullptr, nullptr, &other) == D2NN_OK);
    CHECK(d2nn_run_train(other) == D2NN_ERR_STALE);
    CHECK(std::string(d2nn_last_error()).find("seed") != std::string::npos);
    d2nn_run_free(other);

    ov = {};
    ov.profile = "huge";
    CHECK(d2nn_run_open(cfg.c_str(), &ov, nullptr, nullptr, &other) == D2NN_ERR_CONFIG);
  }
  fs::remove_all(dir);
}
