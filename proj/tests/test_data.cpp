#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "d2nn/data.hpp"
#include "oracles.hpp"

using namespace d2nn;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

std::string error_of(const auto& fn) {
  try {
    fn();
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Data);
    return e.what();
  }
  FAIL("no error raised");
  return {};
}

struct Fixture {
  fs::path dir = oracle::temp_dir("data");
  Fixture() { write_synthetic_cifar(dir, 100, 100, 5); }
  ~Fixture() { fs::remove_all(dir); }
};

}  // namespace

TEST_CASE("grayscale") {
  CHECK(to_grayscale(1, 0, 0) == 0.2989);
  CHECK(to_grayscale(0, 1, 0) == 0.5870);
  CHECK(to_grayscale(0, 0, 1) == 0.1140);
  for (double v : {0.0, 0.25, 0.5, 1.0}) CHECK(to_grayscale(v, v, v) == doctest::Approx(v).epsilon(1e-4));

  std::vector<std::uint8_t> rec(kCifarRecordBytes, 255);
  rec[0] = 7;
  auto img = decode_record(rec);
  CHECK(img.label == 7);
  for (float p : img.pixels) REQUIRE(p == 1.0f);

  std::fill(rec.begin() + 1, rec.end(), 0);
  std::fill(rec.begin() + 1, rec.begin() + 1 + 1024, 255);  // red channel only
  rec[1 + 1024 + 5] = 100;                                  // some green at pixel 5
  img = decode_record(rec);
  CHECK(img.pixels[0] == doctest::Approx(std::round(0.2989 * 255) / 255).epsilon(1e-7));
  CHECK(img.pixels[5] == doctest::Approx(std::round(0.2989 * 255 + 0.5870 * 100) / 255).epsilon(1e-7));
  for (float p : img.pixels) REQUIRE((p >= 0.0f && p <= 1.0f));

  rec[0] = 10;
  error_of([&] { decode_record(rec); });
}

TEST_CASE("flip") {
  Image img{};
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i) / 1024.0f;
  const auto f = flip_left_right(img);
  for (int r = 0; r < 32; ++r)
    for (int c = 0; c < 32; ++c) REQUIRE(f[r * 32 + (31 - c)] == img[r * 32 + c]);
  CHECK(flip_left_right(f) == img);
  Image sym{};
  for (int r = 0; r < 32; ++r)
    for (int c = 0; c < 32; ++c) sym[r * 32 + c] = static_cast<float>(std::abs(c - 15.5) + r);
  CHECK(flip_left_right(sym) == sym);
}

TEST_CASE("synthetic fixture loads with the documented split rule") {
  const Fixture fx;
  CHECK(cifar_batch_files() == std::vector<std::string>{"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin",
                                                          "data_batch_4.bin", "data_batch_5.bin", "test_batch.bin"});
  const auto s = load_cifar10(fx.dir, 100);
  CHECK(s.train.size() == 400);
  CHECK(s.validation.size() == 100);
  CHECK(s.test.size() == 100);
  CHECK(s.train.kind == SplitKind::Train);
  CHECK(s.validation.kind == SplitKind::Validation);
  CHECK(s.test.kind == SplitKind::Test);
  std::set<std::size_t> origins(s.train.origin.begin(), s.train.origin.end());
  for (std::size_t i = 0; i < s.validation.size(); ++i) {
    CHECK(s.validation.origin[i] == 400 + i);
    CHECK(!origins.count(s.validation.origin[i]));
  }
  std::set<int> labels;
  for (const auto* split : {&s.train, &s.validation, &s.test})
    for (const auto& im : split->images) {
      REQUIRE(im.label < 10);
      labels.insert(im.label);
      for (float p : im.pixels) REQUIRE((p >= 0.0f && p <= 1.0f));
    }
  CHECK(labels.size() == 10);

  // the n-th record of data_batch_3 is train origin 200 + n
  const auto raw = read_bytes(fx.dir / "data_batch_3.bin");
  const auto rec = decode_record(std::span<const std::uint8_t>(raw).subspan(17 * kCifarRecordBytes, kCifarRecordBytes));
  CHECK(s.train.images[217].pixels == rec.pixels);
  CHECK(s.train.origin[217] == 217);

  const auto again = load_cifar10(fx.dir, 100);
  CHECK(split_content_hash(again.train) == split_content_hash(s.train));
  CHECK(split_content_hash(again.test) == split_content_hash(s.test));
  CHECK(split_content_hash(s.train) != split_content_hash(s.validation));

  const auto [tr, va] = load_train_validation(fx.dir, 100);
  CHECK(split_content_hash(tr) == split_content_hash(s.train));
  CHECK(split_content_hash(va) == split_content_hash(s.validation));
  CHECK(split_content_hash(load_test(fx.dir)) == split_content_hash(s.test));

  CHECK(s.train.head(10).size() == 10);
  CHECK(s.train.head(0).size() == 400);
  CHECK(s.train.head(5000).size() == 400);
  CHECK(s.train.head(3).images[2].pixels == s.train.images[2].pixels);

  error_of([&] { load_cifar10(fx.dir, 500); });
}

TEST_CASE("full-size layout gives 45000 / 5000 / 10000") {
  const auto dir = oracle::temp_dir("full");
  write_synthetic_cifar(dir, 10000, 10000, 2);
  const auto s = load_cifar10(dir);
  CHECK(s.train.size() == 45000);
  CHECK(s.validation.size() == 5000);
  CHECK(s.test.size() == 10000);
  CHECK(s.validation.origin.front() == 45000);
  CHECK(s.validation.origin.back() == 49999);
  fs::remove_all(dir);
}

TEST_CASE("loader errors name the file") {
  const auto empty = oracle::temp_dir("empty");
  CHECK(error_of([&] { load_cifar10(empty); }).find("data_batch_1.bin") != std::string::npos);
  CHECK(error_of([&] { load_train_validation(empty, 10); }).find("data_batch_1.bin") != std::string::npos);
  fs::remove_all(empty);

  const Fixture fx;
  SUBCASE("test file missing: only the test loader cares") {
    fs::remove(fx.dir / "test_batch.bin");
    CHECK(error_of([&] { load_cifar10(fx.dir, 100); }).find("test_batch.bin") != std::string::npos);
    CHECK_NOTHROW(load_train_validation(fx.dir, 100));
  }
  SUBCASE("later file missing") {
    fs::remove(fx.dir / "data_batch_4.bin");
    CHECK(error_of([&] { load_cifar10(fx.dir, 100); }).find("data_batch_4.bin") != std::string::npos);
  }
  SUBCASE("short file") {
    auto b = read_bytes(fx.dir / "data_batch_2.bin");
    b.resize(b.size() - 10);
    write_bytes(fx.dir / "data_batch_2.bin", b);
    CHECK(error_of([&] { load_cifar10(fx.dir, 100); }).find("data_batch_2.bin") != std::string::npos);
  }
  SUBCASE("corrupt label") {
    auto b = read_bytes(fx.dir / "data_batch_5.bin");
    b[3 * kCifarRecordBytes] = 200;
    write_bytes(fx.dir / "data_batch_5.bin", b);
    const auto msg = error_of([&] { load_cifar10(fx.dir, 100); });
    CHECK(msg.find("record 3") != std::string::npos);
    CHECK(msg.find("data_batch_5.bin") != std::string::npos);
  }
}

TEST_CASE("split audit") {
  const auto dir = oracle::temp_dir("audit");
  const auto log = dir / "audit.log";
  {
    SplitAudit a(log);
    a.record("prepare", SplitKind::Train, "decode");
    a.record("train", SplitKind::Validation, "decode");
    a.record("report", SplitKind::Test, "decode");
  }
  const auto entries = SplitAudit::verify(log);
  REQUIRE(entries.size() == 3);
  CHECK(entries[2].stage == "report");
  CHECK(entries[2].split == "test");
  CHECK(SplitAudit::test_untouched_before(log, "report"));

  SUBCASE("test touched early") {
    SplitAudit(log).record("prune", SplitKind::Test, "decode");  // after report: irrelevant
    CHECK(SplitAudit::test_untouched_before(log, "report"));
    const auto early = dir / "early.log";
    SplitAudit(early).record("prune", SplitKind::Test, "decode");
    SplitAudit(early).record("report", SplitKind::Test, "decode");
    CHECK(!SplitAudit::test_untouched_before(early, "report"));
  }
  SUBCASE("tampering breaks the chain") {
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    std::string text = ss.str();
    const auto pos = text.find("train\tvalidation");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 5, "prune");
    std::ofstream(log, std::ios::trunc) << text;
    CHECK_THROWS_AS(SplitAudit::verify(log), Error);
    CHECK(!SplitAudit::test_untouched_before(log, "report"));
  }
  SUBCASE("deleting a line breaks the chain") {
    std::ifstream in(log);
    std::string l1, l2, l3;
    std::getline(in, l1);
    std::getline(in, l2);
    std::getline(in, l3);
    in.close();
    std::ofstream(log, std::ios::trunc) << l1 << "\n" << l3 << "\n";
    CHECK_THROWS_AS(SplitAudit::verify(log), Error);
  }
  fs::remove_all(dir);
}
