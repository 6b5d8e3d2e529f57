#include "d2nn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "binary_io.hpp"
#include "d2nn/rng.hpp"

namespace d2nn {
namespace {

std::vector<std::uint8_t> read_batch(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) {
    fail(ErrorKind::Data, "missing CIFAR-10 batch file: " + path.string());
  }
  auto bytes = detail::read_file(path);
  if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0) {
    fail(ErrorKind::Data, "short or truncated CIFAR-10 batch file: " + path.string() + " (" +
                              std::to_string(bytes.size()) + " bytes)");
  }
  return bytes;
}

void append_records(const std::filesystem::path& path, std::vector<LabeledImage>& out) {
  const auto bytes = read_batch(path);
  const std::size_t n = bytes.size() / kCifarRecordBytes;
  for (std::size_t i = 0; i < n; ++i) {
    std::span<const std::uint8_t> record(bytes.data() + i * kCifarRecordBytes, kCifarRecordBytes);
    if (record[0] >= kCifarClasses) {
      fail(ErrorKind::Data, "corrupt record " + std::to_string(i) + " in " + path.string() + ": label " +
                                std::to_string(record[0]));
    }
    out.push_back(decode_record(record));
  }
}

std::string chain_hash(const std::string& previous, const SplitAudit::Entry& e) {
  const std::string text =
      previous + "\t" + std::to_string(e.sequence) + "\t" + e.stage + "\t" + e.split + "\t" + e.action;
  return detail::sha256_hex({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

const std::string kGenesis(64, '0');

}  // namespace

std::string to_string(SplitKind kind) {
  switch (kind) {
    case SplitKind::Train: return "train";
    case SplitKind::Validation: return "validation";
    case SplitKind::Test: return "test";
  }
  return "unknown";
}

Split Split::head(std::size_t n) const {
  if (n == 0 || n >= images.size()) return *this;
  Split out{kind, {images.begin(), images.begin() + static_cast<std::ptrdiff_t>(n)},
            {origin.begin(), origin.begin() + static_cast<std::ptrdiff_t>(n)}};
  return out;
}

std::vector<std::string> cifar_batch_files() {
  return {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin",
          "data_batch_4.bin", "data_batch_5.bin", "test_batch.bin"};
}

double to_grayscale(double r, double g, double b) { return 0.2989 * r + 0.5870 * g + 0.1140 * b; }

LabeledImage decode_record(std::span<const std::uint8_t> record) {
  require(record.size() == kCifarRecordBytes, ErrorKind::Data, "CIFAR-10 record must be 3073 bytes");
  require(record[0] < kCifarClasses, ErrorKind::Data, "CIFAR-10 label " + std::to_string(record[0]) + " out of range");
  LabeledImage img;
  img.label = record[0];
  const std::uint8_t* r = record.data() + 1;
  const std::uint8_t* g = r + kImagePixels;
  const std::uint8_t* b = g + kImagePixels;
  for (std::size_t i = 0; i < kImagePixels; ++i) {
    // Weighted sum in the 8-bit domain, rounded back to a byte.
    const double gray = std::clamp(std::round(to_grayscale(r[i], g[i], b[i])), 0.0, 255.0);
    img.pixels[i] = static_cast<float>(gray / 255.0);
  }
  return img;
}

std::pair<Split, Split> load_train_validation(const std::filesystem::path& directory, std::size_t validation_count) {
  const auto files = cifar_batch_files();
  std::vector<LabeledImage> records;
  for (std::size_t f = 0; f < 5; ++f) append_records(directory / files[f], records);
  require(validation_count < records.size(), ErrorKind::Data,
          "validation split of " + std::to_string(validation_count) + " leaves no training records (" +
              std::to_string(records.size()) + " train-origin records)");

  const std::size_t n_train = records.size() - validation_count;
  Split train{SplitKind::Train, {}, {}};
  Split validation{SplitKind::Validation, {}, {}};
  train.images.assign(records.begin(), records.begin() + static_cast<std::ptrdiff_t>(n_train));
  validation.images.assign(records.begin() + static_cast<std::ptrdiff_t>(n_train), records.end());
  for (std::size_t i = 0; i < records.size(); ++i) (i < n_train ? train : validation).origin.push_back(i);
  return {std::move(train), std::move(validation)};
}

Split load_test(const std::filesystem::path& directory) {
  Split test{SplitKind::Test, {}, {}};
  append_records(directory / cifar_batch_files()[5], test.images);
  for (std::size_t i = 0; i < test.images.size(); ++i) test.origin.push_back(i);
  return test;
}

DataSplits load_cifar10(const std::filesystem::path& directory, std::size_t validation_count) {
  // Report the first missing file in load order before decoding anything.
  for (const auto& name : cifar_batch_files()) {
    if (!std::filesystem::is_regular_file(directory / name)) {
      fail(ErrorKind::Data, "missing CIFAR-10 batch file: " + (directory / name).string());
    }
  }
  auto [train, validation] = load_train_validation(directory, validation_count);
  return DataSplits{std::move(train), std::move(validation), load_test(directory)};
}

Image flip_left_right(const Image& image) {
  Image out;
  for (int r = 0; r < kImageSide; ++r) {
    for (int c = 0; c < kImageSide; ++c) {
      out[static_cast<std::size_t>(r) * kImageSide + c] =
          image[static_cast<std::size_t>(r) * kImageSide + (kImageSide - 1 - c)];
    }
  }
  return out;
}

std::string split_content_hash(const Split& split) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(split.size() * (1 + sizeof(Image)));
  for (const auto& img : split.images) {
    bytes.push_back(img.label);
    const auto* p = reinterpret_cast<const std::uint8_t*>(img.pixels.data());
    bytes.insert(bytes.end(), p, p + sizeof(Image));
  }
  return detail::sha256_hex(bytes);
}

// ---------------------------------------------------------------- synthetic data

namespace {

struct Prototype {
  std::array<double, kImagePixels> pattern{};
  std::array<double, 3> tint{};
};

double normal(Rng& rng) {
  // Box-Muller on the portable uniform draw.
  const double u1 = 1.0 - rng.uniform();
  const double u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::vector<Prototype> make_prototypes(Rng& rng) {
  std::vector<Prototype> protos(kCifarClasses);
  for (auto& p : protos) {
    const double theta = rng.uniform(0.0, std::numbers::pi);
    const double period = rng.uniform(4.0, 12.0);
    std::array<std::array<double, 4>, 3> blobs{};
    for (auto& b : blobs) b = {rng.uniform(6.0, 26.0), rng.uniform(6.0, 26.0), rng.uniform(2.0, 6.0),
                               rng.uniform(-1.0, 1.0)};
    for (int r = 0; r < kImageSide; ++r) {
      for (int c = 0; c < kImageSide; ++c) {
        double v = 0.25 * std::cos(2.0 * std::numbers::pi * (c * std::cos(theta) + r * std::sin(theta)) / period);
        for (const auto& b : blobs) {
          const double d2 = (c - b[0]) * (c - b[0]) + (r - b[1]) * (r - b[1]);
          v += b[3] * std::exp(-d2 / (2.0 * b[2] * b[2]));
        }
        p.pattern[static_cast<std::size_t>(r) * kImageSide + c] = v;
      }
    }
    p.tint = {rng.uniform(0.7, 1.3), rng.uniform(0.7, 1.3), rng.uniform(0.7, 1.3)};
  }
  return protos;
}

void write_records(const std::filesystem::path& path, std::size_t count, const std::vector<Prototype>& protos,
                   Rng& rng) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(count * kCifarRecordBytes);
  for (std::size_t n = 0; n < count; ++n) {
    const auto label = static_cast<int>(rng.below(kCifarClasses));
    const auto confuser = static_cast<int>(rng.below(kCifarClasses));
    const int dx = static_cast<int>(rng.below(9)) - 4;
    const int dy = static_cast<int>(rng.below(9)) - 4;
    const double contrast = rng.uniform(0.35, 0.9);
    const double mix = rng.uniform(0.0, 0.6);
    const double background = rng.uniform(0.25, 0.65);
    std::array<double, 3> tint = protos[label].tint;
    for (auto& t : tint) t *= rng.uniform(0.8, 1.2);

    bytes.push_back(static_cast<std::uint8_t>(label));
    std::array<double, kImagePixels> gray{};
    for (int r = 0; r < kImageSide; ++r) {
      for (int c = 0; c < kImageSide; ++c) {
        const int sr = std::clamp(r + dy, 0, kImageSide - 1);
        const int sc = std::clamp(c + dx, 0, kImageSide - 1);
        const std::size_t s = static_cast<std::size_t>(sr) * kImageSide + sc;
        const double v = background + contrast * (protos[label].pattern[s] + mix * protos[confuser].pattern[s]) +
                         0.18 * normal(rng);
        gray[static_cast<std::size_t>(r) * kImageSide + c] = v;
      }
    }
    for (int ch = 0; ch < 3; ++ch) {
      for (std::size_t i = 0; i < kImagePixels; ++i) {
        const double v = std::clamp(gray[i] * tint[ch], 0.0, 1.0);
        bytes.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
      }
    }
  }
  detail::write_file_atomic(path, bytes);
}

}  // namespace

void write_synthetic_cifar(const std::filesystem::path& directory, std::size_t train_records_per_file,
                           std::size_t test_records, std::uint64_t seed) {
  require(train_records_per_file > 0 && test_records > 0, ErrorKind::InvalidArgument,
          "synthetic dataset needs records in every file");
  Rng proto_rng(mix_seed(seed, 0));
  const auto protos = make_prototypes(proto_rng);
  const auto files = cifar_batch_files();
  for (std::size_t f = 0; f < files.size(); ++f) {
    Rng rng(mix_seed(seed, f + 1));
    write_records(directory / files[f], f < 5 ? train_records_per_file : test_records, protos, rng);
  }
}

// ---------------------------------------------------------------- audit

SplitAudit::SplitAudit(std::filesystem::path log_file) : path_(std::move(log_file)) {}

void SplitAudit::record(const std::string& stage, SplitKind split, const std::string& action) {
  std::string previous = kGenesis;
  std::uint64_t sequence = 0;
  if (std::filesystem::exists(path_)) {
    const auto entries = verify(path_);
    sequence = entries.size();
    std::ifstream in(path_);
    std::string line, last;
    while (std::getline(in, line)) {
      if (!line.empty()) last = line;
    }
    if (!last.empty()) previous = last.substr(last.rfind('\t') + 1);
  }
  Entry e{sequence, stage, to_string(split), action};
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  std::ofstream out(path_, std::ios::app);
  if (!out) fail(ErrorKind::Io, "cannot append to audit log " + path_.string());
  out << e.sequence << '\t' << e.stage << '\t' << e.split << '\t' << e.action << '\t' << chain_hash(previous, e)
      << '\n';
}

std::vector<SplitAudit::Entry> SplitAudit::verify(const std::filesystem::path& log_file) {
  std::vector<Entry> entries;
  if (!std::filesystem::exists(log_file)) return entries;
  std::ifstream in(log_file);
  std::string line;
  std::string previous = kGenesis;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, '\t');) fields.push_back(f);
    if (fields.size() != 5) fail(ErrorKind::Data, "malformed audit line: " + line);
    Entry e{std::stoull(fields[0]), fields[1], fields[2], fields[3]};
    if (e.sequence != entries.size() || chain_hash(previous, e) != fields[4]) {
      fail(ErrorKind::Data, "audit log chain broken at entry " + std::to_string(entries.size()));
    }
    previous = fields[4];
    entries.push_back(std::move(e));
  }
  return entries;
}

bool SplitAudit::test_untouched_before(const std::filesystem::path& log_file, const std::string& stage) {
  std::vector<Entry> entries;
  try {
    entries = verify(log_file);
  } catch (const Error&) {
    return false;
  }
  for (const auto& e : entries) {
    if (e.stage == stage) return true;
    if (e.split == to_string(SplitKind::Test)) return false;
  }
  return true;
}

}  // namespace d2nn
