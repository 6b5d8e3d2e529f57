#pragma once

// CIFAR-10 ingestion, grayscale conversion, deterministic splitting,
// augmentation, and the split-access audit log.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "d2nn/frontend.hpp"

namespace d2nn {

inline constexpr std::size_t kCifarRecordBytes = 1 + 3 * kImagePixels;
inline constexpr int kCifarClasses = 10;
inline constexpr std::size_t kDefaultValidationCount = 5000;

using Image = std::array<float, kImagePixels>;

struct LabeledImage {
  Image pixels{};  // grayscale in [0, 1], row-major
  std::uint8_t label = 0;
};

enum class SplitKind { Train, Validation, Test };
std::string to_string(SplitKind kind);

struct Split {
  SplitKind kind = SplitKind::Train;
  std::vector<LabeledImage> images;
  std::vector<std::size_t> origin;  // record index within the train-origin or test-origin files

  std::size_t size() const { return images.size(); }
  /// First n images (all when n == 0 or n >= size).
  Split head(std::size_t n) const;
};

struct DataSplits {
  Split train;
  Split validation;
  Split test;
};

/// File names in load order: data_batch_1..5.bin then test_batch.bin.
std::vector<std::string> cifar_batch_files();

/// Loads all six batch files; validation = the last `validation_count`
/// train-origin records in file order.
DataSplits load_cifar10(const std::filesystem::path& directory,
                        std::size_t validation_count = kDefaultValidationCount);
/// Train-origin files only: {train, validation}.
std::pair<Split, Split> load_train_validation(const std::filesystem::path& directory,
                                              std::size_t validation_count = kDefaultValidationCount);
/// Test-origin file only.
Split load_test(const std::filesystem::path& directory);

/// Decodes one 3073-byte record (label, 1024 R, 1024 G, 1024 B).
LabeledImage decode_record(std::span<const std::uint8_t> record);

/// 0.2989 R + 0.5870 G + 0.1140 B on [0, 1] channels.
double to_grayscale(double r, double g, double b);

Image flip_left_right(const Image& image);

/// SHA-256 over labels and pixel bits, in split order.
std::string split_content_hash(const Split& split);

/// Writes a seeded synthetic dataset in the CIFAR-10 binary layout: five
/// train files of `train_records_per_file` records and one test file.
/// Classes are noisy, shifted, tinted renderings of per-class prototypes.
void write_synthetic_cifar(const std::filesystem::path& directory, std::size_t train_records_per_file,
                           std::size_t test_records, std::uint64_t seed);

/// Append-only, hash-chained log of which stage decoded which split. Any
/// edit to an earlier line breaks the chain.
class SplitAudit {
 public:
  struct Entry {
    std::uint64_t sequence = 0;
    std::string stage;
    std::string split;
    std::string action;
  };

  explicit SplitAudit(std::filesystem::path log_file);

  void record(const std::string& stage, SplitKind split, const std::string& action);

  /// Parses and verifies the chain; throws Data on tampering.
  static std::vector<Entry> verify(const std::filesystem::path& log_file);

  /// True iff the chain is intact and no entry touches the test split before
  /// the first entry of `stage`.
  static bool test_untouched_before(const std::filesystem::path& log_file, const std::string& stage);

 private:
  std::filesystem::path path_;
};

}  // namespace d2nn
