#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "actgrad/tensor.hpp"

namespace actgrad {

inline constexpr std::size_t kNumClasses = 10;
inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kImageSide = 32;
inline constexpr std::size_t kImageBytes = kImageChannels * kImageSide * kImageSide;  // 3072
inline constexpr std::size_t kRecordBytes = 1 + kImageBytes;                          // 3073
inline constexpr std::size_t kRecordsPerBatch = 10000;

/// Images kept as the raw CIFAR bytes (channel-major, row-major planes) and
/// scaled by 1/255 only when materialized as tensors, which keeps the full
/// 60k-image set at ~180 MB instead of ~1.5 GB of doubles.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<std::uint8_t> pixels, std::vector<std::uint8_t> labels);

  std::size_t size() const noexcept { return labels_.size(); }
  bool empty() const noexcept { return labels_.empty(); }

  std::span<const std::uint8_t> pixels() const noexcept { return pixels_; }
  std::span<const std::uint8_t> labels() const noexcept { return labels_; }
  std::span<const std::uint8_t> image_bytes(std::size_t i) const;
  std::uint8_t label(std::size_t i) const { return labels_.at(i); }

  /// (N,3,32,32) with values byte/255.
  Tensor images() const;
  Tensor images(std::span<const std::size_t> indices) const;
  /// (N,10) one-hot rows.
  Tensor one_hot() const;
  Tensor one_hot(std::span<const std::size_t> indices) const;

  Dataset select(std::span<const std::size_t> indices) const;
  std::array<std::size_t, kNumClasses> class_counts() const;

  bool operator==(const Dataset&) const = default;

 private:
  std::vector<std::uint8_t> pixels_;
  std::vector<std::uint8_t> labels_;
};

/// Reads one CIFAR-10 binary batch. By default the file must hold exactly
/// 10000 records; pass std::nullopt to accept any whole number of records.
Dataset load_cifar_binary(const std::filesystem::path& path,
                          std::optional<std::size_t> expected_records = kRecordsPerBatch);

void write_cifar_binary(const Dataset& dataset, const std::filesystem::path& path);

Dataset merge(std::span<const Dataset> datasets);

/// data_batch_1.bin .. data_batch_5.bin merged.
Dataset load_cifar_train(const std::filesystem::path& dir,
                         std::optional<std::size_t> expected_records = kRecordsPerBatch);
/// test_batch.bin.
Dataset load_cifar_test(const std::filesystem::path& dir,
                        std::optional<std::size_t> expected_records = kRecordsPerBatch);

bool cifar_files_present(const std::filesystem::path& dir);

/// Seed-deterministic, class-stratified sample of n items, returned in
/// original order. Each class gets n/10, the remainder goes to the lowest
/// class indices, and any shortfall of a small class is passed on to the
/// next classes that still have items.
Dataset subset(const Dataset& dataset, std::size_t n, std::uint64_t seed);
std::vector<std::size_t> stratified_indices(const Dataset& dataset, std::size_t n, std::uint64_t seed);

struct Batch {
  std::vector<std::size_t> indices;
  Tensor images;
  Tensor labels;
};

/// One seeded permutation per epoch, consecutive batches of batch_size, last
/// partial batch kept.
class BatchIterator {
 public:
  BatchIterator(std::shared_ptr<const Dataset> dataset, std::size_t batch_size, std::uint64_t seed);

  /// Epochs are 1-based; the permutation depends only on (seed, epoch).
  void begin_epoch(int epoch);
  std::optional<Batch> next();

  std::size_t batches_per_epoch() const noexcept;
  std::size_t batch_size() const noexcept { return batch_size_; }
  const Dataset& dataset() const noexcept { return *dataset_; }
  std::span<const std::size_t> order() const noexcept { return order_; }

 private:
  std::shared_ptr<const Dataset> dataset_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

BatchIterator merge_shuffle_batch(std::span<const Dataset> datasets, std::size_t batch_size,
                                  std::uint64_t seed);

/// Seed mixer used wherever one seed has to be split into several.
std::uint64_t splitmix64(std::uint64_t x);

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, int epoch);

/// Learnable stand-in with the CIFAR-10 layout: each class is a smooth colour
/// pattern, and every image is a shifted, rescaled copy of its class pattern
/// blended with a random distractor pattern and pixel noise. Classes are
/// balanced and shuffled.
Dataset make_synthetic_cifar(std::size_t per_class, std::uint64_t seed);

/// Writes data_batch_1..5.bin and test_batch.bin in the official layout:
/// 5000 train and 1000 test images per class.
void write_synthetic_cifar_dir(const std::filesystem::path& dir, std::uint64_t seed);

// Canonical archive of the binary version.
inline constexpr const char* kCifarUrl = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz";
inline constexpr const char* kCifarMd5 = "c32a1d4ab5d03f1284b67883e8d87530";

std::string md5_file(const std::filesystem::path& path);

/// Downloads the archive with curl, verifies its MD5, and extracts the six
/// batch files into dir. Throws DataError on any failure.
void fetch_cifar(const std::filesystem::path& dir, const std::string& url = kCifarUrl,
                 const std::string& md5 = kCifarMd5);

}  // namespace actgrad
