#include "actgrad/cifar.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

namespace actgrad {

namespace fs = std::filesystem;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

namespace {

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

}  // namespace

// ---------------------------------------------------------------------------
// Dataset

Dataset::Dataset(std::vector<std::uint8_t> pixels, std::vector<std::uint8_t> labels)
    : pixels_(std::move(pixels)), labels_(std::move(labels)) {
  if (pixels_.size() != labels_.size() * kImageBytes) {
    throw DataError("dataset: " + std::to_string(pixels_.size()) + " pixel bytes for " +
                    std::to_string(labels_.size()) + " labels");
  }
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] >= kNumClasses) {
      throw DataError("dataset: label " + std::to_string(labels_[i]) + " at index " +
                      std::to_string(i) + " is outside 0..9");
    }
  }
}

std::span<const std::uint8_t> Dataset::image_bytes(std::size_t i) const {
  if (i >= size()) throw ValueError("dataset index " + std::to_string(i) + " out of range");
  return std::span<const std::uint8_t>(pixels_).subspan(i * kImageBytes, kImageBytes);
}

Tensor Dataset::images() const {
  std::vector<std::size_t> all(size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return images(all);
}

Tensor Dataset::images(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw ValueError("dataset: cannot materialize an empty image batch");
  Tensor out({indices.size(), kImageChannels, kImageSide, kImageSide});
  double* dst = out.data();
  for (auto i : indices) {
    for (auto byte : image_bytes(i)) *dst++ = static_cast<double>(byte) / 255.0;
  }
  return out;
}

Tensor Dataset::one_hot() const {
  std::vector<std::size_t> all(size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return one_hot(all);
}

Tensor Dataset::one_hot(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw ValueError("dataset: cannot materialize an empty label batch");
  Tensor out({indices.size(), kNumClasses});
  for (std::size_t r = 0; r < indices.size(); ++r) out.at(r, label(indices[r])) = 1.0;
  return out;
}

Dataset Dataset::select(std::span<const std::size_t> indices) const {
  std::vector<std::uint8_t> pixels;
  std::vector<std::uint8_t> labels;
  pixels.reserve(indices.size() * kImageBytes);
  labels.reserve(indices.size());
  for (auto i : indices) {
    auto img = image_bytes(i);
    pixels.insert(pixels.end(), img.begin(), img.end());
    labels.push_back(labels_[i]);
  }
  return Dataset(std::move(pixels), std::move(labels));
}

std::array<std::size_t, kNumClasses> Dataset::class_counts() const {
  std::array<std::size_t, kNumClasses> counts{};
  for (auto l : labels_) ++counts[l];
  return counts;
}

// ---------------------------------------------------------------------------
// binary batches

Dataset load_cifar_binary(const fs::path& path, std::optional<std::size_t> expected_records) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open CIFAR batch " + path.string());
  in.seekg(0, std::ios::end);
  const auto length = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);

  if (expected_records) {
    const std::size_t expected = *expected_records * kRecordBytes;
    if (length != expected) {
      throw DataError(path.string() + ": expected " + std::to_string(expected) + " bytes, got " +
                      std::to_string(length));
    }
  } else if (length == 0 || length % kRecordBytes != 0) {
    throw DataError(path.string() + ": length " + std::to_string(length) +
                    " is not a positive multiple of " + std::to_string(kRecordBytes));
  }

  std::vector<std::uint8_t> raw(length);
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(length))) {
    throw DataError("short read on " + path.string());
  }
  const std::size_t records = length / kRecordBytes;
  std::vector<std::uint8_t> labels(records);
  std::vector<std::uint8_t> pixels(records * kImageBytes);
  for (std::size_t r = 0; r < records; ++r) {
    const std::uint8_t* rec = raw.data() + r * kRecordBytes;
    if (rec[0] >= kNumClasses) {
      throw DataError(path.string() + ": corrupt record " + std::to_string(r) + " has label byte " +
                      std::to_string(rec[0]));
    }
    labels[r] = rec[0];
    std::copy_n(rec + 1, kImageBytes, pixels.begin() + static_cast<std::ptrdiff_t>(r * kImageBytes));
  }
  return Dataset(std::move(pixels), std::move(labels));
}

void write_cifar_binary(const Dataset& dataset, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const char label = static_cast<char>(dataset.label(i));
    out.write(&label, 1);
    auto img = dataset.image_bytes(i);
    out.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
  }
  if (!out) throw DataError("write failed for " + path.string());
}

Dataset merge(std::span<const Dataset> datasets) {
  std::vector<std::uint8_t> pixels;
  std::vector<std::uint8_t> labels;
  for (const auto& d : datasets) {
    pixels.insert(pixels.end(), d.pixels().begin(), d.pixels().end());
    labels.insert(labels.end(), d.labels().begin(), d.labels().end());
  }
  return Dataset(std::move(pixels), std::move(labels));
}

Dataset load_cifar_train(const fs::path& dir, std::optional<std::size_t> expected_records) {
  std::vector<Dataset> parts;
  for (int i = 1; i <= 5; ++i) {
    parts.push_back(load_cifar_binary(dir / ("data_batch_" + std::to_string(i) + ".bin"), expected_records));
  }
  return merge(parts);
}

Dataset load_cifar_test(const fs::path& dir, std::optional<std::size_t> expected_records) {
  return load_cifar_binary(dir / "test_batch.bin", expected_records);
}

bool cifar_files_present(const fs::path& dir) {
  for (int i = 1; i <= 5; ++i) {
    if (!fs::is_regular_file(dir / ("data_batch_" + std::to_string(i) + ".bin"))) return false;
  }
  return fs::is_regular_file(dir / "test_batch.bin");
}

// ---------------------------------------------------------------------------
// sampling

std::vector<std::size_t> stratified_indices(const Dataset& dataset, std::size_t n, std::uint64_t seed) {
  if (n < 1 || n > dataset.size()) {
    throw ValueError("subset size " + std::to_string(n) + " outside [1, " +
                     std::to_string(dataset.size()) + "]");
  }
  std::array<std::vector<std::size_t>, kNumClasses> by_class;
  for (std::size_t i = 0; i < dataset.size(); ++i) by_class[dataset.label(i)].push_back(i);

  std::array<std::size_t, kNumClasses> quota{};
  for (std::size_t c = 0; c < kNumClasses; ++c) quota[c] = n / kNumClasses + (c < n % kNumClasses ? 1 : 0);
  std::size_t deficit = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (quota[c] > by_class[c].size()) {
      deficit += quota[c] - by_class[c].size();
      quota[c] = by_class[c].size();
    }
  }
  while (deficit > 0) {
    for (std::size_t c = 0; c < kNumClasses && deficit > 0; ++c) {
      if (quota[c] < by_class[c].size()) {
        ++quota[c];
        --deficit;
      }
    }
  }

  std::mt19937_64 rng(splitmix64(seed));
  std::vector<std::size_t> picked;
  picked.reserve(n);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    auto& pool = by_class[c];
    std::shuffle(pool.begin(), pool.end(), rng);
    picked.insert(picked.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(quota[c]));
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

Dataset subset(const Dataset& dataset, std::size_t n, std::uint64_t seed) {
  return dataset.select(stratified_indices(dataset, n, seed));
}

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(epoch))));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

BatchIterator::BatchIterator(std::shared_ptr<const Dataset> dataset, std::size_t batch_size,
                             std::uint64_t seed)
    : dataset_(std::move(dataset)), batch_size_(batch_size), seed_(seed) {
  if (batch_size_ < 1) throw ValueError("batch size must be at least 1");
  if (!dataset_ || dataset_->empty()) throw ValueError("batch iterator needs a non-empty dataset");
  begin_epoch(1);
}

void BatchIterator::begin_epoch(int epoch) {
  order_ = epoch_permutation(dataset_->size(), seed_, epoch);
  cursor_ = 0;
}

std::optional<Batch> BatchIterator::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
  Batch batch;
  batch.indices.assign(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                       order_.begin() + static_cast<std::ptrdiff_t>(end));
  batch.images = dataset_->images(batch.indices);
  batch.labels = dataset_->one_hot(batch.indices);
  cursor_ = end;
  return batch;
}

std::size_t BatchIterator::batches_per_epoch() const noexcept {
  return (dataset_->size() + batch_size_ - 1) / batch_size_;
}

BatchIterator merge_shuffle_batch(std::span<const Dataset> datasets, std::size_t batch_size,
                                  std::uint64_t seed) {
  if (batch_size < 1) throw ValueError("batch size must be at least 1");
  return BatchIterator(std::make_shared<const Dataset>(merge(datasets)), batch_size, seed);
}

// ---------------------------------------------------------------------------
// synthetic data

namespace {

constexpr std::size_t kPlane = kImageSide * kImageSide;

// Sum of a few low-frequency plane waves per channel around a base colour.
std::vector<double> smooth_pattern(std::mt19937_64& rng, double amplitude) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> freq(-3, 3);
  std::vector<double> img(kImageBytes);
  for (std::size_t c = 0; c < kImageChannels; ++c) {
    const double base = 0.2 + 0.6 * unit(rng);
    double* plane = img.data() + c * kPlane;
    std::fill(plane, plane + kPlane, base);
    for (int wave = 0; wave < 3; ++wave) {
      int fx = freq(rng), fy = freq(rng);
      if (fx == 0 && fy == 0) fx = 1;
      const double phase = 2.0 * std::numbers::pi * unit(rng);
      const double amp = amplitude * (0.5 + unit(rng));
      for (std::size_t y = 0; y < kImageSide; ++y) {
        for (std::size_t x = 0; x < kImageSide; ++x) {
          const double t = 2.0 * std::numbers::pi * (fx * static_cast<double>(x) + fy * static_cast<double>(y)) /
                           static_cast<double>(kImageSide);
          plane[y * kImageSide + x] += amp * std::sin(t + phase);
        }
      }
    }
  }
  return img;
}

}  // namespace

Dataset make_synthetic_cifar(std::size_t per_class, std::uint64_t seed) {
  if (per_class == 0) throw ValueError("synthetic dataset needs at least one image per class");
  std::mt19937_64 rng(splitmix64(seed));
  std::vector<std::vector<double>> prototypes;
  for (std::size_t c = 0; c < kNumClasses; ++c) prototypes.push_back(smooth_pattern(rng, 0.12));
  std::vector<std::vector<double>> distractors;
  for (int d = 0; d < 32; ++d) distractors.push_back(smooth_pattern(rng, 0.15));

  std::vector<std::uint8_t> labels;
  for (std::size_t c = 0; c < kNumClasses; ++c) labels.insert(labels.end(), per_class, static_cast<std::uint8_t>(c));
  std::shuffle(labels.begin(), labels.end(), rng);

  std::uniform_int_distribution<int> shift(-4, 4);
  std::uniform_int_distribution<std::size_t> pick(0, distractors.size() - 1);
  std::uniform_real_distribution<double> contrast(0.5, 1.2);
  std::uniform_real_distribution<double> mix(0.35, 0.65);
  std::normal_distribution<double> noise(0.0, 0.10);

  std::vector<std::uint8_t> pixels(labels.size() * kImageBytes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto& proto = prototypes[labels[i]];
    const auto& other = distractors[pick(rng)];
    const int dx = shift(rng), dy = shift(rng);
    const int ox = shift(rng), oy = shift(rng);
    const double alpha = contrast(rng);
    const double m = mix(rng);
    std::uint8_t* dst = pixels.data() + i * kImageBytes;
    for (std::size_t c = 0; c < kImageChannels; ++c) {
      for (std::size_t y = 0; y < kImageSide; ++y) {
        for (std::size_t x = 0; x < kImageSide; ++x) {
          const auto wrap = [](std::size_t v, int d) {
            return static_cast<std::size_t>((static_cast<int>(v) + d + static_cast<int>(kImageSide)) %
                                            static_cast<int>(kImageSide));
          };
          const double p = proto[c * kPlane + wrap(y, dy) * kImageSide + wrap(x, dx)];
          const double q = other[c * kPlane + wrap(y, oy) * kImageSide + wrap(x, ox)];
          double v = (1.0 - m) * (alpha * (p - 0.5) + 0.5) + m * q + noise(rng);
          v = std::clamp(v, 0.0, 1.0);
          dst[c * kPlane + y * kImageSide + x] = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
      }
    }
  }
  return Dataset(std::move(pixels), std::move(labels));
}

void write_synthetic_cifar_dir(const fs::path& dir, std::uint64_t seed) {
  fs::create_directories(dir);
  // One generator call keeps train and test on the same class prototypes.
  const Dataset all = make_synthetic_cifar(6000, seed);
  std::array<std::vector<std::size_t>, kNumClasses> by_class;
  for (std::size_t i = 0; i < all.size(); ++i) by_class[all.label(i)].push_back(i);
  std::vector<std::size_t> train_idx, test_idx;
  for (const auto& pool : by_class) {
    test_idx.insert(test_idx.end(), pool.begin(), pool.begin() + 1000);
    train_idx.insert(train_idx.end(), pool.begin() + 1000, pool.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  const Dataset train = all.select(train_idx);
  for (std::size_t b = 0; b < 5; ++b) {
    std::vector<std::size_t> part(kRecordsPerBatch);
    for (std::size_t i = 0; i < kRecordsPerBatch; ++i) part[i] = b * kRecordsPerBatch + i;
    write_cifar_binary(train.select(part), dir / ("data_batch_" + std::to_string(b + 1) + ".bin"));
  }
  write_cifar_binary(all.select(test_idx), dir / "test_batch.bin");
}

// ---------------------------------------------------------------------------
// fetch

std::string md5_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string() + " for checksumming");
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_md5(), nullptr) != 1) {
    throw DataError("MD5 digest unavailable");
  }
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return hex.str();
}

void fetch_cifar(const fs::path& dir, const std::string& url, const std::string& md5) {
  fs::create_directories(dir);
  const fs::path archive = dir / "cifar-10-binary.tar.gz";
  const std::string download =
      "curl -fsSL -o " + shell_quote(archive.string()) + " " + shell_quote(url);
  if (std::system(download.c_str()) != 0) throw DataError("download failed: " + url);

  const std::string actual = md5_file(archive);
  if (actual != md5) {
    throw DataError("checksum mismatch for " + archive.string() + ": expected " + md5 + ", got " + actual);
  }
  const std::string extract = "tar -xzf " + shell_quote(archive.string()) + " -C " + shell_quote(dir.string());
  if (std::system(extract.c_str()) != 0) throw DataError("could not extract " + archive.string());

  const fs::path inner = dir / "cifar-10-batches-bin";
  if (fs::is_directory(inner)) {
    for (const auto& entry : fs::directory_iterator(inner)) {
      fs::rename(entry.path(), dir / entry.path().filename());
    }
    fs::remove(inner);
  }
  if (!cifar_files_present(dir)) {
    throw DataError("archive did not contain the expected CIFAR-10 batch files");
  }
}

}  // namespace actgrad
