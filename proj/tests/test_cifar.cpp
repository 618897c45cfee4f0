#include <algorithm>
#include <filesystem>
#include <fstream>
#include <memory>
#include <unistd.h>

#include "doctest.h"

#include "actgrad/cifar.hpp"

using namespace actgrad;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() : path(fs::temp_directory_path() / ("actgrad_cifar_" + std::to_string(::getpid()))) {
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Dataset counting_dataset(std::size_t n) {
  std::vector<std::uint8_t> pixels(n * kImageBytes), labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<std::uint8_t>(i % kNumClasses);
    for (std::size_t j = 0; j < kImageBytes; ++j) pixels[i * kImageBytes + j] = static_cast<std::uint8_t>(i + j);
  }
  return Dataset(std::move(pixels), std::move(labels));
}

}  // namespace

TEST_CASE("record layout") {
  TempDir tmp;
  SUBCASE("a full batch is 30,730,000 bytes") {
    const Dataset d = make_synthetic_cifar(1000, 1);
    CHECK(d.size() == kRecordsPerBatch);
    write_cifar_binary(d, tmp.path / "b.bin");
    CHECK(fs::file_size(tmp.path / "b.bin") == 30'730'000u);
    CHECK(load_cifar_binary(tmp.path / "b.bin") == d);
  }
  SUBCASE("label byte then channel-major pixels scaled by 1/255") {
    std::vector<std::uint8_t> record(kRecordBytes, 255);
    record[0] = 6;
    record[1] = 0;
    write_bytes(tmp.path / "one.bin", record);
    const Dataset d = load_cifar_binary(tmp.path / "one.bin", std::nullopt);
    REQUIRE(d.size() == 1);
    CHECK(d.label(0) == 6);
    const Tensor x = d.images();
    CHECK(x.shape() == Shape{1, 3, 32, 32});
    CHECK(x[0] == 0.0);
    CHECK(x[1] == 1.0);
    CHECK(x[3071] == 1.0);
    const Tensor y = d.one_hot();
    CHECK(y.shape() == Shape{1, 10});
    CHECK(y[6] == 1.0);
  }
  SUBCASE("wrong length") {
    write_bytes(tmp.path / "short.bin", std::vector<std::uint8_t>(kRecordBytes * 2 + 5));
    CHECK_THROWS_AS(load_cifar_binary(tmp.path / "short.bin", std::nullopt), DataError);
    write_bytes(tmp.path / "two.bin", std::vector<std::uint8_t>(kRecordBytes * 2));
    CHECK_THROWS_AS(load_cifar_binary(tmp.path / "two.bin"), DataError);
    CHECK(load_cifar_binary(tmp.path / "two.bin", 2).size() == 2);
  }
  SUBCASE("bad label byte") {
    std::vector<std::uint8_t> record(kRecordBytes, 0);
    record[0] = 10;
    write_bytes(tmp.path / "bad.bin", record);
    CHECK_THROWS_AS(load_cifar_binary(tmp.path / "bad.bin", std::nullopt), DataError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_cifar_binary(tmp.path / "none.bin"), DataError);
    CHECK_FALSE(cifar_files_present(tmp.path));
  }
}

TEST_CASE("round trip is byte-identical") {
  TempDir tmp;
  const Dataset d = counting_dataset(2);
  write_cifar_binary(d, tmp.path / "a.bin");
  const Dataset back = load_cifar_binary(tmp.path / "a.bin", std::nullopt);
  CHECK(back == d);
  write_cifar_binary(back, tmp.path / "b.bin");
  std::ifstream a(tmp.path / "a.bin", std::ios::binary), b(tmp.path / "b.bin", std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
  CHECK(sa.size() == 2 * kRecordBytes);
  CHECK(sa == sb);
}

TEST_CASE("md5") {
  TempDir tmp;
  write_bytes(tmp.path / "abc", {'a', 'b', 'c'});
  CHECK(md5_file(tmp.path / "abc") == "900150983cd24fb0d6963f7d28e17f72");
}

TEST_CASE("batch iteration") {
  auto data = std::make_shared<const Dataset>(make_synthetic_cifar(5000, 2));
  REQUIRE(data->size() == 50000);
  BatchIterator it(data, 64, 7);
  CHECK(it.batches_per_epoch() == 782);
  it.begin_epoch(1);
  std::size_t batches = 0, full = 0, last = 0;
  std::vector<std::size_t> seen;
  std::array<std::size_t, kNumClasses> labels{};
  while (auto b = it.next()) {
    ++batches;
    if (b->indices.size() == 64) ++full;
    last = b->indices.size();
    seen.insert(seen.end(), b->indices.begin(), b->indices.end());
    for (auto i : b->indices) ++labels[data->label(i)];
  }
  CHECK(batches == 782);
  CHECK(full == 781);
  CHECK(last == 16);
  std::sort(seen.begin(), seen.end());
  for (std::size_t i = 0; i < seen.size(); ++i) REQUIRE(seen[i] == i);
  CHECK(labels == data->class_counts());
}

TEST_CASE("batch contents match the dataset") {
  auto data = std::make_shared<const Dataset>(counting_dataset(10));
  BatchIterator it(data, 4, 1);
  it.begin_epoch(3);
  const auto b = it.next();
  REQUIRE(b);
  CHECK(b->images.shape() == Shape{4, 3, 32, 32});
  CHECK(b->labels.shape() == Shape{4, 10});
  for (std::size_t r = 0; r < 4; ++r) {
    CHECK(b->images[r * kImageBytes] == data->image_bytes(b->indices[r])[0] / 255.0);
    CHECK(b->labels[r * 10 + data->label(b->indices[r])] == 1.0);
  }
  CHECK_THROWS_AS(BatchIterator(data, 0, 1), ValueError);
}

TEST_CASE("epoch permutations") {
  CHECK(epoch_permutation(1000, 5, 1) == epoch_permutation(1000, 5, 1));
  CHECK(epoch_permutation(1000, 5, 1) != epoch_permutation(1000, 5, 2));
  CHECK(epoch_permutation(1000, 5, 1) != epoch_permutation(1000, 6, 1));
  auto p = epoch_permutation(1000, 5, 1);
  std::sort(p.begin(), p.end());
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == i);
}

TEST_CASE("merged shuffles") {
  const Dataset a = counting_dataset(30), b = counting_dataset(20);
  const std::vector<Dataset> parts{a, b};
  auto it = merge_shuffle_batch(parts, 8, 3);
  CHECK(it.dataset().size() == 50);
  it.begin_epoch(1);
  std::array<std::size_t, kNumClasses> counts{};
  while (auto batch = it.next()) {
    for (auto i : batch->indices) ++counts[it.dataset().label(i)];
  }
  auto expected = a.class_counts();
  for (std::size_t k = 0; k < kNumClasses; ++k) expected[k] += b.class_counts()[k];
  CHECK(counts == expected);
}

TEST_CASE("stratified subsets") {
  const Dataset d = make_synthetic_cifar(200, 4);
  const Dataset s = subset(d, 1000, 9);
  CHECK(s.size() == 1000);
  for (auto c : s.class_counts()) CHECK(c == 100);
  CHECK(subset(d, 1000, 9) == s);
  CHECK(subset(d, 1000, 10) != s);

  const auto odd = subset(d, 1005, 9).class_counts();
  for (std::size_t k = 0; k < kNumClasses; ++k) CHECK(odd[k] == (k < 5 ? 101u : 100u));

  CHECK_THROWS_AS(subset(d, 0, 1), ValueError);
  CHECK_THROWS_AS(subset(d, 2001, 1), ValueError);
  CHECK(subset(d, 2000, 1).class_counts() == d.class_counts());
}

TEST_CASE("synthetic data is balanced and deterministic") {
  const Dataset d = make_synthetic_cifar(50, 11);
  for (auto c : d.class_counts()) CHECK(c == 50);
  CHECK(make_synthetic_cifar(50, 11) == d);
  CHECK_THROWS_AS(make_synthetic_cifar(0, 1), ValueError);
  CHECK_THROWS_AS(Dataset(std::vector<std::uint8_t>(kImageBytes), {10}), DataError);
  CHECK_THROWS_AS(Dataset(std::vector<std::uint8_t>(5), {1}), DataError);
}
