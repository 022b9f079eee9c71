#include <doctest.h>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "sscl/common.hpp"
#include "sscl/dataset.hpp"

using namespace sscl;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  auto p = fs::temp_directory_path() / "sscl_dataset_tests";
  fs::create_directories(p);
  return p;
}

void put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v >> 24));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v));
}

void write_bytes(const fs::path& path, const std::vector<unsigned char>& b) {
  std::ofstream f(path, std::ios::binary);
  f.write(reinterpret_cast<const char*>(b.data()),
          static_cast<std::streamsize>(b.size()));
}

// Minimal IDX writer used only as the loader's oracle.
void write_idx_pair(const fs::path& img_path, const fs::path& lbl_path,
                    std::uint32_t n, std::uint32_t h, std::uint32_t w,
                    const std::vector<unsigned char>& pixels,
                    const std::vector<unsigned char>& labels,
                    std::uint32_t img_magic = 2051,
                    std::uint32_t lbl_magic = 2049) {
  std::vector<unsigned char> ib;
  put_be32(ib, img_magic);
  put_be32(ib, n);
  put_be32(ib, h);
  put_be32(ib, w);
  ib.insert(ib.end(), pixels.begin(), pixels.end());
  write_bytes(img_path, ib);
  std::vector<unsigned char> lb;
  put_be32(lb, lbl_magic);
  put_be32(lb, n);
  lb.insert(lb.end(), labels.begin(), labels.end());
  write_bytes(lbl_path, lb);
}

}  // namespace

TEST_CASE("mnist idx round-trip, pixel scaling, and labels") {
  auto dir = temp_dir();
  const std::uint32_t n = 3, h = 2, w = 2;
  std::vector<unsigned char> px = {0, 255, 128, 64, 1, 2, 3, 4, 250, 251, 252, 253};
  std::vector<unsigned char> lb = {7, 0, 9};
  auto ip = dir / "imgs.idx", lp = dir / "lbls.idx";
  write_idx_pair(ip, lp, n, h, w, px, lb);
  auto d = load_mnist_idx(ip.string(), lp.string());
  CHECK(d.count == 3);
  CHECK(d.channels == 1);
  CHECK(d.height == 2);
  CHECK(d.width == 2);
  CHECK(d.images[0] == 0.0);
  CHECK(d.images[1] == 1.0);  // byte 255 maps exactly to 1.0
  CHECK(d.images[2] == doctest::Approx(128.0 / 255.0));
  CHECK(d.labels == std::vector<int>{7, 0, 9});
}

TEST_CASE("mnist idx error reporting") {
  auto dir = temp_dir();
  auto ip = dir / "bad_imgs.idx", lp = dir / "bad_lbls.idx";

  SUBCASE("wrong image magic names both values") {
    write_idx_pair(ip, lp, 1, 2, 2, std::vector<unsigned char>(4, 0), {1}, 1234);
    try {
      load_mnist_idx(ip.string(), lp.string());
      FAIL("expected format_error");
    } catch (const format_error& e) {
      const std::string msg = e.what();
      CHECK(msg.find("2051") != std::string::npos);
      CHECK(msg.find("1234") != std::string::npos);
    }
  }
  SUBCASE("wrong label magic") {
    write_idx_pair(ip, lp, 1, 2, 2, std::vector<unsigned char>(4, 0), {1}, 2051, 99);
    CHECK_THROWS_AS(load_mnist_idx(ip.string(), lp.string()), format_error);
  }
  SUBCASE("count mismatch between files") {
    std::vector<unsigned char> ib, lb2;
    put_be32(ib, 2051); put_be32(ib, 2); put_be32(ib, 2); put_be32(ib, 2);
    ib.insert(ib.end(), 8, 0);
    write_bytes(ip, ib);
    put_be32(lb2, 2049); put_be32(lb2, 3);
    lb2.insert(lb2.end(), 3, 0);
    write_bytes(lp, lb2);
    CHECK_THROWS_AS(load_mnist_idx(ip.string(), lp.string()), format_error);
  }
  SUBCASE("truncated pixel payload") {
    write_idx_pair(ip, lp, 2, 2, 2, std::vector<unsigned char>(7, 0), {1, 2});
    CHECK_THROWS_AS(load_mnist_idx(ip.string(), lp.string()), format_error);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_mnist_idx((dir / "nope.idx").string(), lp.string()),
                    data_error);
  }
}

TEST_CASE("cifar10 binary round-trip and record checks") {
  auto dir = temp_dir();
  auto path = dir / "cifar_batch.bin";
  // two records
  std::vector<unsigned char> bytes;
  for (int r = 0; r < 2; ++r) {
    bytes.push_back(static_cast<unsigned char>(r == 0 ? 3 : 8));
    for (int p = 0; p < 3072; ++p)
      bytes.push_back(static_cast<unsigned char>((r * 31 + p) % 256));
  }
  write_bytes(path, bytes);
  auto d = load_cifar10_binary({path.string()});
  CHECK(d.count == 2);
  CHECK(d.channels == 3);
  CHECK(d.height == 32);
  CHECK(d.width == 32);
  CHECK(d.labels == std::vector<int>{3, 8});
  CHECK(d.images[0] == doctest::Approx(0.0 / 255.0));
  CHECK(d.images[5] == doctest::Approx(5.0 / 255.0));
  // second record starts at offset 3072 and its first pixel byte is 31+0
  CHECK(d.images[3072] == doctest::Approx(31.0 / 255.0));

  SUBCASE("length not a multiple of 3073") {
    bytes.pop_back();
    write_bytes(path, bytes);
    CHECK_THROWS_AS(load_cifar10_binary({path.string()}), format_error);
  }
  SUBCASE("multiple files concatenate") {
    auto p2 = dir / "cifar_batch2.bin";
    write_bytes(p2, bytes);
    auto d2 = load_cifar10_binary({path.string(), p2.string()});
    CHECK(d2.count == 4);
    CHECK(d2.labels == std::vector<int>{3, 8, 3, 8});
  }
}

TEST_CASE("synthetic dataset: shape, labels, determinism, range") {
  auto d = make_synthetic(4, 10, 16, 42);
  CHECK(d.count == 40);
  CHECK(d.channels == 1);
  CHECK(d.height == 16);
  CHECK(d.width == 16);
  CHECK(d.class_count == 4);
  for (int c = 0; c < 4; ++c)
    CHECK(std::count(d.labels.begin(), d.labels.end(), c) == 10);
  for (double v : d.images) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  auto d2 = make_synthetic(4, 10, 16, 42);
  CHECK(d.images == d2.images);
  CHECK(d.fingerprint() == d2.fingerprint());
  auto d3 = make_synthetic(4, 10, 16, 43);
  CHECK(d.fingerprint() != d3.fingerprint());

  CHECK_THROWS_AS(make_synthetic(4, 10, 4, 1), config_error);
  CHECK_THROWS_AS(make_synthetic(0, 10, 16, 1), config_error);
}

TEST_CASE("synthetic dataset: raw-pixel 1-NN separates classes >= 90%") {
  auto train = make_synthetic(10, 20, 16, 7);
  auto test = make_synthetic(10, 5, 16, 8);
  const std::int64_t dim = train.image_size();
  std::int64_t correct = 0;
  for (std::int64_t i = 0; i < test.count; ++i) {
    double best = 1e300;
    int best_label = -1;
    for (std::int64_t j = 0; j < train.count; ++j) {
      double dist = 0;
      const double* a = test.image(i);
      const double* b = train.image(j);
      for (std::int64_t k = 0; k < dim; ++k) dist += (a[k] - b[k]) * (a[k] - b[k]);
      if (dist < best) {
        best = dist;
        best_label = train.labels[j];
      }
    }
    if (best_label == test.labels[i]) ++correct;
  }
  CHECK(static_cast<double>(correct) / test.count >= 0.90);
}

TEST_CASE("iterate_batches: partition, determinism, drop_last") {
  BatchPlan plan{123, 32, true};
  auto batches = iterate_batches(130, plan, 0);
  CHECK(batches.size() == 4);  // 130/32 with drop_last leaves 4 full batches
  std::set<std::int64_t> seen;
  for (const auto& b : batches) {
    CHECK(b.size() == 32);
    for (auto i : b) {
      CHECK(i >= 0);
      CHECK(i < 130);
      CHECK(seen.insert(i).second);  // no duplicates across batches
    }
  }

  SUBCASE("same (seed, epoch) reproduces exactly; epochs differ") {
    CHECK(iterate_batches(130, plan, 0) == batches);
    CHECK(iterate_batches(130, plan, 1) != batches);
    BatchPlan other{124, 32, true};
    CHECK(iterate_batches(130, other, 0) != batches);
  }
  SUBCASE("drop_last=false keeps the short tail") {
    BatchPlan keep{123, 32, false};
    auto all = iterate_batches(130, keep, 0);
    CHECK(all.size() == 5);
    CHECK(all.back().size() == 2);
  }
  SUBCASE("batch size larger than dataset is rejected") {
    BatchPlan big{1, 200, true};
    CHECK_THROWS_AS(iterate_batches(130, big, 0), config_error);
  }
}

TEST_CASE("take() truncates images and labels consistently") {
  auto d = make_synthetic(3, 4, 8, 5);
  auto t = d.take(5);
  CHECK(t.count == 5);
  CHECK(t.labels.size() == 5);
  CHECK(static_cast<std::int64_t>(t.images.size()) == 5 * d.image_size());
  CHECK(std::equal(t.images.begin(), t.images.end(), d.images.begin()));
}
