#pragma once

// Bit-exact loaders for MNIST IDX and CIFAR-10 binary files, a procedural
// synthetic dataset for CI-scale runs, and the seeded batch iterator.
// Pixels are scaled to [0,1] at load; per-channel standardization is the
// augmenter's job.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "sscl/common.hpp"

namespace sscl {

struct ImageDataset {
  std::vector<double> images;  // [count x channels x H x W], values in [0,1]
  std::vector<int> labels;
  std::int64_t count = 0;
  std::int64_t channels = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::string name;
  int class_count = 0;

  std::int64_t image_size() const { return channels * height * width; }
  const double* image(std::int64_t i) const {
    return images.data() + i * image_size();
  }

  std::uint64_t fingerprint() const {
    std::uint64_t h = fnv1a64(images);
    return fnv1a64(labels.data(), labels.size() * sizeof(int), h);
  }

  /// First n images (used for desk-scale subsets).
  ImageDataset take(std::int64_t n) const {
    ImageDataset out = *this;
    out.count = std::min(n, count);
    out.images.assign(images.begin(),
                      images.begin() + out.count * image_size());
    out.labels.assign(labels.begin(), labels.begin() + out.count);
    return out;
  }
};

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw data_error("cannot open file: " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off,
                          const std::string& path) {
  if (off + 4 > b.size()) throw format_error("truncated IDX header: " + path);
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
         (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

}  // namespace detail

/// MNIST IDX pair: big-endian magic 2051 (images) / 2049 (labels), big-endian
/// dimension sizes, then unsigned bytes. Pixels scaled by 1/255.
inline ImageDataset load_mnist_idx(const std::string& image_path,
                                   const std::string& label_path) {
  auto ib = detail::read_file(image_path);
  auto lb = detail::read_file(label_path);
  const std::uint32_t imagic = detail::be32(ib, 0, image_path);
  if (imagic != 2051)
    throw format_error("IDX image magic: expected 2051, found " +
                       std::to_string(imagic) + " in " + image_path);
  const std::uint32_t lmagic = detail::be32(lb, 0, label_path);
  if (lmagic != 2049)
    throw format_error("IDX label magic: expected 2049, found " +
                       std::to_string(lmagic) + " in " + label_path);
  const std::uint32_t n = detail::be32(ib, 4, image_path);
  const std::uint32_t h = detail::be32(ib, 8, image_path);
  const std::uint32_t w = detail::be32(ib, 12, image_path);
  const std::uint32_t ln = detail::be32(lb, 4, label_path);
  if (ln != n)
    throw format_error("IDX image/label counts disagree: " + std::to_string(n) +
                       " vs " + std::to_string(ln));
  const std::size_t need = 16 + std::size_t(n) * h * w;
  if (ib.size() < need)
    throw format_error("truncated IDX image file: " + image_path + " (need " +
                       std::to_string(need) + " bytes, have " +
                       std::to_string(ib.size()) + ")");
  if (lb.size() < 8 + n)
    throw format_error("truncated IDX label file: " + label_path);
  ImageDataset d;
  d.count = n;
  d.channels = 1;
  d.height = h;
  d.width = w;
  d.name = "mnist";
  d.class_count = 10;
  d.images.resize(std::size_t(n) * h * w);
  for (std::size_t i = 0; i < d.images.size(); ++i)
    d.images[i] = static_cast<double>(ib[16 + i]) / 255.0;
  d.labels.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) d.labels[i] = lb[8 + i];
  return d;
}

/// CIFAR-10 binary: 3073-byte records, 1 label byte + 1024 bytes per RGB
/// plane, row-major 32x32. Pixels scaled by 1/255.
inline ImageDataset load_cifar10_binary(const std::vector<std::string>& paths) {
  ImageDataset d;
  d.channels = 3;
  d.height = 32;
  d.width = 32;
  d.name = "cifar10";
  d.class_count = 10;
  constexpr std::size_t kRecord = 3073;
  for (const auto& path : paths) {
    auto bytes = detail::read_file(path);
    if (bytes.size() % kRecord != 0)
      throw format_error("CIFAR-10 file length " + std::to_string(bytes.size()) +
                         " is not a multiple of 3073: " + path);
    const std::size_t records = bytes.size() / kRecord;
    for (std::size_t r = 0; r < records; ++r) {
      const unsigned char* rec = bytes.data() + r * kRecord;
      d.labels.push_back(rec[0]);
      for (std::size_t p = 0; p < 3072; ++p)
        d.images.push_back(static_cast<double>(rec[1 + p]) / 255.0);
    }
  }
  d.count = static_cast<std::int64_t>(d.labels.size());
  return d;
}

/// Deterministic procedural dataset: class c draws an oriented sinusoidal
/// grating at angle pi*c/classes with per-sample frequency/phase jitter and
/// light pixel noise. Classes are 1-NN separable on raw pixels.
inline ImageDataset make_synthetic(int class_count, int per_class,
                                   std::int64_t size, std::uint64_t seed) {
  if (size < 8) throw config_error("make_synthetic: size must be >= 8");
  if (class_count < 1 || per_class < 1)
    throw config_error("make_synthetic: counts must be positive");
  ImageDataset d;
  d.count = std::int64_t(class_count) * per_class;
  d.channels = 1;
  d.height = size;
  d.width = size;
  d.name = "synthetic";
  d.class_count = class_count;
  d.images.resize(d.count * size * size);
  d.labels.resize(d.count);
  const double pi = 3.14159265358979323846;
  std::int64_t idx = 0;
  for (int c = 0; c < class_count; ++c) {
    const double angle = pi * c / class_count;
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (int s = 0; s < per_class; ++s, ++idx) {
      SplitMix64 rng(derive_seed(seed, static_cast<std::uint64_t>(idx)));
      // jitter kept small so raw-pixel 1-NN still separates the classes
      const double freq = 2.0 + 0.2 * rng.uniform(-1.0, 1.0);
      const double phase = rng.uniform(0.0, 0.25 * pi);
      double* img = d.images.data() + idx * size * size;
      for (std::int64_t y = 0; y < size; ++y)
        for (std::int64_t x = 0; x < size; ++x) {
          const double u = (x + 0.5) / size - 0.5, v = (y + 0.5) / size - 0.5;
          const double t = ca * u + sa * v;
          double val = 0.5 + 0.35 * std::sin(2.0 * pi * freq * t + phase) +
                       0.05 * rng.uniform(-1.0, 1.0);
          img[y * size + x] = std::clamp(val, 0.0, 1.0);
        }
      d.labels[idx] = c;
    }
  }
  return d;
}

struct BatchPlan {
  std::uint64_t seed = 0;
  std::int64_t batch_size = 128;
  bool drop_last = true;
};

/// Deterministic shuffled partition of [0, count) for (seed, epoch).
inline std::vector<std::vector<std::int64_t>> iterate_batches(
    std::int64_t count, const BatchPlan& plan, int epoch) {
  if (plan.batch_size < 1)
    throw config_error("iterate_batches: batch_size must be positive");
  if (plan.batch_size > count)
    throw config_error("iterate_batches: batch_size " +
                       std::to_string(plan.batch_size) + " exceeds dataset size " +
                       std::to_string(count));
  std::vector<std::int64_t> perm(static_cast<std::size_t>(count));
  std::iota(perm.begin(), perm.end(), 0);
  SplitMix64 rng(derive_seed(plan.seed, static_cast<std::uint64_t>(epoch)));
  for (std::int64_t i = count - 1; i > 0; --i) {
    const auto j = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  std::vector<std::vector<std::int64_t>> batches;
  for (std::int64_t start = 0; start < count; start += plan.batch_size) {
    const std::int64_t end = std::min(start + plan.batch_size, count);
    if (plan.drop_last && end - start < plan.batch_size) break;
    batches.emplace_back(perm.begin() + start, perm.begin() + end);
  }
  return batches;
}

}  // namespace sscl
