#pragma once

#include <cstdint>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace sscl {

// Error taxonomy. CLI maps these onto exit codes: config -> 2,
// data/format -> 3, numeric abort -> 4.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct dim_error : error {
  using error::error;
};
struct config_error : error {
  using error::error;
};
struct format_error : error {
  using error::error;
};
struct data_error : error {
  using error::error;
};
struct contract_error : error {
  using error::error;
};
struct numeric_error : error {
  using error::error;
};

// splitmix64: tiny, seedable, stable across platforms. All randomness in
// the project flows through this so runs are bit-reproducible.
struct SplitMix64 {
  std::uint64_t state{0};

  explicit SplitMix64(std::uint64_t seed = 0) : state(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n ? next() % n : 0; }

  /// Standard normal via Box-Muller (pairs not cached).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }
};

/// Derive an independent stream from (seed, index); splitmix-style so
/// per-row augmentation draws stay deterministic under any scheduling.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  SplitMix64 g(seed ^ (0x9e3779b97f4a7c15ULL + index * 0xbf58476d1ce4e5b9ULL));
  return g.next();
}

// FNV-1a, used for dataset content fingerprints.
inline std::uint64_t fnv1a64(const void* bytes, std::size_t len,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::vector<double>& v,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64(v.data(), v.size() * sizeof(double), h);
}

}  // namespace sscl
