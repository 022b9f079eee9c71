#pragma once

// The stochastic two-view transformation family producing positive pairs:
// random crop + bilinear resize, horizontal flip, color jitter, random
// grayscale, then optional per-channel standardization. Per-sample draws use
// seeds derived splitmix-style from (batch seed, row, view), so rows are
// order-independent and bit-reproducible.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sscl/common.hpp"
#include "sscl/dataset.hpp"

namespace sscl {

struct TransformSpec {
  double crop_scale_min = 0.2;   // area fractions
  double crop_scale_max = 1.0;
  double flip_prob = 0.5;
  double jitter_prob = 0.8;
  double jitter_strength = 0.4;  // brightness/contrast/saturation delta
  double grayscale_prob = 0.2;
  std::int64_t output_size = 0;  // 0 = keep source size

  void validate() const {
    if (!(crop_scale_min > 0 && crop_scale_min <= crop_scale_max &&
          crop_scale_max <= 1.0))
      throw config_error("transform: need 0 < crop_scale_min <= crop_scale_max <= 1");
    for (double p : {flip_prob, jitter_prob, grayscale_prob})
      if (p < 0 || p > 1)
        throw config_error("transform: probabilities must lie in [0,1]");
  }

  static TransformSpec identity() {
    TransformSpec s;
    s.crop_scale_min = s.crop_scale_max = 1.0;
    s.flip_prob = s.jitter_prob = s.grayscale_prob = 0.0;
    return s;
  }
};

/// Per-channel standardization constants, computed once from the training
/// split so curation and training see identical preprocessing.
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

inline ChannelStats compute_channel_stats(const ImageDataset& d) {
  ChannelStats cs;
  cs.mean.assign(static_cast<std::size_t>(d.channels), 0.0);
  cs.stddev.assign(static_cast<std::size_t>(d.channels), 0.0);
  const std::int64_t hw = d.height * d.width;
  const double n = static_cast<double>(d.count * hw);
  for (std::int64_t i = 0; i < d.count; ++i)
    for (std::int64_t c = 0; c < d.channels; ++c) {
      const double* p = d.image(i) + c * hw;
      for (std::int64_t k = 0; k < hw; ++k)
        cs.mean[static_cast<std::size_t>(c)] += p[k];
    }
  for (auto& m : cs.mean) m /= n;
  for (std::int64_t i = 0; i < d.count; ++i)
    for (std::int64_t c = 0; c < d.channels; ++c) {
      const double* p = d.image(i) + c * hw;
      for (std::int64_t k = 0; k < hw; ++k) {
        const double v = p[k] - cs.mean[static_cast<std::size_t>(c)];
        cs.stddev[static_cast<std::size_t>(c)] += v * v;
      }
    }
  for (auto& s : cs.stddev) s = std::max(std::sqrt(s / n), 1e-8);
  return cs;
}

struct AugmentedBatchPair {
  // [N x C x H x W] flattened, pre- or post-standardization per make_pair
  std::vector<double> view1;
  std::vector<double> view2;
  std::vector<std::int64_t> source_indices;
  std::vector<std::uint64_t> draw_seeds;  // 2 per row: view1, view2
  std::int64_t channels = 0, height = 0, width = 0;

  std::int64_t batch() const {
    return static_cast<std::int64_t>(source_indices.size());
  }
  std::int64_t image_size() const { return channels * height * width; }
};

// ---------------------------------------------------------------------------
// Single-image transforms. Images are C x H x W in [0,1].

/// Bilinear resize with half-pixel centers: source coordinate of output
/// pixel o is (o + 0.5) * in/out - 0.5, clamped to the valid range.
inline std::vector<double> bilinear_resize(const std::vector<double>& img,
                                           std::int64_t channels,
                                           std::int64_t in_h, std::int64_t in_w,
                                           std::int64_t out_h,
                                           std::int64_t out_w) {
  std::vector<double> out(static_cast<std::size_t>(channels * out_h * out_w));
  const double sy = static_cast<double>(in_h) / out_h;
  const double sx = static_cast<double>(in_w) / out_w;
  for (std::int64_t c = 0; c < channels; ++c) {
    const double* src = img.data() + c * in_h * in_w;
    double* dst = out.data() + c * out_h * out_w;
    for (std::int64_t y = 0; y < out_h; ++y) {
      double fy = (y + 0.5) * sy - 0.5;
      fy = std::clamp(fy, 0.0, static_cast<double>(in_h - 1));
      const auto y0 = static_cast<std::int64_t>(fy);
      const std::int64_t y1 = std::min(y0 + 1, in_h - 1);
      const double wy = fy - y0;
      for (std::int64_t x = 0; x < out_w; ++x) {
        double fx = (x + 0.5) * sx - 0.5;
        fx = std::clamp(fx, 0.0, static_cast<double>(in_w - 1));
        const auto x0 = static_cast<std::int64_t>(fx);
        const std::int64_t x1 = std::min(x0 + 1, in_w - 1);
        const double wx = fx - x0;
        dst[y * out_w + x] =
            (1 - wy) * ((1 - wx) * src[y0 * in_w + x0] + wx * src[y0 * in_w + x1]) +
            wy * ((1 - wx) * src[y1 * in_w + x0] + wx * src[y1 * in_w + x1]);
      }
    }
  }
  return out;
}

/// Square crop with area fraction drawn uniformly from [scale_min, scale_max],
/// then bilinear resize to output_size.
inline std::vector<double> random_crop_resize(const std::vector<double>& img,
                                              std::int64_t channels,
                                              std::int64_t h, std::int64_t w,
                                              double scale_min, double scale_max,
                                              std::int64_t output_size,
                                              SplitMix64& rng) {
  const double area = rng.uniform(scale_min, scale_max);
  const double side_frac = std::sqrt(area);
  const auto ch = std::max<std::int64_t>(
      1, static_cast<std::int64_t>(std::lround(side_frac * h)));
  const auto cw = std::max<std::int64_t>(
      1, static_cast<std::int64_t>(std::lround(side_frac * w)));
  const auto top = static_cast<std::int64_t>(
      rng.below(static_cast<std::uint64_t>(h - ch + 1)));
  const auto left = static_cast<std::int64_t>(
      rng.below(static_cast<std::uint64_t>(w - cw + 1)));
  if (ch == h && cw == w && output_size == h && h == w)
    return img;  // full crop at native size is the identity
  std::vector<double> crop(static_cast<std::size_t>(channels * ch * cw));
  for (std::int64_t c = 0; c < channels; ++c)
    for (std::int64_t y = 0; y < ch; ++y)
      for (std::int64_t x = 0; x < cw; ++x)
        crop[static_cast<std::size_t>((c * ch + y) * cw + x)] =
            img[static_cast<std::size_t>((c * h + top + y) * w + left + x)];
  return bilinear_resize(crop, channels, ch, cw, output_size, output_size);
}

inline std::vector<double> horizontal_flip(const std::vector<double>& img,
                                           std::int64_t channels,
                                           std::int64_t h, std::int64_t w) {
  std::vector<double> out(img.size());
  for (std::int64_t c = 0; c < channels; ++c)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x)
        out[static_cast<std::size_t>((c * h + y) * w + x)] =
            img[static_cast<std::size_t>((c * h + y) * w + (w - 1 - x))];
  return out;
}

namespace detail {

inline void luminance(const std::vector<double>& img, std::int64_t channels,
                      std::int64_t hw, std::vector<double>& gray) {
  gray.assign(static_cast<std::size_t>(hw), 0.0);
  if (channels == 3) {
    for (std::int64_t k = 0; k < hw; ++k)
      gray[static_cast<std::size_t>(k)] = 0.299 * img[static_cast<std::size_t>(k)] +
                                          0.587 * img[static_cast<std::size_t>(hw + k)] +
                                          0.114 * img[static_cast<std::size_t>(2 * hw + k)];
  } else {
    for (std::int64_t k = 0; k < hw; ++k)
      gray[static_cast<std::size_t>(k)] = img[static_cast<std::size_t>(k)];
  }
}

}  // namespace detail

/// Brightness, contrast, saturation, each scaled by an independent factor
/// drawn uniformly from [1 - s, 1 + s]; clamped to [0,1] after each step.
/// Hue rotation is deliberately not part of the family.
inline std::vector<double> color_jitter(std::vector<double> img,
                                        std::int64_t channels, std::int64_t hw,
                                        double strength, SplitMix64& rng) {
  const double fb = rng.uniform(1.0 - strength, 1.0 + strength);
  const double fc = rng.uniform(1.0 - strength, 1.0 + strength);
  const double fs = rng.uniform(1.0 - strength, 1.0 + strength);
  for (auto& v : img) v = std::clamp(v * fb, 0.0, 1.0);
  std::vector<double> gray;
  detail::luminance(img, channels, hw, gray);
  const double gmean =
      std::accumulate(gray.begin(), gray.end(), 0.0) / static_cast<double>(hw);
  for (auto& v : img) v = std::clamp(gmean + (v - gmean) * fc, 0.0, 1.0);
  if (channels == 3) {
    detail::luminance(img, channels, hw, gray);
    for (std::int64_t c = 0; c < 3; ++c)
      for (std::int64_t k = 0; k < hw; ++k) {
        auto& v = img[static_cast<std::size_t>(c * hw + k)];
        v = std::clamp(gray[static_cast<std::size_t>(k)] +
                           (v - gray[static_cast<std::size_t>(k)]) * fs,
                       0.0, 1.0);
      }
  }
  return img;
}

/// Luminance (0.299/0.587/0.114) replicated across channels.
inline std::vector<double> to_grayscale(const std::vector<double>& img,
                                        std::int64_t channels, std::int64_t hw) {
  if (channels != 3) return img;
  std::vector<double> gray;
  detail::luminance(img, channels, hw, gray);
  std::vector<double> out(img.size());
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t k = 0; k < hw; ++k)
      out[static_cast<std::size_t>(c * hw + k)] = gray[static_cast<std::size_t>(k)];
  return out;
}

/// One full transformation draw for a single image.
inline std::vector<double> transform_image(const std::vector<double>& img,
                                           std::int64_t channels,
                                           std::int64_t h, std::int64_t w,
                                           const TransformSpec& spec,
                                           std::uint64_t seed) {
  SplitMix64 rng(seed);
  const std::int64_t out_size = spec.output_size > 0 ? spec.output_size : h;
  auto v = random_crop_resize(img, channels, h, w, spec.crop_scale_min,
                              spec.crop_scale_max, out_size, rng);
  const std::int64_t hw = out_size * out_size;
  if (rng.uniform() < spec.flip_prob)
    v = horizontal_flip(v, channels, out_size, out_size);
  if (rng.uniform() < spec.jitter_prob)
    v = color_jitter(std::move(v), channels, hw, spec.jitter_strength, rng);
  if (rng.uniform() < spec.grayscale_prob) v = to_grayscale(v, channels, hw);
  return v;
}

inline void standardize(std::vector<double>& batch, std::int64_t n,
                        std::int64_t channels, std::int64_t hw,
                        const ChannelStats& stats) {
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t c = 0; c < channels; ++c) {
      const double m = stats.mean[static_cast<std::size_t>(c)];
      const double inv = 1.0 / stats.stddev[static_cast<std::size_t>(c)];
      double* p = batch.data() + (i * channels + c) * hw;
      for (std::int64_t k = 0; k < hw; ++k) p[k] = (p[k] - m) * inv;
    }
}

/// Two independent transformation draws per image; fully determined by
/// (seed, indices, spec). Standardizes per channel when stats is non-null.
inline AugmentedBatchPair make_pair(const ImageDataset& dataset,
                                    const std::vector<std::int64_t>& indices,
                                    const TransformSpec& spec,
                                    std::uint64_t seed,
                                    const ChannelStats* stats = nullptr) {
  spec.validate();
  AugmentedBatchPair pair;
  pair.channels = dataset.channels;
  pair.height = spec.output_size > 0 ? spec.output_size : dataset.height;
  pair.width = pair.height;
  pair.source_indices = indices;
  const std::int64_t n = pair.batch();
  const std::int64_t out_sz = pair.image_size();
  pair.view1.resize(static_cast<std::size_t>(n * out_sz));
  pair.view2.resize(static_cast<std::size_t>(n * out_sz));
  pair.draw_seeds.resize(static_cast<std::size_t>(2 * n));
  std::vector<double> img(static_cast<std::size_t>(dataset.image_size()));
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t src = indices[static_cast<std::size_t>(i)];
    if (src < 0 || src >= dataset.count)
      throw contract_error("make_pair: index out of range");
    std::copy(dataset.image(src), dataset.image(src) + dataset.image_size(),
              img.begin());
    const std::uint64_t s1 = derive_seed(seed, static_cast<std::uint64_t>(2 * i));
    const std::uint64_t s2 = derive_seed(seed, static_cast<std::uint64_t>(2 * i + 1));
    pair.draw_seeds[static_cast<std::size_t>(2 * i)] = s1;
    pair.draw_seeds[static_cast<std::size_t>(2 * i + 1)] = s2;
    auto v1 = transform_image(img, dataset.channels, dataset.height,
                              dataset.width, spec, s1);
    auto v2 = transform_image(img, dataset.channels, dataset.height,
                              dataset.width, spec, s2);
    std::copy(v1.begin(), v1.end(), pair.view1.begin() + i * out_sz);
    std::copy(v2.begin(), v2.end(), pair.view2.begin() + i * out_sz);
  }
  if (stats) {
    standardize(pair.view1, n, pair.channels, pair.height * pair.width, *stats);
    standardize(pair.view2, n, pair.channels, pair.height * pair.width, *stats);
  }
  return pair;
}

enum class CorruptMode { blackout, uniform_noise, extreme_darken };

inline CorruptMode parse_corrupt_mode(const std::string& s) {
  if (s == "blackout") return CorruptMode::blackout;
  if (s == "uniform_noise") return CorruptMode::uniform_noise;
  if (s == "extreme_darken") return CorruptMode::extreme_darken;
  throw config_error("unknown corruption mode: " + s);
}

/// Replace view2 with a corrupted rendition (a controlled "weak view" for
/// testing bad-batch behavior). Expects a pre-standardization pair.
inline AugmentedBatchPair corrupt_view(const AugmentedBatchPair& pair,
                                       CorruptMode mode, SplitMix64& rng) {
  AugmentedBatchPair out = pair;
  switch (mode) {
    case CorruptMode::blackout:
      std::fill(out.view2.begin(), out.view2.end(), 0.0);
      break;
    case CorruptMode::uniform_noise:
      for (auto& v : out.view2) v = rng.uniform();
      break;
    case CorruptMode::extreme_darken:
      for (auto& v : out.view2) v *= 0.05;
      break;
  }
  return out;
}

}  // namespace sscl
