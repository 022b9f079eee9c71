#pragma once

// Frozen-representation quality probes: a linear classifier and a cosine
// k-NN vote over extracted embeddings, plus the EMB1 export format.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "sscl/augment.hpp"
#include "sscl/autodiff.hpp"
#include "sscl/common.hpp"
#include "sscl/dataset.hpp"
#include "sscl/model.hpp"

namespace sscl {

enum class EmbeddingSource { encoder_h, projection_z };

inline EmbeddingSource parse_embedding_source(const std::string& s) {
  if (s == "h") return EmbeddingSource::encoder_h;
  if (s == "z") return EmbeddingSource::projection_z;
  throw config_error("unknown embedding source: " + s + " (expected h or z)");
}

struct EmbeddingSet {
  std::vector<double> vectors;  // [count x dim]
  std::vector<int> labels;
  std::int64_t count = 0;
  std::int64_t dim = 0;
  EmbeddingSource source = EmbeddingSource::encoder_h;

  const double* row(std::int64_t i) const { return vectors.data() + i * dim; }
};

/// Inference-mode forward over the whole dataset, standardization only (no
/// augmentation). Deterministic given the checkpoint.
inline EmbeddingSet extract_embeddings(ModelParams& params,
                                       const ImageDataset& dataset,
                                       EmbeddingSource source,
                                       const ChannelStats& stats,
                                       std::int64_t chunk = 256) {
  EmbeddingSet set;
  set.source = source;
  set.count = dataset.count;
  set.dim = source == EmbeddingSource::encoder_h ? params.config.hidden_dim
                                                 : params.config.projection_dim;
  set.vectors.resize(static_cast<std::size_t>(set.count * set.dim));
  set.labels = dataset.labels;
  const std::int64_t img_sz = dataset.image_size();
  const std::int64_t hw = dataset.height * dataset.width;
  for (std::int64_t start = 0; start < dataset.count; start += chunk) {
    const std::int64_t n = std::min(chunk, dataset.count - start);
    auto batch = make_tensor({n, dataset.channels, dataset.height, dataset.width});
    std::copy(dataset.images.begin() + start * img_sz,
              dataset.images.begin() + (start + n) * img_sz,
              batch->data.begin());
    standardize(batch->data, n, dataset.channels, hw, stats);
    Tape tape;
    auto h = encoder_forward(tape, params, batch, /*training=*/false);
    TensorPtr out = h;
    if (source == EmbeddingSource::projection_z)
      out = projection_forward(tape, params, h, /*training=*/false);
    for (double v : out->data)
      if (!std::isfinite(v))
        throw numeric_error("non-finite activation in " +
                            std::string(source == EmbeddingSource::encoder_h
                                            ? "encoder output"
                                            : "projection output"));
    std::copy(out->data.begin(), out->data.end(),
              set.vectors.begin() + start * set.dim);
  }
  return set;
}

/// Single affine layer + softmax cross-entropy on frozen embeddings.
/// Returns test top-1 accuracy in [0,1]; reproducible given seed.
inline double linear_probe(const EmbeddingSet& train, const EmbeddingSet& test,
                           int class_count, int epochs = 50, double lr = 0.1,
                           std::uint64_t seed = 7,
                           std::int64_t batch_size = 256) {
  if (train.dim != test.dim) throw contract_error("linear_probe: dim mismatch");
  for (int y : train.labels)
    if (y < 0 || y >= class_count)
      throw contract_error("linear_probe: train label outside class space");
  for (int y : test.labels)
    if (y < 0 || y >= class_count)
      throw contract_error("linear_probe: test label outside class space");
  SplitMix64 init_rng(seed);
  auto W = make_tensor({train.dim, class_count}, true);
  const double scale = 1.0 / std::sqrt(static_cast<double>(train.dim));
  for (auto& v : W->data) v = scale * init_rng.normal();
  auto b = make_tensor({class_count}, true);
  BatchPlan plan{seed, std::min<std::int64_t>(batch_size, train.count), false};
  for (int e = 0; e < epochs; ++e) {
    for (const auto& idxs : iterate_batches(train.count, plan, e)) {
      const auto n = static_cast<std::int64_t>(idxs.size());
      auto x = make_tensor({n, train.dim});
      std::vector<int> y(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i) {
        std::copy(train.row(idxs[static_cast<std::size_t>(i)]),
                  train.row(idxs[static_cast<std::size_t>(i)]) + train.dim,
                  x->data.begin() + i * train.dim);
        y[static_cast<std::size_t>(i)] =
            train.labels[static_cast<std::size_t>(idxs[static_cast<std::size_t>(i)])];
      }
      Tape tape;
      W->zero_grad();
      b->zero_grad();
      auto loss = softmax_cross_entropy(tape, dense(tape, x, W, b), y);
      tape.backward(loss);
      for (std::size_t i = 0; i < W->data.size(); ++i)
        W->data[i] -= lr * W->grad[i];
      for (std::size_t i = 0; i < b->data.size(); ++i)
        b->data[i] -= lr * b->grad[i];
    }
  }
  std::int64_t correct = 0;
  for (std::int64_t i = 0; i < test.count; ++i) {
    int best = 0;
    double best_score = -1e300;
    for (int c = 0; c < class_count; ++c) {
      double s = b->at(c);
      for (std::int64_t j = 0; j < test.dim; ++j)
        s += test.row(i)[j] * W->at(j * class_count + c);
      if (s > best_score) {
        best_score = s;
        best = c;
      }
    }
    if (best == test.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.count);
}

/// Cosine-distance k-NN majority vote. Ties broken by smallest summed
/// distance among tied classes, then lowest class id.
inline double knn_probe(const EmbeddingSet& train, const EmbeddingSet& test,
                        int k, int class_count) {
  if (k < 1) throw contract_error("knn_probe: k must be >= 1");
  if (k > train.count) throw contract_error("knn_probe: k exceeds train count");
  if (train.dim != test.dim) throw contract_error("knn_probe: dim mismatch");
  std::vector<double> train_norm(static_cast<std::size_t>(train.count));
  for (std::int64_t i = 0; i < train.count; ++i) {
    double s = 0;
    for (std::int64_t j = 0; j < train.dim; ++j)
      s += train.row(i)[j] * train.row(i)[j];
    train_norm[static_cast<std::size_t>(i)] = std::max(std::sqrt(s), 1e-12);
  }
  std::int64_t correct = 0;
  std::vector<std::pair<double, std::int64_t>> dist(
      static_cast<std::size_t>(train.count));
  for (std::int64_t t = 0; t < test.count; ++t) {
    double tn = 0;
    for (std::int64_t j = 0; j < test.dim; ++j)
      tn += test.row(t)[j] * test.row(t)[j];
    tn = std::max(std::sqrt(tn), 1e-12);
    for (std::int64_t i = 0; i < train.count; ++i) {
      double dot = 0;
      const double* a = test.row(t);
      const double* b = train.row(i);
      for (std::int64_t j = 0; j < train.dim; ++j) dot += a[j] * b[j];
      dist[static_cast<std::size_t>(i)] = {
          1.0 - dot / (tn * train_norm[static_cast<std::size_t>(i)]), i};
    }
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    std::vector<int> votes(static_cast<std::size_t>(class_count), 0);
    std::vector<double> summed(static_cast<std::size_t>(class_count), 0.0);
    for (int i = 0; i < k; ++i) {
      const int cls = train.labels[static_cast<std::size_t>(dist[static_cast<std::size_t>(i)].second)];
      votes[static_cast<std::size_t>(cls)]++;
      summed[static_cast<std::size_t>(cls)] += dist[static_cast<std::size_t>(i)].first;
    }
    int best = -1;
    for (int c = 0; c < class_count; ++c) {
      if (votes[static_cast<std::size_t>(c)] == 0) continue;
      if (best < 0 || votes[static_cast<std::size_t>(c)] > votes[static_cast<std::size_t>(best)] ||
          (votes[static_cast<std::size_t>(c)] == votes[static_cast<std::size_t>(best)] &&
           summed[static_cast<std::size_t>(c)] < summed[static_cast<std::size_t>(best)]))
        best = c;
    }
    if (best == test.labels[static_cast<std::size_t>(t)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.count);
}

// ---------------------------------------------------------------------------
// EMB1 export: magic "EMB1", u32 count, u32 dim, u8 has_labels, count*dim
// little-endian f32 values, then optionally count little-endian u32 labels.

inline void export_embeddings(const EmbeddingSet& set, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw data_error("cannot write embeddings: " + path);
  os.write("EMB1", 4);
  auto put_u32 = [&os](std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
  };
  put_u32(static_cast<std::uint32_t>(set.count));
  put_u32(static_cast<std::uint32_t>(set.dim));
  const unsigned char has_labels = set.labels.empty() ? 0 : 1;
  os.write(reinterpret_cast<const char*>(&has_labels), 1);
  for (double v : set.vectors) {
    const auto f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(bits);
  }
  if (has_labels)
    for (int y : set.labels) put_u32(static_cast<std::uint32_t>(y));
  if (!os) throw data_error("write failure on embeddings file: " + path);
}

inline EmbeddingSet import_embeddings(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw data_error("cannot open embeddings: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "EMB1", 4) != 0)
    throw format_error("bad embeddings magic: " + path);
  auto get_u32 = [&is, &path]() {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
      throw format_error("truncated embeddings file: " + path);
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
           (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
  };
  EmbeddingSet set;
  set.count = get_u32();
  set.dim = get_u32();
  unsigned char has_labels;
  if (!is.read(reinterpret_cast<char*>(&has_labels), 1))
    throw format_error("truncated embeddings file: " + path);
  set.vectors.resize(static_cast<std::size_t>(set.count * set.dim));
  for (auto& v : set.vectors) {
    const std::uint32_t bits = get_u32();
    float f;
    std::memcpy(&f, &bits, 4);
    v = f;
  }
  if (has_labels) {
    set.labels.resize(static_cast<std::size_t>(set.count));
    for (auto& y : set.labels) y = static_cast<int>(get_u32());
  }
  return set;
}

}  // namespace sscl
