#pragma once

// The gated pretraining loop: linear warmup + cosine decay, uncurated early
// epochs, threshold calibration during the calibration epoch (those batches
// both update gradients and contribute scores), and FRD-gated updates
// afterwards. A rejected batch gets exactly one fresh augmentation draw; a
// second rejection skips the step with no parameter mutation.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sscl/augment.hpp"
#include "sscl/autodiff.hpp"
#include "sscl/common.hpp"
#include "sscl/config.hpp"
#include "sscl/curation.hpp"
#include "sscl/dataset.hpp"
#include "sscl/eval.hpp"
#include "sscl/losses.hpp"
#include "sscl/model.hpp"

namespace sscl {

/// Linear warmup to base_lr over warmup_epochs, then cosine decay to 0
/// without restarts. epoch is 0-based.
inline double lr_at(const TrainConfig& c, int epoch) {
  if (epoch < 0 || epoch >= c.epochs)
    throw contract_error("lr_at: epoch out of range");
  if (epoch < c.warmup_epochs)
    return c.base_lr * static_cast<double>(epoch + 1) / c.warmup_epochs;
  if (c.epochs == c.warmup_epochs) return c.base_lr;
  const double t = static_cast<double>(epoch - c.warmup_epochs) /
                   static_cast<double>(c.epochs - c.warmup_epochs);
  return c.base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

struct SgdState {
  std::map<std::string, std::vector<double>> velocity;
};

/// v <- momentum*v + (g + wd*p); p <- p - lr*v.
inline void sgd_step(ModelParams& params, SgdState& state, double lr,
                     const OptimizerConfig& opt) {
  for (const auto& name : params.trainable()) {
    auto& t = *params.tensors.at(name);
    auto& v = state.velocity[name];
    if (v.empty()) v.assign(t.data.size(), 0.0);
    // no weight decay on biases or BN affine parameters
    const bool decay = t.shape.size() >= 2;
    for (std::size_t i = 0; i < t.data.size(); ++i) {
      const double g = t.grad[i] + (decay ? opt.weight_decay * t.data[i] : 0.0);
      v[i] = opt.momentum * v[i] + g;
      t.data[i] -= lr * v[i];
    }
  }
}

struct StepRecord {
  int epoch = 0;  // 1-based
  std::int64_t batch_index = 0;
  double lr = 0;
  LossBreakdown loss;
  std::optional<double> frd_score;
  std::optional<CurationDecision> decision;
};

namespace detail {

inline TensorPtr view_tensor(const std::vector<double>& view, std::int64_t n,
                             std::int64_t c, std::int64_t h, std::int64_t w) {
  auto t = make_tensor({n, c, h, w});
  t->data = view;
  return t;
}

struct ForwardResult {
  TensorPtr h1, h2, z1, z2;
};

inline ForwardResult forward_pair(Tape& tape, ModelParams& params,
                                  const AugmentedBatchPair& pair,
                                  bool training) {
  ForwardResult r;
  auto x1 = view_tensor(pair.view1, pair.batch(), pair.channels, pair.height,
                        pair.width);
  auto x2 = view_tensor(pair.view2, pair.batch(), pair.channels, pair.height,
                        pair.width);
  r.h1 = encoder_forward(tape, params, x1, training);
  r.h2 = encoder_forward(tape, params, x2, training);
  r.z1 = projection_forward(tape, params, r.h1, training);
  r.z2 = projection_forward(tape, params, r.h2, training);
  return r;
}

inline double score_pair(const ForwardResult& f, const CurationConfig& cc) {
  const TensorPtr& a = cc.use_projection ? f.z1 : f.h1;
  const TensorPtr& b = cc.use_projection ? f.z2 : f.h2;
  const std::int64_t n = a->shape[0], d = a->shape[1];
  auto prep = [&](const TensorPtr& t) {
    if (!cc.normalize) return t->data;
    std::vector<double> out = t->data;
    for (std::int64_t i = 0; i < n; ++i) {
      double s = 0;
      for (std::int64_t j = 0; j < d; ++j) s += out[i * d + j] * out[i * d + j];
      const double inv = 1.0 / std::max(std::sqrt(s), 1e-12);
      for (std::int64_t j = 0; j < d; ++j) out[i * d + j] *= inv;
    }
    return out;
  };
  return frd(gaussian_stats(prep(a), n, d, cc.shrinkage),
             gaussian_stats(prep(b), n, d, cc.shrinkage));
}

inline std::map<std::string, BatchNormState> snapshot_bn(const ModelParams& p) {
  return p.bn_state;
}

}  // namespace detail

/// One gradient step on an already-augmented pair. When a frozen threshold is
/// supplied the step is gated: rejected pairs are scored but produce no
/// parameter mutation (the caller handles the re-augmentation attempt).
inline StepRecord train_step(ModelParams& params, SgdState& opt_state,
                             const AugmentedBatchPair& pair,
                             const TrainConfig& config, double lr,
                             const ThresholdState* threshold,
                             int attempt = 1, bool record_frd = false) {
  StepRecord rec;
  rec.lr = lr;
  if (threshold && !threshold->frozen)
    throw contract_error("train_step: threshold must be frozen");
  // BN running buffers are restored on skip so a skipped step leaves every
  // tensor bitwise unchanged.
  auto bn_before = detail::snapshot_bn(params);
  Tape tape;
  auto fwd = detail::forward_pair(tape, params, pair, /*training=*/true);
  if (threshold || record_frd)
    rec.frd_score = detail::score_pair(fwd, config.curation);
  if (threshold) {
    rec.decision = curate(*rec.frd_score, *threshold, attempt);
    if (!rec.decision->accepted) {
      params.bn_state = bn_before;
      auto loss = regularized_loss(tape, fwd.z1, fwd.z2, config.loss);
      rec.loss = loss.values();
      return rec;
    }
  }
  auto loss = regularized_loss(tape, fwd.z1, fwd.z2, config.loss);
  rec.loss = loss.values();
  if (!std::isfinite(rec.loss.total)) {
    std::ostringstream os;
    os << "non-finite training loss (nt_xent=" << rec.loss.nt_xent
       << ", regularizer=" << rec.loss.regularizer;
    if (rec.frd_score) os << ", frd=" << *rec.frd_score;
    double zn = 0;
    for (double v : fwd.z1->data) zn += v * v;
    os << ", |z1|_F=" << std::sqrt(zn) << ")";
    throw numeric_error(os.str());
  }
  params.zero_grad();
  tape.backward(loss.total);
  sgd_step(params, opt_state, lr, config.optimizer);
  return rec;
}

struct PretrainResult {
  ModelParams params;
  ThresholdState threshold;
  std::vector<StepRecord> records;
  ChannelStats channel_stats;
};

namespace detail {

inline void append_metrics(std::ostream& os, const StepRecord& r) {
  os.precision(17);
  os << r.epoch << "," << r.batch_index << "," << r.lr << ","
     << r.loss.nt_xent << "," << r.loss.regularizer << "," << r.loss.total
     << ",";
  if (r.frd_score) os << *r.frd_score;
  os << ",";
  if (r.decision) os << r.decision->attempt;
  os << ",";
  if (r.decision) os << to_string(r.decision->action);
  os << "\n";
}

}  // namespace detail

/// Full pretraining run. When output_dir is non-empty, writes metrics.csv
/// (appended per step, flushed per epoch) and periodic checkpoints.
inline PretrainResult pretrain(const ImageDataset& dataset,
                               const TrainConfig& config,
                               const std::string& output_dir = "") {
  config.validate();
  if (dataset.count < config.batch_size)
    throw config_error("dataset smaller than one batch");
  EncoderConfig enc = config.encoder;
  enc.in_channels = dataset.channels;
  enc.in_height = config.transform.output_size > 0 ? config.transform.output_size
                                                   : dataset.height;
  enc.in_width = enc.in_height;
  PretrainResult result;
  result.params = init_params(enc);
  result.channel_stats = compute_channel_stats(dataset);
  SgdState opt_state;
  BatchPlan plan{config.seed, config.batch_size, /*drop_last=*/true};
  std::ofstream metrics;
  if (!output_dir.empty()) {
    std::filesystem::create_directories(output_dir);
    metrics.open(output_dir + "/metrics.csv");
    metrics << "epoch,batch_index,lr,ntxent,regularizer,total,frd,attempt,action\n";
  }
  std::vector<double> calibration_scores;
  ThresholdState threshold;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const double lr = lr_at(config, epoch - 1);
    const bool calibrating = config.curation_enabled &&
                             epoch == config.calibration_epoch;
    const bool gated = config.curation_enabled &&
                       epoch > config.calibration_epoch;
    auto batches = iterate_batches(dataset.count, plan, epoch);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const std::uint64_t batch_seed =
          derive_seed(derive_seed(config.seed, static_cast<std::uint64_t>(epoch)),
                      static_cast<std::uint64_t>(b));
      auto pair = make_pair(dataset, batches[b], config.transform, batch_seed,
                            &result.channel_stats);
      StepRecord rec;
      if (gated) {
        rec = train_step(result.params, opt_state, pair, config, lr,
                         &threshold, 1);
        if (rec.decision && !rec.decision->accepted) {
          // one fresh augmentation draw, then give up on this batch
          auto retry = make_pair(dataset, batches[b], config.transform,
                                 derive_seed(batch_seed, 0x5eedULL),
                                 &result.channel_stats);
          rec = train_step(result.params, opt_state, retry, config, lr,
                           &threshold, 2);
        }
      } else {
        rec = train_step(result.params, opt_state, pair, config, lr, nullptr,
                         1, calibrating);
        if (calibrating) calibration_scores.push_back(*rec.frd_score);
      }
      rec.epoch = epoch;
      rec.batch_index = static_cast<std::int64_t>(b);
      result.records.push_back(rec);
      if (metrics.is_open()) detail::append_metrics(metrics, rec);
    }
    if (calibrating) {
      threshold = calibrate_threshold(calibration_scores,
                                      config.calibration_epoch);
      result.threshold = threshold;
    }
    if (metrics.is_open()) metrics.flush();
    if (!output_dir.empty() &&
        (epoch % config.checkpoint_every == 0 || epoch == config.epochs))
      save_checkpoint(result.params,
                      output_dir + "/checkpoint_epoch" + std::to_string(epoch) +
                          ".cur1");
  }
  if (!output_dir.empty())
    save_checkpoint(result.params, output_dir + "/checkpoint_final.cur1");
  return result;
}

// ---------------------------------------------------------------------------
// Ablation grid (the Table-3-style comparison)

struct AblationCell {
  RegularizerKind kind = RegularizerKind::huber;
  bool curation = true;
};

struct AblationRow {
  AblationCell cell;
  double mean_final_frd = 0;    // mean FRD over the last epoch's scored steps
  double final_loss = 0;        // mean total loss over the last epoch
  double knn_accuracy = 0;
  bool failed = false;
  std::string error;
};

/// One pretrain + k-NN probe per cell; all cells share the dataset and seed.
/// Failed cells are marked and the run continues.
inline std::vector<AblationRow> run_ablation(
    const ImageDataset& train_set, const ImageDataset& probe_train,
    const ImageDataset& probe_test, const std::vector<AblationCell>& grid,
    const TrainConfig& base_config, int knn_k = 5) {
  if (grid.empty()) throw config_error("run_ablation: empty grid");
  std::vector<AblationRow> rows;
  for (const auto& cell : grid) {
    AblationRow row;
    row.cell = cell;
    try {
      TrainConfig cfg = base_config;
      cfg.loss.regularizer_kind = cell.kind;
      cfg.curation_enabled = cell.curation;
      auto res = pretrain(train_set, cfg);
      double loss_sum = 0, frd_sum = 0;
      std::int64_t loss_n = 0, frd_n = 0;
      for (const auto& r : res.records) {
        if (r.epoch != cfg.epochs) continue;
        loss_sum += r.loss.total;
        ++loss_n;
        if (r.frd_score) {
          frd_sum += *r.frd_score;
          ++frd_n;
        }
      }
      row.final_loss = loss_n ? loss_sum / loss_n : 0;
      row.mean_final_frd = frd_n ? frd_sum / frd_n : 0;
      auto tr = extract_embeddings(res.params, probe_train,
                                   EmbeddingSource::encoder_h,
                                   res.channel_stats);
      auto te = extract_embeddings(res.params, probe_test,
                                   EmbeddingSource::encoder_h,
                                   res.channel_stats);
      row.knn_accuracy = knn_probe(tr, te, knn_k, train_set.class_count);
    } catch (const std::exception& e) {
      row.failed = true;
      row.error = e.what();
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace sscl
