#pragma once

// Contrastive objective: NT-Xent over 2N projections plus a positive-pair
// regularizer (Huber by default; L1/L2 variants for the ablation axis).
// total = nt_xent + lambda * regularizer, same arithmetic path as reported.

#include <cmath>
#include <string>
#include <vector>

#include "sscl/autodiff.hpp"
#include "sscl/common.hpp"

namespace sscl {

enum class RegularizerKind { huber, l1, l2, none };

inline RegularizerKind parse_regularizer_kind(const std::string& s) {
  if (s == "huber") return RegularizerKind::huber;
  if (s == "l1") return RegularizerKind::l1;
  if (s == "l2") return RegularizerKind::l2;
  if (s == "none") return RegularizerKind::none;
  throw config_error("unknown regularizer kind: " + s);
}

inline std::string to_string(RegularizerKind k) {
  switch (k) {
    case RegularizerKind::huber: return "huber";
    case RegularizerKind::l1: return "l1";
    case RegularizerKind::l2: return "l2";
    default: return "none";
  }
}

struct LossConfig {
  double temperature = 0.5;
  double huber_delta = 1.0;
  double lambda = 1.0;
  RegularizerKind regularizer_kind = RegularizerKind::huber;

  void validate() const {
    if (temperature <= 0) throw config_error("loss.temperature must be > 0");
    if (huber_delta <= 0) throw config_error("loss.huber_delta must be > 0");
    if (lambda < 0) throw config_error("loss.lambda must be >= 0");
  }
};

struct LossBreakdown {
  double nt_xent = 0;
  double regularizer = 0;
  double total = 0;
};

/// Plain cosine similarity with a norm floor; sets *degenerate when either
/// vector has (near-)zero norm.
inline double cosine_similarity(const std::vector<double>& a,
                                const std::vector<double>& b,
                                bool* degenerate = nullptr) {
  if (a.size() != b.size())
    throw dim_error("cosine_similarity: dimension mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (degenerate) *degenerate = (na < 1e-12 || nb < 1e-12);
  return dot / (std::max(na, 1e-12) * std::max(nb, 1e-12));
}

namespace detail {

// NT-Xent from a similarity matrix S [2N x 2N]; row i pairs with (i+N) mod 2N.
// The denominator sum runs over all k != i, positive included.
inline TensorPtr ntxent_from_sim(Tape& tape, const TensorPtr& S) {
  check_matrix(S, "ntxent_from_sim");
  const std::int64_t M = S->shape[0];
  if (S->shape[1] != M || M < 2 || M % 2 != 0)
    throw contract_error("ntxent_from_sim: similarity matrix must be [2N x 2N]");
  const std::int64_t N = M / 2;
  auto out = make_tensor({1}, S->requires_grad);
  double total = 0;
  for (std::int64_t i = 0; i < M; ++i) {
    const std::int64_t p = (i + N) % M;
    double mx = -1e300;
    for (std::int64_t k = 0; k < M; ++k)
      if (k != i) mx = std::max(mx, S->at(i * M + k));
    double z = 0;
    for (std::int64_t k = 0; k < M; ++k)
      if (k != i) z += std::exp(S->at(i * M + k) - mx);
    total += mx + std::log(z) - S->at(i * M + p);
  }
  out->data[0] = total / static_cast<double>(M);
  if (out->requires_grad)
    tape.record([S, out, M, N]() {
      const double g = out->grad[0] / static_cast<double>(M);
      for (std::int64_t i = 0; i < M; ++i) {
        const std::int64_t p = (i + N) % M;
        double mx = -1e300;
        for (std::int64_t k = 0; k < M; ++k)
          if (k != i) mx = std::max(mx, S->at(i * M + k));
        double z = 0;
        for (std::int64_t k = 0; k < M; ++k)
          if (k != i) z += std::exp(S->at(i * M + k) - mx);
        for (std::int64_t k = 0; k < M; ++k) {
          if (k == i) continue;
          const double w = std::exp(S->at(i * M + k) - mx) / z;
          S->grad[static_cast<std::size_t>(i * M + k)] += g * w;
        }
        S->grad[static_cast<std::size_t>(i * M + p)] -= g;
      }
    });
  return out;
}

}  // namespace detail

/// NT-Xent over z [2N x d] (row k of view 1 pairs with row k+N of view 2);
/// rows are L2-normalized here, so cosine similarity is the plain dot product.
inline TensorPtr nt_xent(Tape& tape, const TensorPtr& z, double temperature) {
  detail::check_matrix(z, "nt_xent");
  if (z->shape[0] < 2 || z->shape[0] % 2 != 0)
    throw contract_error("nt_xent: need 2N rows with N >= 1");
  auto zn = normalize_rows(tape, z);
  auto sim = matmul_nt(tape, zn, zn);
  auto scaled = scale(tape, sim, 1.0 / temperature);
  return detail::ntxent_from_sim(tape, scaled);
}

inline TensorPtr nt_xent(Tape& tape, const TensorPtr& z1, const TensorPtr& z2,
                         double temperature) {
  return nt_xent(tape, concat_rows(tape, z1, z2), temperature);
}

/// Scalar Huber penalty: 0.5 d^2 below delta, delta(|d| - 0.5 delta) above.
inline double huber_scalar(double d, double delta) {
  const double a = std::abs(d);
  return a < delta ? 0.5 * d * d : delta * (a - 0.5 * delta);
}

/// Elementwise Huber on (zi - zj), averaged over dimensions.
inline double huber_pair(const std::vector<double>& zi,
                         const std::vector<double>& zj, double delta) {
  if (zi.size() != zj.size()) throw dim_error("huber_pair: dimension mismatch");
  if (delta <= 0) throw config_error("huber_pair: delta must be positive");
  double s = 0;
  for (std::size_t i = 0; i < zi.size(); ++i)
    s += huber_scalar(zi[i] - zj[i], delta);
  return s / static_cast<double>(zi.size());
}

namespace detail {

// Mean elementwise penalty over all N*d entries of (z1 - z2). This equals
// the mean over the N positive pairs of the per-pair dimension-averaged
// penalty, as one op with a closed-form backward.
inline TensorPtr pairwise_penalty(Tape& tape, const TensorPtr& z1,
                                  const TensorPtr& z2, RegularizerKind kind,
                                  double delta) {
  if (z1->shape != z2->shape)
    throw dim_error("regularizer: view shapes differ");
  auto out = make_tensor({1}, detail::any_grad({&z1, &z2}));
  const std::size_t n = z1->data.size();
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = z1->data[i] - z2->data[i];
    switch (kind) {
      case RegularizerKind::huber: s += huber_scalar(d, delta); break;
      case RegularizerKind::l1: s += std::abs(d); break;
      case RegularizerKind::l2: s += 0.5 * d * d; break;
      case RegularizerKind::none: break;
    }
  }
  out->data[0] = kind == RegularizerKind::none ? 0.0 : s / static_cast<double>(n);
  if (out->requires_grad && kind != RegularizerKind::none)
    tape.record([z1, z2, out, kind, delta, n]() {
      const double g = out->grad[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double d = z1->data[i] - z2->data[i];
        double dd = 0;  // d(penalty)/d(d); sign(0) taken as 0 for l1
        switch (kind) {
          case RegularizerKind::huber:
            dd = std::abs(d) < delta ? d : (d > 0 ? delta : -delta);
            break;
          case RegularizerKind::l1:
            dd = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
            break;
          case RegularizerKind::l2:
            dd = d;
            break;
          case RegularizerKind::none:
            break;
        }
        if (z1->requires_grad) z1->grad[i] += g * dd;
        if (z2->requires_grad) z2->grad[i] -= g * dd;
      }
    });
  return out;
}

}  // namespace detail

/// Positive-pair regularizer over the batch. Operates on L2-normalized
/// projections, matching the cosine geometry the contrastive term optimizes.
inline TensorPtr regularizer_batch(Tape& tape, const TensorPtr& z1,
                                   const TensorPtr& z2,
                                   const LossConfig& config) {
  if (z1->shape != z2->shape)
    throw dim_error("regularizer_batch: view shapes differ");
  auto n1 = normalize_rows(tape, z1);
  auto n2 = normalize_rows(tape, z2);
  return detail::pairwise_penalty(tape, n1, n2, config.regularizer_kind,
                                  config.huber_delta);
}

struct LossGraph {
  TensorPtr nt_xent;
  TensorPtr regularizer;
  TensorPtr total;

  LossBreakdown values() const {
    return {nt_xent->data[0], regularizer->data[0], total->data[0]};
  }
};

/// The combined objective: total = nt_xent + lambda * regularizer, built on
/// one tape so a single backward covers all of it.
inline LossGraph regularized_loss(Tape& tape, const TensorPtr& z1,
                                  const TensorPtr& z2,
                                  const LossConfig& config) {
  config.validate();
  LossGraph g;
  g.nt_xent = nt_xent(tape, z1, z2, config.temperature);
  g.regularizer = regularizer_batch(tape, z1, z2, config);
  g.total = add(tape, g.nt_xent, scale(tape, g.regularizer, config.lambda));
  return g;
}

}  // namespace sscl
