#pragma once

// Frechet-distance batch curation: fit a Gaussian to each augmented view's
// projection embeddings, score the pair by the Frechet distance between the
// two Gaussians, and gate gradient updates against a threshold calibrated
// as the mean per-batch score of one early epoch.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "sscl/common.hpp"
#include "sscl/linalg.hpp"

namespace sscl {

struct GaussianStats {
  std::vector<double> mean;      // [d]
  linalg::Matrix covariance;     // [d x d], row-major
  std::int64_t sample_count = 0;

  std::size_t dim() const { return mean.size(); }
};

/// Sample mean and unbiased covariance of rows [n x d], plus diagonal
/// shrinkage so batch-sized estimates stay positive definite.
inline GaussianStats gaussian_stats(const std::vector<double>& rows,
                                    std::int64_t n, std::int64_t d,
                                    double shrinkage = 1e-6) {
  if (n < 2) throw contract_error("gaussian_stats: need at least 2 samples");
  if (static_cast<std::int64_t>(rows.size()) != n * d)
    throw dim_error("gaussian_stats: row buffer does not match n x d");
  GaussianStats s;
  s.sample_count = n;
  s.mean.assign(static_cast<std::size_t>(d), 0.0);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < d; ++j)
      s.mean[static_cast<std::size_t>(j)] += rows[static_cast<std::size_t>(i * d + j)];
  for (auto& m : s.mean) m /= static_cast<double>(n);
  s.covariance.assign(static_cast<std::size_t>(d * d), 0.0);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < d; ++j) {
      const double cj = rows[static_cast<std::size_t>(i * d + j)] -
                        s.mean[static_cast<std::size_t>(j)];
      for (std::int64_t k = j; k < d; ++k) {
        const double ck = rows[static_cast<std::size_t>(i * d + k)] -
                          s.mean[static_cast<std::size_t>(k)];
        s.covariance[static_cast<std::size_t>(j * d + k)] += cj * ck;
      }
    }
  const double inv = 1.0 / static_cast<double>(n - 1);
  for (std::int64_t j = 0; j < d; ++j)
    for (std::int64_t k = j; k < d; ++k) {
      const auto v = s.covariance[static_cast<std::size_t>(j * d + k)] * inv;
      s.covariance[static_cast<std::size_t>(j * d + k)] = v;
      s.covariance[static_cast<std::size_t>(k * d + j)] = v;
    }
  for (std::int64_t j = 0; j < d; ++j)
    s.covariance[static_cast<std::size_t>(j * d + j)] += shrinkage;
  return s;
}

/// Symmetric PSD square root via eigendecomposition; negative eigenvalues
/// from roundoff are clamped to zero.
inline linalg::Matrix matrix_sqrt_psd(const linalg::Matrix& a, std::size_t d) {
  if (a.size() != d * d) throw dim_error("matrix_sqrt_psd: size mismatch");
  if (linalg::max_asymmetry(a, d) > 1e-10 * std::max(1.0, linalg::frobenius_norm(a)))
    throw contract_error("matrix_sqrt_psd: input is not symmetric");
  auto eig = linalg::symmetric_eigen(a, d);
  std::vector<double> roots(d);
  for (std::size_t i = 0; i < d; ++i)
    roots[i] = eig.eigenvalues[i] > 0 ? std::sqrt(eig.eigenvalues[i]) : 0.0;
  // R = V diag(sqrt(w)) V^T
  linalg::Matrix r(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i; j < d; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < d; ++k)
        s += eig.eigenvectors[i * d + k] * roots[k] * eig.eigenvectors[j * d + k];
      r[i * d + j] = s;
      r[j * d + i] = s;
    }
  return r;
}

/// Frechet distance between two Gaussians:
///   |mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1 S2)^(1/2)).
/// The product root is evaluated in the stabilized symmetric form
/// sqrt(S1) S2 sqrt(S1), which has the same trace; tiny negative results
/// from roundoff are clamped to 0.
inline double frd(const GaussianStats& a, const GaussianStats& b) {
  const std::size_t d = a.dim();
  if (b.dim() != d) throw dim_error("frd: dimension mismatch");
  double mean_term = 0;
  for (std::size_t i = 0; i < d; ++i) {
    const double diff = a.mean[i] - b.mean[i];
    mean_term += diff * diff;
  }
  auto root_a = matrix_sqrt_psd(a.covariance, d);
  auto inner = linalg::matmul(linalg::matmul(root_a, b.covariance, d), root_a, d);
  // enforce exact symmetry before the eigensolve
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j) {
      const double v = 0.5 * (inner[i * d + j] + inner[j * d + i]);
      inner[i * d + j] = v;
      inner[j * d + i] = v;
    }
  auto eig = linalg::symmetric_eigen(inner, d);
  double cross_trace = 0;
  for (double w : eig.eigenvalues) cross_trace += w > 0 ? std::sqrt(w) : 0.0;
  const double value = mean_term + linalg::trace(a.covariance, d) +
                       linalg::trace(b.covariance, d) - 2.0 * cross_trace;
  return value < 0 ? 0.0 : value;
}

struct ThresholdState {
  double tau_frd = 0;
  int calibration_epoch = 5;
  std::vector<double> per_batch_scores;
  bool frozen = false;
};

/// tau_frd = arithmetic mean of the calibration-epoch per-batch scores.
inline ThresholdState calibrate_threshold(const std::vector<double>& scores,
                                          int calibration_epoch = 5) {
  if (scores.empty())
    throw contract_error("calibrate_threshold: no calibration scores");
  ThresholdState st;
  st.calibration_epoch = calibration_epoch;
  st.per_batch_scores = scores;
  st.tau_frd = std::accumulate(scores.begin(), scores.end(), 0.0) /
               static_cast<double>(scores.size());
  st.frozen = true;
  return st;
}

enum class CurationAction { update, reaugmented_update, skipped };

inline std::string to_string(CurationAction a) {
  switch (a) {
    case CurationAction::update: return "update";
    case CurationAction::reaugmented_update: return "reaugmented_update";
    default: return "skipped";
  }
}

struct CurationDecision {
  double frd_score = 0;
  bool accepted = false;
  int attempt = 1;
  CurationAction action = CurationAction::update;
};

/// Accept iff score <= tau (strictly greater rejects). A first-attempt
/// rejection requests one re-augmented draw; a second rejection skips the
/// gradient update entirely.
inline CurationDecision curate(double frd_score, const ThresholdState& state,
                               int attempt) {
  if (!state.frozen)
    throw contract_error("curate: threshold has not been calibrated");
  CurationDecision d;
  d.frd_score = frd_score;
  d.attempt = attempt;
  d.accepted = !(frd_score > state.tau_frd);
  if (d.accepted)
    d.action = attempt == 1 ? CurationAction::update
                            : CurationAction::reaugmented_update;
  else
    d.action = CurationAction::skipped;
  return d;
}

struct CurationConfig {
  bool use_projection = true;   // score z (default) or the encoder feature h
  bool normalize = false;       // L2-normalize embeddings before scoring
  double shrinkage = 1e-6;
};

}  // namespace sscl
