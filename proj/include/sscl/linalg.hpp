#pragma once

// Dense symmetric linear algebra for the curation module. Matrices are
// row-major std::vector<double> of size d*d. Dimensions stay small (the
// projection width), so cyclic Jacobi is plenty.

#include <cmath>
#include <cstdint>
#include <vector>

#include "sscl/common.hpp"

namespace sscl::linalg {

using Matrix = std::vector<double>;

inline Matrix matmul(const Matrix& a, const Matrix& b, std::size_t d) {
  Matrix c(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t k = 0; k < d; ++k) {
      const double av = a[i * d + k];
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < d; ++j) c[i * d + j] += av * b[k * d + j];
    }
  return c;
}

inline double trace(const Matrix& a, std::size_t d) {
  double t = 0;
  for (std::size_t i = 0; i < d; ++i) t += a[i * d + i];
  return t;
}

inline double frobenius_norm(const Matrix& a) {
  double s = 0;
  for (double v : a) s += v * v;
  return std::sqrt(s);
}

inline double max_asymmetry(const Matrix& a, std::size_t d) {
  double m = 0;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j)
      m = std::max(m, std::abs(a[i * d + j] - a[j * d + i]));
  return m;
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// On return, eigenvalues[i] pairs with eigenvector column i of V
/// (V row-major, A = V diag(w) V^T).
struct EigenResult {
  std::vector<double> eigenvalues;
  Matrix eigenvectors;
};

inline EigenResult symmetric_eigen(Matrix a, std::size_t d) {
  EigenResult r;
  r.eigenvectors.assign(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) r.eigenvectors[i * d + i] = 1.0;
  Matrix& v = r.eigenvectors;
  const int max_sweeps = 100;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i + 1; j < d; ++j) off += a[i * d + j] * a[i * d + j];
    double diag = 0;
    for (std::size_t i = 0; i < d; ++i) diag += a[i * d + i] * a[i * d + i];
    if (off <= 1e-30 * std::max(diag, 1.0)) break;
    for (std::size_t p = 0; p < d; ++p)
      for (std::size_t q = p + 1; q < d; ++q) {
        const double apq = a[p * d + q];
        if (std::abs(apq) < 1e-300) continue;
        const double app = a[p * d + p], aqq = a[q * d + q];
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < d; ++k) {
          const double akp = a[k * d + p], akq = a[k * d + q];
          a[k * d + p] = c * akp - s * akq;
          a[k * d + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < d; ++k) {
          const double apk = a[p * d + k], aqk = a[q * d + k];
          a[p * d + k] = c * apk - s * aqk;
          a[q * d + k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < d; ++k) {
          const double vkp = v[k * d + p], vkq = v[k * d + q];
          v[k * d + p] = c * vkp - s * vkq;
          v[k * d + q] = s * vkp + c * vkq;
        }
      }
  }
  r.eigenvalues.resize(d);
  for (std::size_t i = 0; i < d; ++i) r.eigenvalues[i] = a[i * d + i];
  return r;
}

}  // namespace sscl::linalg
