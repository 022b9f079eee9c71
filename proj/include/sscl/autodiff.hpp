#pragma once

// Reverse-mode automatic differentiation over dense double arrays.
// Define-by-run: each op computes its forward result immediately and pushes
// a backward closure onto a Tape; Tape::backward replays the closures in
// exact reverse insertion order. Exactly the op set the encoder, projection
// head and losses need -- no broadcasting, no fusion, no GPU.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "sscl/common.hpp"

namespace sscl {

struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated iff requires_grad
  bool requires_grad = false;

  std::int64_t size() const {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
  double& at(std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  double at(std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

using TensorPtr = std::shared_ptr<Tensor>;

inline TensorPtr make_tensor(std::vector<std::int64_t> shape,
                             bool requires_grad = false) {
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  for (auto d : t->shape)
    if (d <= 0) throw dim_error("tensor dimension must be positive");
  t->data.assign(static_cast<std::size_t>(t->size()), 0.0);
  t->requires_grad = requires_grad;
  if (requires_grad) t->grad.assign(t->data.size(), 0.0);
  return t;
}

inline TensorPtr make_tensor(std::vector<std::int64_t> shape,
                             std::vector<double> values,
                             bool requires_grad = false) {
  auto t = make_tensor(std::move(shape), requires_grad);
  if (values.size() != t->data.size())
    throw dim_error("value count does not match shape");
  t->data = std::move(values);
  return t;
}

class Tape {
 public:
  void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }

  /// Seed d(root)/d(root) = 1 and replay all recorded closures in reverse.
  void backward(const TensorPtr& root) {
    if (root->size() != 1)
      throw contract_error("backward requires a scalar root");
    if (!root->requires_grad)
      throw contract_error("backward root does not require grad");
    root->grad[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  void clear() { nodes_.clear(); }
  std::size_t node_count() const { return nodes_.size(); }

 private:
  std::vector<std::function<void()>> nodes_;
};

namespace detail {

inline bool any_grad(std::initializer_list<const TensorPtr*> xs) {
  for (auto* x : xs)
    if ((*x)->requires_grad) return true;
  return false;
}

inline void check_matrix(const TensorPtr& t, const char* name) {
  if (t->shape.size() != 2)
    throw dim_error(std::string(name) + ": expected rank-2 tensor");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Matrix products

/// C = A * B, A: [m x k], B: [k x n].
inline TensorPtr matmul(Tape& tape, const TensorPtr& A, const TensorPtr& B) {
  detail::check_matrix(A, "matmul A");
  detail::check_matrix(B, "matmul B");
  const std::int64_t m = A->shape[0], k = A->shape[1];
  const std::int64_t k2 = B->shape[0], n = B->shape[1];
  if (k != k2)
    throw dim_error("matmul: inner dimensions disagree (A axis 1 = " +
                    std::to_string(k) + ", B axis 0 = " + std::to_string(k2) +
                    ")");
  auto C = make_tensor({m, n}, detail::any_grad({&A, &B}));
  const double* a = A->data.data();
  const double* b = B->data.data();
  double* c = C->data.data();
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b + p * n;
      double* crow = c + i * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  if (C->requires_grad)
    tape.record([A, B, C, m, k, n]() {
      const double* gc = C->grad.data();
      if (A->requires_grad) {
        double* ga = A->grad.data();
        const double* b = B->data.data();
        for (std::int64_t i = 0; i < m; ++i)
          for (std::int64_t j = 0; j < n; ++j) {
            const double g = gc[i * n + j];
            for (std::int64_t p = 0; p < k; ++p) ga[i * k + p] += g * b[p * n + j];
          }
      }
      if (B->requires_grad) {
        double* gb = B->grad.data();
        const double* a = A->data.data();
        for (std::int64_t i = 0; i < m; ++i)
          for (std::int64_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            const double* gcrow = gc + i * n;
            double* gbrow = gb + p * n;
            for (std::int64_t j = 0; j < n; ++j) gbrow[j] += av * gcrow[j];
          }
      }
    });
  return C;
}

/// C = A * B^T, A: [m x k], B: [n x k].
inline TensorPtr matmul_nt(Tape& tape, const TensorPtr& A, const TensorPtr& B) {
  detail::check_matrix(A, "matmul_nt A");
  detail::check_matrix(B, "matmul_nt B");
  const std::int64_t m = A->shape[0], k = A->shape[1];
  const std::int64_t n = B->shape[0];
  if (B->shape[1] != k)
    throw dim_error("matmul_nt: inner dimensions disagree on axis 1");
  auto C = make_tensor({m, n}, detail::any_grad({&A, &B}));
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) {
      double s = 0;
      const double* a = A->data.data() + i * k;
      const double* b = B->data.data() + j * k;
      for (std::int64_t p = 0; p < k; ++p) s += a[p] * b[p];
      C->data[static_cast<std::size_t>(i * n + j)] = s;
    }
  if (C->requires_grad)
    tape.record([A, B, C, m, k, n]() {
      const double* gc = C->grad.data();
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) {
          const double g = gc[i * n + j];
          if (g == 0.0) continue;
          if (A->requires_grad) {
            double* ga = A->grad.data() + i * k;
            const double* b = B->data.data() + j * k;
            for (std::int64_t p = 0; p < k; ++p) ga[p] += g * b[p];
          }
          if (B->requires_grad) {
            double* gb = B->grad.data() + j * k;
            const double* a = A->data.data() + i * k;
            for (std::int64_t p = 0; p < k; ++p) gb[p] += g * a[p];
          }
        }
    });
  return C;
}

/// Affine map: input [batch x in_dim] * weight [in_dim x out_dim] + bias.
inline TensorPtr dense(Tape& tape, const TensorPtr& input,
                       const TensorPtr& weight, const TensorPtr& bias) {
  detail::check_matrix(input, "dense input");
  detail::check_matrix(weight, "dense weight");
  if (input->shape[1] != weight->shape[0])
    throw dim_error("dense: input axis 1 (" + std::to_string(input->shape[1]) +
                    ") != weight axis 0 (" + std::to_string(weight->shape[0]) +
                    ")");
  if (bias->shape.size() != 1 || bias->shape[0] != weight->shape[1])
    throw dim_error("dense: bias axis 0 must equal weight axis 1");
  auto out = matmul(tape, input, weight);
  const std::int64_t batch = out->shape[0], dim = out->shape[1];
  for (std::int64_t i = 0; i < batch; ++i)
    for (std::int64_t j = 0; j < dim; ++j) out->at(i * dim + j) += bias->at(j);
  if (out->requires_grad && bias->requires_grad)
    tape.record([bias, out, batch, dim]() {
      for (std::int64_t i = 0; i < batch; ++i)
        for (std::int64_t j = 0; j < dim; ++j)
          bias->grad[static_cast<std::size_t>(j)] +=
              out->grad[static_cast<std::size_t>(i * dim + j)];
    });
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise ops

inline TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  if (a->shape != b->shape) throw dim_error("add: shape mismatch");
  auto out = make_tensor(a->shape, detail::any_grad({&a, &b}));
  for (std::size_t i = 0; i < out->data.size(); ++i)
    out->data[i] = a->data[i] + b->data[i];
  if (out->requires_grad)
    tape.record([a, b, out]() {
      for (std::size_t i = 0; i < out->grad.size(); ++i) {
        if (a->requires_grad) a->grad[i] += out->grad[i];
        if (b->requires_grad) b->grad[i] += out->grad[i];
      }
    });
  return out;
}

inline TensorPtr sub(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  if (a->shape != b->shape) throw dim_error("sub: shape mismatch");
  auto out = make_tensor(a->shape, detail::any_grad({&a, &b}));
  for (std::size_t i = 0; i < out->data.size(); ++i)
    out->data[i] = a->data[i] - b->data[i];
  if (out->requires_grad)
    tape.record([a, b, out]() {
      for (std::size_t i = 0; i < out->grad.size(); ++i) {
        if (a->requires_grad) a->grad[i] += out->grad[i];
        if (b->requires_grad) b->grad[i] -= out->grad[i];
      }
    });
  return out;
}

inline TensorPtr mul(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  if (a->shape != b->shape) throw dim_error("mul: shape mismatch");
  auto out = make_tensor(a->shape, detail::any_grad({&a, &b}));
  for (std::size_t i = 0; i < out->data.size(); ++i)
    out->data[i] = a->data[i] * b->data[i];
  if (out->requires_grad)
    tape.record([a, b, out]() {
      for (std::size_t i = 0; i < out->grad.size(); ++i) {
        if (a->requires_grad) a->grad[i] += out->grad[i] * b->data[i];
        if (b->requires_grad) b->grad[i] += out->grad[i] * a->data[i];
      }
    });
  return out;
}

inline TensorPtr scale(Tape& tape, const TensorPtr& a, double c) {
  auto out = make_tensor(a->shape, a->requires_grad);
  for (std::size_t i = 0; i < out->data.size(); ++i)
    out->data[i] = a->data[i] * c;
  if (out->requires_grad)
    tape.record([a, out, c]() {
      for (std::size_t i = 0; i < out->grad.size(); ++i)
        a->grad[i] += out->grad[i] * c;
    });
  return out;
}

/// ReLU; subgradient at exactly 0 is 0.
inline TensorPtr relu(Tape& tape, const TensorPtr& a) {
  auto out = make_tensor(a->shape, a->requires_grad);
  for (std::size_t i = 0; i < out->data.size(); ++i)
    out->data[i] = a->data[i] > 0.0 ? a->data[i] : 0.0;
  if (out->requires_grad)
    tape.record([a, out]() {
      for (std::size_t i = 0; i < out->grad.size(); ++i)
        if (a->data[i] > 0.0) a->grad[i] += out->grad[i];
    });
  return out;
}

// ---------------------------------------------------------------------------
// Reductions / reshapes

inline TensorPtr sum_all(Tape& tape, const TensorPtr& a) {
  auto out = make_tensor({1}, a->requires_grad);
  out->data[0] = std::accumulate(a->data.begin(), a->data.end(), 0.0);
  if (out->requires_grad)
    tape.record([a, out]() {
      const double g = out->grad[0];
      for (auto& v : a->grad) v += g;
    });
  return out;
}

inline TensorPtr mean_all(Tape& tape, const TensorPtr& a) {
  auto s = sum_all(tape, a);
  return scale(tape, s, 1.0 / static_cast<double>(a->size()));
}

/// [N x C x H x W] -> [N x C*H*W]. Pure data copy.
inline TensorPtr flatten(Tape& tape, const TensorPtr& a) {
  if (a->shape.size() < 2) throw dim_error("flatten: expected rank >= 2");
  std::int64_t rest = 1;
  for (std::size_t i = 1; i < a->shape.size(); ++i) rest *= a->shape[i];
  auto out = make_tensor({a->shape[0], rest}, a->requires_grad);
  out->data = a->data;
  if (out->requires_grad)
    tape.record([a, out]() {
      for (std::size_t i = 0; i < out->grad.size(); ++i)
        a->grad[i] += out->grad[i];
    });
  return out;
}

/// Stack b's rows under a's rows; both [* x d].
inline TensorPtr concat_rows(Tape& tape, const TensorPtr& a,
                             const TensorPtr& b) {
  detail::check_matrix(a, "concat_rows a");
  detail::check_matrix(b, "concat_rows b");
  if (a->shape[1] != b->shape[1])
    throw dim_error("concat_rows: column counts differ");
  auto out =
      make_tensor({a->shape[0] + b->shape[0], a->shape[1]},
                  detail::any_grad({&a, &b}));
  std::copy(a->data.begin(), a->data.end(), out->data.begin());
  std::copy(b->data.begin(), b->data.end(),
            out->data.begin() + static_cast<std::ptrdiff_t>(a->data.size()));
  if (out->requires_grad)
    tape.record([a, b, out]() {
      const std::size_t na = a->data.size();
      if (a->requires_grad)
        for (std::size_t i = 0; i < na; ++i) a->grad[i] += out->grad[i];
      if (b->requires_grad)
        for (std::size_t i = 0; i < b->data.size(); ++i)
          b->grad[i] += out->grad[na + i];
    });
  return out;
}

/// L2-normalize each row with a norm floor (degenerate rows pass through
/// scaled by 1/floor, flagged upstream by the loss diagnostics).
inline TensorPtr normalize_rows(Tape& tape, const TensorPtr& a,
                                double floor = 1e-12) {
  detail::check_matrix(a, "normalize_rows");
  const std::int64_t n = a->shape[0], d = a->shape[1];
  auto out = make_tensor(a->shape, a->requires_grad);
  std::vector<double> norms(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::int64_t j = 0; j < d; ++j) s += a->at(i * d + j) * a->at(i * d + j);
    double nv = std::max(std::sqrt(s), floor);
    norms[static_cast<std::size_t>(i)] = nv;
    for (std::int64_t j = 0; j < d; ++j) out->at(i * d + j) = a->at(i * d + j) / nv;
  }
  if (out->requires_grad)
    tape.record([a, out, norms, n, d]() {
      // y = x/|x|; dx = (g - y (g.y)) / |x|
      for (std::int64_t i = 0; i < n; ++i) {
        double dot = 0;
        for (std::int64_t j = 0; j < d; ++j)
          dot += out->grad[static_cast<std::size_t>(i * d + j)] *
                 out->data[static_cast<std::size_t>(i * d + j)];
        const double inv = 1.0 / norms[static_cast<std::size_t>(i)];
        for (std::int64_t j = 0; j < d; ++j) {
          const auto idx = static_cast<std::size_t>(i * d + j);
          a->grad[idx] += (out->grad[idx] - out->data[idx] * dot) * inv;
        }
      }
    });
  return out;
}

// ---------------------------------------------------------------------------
// Convolution / pooling

/// Cross-correlation, NCHW. kernel: [out_ch x in_ch x kH x kW].
inline TensorPtr conv2d(Tape& tape, const TensorPtr& input,
                        const TensorPtr& kernel, std::int64_t stride,
                        std::int64_t padding) {
  if (input->shape.size() != 4) throw dim_error("conv2d: input must be NCHW");
  if (kernel->shape.size() != 4)
    throw dim_error("conv2d: kernel must be [out_ch x in_ch x kH x kW]");
  if (stride < 1) throw config_error("conv2d: stride must be positive");
  if (padding < 0) throw config_error("conv2d: padding must be nonnegative");
  const std::int64_t N = input->shape[0], C = input->shape[1];
  const std::int64_t H = input->shape[2], W = input->shape[3];
  const std::int64_t OC = kernel->shape[0], KC = kernel->shape[1];
  const std::int64_t KH = kernel->shape[2], KW = kernel->shape[3];
  if (KC != C)
    throw dim_error("conv2d: kernel in_ch (" + std::to_string(KC) +
                    ") != input channels (" + std::to_string(C) + ")");
  const std::int64_t OH = (H + 2 * padding - KH) / stride + 1;
  const std::int64_t OW = (W + 2 * padding - KW) / stride + 1;
  if (OH <= 0 || OW <= 0)
    throw config_error("conv2d: nonpositive output spatial dimension");
  auto out = make_tensor({N, OC, OH, OW}, detail::any_grad({&input, &kernel}));
  auto in_at = [&](std::int64_t n, std::int64_t c, std::int64_t y,
                   std::int64_t x) -> double {
    if (y < 0 || y >= H || x < 0 || x >= W) return 0.0;
    return input->at(((n * C + c) * H + y) * W + x);
  };
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t oc = 0; oc < OC; ++oc)
      for (std::int64_t oy = 0; oy < OH; ++oy)
        for (std::int64_t ox = 0; ox < OW; ++ox) {
          double s = 0;
          for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t ky = 0; ky < KH; ++ky)
              for (std::int64_t kx = 0; kx < KW; ++kx)
                s += in_at(n, c, oy * stride - padding + ky,
                           ox * stride - padding + kx) *
                     kernel->at(((oc * C + c) * KH + ky) * KW + kx);
          out->at(((n * OC + oc) * OH + oy) * OW + ox) = s;
        }
  if (out->requires_grad)
    tape.record([input, kernel, out, N, C, H, W, OC, KH, KW, OH, OW, stride,
                 padding]() {
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t oc = 0; oc < OC; ++oc)
          for (std::int64_t oy = 0; oy < OH; ++oy)
            for (std::int64_t ox = 0; ox < OW; ++ox) {
              const double g =
                  out->grad[static_cast<std::size_t>(((n * OC + oc) * OH + oy) * OW + ox)];
              if (g == 0.0) continue;
              for (std::int64_t c = 0; c < C; ++c)
                for (std::int64_t ky = 0; ky < KH; ++ky)
                  for (std::int64_t kx = 0; kx < KW; ++kx) {
                    const std::int64_t y = oy * stride - padding + ky;
                    const std::int64_t x = ox * stride - padding + kx;
                    if (y < 0 || y >= H || x < 0 || x >= W) continue;
                    const auto iidx =
                        static_cast<std::size_t>(((n * C + c) * H + y) * W + x);
                    const auto kidx = static_cast<std::size_t>(
                        ((oc * C + c) * KH + ky) * KW + kx);
                    if (input->requires_grad)
                      input->grad[iidx] += g * kernel->data[kidx];
                    if (kernel->requires_grad)
                      kernel->grad[kidx] += g * input->data[iidx];
                  }
            }
    });
  return out;
}

/// 2x2 average pooling, stride 2; odd trailing rows/cols are dropped.
inline TensorPtr avg_pool2(Tape& tape, const TensorPtr& input) {
  if (input->shape.size() != 4) throw dim_error("avg_pool2: input must be NCHW");
  const std::int64_t N = input->shape[0], C = input->shape[1];
  const std::int64_t H = input->shape[2], W = input->shape[3];
  const std::int64_t OH = H / 2, OW = W / 2;
  if (OH <= 0 || OW <= 0)
    throw config_error("avg_pool2: input spatial dims too small");
  auto out = make_tensor({N, C, OH, OW}, input->requires_grad);
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t y = 0; y < OH; ++y)
        for (std::int64_t x = 0; x < OW; ++x) {
          double s = 0;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx)
              s += input->at(((n * C + c) * H + 2 * y + dy) * W + 2 * x + dx);
          out->at(((n * C + c) * OH + y) * OW + x) = 0.25 * s;
        }
  if (out->requires_grad)
    tape.record([input, out, N, C, H, W, OH, OW]() {
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t c = 0; c < C; ++c)
          for (std::int64_t y = 0; y < OH; ++y)
            for (std::int64_t x = 0; x < OW; ++x) {
              const double g =
                  0.25 * out->grad[static_cast<std::size_t>(
                             ((n * C + c) * OH + y) * OW + x)];
              for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx)
                  input->grad[static_cast<std::size_t>(
                      ((n * C + c) * H + 2 * y + dy) * W + 2 * x + dx)] += g;
            }
    });
  return out;
}

/// [N x C x H x W] -> [N x C], mean over the spatial extent.
inline TensorPtr global_avg_pool(Tape& tape, const TensorPtr& input) {
  if (input->shape.size() != 4)
    throw dim_error("global_avg_pool: input must be NCHW");
  const std::int64_t N = input->shape[0], C = input->shape[1];
  const std::int64_t HW = input->shape[2] * input->shape[3];
  auto out = make_tensor({N, C}, input->requires_grad);
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      double s = 0;
      for (std::int64_t i = 0; i < HW; ++i) s += input->at((n * C + c) * HW + i);
      out->at(n * C + c) = s / static_cast<double>(HW);
    }
  if (out->requires_grad)
    tape.record([input, out, N, C, HW]() {
      const double inv = 1.0 / static_cast<double>(HW);
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t c = 0; c < C; ++c) {
          const double g =
              out->grad[static_cast<std::size_t>(n * C + c)] * inv;
          for (std::int64_t i = 0; i < HW; ++i)
            input->grad[static_cast<std::size_t>((n * C + c) * HW + i)] += g;
        }
    });
  return out;
}

// ---------------------------------------------------------------------------
// Batch normalization

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
};

namespace detail {

// Shared core: x viewed as rows x features where statistics run over rows.
// Backward implements the full batch-coupled gradient.
inline TensorPtr batch_norm_core(Tape& tape, const TensorPtr& input,
                                 const TensorPtr& gamma, const TensorPtr& beta,
                                 BatchNormState& state, double eps,
                                 double momentum, bool training,
                                 std::int64_t rows, std::int64_t features,
                                 // maps (row, feature) -> flat index in input
                                 std::function<std::int64_t(std::int64_t, std::int64_t)>
                                     idx) {
  if (gamma->shape != std::vector<std::int64_t>{features} ||
      beta->shape != std::vector<std::int64_t>{features})
    throw dim_error("batch_norm: gamma/beta must have one entry per feature");
  if (training && rows < 2)
    throw config_error("batch_norm: training mode needs batch >= 2");
  if (state.running_mean.empty()) {
    state.running_mean.assign(static_cast<std::size_t>(features), 0.0);
    state.running_var.assign(static_cast<std::size_t>(features), 1.0);
  }
  auto out = make_tensor(input->shape,
                         detail::any_grad({&input, &gamma, &beta}));
  std::vector<double> mean(static_cast<std::size_t>(features), 0.0);
  std::vector<double> var(static_cast<std::size_t>(features), 0.0);
  if (training) {
    for (std::int64_t j = 0; j < features; ++j) {
      double m = 0;
      for (std::int64_t i = 0; i < rows; ++i) m += input->at(idx(i, j));
      m /= static_cast<double>(rows);
      double v = 0;
      for (std::int64_t i = 0; i < rows; ++i) {
        const double d = input->at(idx(i, j)) - m;
        v += d * d;
      }
      mean[static_cast<std::size_t>(j)] = m;
      var[static_cast<std::size_t>(j)] = v / static_cast<double>(rows);
      // running var uses the unbiased estimate
      state.running_mean[static_cast<std::size_t>(j)] =
          (1.0 - momentum) * state.running_mean[static_cast<std::size_t>(j)] +
          momentum * m;
      state.running_var[static_cast<std::size_t>(j)] =
          (1.0 - momentum) * state.running_var[static_cast<std::size_t>(j)] +
          momentum * (v / static_cast<double>(rows - 1));
    }
  } else {
    mean = state.running_mean;
    var = state.running_var;
  }
  std::vector<double> inv_std(static_cast<std::size_t>(features));
  for (std::int64_t j = 0; j < features; ++j)
    inv_std[static_cast<std::size_t>(j)] =
        1.0 / std::sqrt(var[static_cast<std::size_t>(j)] + eps);
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::int64_t j = 0; j < features; ++j) {
      const auto fi = idx(i, j);
      const double xhat = (input->at(fi) - mean[static_cast<std::size_t>(j)]) *
                          inv_std[static_cast<std::size_t>(j)];
      out->at(fi) = gamma->at(j) * xhat + beta->at(j);
    }
  if (out->requires_grad)
    tape.record([input, gamma, beta, out, mean, inv_std, rows, features, idx,
                 training]() {
      for (std::int64_t j = 0; j < features; ++j) {
        const double m = mean[static_cast<std::size_t>(j)];
        const double is = inv_std[static_cast<std::size_t>(j)];
        double sum_dy = 0, sum_dy_xhat = 0;
        for (std::int64_t i = 0; i < rows; ++i) {
          const auto fi = idx(i, j);
          const double dy = out->grad[static_cast<std::size_t>(fi)];
          const double xhat = (input->at(fi) - m) * is;
          sum_dy += dy;
          sum_dy_xhat += dy * xhat;
        }
        if (gamma->requires_grad)
          gamma->grad[static_cast<std::size_t>(j)] += sum_dy_xhat;
        if (beta->requires_grad)
          beta->grad[static_cast<std::size_t>(j)] += sum_dy;
        if (input->requires_grad) {
          const double g = gamma->at(j);
          const double r = static_cast<double>(rows);
          for (std::int64_t i = 0; i < rows; ++i) {
            const auto fi = idx(i, j);
            const double dy = out->grad[static_cast<std::size_t>(fi)];
            const double xhat = (input->at(fi) - m) * is;
            if (training)
              input->grad[static_cast<std::size_t>(fi)] +=
                  g * is * (dy - sum_dy / r - xhat * sum_dy_xhat / r);
            else
              input->grad[static_cast<std::size_t>(fi)] += g * is * dy;
          }
        }
      }
    });
  return out;
}

}  // namespace detail

/// Per-feature standardization over the batch axis; input [batch x features].
inline TensorPtr batch_norm(Tape& tape, const TensorPtr& input,
                            const TensorPtr& gamma, const TensorPtr& beta,
                            BatchNormState& state, double eps = 1e-5,
                            double momentum = 0.1, bool training = true) {
  detail::check_matrix(input, "batch_norm");
  const std::int64_t rows = input->shape[0], features = input->shape[1];
  return detail::batch_norm_core(
      tape, input, gamma, beta, state, eps, momentum, training, rows, features,
      [features](std::int64_t i, std::int64_t j) { return i * features + j; });
}

/// Channel batch norm for NCHW; statistics over batch x spatial.
inline TensorPtr batch_norm2d(Tape& tape, const TensorPtr& input,
                              const TensorPtr& gamma, const TensorPtr& beta,
                              BatchNormState& state, double eps = 1e-5,
                              double momentum = 0.1, bool training = true) {
  if (input->shape.size() != 4) throw dim_error("batch_norm2d: input must be NCHW");
  const std::int64_t N = input->shape[0], C = input->shape[1];
  const std::int64_t HW = input->shape[2] * input->shape[3];
  return detail::batch_norm_core(
      tape, input, gamma, beta, state, eps, momentum, training, N * HW, C,
      [C, HW](std::int64_t i, std::int64_t j) {
        const std::int64_t n = i / HW, s = i % HW;
        return (n * C + j) * HW + s;
      });
}

// ---------------------------------------------------------------------------
// Classification head support (probes)

/// Mean softmax cross-entropy of logits [N x classes] against integer labels.
inline TensorPtr softmax_cross_entropy(Tape& tape, const TensorPtr& logits,
                                       const std::vector<int>& labels) {
  detail::check_matrix(logits, "softmax_cross_entropy");
  const std::int64_t n = logits->shape[0], c = logits->shape[1];
  if (static_cast<std::int64_t>(labels.size()) != n)
    throw dim_error("softmax_cross_entropy: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= c) throw contract_error("label out of class range");
  auto out = make_tensor({1}, logits->requires_grad);
  auto probs = std::make_shared<std::vector<double>>(logits->data.size());
  double total = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    double mx = logits->at(i * c);
    for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, logits->at(i * c + j));
    double z = 0;
    for (std::int64_t j = 0; j < c; ++j)
      z += std::exp(logits->at(i * c + j) - mx);
    for (std::int64_t j = 0; j < c; ++j)
      (*probs)[static_cast<std::size_t>(i * c + j)] =
          std::exp(logits->at(i * c + j) - mx) / z;
    total -= logits->at(i * c + labels[static_cast<std::size_t>(i)]) - mx -
             std::log(z);
  }
  out->data[0] = total / static_cast<double>(n);
  if (out->requires_grad)
    tape.record([logits, out, probs, labels, n, c]() {
      const double g = out->grad[0] / static_cast<double>(n);
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < c; ++j) {
          double p = (*probs)[static_cast<std::size_t>(i * c + j)];
          if (j == labels[static_cast<std::size_t>(i)]) p -= 1.0;
          logits->grad[static_cast<std::size_t>(i * c + j)] += g * p;
        }
    });
  return out;
}

// ---------------------------------------------------------------------------
// Gradient verification harness

/// Max over all entries of all inputs of
/// |analytic - central_difference| / max(1, |central_difference|).
/// scalar_fn must rebuild the graph from scratch on every call.
inline double grad_check(
    const std::function<TensorPtr(Tape&)>& scalar_fn,
    const std::vector<TensorPtr>& inputs, double eps = 1e-5) {
  if (eps < 1e-7 || eps > 1e-4)
    throw contract_error("grad_check: eps must lie in [1e-7, 1e-4]");
  Tape tape;
  auto out = scalar_fn(tape);
  if (out->size() != 1)
    throw contract_error("grad_check: function output must be scalar");
  for (auto& in : inputs) in->zero_grad();
  tape.backward(out);
  double worst = 0;
  for (auto& in : inputs) {
    for (std::size_t i = 0; i < in->data.size(); ++i) {
      const double saved = in->data[i];
      in->data[i] = saved + eps;
      Tape t1;
      const double fp = scalar_fn(t1)->data[0];
      in->data[i] = saved - eps;
      Tape t2;
      const double fm = scalar_fn(t2)->data[0];
      in->data[i] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double analytic = in->grad[i];
      const double rel =
          std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace sscl
