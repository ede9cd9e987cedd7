#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "memorag/diff/tensor.hpp"
#include "memorag/error.hpp"

namespace memorag::diff {

/// Max-subtracted softmax over one row.
inline std::vector<double> softmax(std::span<const double> row) {
  detail::require(!row.empty(), "softmax: empty input");
  const double peak = *std::max_element(row.begin(), row.end());
  detail::require(std::isfinite(peak), "softmax: non-finite input");
  std::vector<double> out(row.size());
  double total = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i) {
    out[i] = std::exp(row[i] - peak);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

inline double log_sum_exp(std::span<const double> row) {
  const double peak = *std::max_element(row.begin(), row.end());
  double total = 0.0;
  for (double v : row) total += std::exp(v - peak);
  return peak + std::log(total);
}

/// -log softmax(logits)[target]
inline double cross_entropy(std::span<const double> logits, std::size_t target) {
  detail::require(!logits.empty(), "cross_entropy: empty logits");
  detail::require(target < logits.size(), "cross_entropy: target " + std::to_string(target) +
                                              " out of range for " + std::to_string(logits.size()) + " classes");
  const double loss = log_sum_exp(logits) - logits[target];
  return std::max(loss, 0.0);
}

/// out[m x n] = a[m x k] * b[k x n]
inline void matmul_into(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::fill(out.storage().begin(), out.storage().end(), 0.0);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = po + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = pa[i * k + p];
      if (s == 0.0) continue;
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += s * brow[j];
    }
  }
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require(a.cols() == b.rows(), "matmul: inner dimension mismatch " + shape_string(a.shape()) + " * " +
                                            shape_string(b.shape()));
  Tensor out = Tensor::matrix(a.rows(), b.cols());
  matmul_into(a, b, out);
  return out;
}

/// a[m x k] * b[n x k]^T
inline Tensor matmul_bt(const Tensor& a, const Tensor& b) {
  detail::require(a.cols() == b.cols(), "matmul_bt: inner dimension mismatch " + shape_string(a.shape()) + " * " +
                                            shape_string(b.shape()) + "^T");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor out = Tensor::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b.data() + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      out.at(i, j) = acc;
    }
  }
  return out;
}

inline double gelu(double x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

inline double gelu_derivative(double x) {
  constexpr double c = 0.7978845608028654;
  const double u = c * (x + 0.044715 * x * x * x);
  const double t = std::tanh(u);
  const double du = c * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

/// Which key columns each query row may attend to. The common case is a
/// per-row visible prefix [0, limit); arbitrary patterns use a dense bitmap.
class VisibilityMask {
 public:
  VisibilityMask() = default;

  static VisibilityMask prefix(std::vector<std::size_t> limits, std::size_t n_kv) {
    VisibilityMask m;
    m.rows_ = limits.size();
    m.cols_ = n_kv;
    for (std::size_t l : limits) detail::require(l <= n_kv, "mask: row limit exceeds key count");
    m.limits_ = std::move(limits);
    return m;
  }

  /// Row r sees keys [0, past + r + 1).
  static VisibilityMask causal(std::size_t n_q, std::size_t n_kv, std::size_t past = 0) {
    std::vector<std::size_t> limits(n_q);
    for (std::size_t r = 0; r < n_q; ++r) limits[r] = past + r + 1;
    return prefix(std::move(limits), n_kv);
  }

  static VisibilityMask full(std::size_t n_q, std::size_t n_kv) {
    return prefix(std::vector<std::size_t>(n_q, n_kv), n_kv);
  }

  static VisibilityMask dense(std::size_t n_q, std::size_t n_kv, std::vector<std::uint8_t> bits) {
    detail::require(bits.size() == n_q * n_kv, "mask: dense bitmap size mismatch");
    VisibilityMask m;
    m.rows_ = n_q;
    m.cols_ = n_kv;
    m.bits_ = std::move(bits);
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool is_dense() const { return !bits_.empty(); }

  /// One past the last column that can be visible in row r.
  std::size_t row_end(std::size_t r) const { return is_dense() ? cols_ : limits_[r]; }

  bool visible(std::size_t r, std::size_t c) const {
    return is_dense() ? bits_[r * cols_ + c] != 0 : c < limits_[r];
  }

  std::size_t visible_count(std::size_t r) const {
    if (!is_dense()) return limits_[r];
    std::size_t n = 0;
    for (std::size_t c = 0; c < cols_; ++c) n += bits_[r * cols_ + c] != 0;
    return n;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::size_t> limits_;
  std::vector<std::uint8_t> bits_;
};

/// Multi-head scaled dot-product attention. Heads are contiguous column blocks
/// of width d / n_heads. When `probs` is non-null it receives the attention
/// weights laid out [head][row][col] for the backward pass.
inline Tensor attention_forward(const Tensor& q, const Tensor& k, const Tensor& v, const VisibilityMask& mask,
                                std::size_t n_heads, std::vector<double>* probs = nullptr) {
  const std::size_t n_q = q.rows(), n_kv = k.rows(), d = q.cols();
  detail::require(n_heads >= 1 && d % n_heads == 0, "attention: width not divisible by head count");
  detail::require(k.cols() == d && v.cols() == d, "attention: query/key/value widths differ");
  detail::require(v.rows() == n_kv, "attention: key/value row counts differ");
  detail::require(mask.rows() == n_q && mask.cols() == n_kv,
                  "attention: mask is " + std::to_string(mask.rows()) + "x" + std::to_string(mask.cols()) +
                      ", expected " + std::to_string(n_q) + "x" + std::to_string(n_kv));
  const std::size_t hd = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  Tensor out = Tensor::matrix(n_q, d);
  if (probs) probs->assign(n_heads * n_q * n_kv, 0.0);
  std::vector<double> scores(n_kv);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t off = h * hd;
    for (std::size_t r = 0; r < n_q; ++r) {
      const std::size_t end = mask.row_end(r);
      const double* qr = q.data() + r * d + off;
      double peak = -std::numeric_limits<double>::infinity();
      bool any = false;
      for (std::size_t c = 0; c < end; ++c) {
        if (!mask.visible(r, c)) continue;
        const double* kc = k.data() + c * d + off;
        double acc = 0.0;
        for (std::size_t j = 0; j < hd; ++j) acc += qr[j] * kc[j];
        scores[c] = acc * scale;
        peak = std::max(peak, scores[c]);
        any = true;
      }
      detail::require(any, "attention: query row " + std::to_string(r) + " sees no keys");
      if (!std::isfinite(peak)) throw NumericError("attention: non-finite scores in query row " + std::to_string(r));
      double total = 0.0;
      for (std::size_t c = 0; c < end; ++c) {
        if (!mask.visible(r, c)) continue;
        scores[c] = std::exp(scores[c] - peak);
        total += scores[c];
      }
      double* orow = out.data() + r * d + off;
      double* prow = probs ? probs->data() + (h * n_q + r) * n_kv : nullptr;
      for (std::size_t c = 0; c < end; ++c) {
        if (!mask.visible(r, c)) continue;
        const double p = scores[c] / total;
        if (prow) prow[c] = p;
        const double* vc = v.data() + c * d + off;
        for (std::size_t j = 0; j < hd; ++j) orow[j] += p * vc[j];
      }
    }
  }
  return out;
}

/// Accumulates dQ, dK, dV (any may be null) given saved probabilities.
inline void attention_backward(const Tensor& q, const Tensor& k, const Tensor& v, const VisibilityMask& mask,
                               std::size_t n_heads, const std::vector<double>& probs, std::span<const double> dout,
                               double* dq, double* dk, double* dv) {
  const std::size_t n_q = q.rows(), n_kv = k.rows(), d = q.cols();
  const std::size_t hd = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<double> dp(n_kv);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t off = h * hd;
    for (std::size_t r = 0; r < n_q; ++r) {
      const std::size_t end = mask.row_end(r);
      const double* prow = probs.data() + (h * n_q + r) * n_kv;
      const double* go = dout.data() + r * d + off;
      double dot = 0.0;
      for (std::size_t c = 0; c < end; ++c) {
        if (prow[c] == 0.0) {
          dp[c] = 0.0;
          continue;
        }
        const double* vc = v.data() + c * d + off;
        double acc = 0.0;
        for (std::size_t j = 0; j < hd; ++j) acc += go[j] * vc[j];
        dp[c] = acc;
        dot += prow[c] * acc;
        if (dv) {
          double* dvc = dv + c * d + off;
          for (std::size_t j = 0; j < hd; ++j) dvc[j] += prow[c] * go[j];
        }
      }
      const double* qr = q.data() + r * d + off;
      double* dqr = dq ? dq + r * d + off : nullptr;
      for (std::size_t c = 0; c < end; ++c) {
        if (prow[c] == 0.0) continue;
        const double ds = prow[c] * (dp[c] - dot) * scale;
        const double* kc = k.data() + c * d + off;
        if (dqr) {
          for (std::size_t j = 0; j < hd; ++j) dqr[j] += ds * kc[j];
        }
        if (dk) {
          double* dkc = dk + c * d + off;
          for (std::size_t j = 0; j < hd; ++j) dkc[j] += ds * qr[j];
        }
      }
    }
  }
}

/// Free-standing attention over tensors (no gradient bookkeeping).
inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const VisibilityMask& mask,
                        std::size_t n_heads = 1) {
  return attention_forward(q, k, v, mask, n_heads, nullptr);
}

}  // namespace memorag::diff
