#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "memorag/error.hpp"

namespace memorag::diff {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

/// Dense row-major tensor of doubles. Rank-2 is the working shape for every
/// model op; vectors are carried as 1 x n matrices.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), values_(shape_size(shape_), fill) {
    check_shape();
  }

  Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
    check_shape();
    detail::require(values_.size() == shape_size(shape_),
                    "tensor: " + std::to_string(values_.size()) + " values for shape " + shape_string(shape_));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor(Shape{rows, cols}, fill);
  }

  static Tensor row(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor(Shape{1, n}, std::move(values));
  }

  static Tensor scalar(double value) { return Tensor(Shape{1, 1}, std::vector<double>{value}); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  std::size_t rows() const { return shape_.size() >= 2 ? shape_[0] : 1; }
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::vector<double>& storage() { return values_; }
  const std::vector<double>& storage() const { return values_; }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }

  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

  std::span<double> row_span(std::size_t r) { return {values_.data() + r * cols(), cols()}; }
  std::span<const double> row_span(std::size_t r) const { return {values_.data() + r * cols(), cols()}; }

  double item() const {
    detail::require(values_.size() == 1, "tensor: item() on tensor of size " + std::to_string(values_.size()));
    return values_[0];
  }

  std::optional<std::vector<double>>& grad() { return grad_; }
  const std::optional<std::vector<double>>& grad() const { return grad_; }

  bool all_finite() const {
    for (double v : values_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  /// Appends the rows of `other` (same column count) below this tensor.
  void append_rows(const Tensor& other) {
    if (values_.empty() && shape_.empty()) {
      *this = other;
      grad_.reset();
      return;
    }
    detail::require(cols() == other.cols(), "tensor: append_rows column mismatch");
    values_.insert(values_.end(), other.values_.begin(), other.values_.end());
    shape_[0] += other.rows();
  }

  Tensor slice_rows(std::size_t begin, std::size_t end) const {
    detail::require(begin <= end && end <= rows(), "tensor: slice_rows out of range");
    Tensor out = Tensor::matrix(end - begin, cols());
    std::copy(values_.begin() + static_cast<std::ptrdiff_t>(begin * cols()),
              values_.begin() + static_cast<std::ptrdiff_t>(end * cols()), out.values_.begin());
    return out;
  }

  Tensor slice_cols(std::size_t begin, std::size_t end) const {
    detail::require(begin <= end && end <= cols(), "tensor: slice_cols out of range");
    Tensor out = Tensor::matrix(rows(), end - begin);
    for (std::size_t r = 0; r < rows(); ++r) {
      for (std::size_t c = begin; c < end; ++c) out.at(r, c - begin) = at(r, c);
    }
    return out;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  void check_shape() const {
    for (std::size_t d : shape_) detail::require(d > 0, "tensor: zero-sized dimension in " + shape_string(shape_));
  }

  Shape shape_;
  std::vector<double> values_;
  std::optional<std::vector<double>> grad_;
};

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  detail::require(a.size() == b.size(), "max_abs_diff: size mismatch");
  double out = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) out = std::max(out, std::abs(a[i] - b[i]));
  return out;
}

}  // namespace memorag::diff
