#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "memorag/diff/tape.hpp"
#include "memorag/diff/tensor.hpp"
#include "memorag/error.hpp"

namespace memorag::diff {

/// Builds a scalar loss on the given tape. It must bind the checked tensors
/// with Tape::parameter(tensor, /*trainable=*/true).
using LossBuilder = std::function<Var(Tape&)>;

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t entries_checked = 0;
  std::size_t worst_tensor = 0;
  std::size_t worst_entry = 0;
  double worst_tape = 0.0;
  double worst_numeric = 0.0;
  double max_abs_error = 0.0;
  // Same ratio restricted to entries with max(|tape|, |fd|) >= resolvable_floor.
  // Below that, double rounding of the loss itself dominates the difference quotient.
  double max_resolvable_relative_error = 0.0;
};

inline constexpr double resolvable_floor = 1e-6;

inline double evaluate_loss(const LossBuilder& loss_fn) {
  Tape tape;
  return tape.value(loss_fn(tape)).item();
}

/// Compares tape gradients against central differences for every entry of
/// every tensor in `params`. Each tensor's grad() is filled with the tape
/// gradient. Throws NumericError when the loss is not deterministic.
inline GradCheckReport grad_check_report(const LossBuilder& loss_fn, std::span<Tensor* const> params, double eps) {
  detail::require(eps > 0.0, "grad_check: eps must be positive");
  const double first = evaluate_loss(loss_fn);
  const double second = evaluate_loss(loss_fn);
  if (first != second) {
    throw NumericError("grad_check: loss is not deterministic (" + std::to_string(first) + " vs " +
                       std::to_string(second) + ")");
  }

  Tape tape;
  Var loss = loss_fn(tape);
  tape.backward(loss);
  for (Tensor* p : params) p->grad() = tape.grad_of(p);

  GradCheckReport report;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& p = *params[t];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p.storage()[i];
      p.storage()[i] = saved + eps;
      const double up = evaluate_loss(loss_fn);
      p.storage()[i] = saved - eps;
      const double down = evaluate_loss(loss_fn);
      p.storage()[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = (*p.grad())[i];
      const double err = relative_error(analytic, numeric);
      ++report.entries_checked;
      report.max_abs_error = std::max(report.max_abs_error, std::abs(analytic - numeric));
      if (std::max(std::abs(analytic), std::abs(numeric)) >= resolvable_floor) {
        report.max_resolvable_relative_error = std::max(report.max_resolvable_relative_error, err);
      }
      if (err > report.max_relative_error || report.entries_checked == 1) {
        report.max_relative_error = std::max(report.max_relative_error, err);
        report.worst_tensor = t;
        report.worst_entry = i;
        report.worst_tape = analytic;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

inline double grad_check(const LossBuilder& loss_fn, std::span<Tensor* const> params, double eps) {
  return grad_check_report(loss_fn, params, eps).max_relative_error;
}

}  // namespace memorag::diff
