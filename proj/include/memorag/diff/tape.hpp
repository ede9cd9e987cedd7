#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "memorag/diff/ops.hpp"
#include "memorag/diff/tensor.hpp"
#include "memorag/error.hpp"

namespace memorag::diff {

struct Var {
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::size_t id = npos;
  bool valid() const { return id != npos; }
};

enum class OpKind {
  leaf,
  matmul,
  matmul_bt,
  add,
  sub,
  mul,
  scale,
  add_scalar,
  gelu,
  relu,
  layer_norm,
  attention,
  concat_rows,
  slice_rows,
  gather_rows,
  nll,
  sum,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::matmul_bt: return "matmul_bt";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::add_scalar: return "add_scalar";
    case OpKind::gelu: return "gelu";
    case OpKind::relu: return "relu";
    case OpKind::layer_norm: return "layer_norm";
    case OpKind::attention: return "attention";
    case OpKind::concat_rows: return "concat_rows";
    case OpKind::slice_rows: return "slice_rows";
    case OpKind::gather_rows: return "gather_rows";
    case OpKind::nll: return "nll";
    case OpKind::sum: return "sum";
  }
  return "?";
}

/// Records primitive ops in topological order and runs reverse-mode
/// accumulation over them. Leaves either own a value or reference an
/// external tensor (parameters), which must outlive the tape.
///
/// A tape is single-threaded; separate tapes are independent.
class Tape {
 public:
  struct Node {
    OpKind kind = OpKind::leaf;
    std::vector<Var> inputs;
    Tensor value;
    const Tensor* external = nullptr;
    std::vector<double> grad;
    bool requires_grad = false;
    double scalar = 0.0;
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t heads = 1;
    std::vector<std::size_t> indices;
    std::vector<double> weights;
    std::shared_ptr<const VisibilityMask> mask;
    std::vector<double> saved;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  std::size_t size() const { return nodes_.size(); }
  const Node& node(Var v) const { return nodes_.at(v.id); }

  const Tensor& value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.external ? *n.external : n.value;
  }

  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient accumulated at v by the last backward(); zeros if none flowed.
  std::vector<double> grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.empty()) return std::vector<double>(value(v).size(), 0.0);
    return n.grad;
  }

  /// Gradient for the leaf bound to an external tensor, zeros if unbound.
  std::vector<double> grad_of(const Tensor* external) const {
    auto it = external_.find(external);
    if (it == external_.end()) return std::vector<double>(external->size(), 0.0);
    return grad(it->second);
  }

  Var constant(Tensor t) {
    Node n;
    n.value = std::move(t);
    return push(std::move(n));
  }

  /// Leaf referencing an external tensor; repeated binding returns the same var.
  Var parameter(const Tensor& t, bool trainable) {
    auto it = external_.find(&t);
    if (it != external_.end()) {
      nodes_[it->second.id].requires_grad = nodes_[it->second.id].requires_grad || trainable;
      return it->second;
    }
    Node n;
    n.external = &t;
    n.requires_grad = trainable;
    Var v = push(std::move(n));
    external_.emplace(&t, v);
    return v;
  }

  Var matmul(Var a, Var b) { return record(OpKind::matmul, {a, b}); }
  Var matmul_bt(Var a, Var b) { return record(OpKind::matmul_bt, {a, b}); }
  Var add(Var a, Var b) { return record(OpKind::add, {a, b}); }
  Var sub(Var a, Var b) { return record(OpKind::sub, {a, b}); }
  Var mul(Var a, Var b) { return record(OpKind::mul, {a, b}); }
  Var gelu(Var a) { return record(OpKind::gelu, {a}); }
  Var relu(Var a) { return record(OpKind::relu, {a}); }
  Var sum(Var a) { return record(OpKind::sum, {a}); }

  Var scale(Var a, double s) {
    Node n = make(OpKind::scale, {a});
    n.scalar = s;
    return finish(std::move(n));
  }

  Var add_scalar(Var a, double s) {
    Node n = make(OpKind::add_scalar, {a});
    n.scalar = s;
    return finish(std::move(n));
  }

  /// Row-wise layer normalization with 1 x d gain and bias.
  Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5) {
    Node n = make(OpKind::layer_norm, {x, gain, bias});
    n.scalar = eps;
    return finish(std::move(n));
  }

  Var attention(Var q, Var k, Var v, std::shared_ptr<const VisibilityMask> mask, std::size_t n_heads) {
    Node n = make(OpKind::attention, {q, k, v});
    n.mask = std::move(mask);
    n.heads = n_heads;
    return finish(std::move(n));
  }

  Var concat_rows(std::span<const Var> parts) {
    detail::require(!parts.empty(), "concat_rows: no inputs");
    if (parts.size() == 1) return parts[0];
    return record(OpKind::concat_rows, std::vector<Var>(parts.begin(), parts.end()));
  }
  Var concat_rows(std::initializer_list<Var> parts) {
    return concat_rows(std::span<const Var>(parts.begin(), parts.size()));
  }

  Var slice_rows(Var a, std::size_t begin, std::size_t end) {
    Node n = make(OpKind::slice_rows, {a});
    n.begin = begin;
    n.end = end;
    return finish(std::move(n));
  }

  Var gather_rows(Var table, std::vector<std::size_t> ids) {
    Node n = make(OpKind::gather_rows, {table});
    n.indices = std::move(ids);
    return finish(std::move(n));
  }

  /// sum_i weights[i] * -log softmax(logits[i])[targets[i]], as a 1 x 1 value.
  Var nll(Var logits, std::vector<std::size_t> targets, std::vector<double> weights) {
    detail::require(targets.size() == weights.size(), "nll: targets/weights size mismatch");
    Node n = make(OpKind::nll, {logits});
    n.indices = std::move(targets);
    n.weights = std::move(weights);
    return finish(std::move(n));
  }

  /// Reverse-mode accumulation from a 1 x 1 output.
  void backward(Var loss) {
    Node& root = nodes_.at(loss.id);
    detail::require(value(loss).size() == 1, "backward: loss must be a scalar");
    for (Node& n : nodes_) n.grad.clear();
    if (!root.requires_grad) return;
    root.grad.assign(1, 1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty() || n.kind == OpKind::leaf) continue;
      propagate(n);
    }
  }

  /// Recomputes every non-leaf node from its recorded inputs and returns the
  /// largest absolute deviation from the recorded values.
  double replay_max_deviation() const {
    double worst = 0.0;
    for (const Node& n : nodes_) {
      if (n.kind == OpKind::leaf) continue;
      Node copy = n;
      copy.saved.clear();
      compute(copy);
      worst = std::max(worst, max_abs_diff(copy.value.values(), n.value.values()));
    }
    return worst;
  }

 private:
  Node make(OpKind kind, std::vector<Var> inputs) const {
    Node n;
    n.kind = kind;
    for (Var v : inputs) {
      detail::require(v.valid() && v.id < nodes_.size(), std::string(op_name(kind)) + ": invalid input var");
      n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
    }
    n.inputs = std::move(inputs);
    return n;
  }

  Var record(OpKind kind, std::vector<Var> inputs) { return finish(make(kind, std::move(inputs))); }

  Var finish(Node n) {
    compute(n);
    return push(std::move(n));
  }

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  const Tensor& in(const Node& n, std::size_t i) const { return value(n.inputs[i]); }

  void compute(Node& n) const {
    switch (n.kind) {
      case OpKind::leaf: return;
      case OpKind::matmul: n.value = diff::matmul(in(n, 0), in(n, 1)); return;
      case OpKind::matmul_bt: n.value = diff::matmul_bt(in(n, 0), in(n, 1)); return;
      case OpKind::add:
      case OpKind::sub:
      case OpKind::mul: {
        const Tensor& a = in(n, 0);
        const Tensor& b = in(n, 1);
        detail::require(a.shape() == b.shape(), std::string(op_name(n.kind)) + ": shape mismatch " +
                                                    shape_string(a.shape()) + " vs " + shape_string(b.shape()));
        n.value = a;
        auto out = n.value.values();
        auto bv = b.values();
        for (std::size_t i = 0; i < out.size(); ++i) {
          if (n.kind == OpKind::add) out[i] += bv[i];
          else if (n.kind == OpKind::sub) out[i] -= bv[i];
          else out[i] *= bv[i];
        }
        return;
      }
      case OpKind::scale:
      case OpKind::add_scalar: {
        n.value = in(n, 0);
        for (double& x : n.value.values()) x = n.kind == OpKind::scale ? x * n.scalar : x + n.scalar;
        return;
      }
      case OpKind::gelu:
      case OpKind::relu: {
        n.value = in(n, 0);
        for (double& x : n.value.values()) x = n.kind == OpKind::gelu ? diff::gelu(x) : std::max(x, 0.0);
        return;
      }
      case OpKind::sum: {
        double total = 0.0;
        for (double x : in(n, 0).values()) total += x;
        n.value = Tensor::scalar(total);
        return;
      }
      case OpKind::layer_norm: compute_layer_norm(n); return;
      case OpKind::attention:
        n.value = attention_forward(in(n, 0), in(n, 1), in(n, 2), *n.mask, n.heads,
                                    n.requires_grad ? &n.saved : nullptr);
        return;
      case OpKind::concat_rows: {
        const std::size_t cols = in(n, 0).cols();
        std::size_t rows = 0;
        for (std::size_t i = 0; i < n.inputs.size(); ++i) {
          detail::require(in(n, i).cols() == cols, "concat_rows: column mismatch");
          rows += in(n, i).rows();
        }
        n.value = Tensor::matrix(rows, cols);
        auto dst = n.value.storage().begin();
        for (std::size_t i = 0; i < n.inputs.size(); ++i) {
          dst = std::copy(in(n, i).storage().begin(), in(n, i).storage().end(), dst);
        }
        return;
      }
      case OpKind::slice_rows: n.value = in(n, 0).slice_rows(n.begin, n.end); return;
      case OpKind::gather_rows: {
        const Tensor& table = in(n, 0);
        detail::require(!n.indices.empty(), "gather_rows: no indices");
        n.value = Tensor::matrix(n.indices.size(), table.cols());
        for (std::size_t r = 0; r < n.indices.size(); ++r) {
          detail::require(n.indices[r] < table.rows(), "gather_rows: index " + std::to_string(n.indices[r]) +
                                                           " out of range " + std::to_string(table.rows()));
          auto src = table.row_span(n.indices[r]);
          std::copy(src.begin(), src.end(), n.value.row_span(r).begin());
        }
        return;
      }
      case OpKind::nll: {
        const Tensor& logits = in(n, 0);
        detail::require(n.indices.size() == logits.rows(), "nll: one target per logits row required");
        double total = 0.0;
        if (n.requires_grad) n.saved.assign(logits.size(), 0.0);
        for (std::size_t r = 0; r < logits.rows(); ++r) {
          if (n.weights[r] == 0.0) continue;
          auto row = logits.row_span(r);
          total += n.weights[r] * cross_entropy(row, n.indices[r]);
          if (n.requires_grad) {
            auto p = softmax(row);
            std::copy(p.begin(), p.end(), n.saved.begin() + static_cast<std::ptrdiff_t>(r * logits.cols()));
          }
        }
        n.value = Tensor::scalar(total);
        return;
      }
    }
  }

  void compute_layer_norm(Node& n) const {
    const Tensor& x = in(n, 0);
    const Tensor& g = in(n, 1);
    const Tensor& b = in(n, 2);
    const std::size_t rows = x.rows(), d = x.cols();
    detail::require(g.size() == d && b.size() == d, "layer_norm: gain/bias width mismatch");
    n.value = Tensor::matrix(rows, d);
    if (n.requires_grad) n.saved.assign(rows * 2, 0.0);  // mean, rstd per row
    for (std::size_t r = 0; r < rows; ++r) {
      auto xr = x.row_span(r);
      double mean = 0.0;
      for (double v : xr) mean += v;
      mean /= static_cast<double>(d);
      double var = 0.0;
      for (double v : xr) var += (v - mean) * (v - mean);
      var /= static_cast<double>(d);
      const double rstd = 1.0 / std::sqrt(var + n.scalar);
      auto out = n.value.row_span(r);
      for (std::size_t j = 0; j < d; ++j) out[j] = (xr[j] - mean) * rstd * g.data()[j] + b.data()[j];
      if (n.requires_grad) {
        n.saved[2 * r] = mean;
        n.saved[2 * r + 1] = rstd;
      }
    }
  }

  std::vector<double>& grad_buffer(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.empty()) n.grad.assign(value(v).size(), 0.0);
    return n.grad;
  }

  bool wants(const Node& n, std::size_t i) const { return nodes_[n.inputs[i].id].requires_grad; }

  void propagate(const Node& n) {
    const std::vector<double>& g = n.grad;
    switch (n.kind) {
      case OpKind::leaf: return;
      case OpKind::matmul: {
        const Tensor& a = in(n, 0);
        const Tensor& b = in(n, 1);
        const std::size_t m = a.rows(), k = a.cols(), cols = b.cols();
        if (wants(n, 0)) {  // dA = G B^T
          auto& da = grad_buffer(n.inputs[0]);
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              const double* brow = b.data() + p * cols;
              const double* grow = g.data() + i * cols;
              for (std::size_t j = 0; j < cols; ++j) acc += grow[j] * brow[j];
              da[i * k + p] += acc;
            }
          }
        }
        if (wants(n, 1)) {  // dB = A^T G
          auto& db = grad_buffer(n.inputs[1]);
          for (std::size_t i = 0; i < m; ++i) {
            const double* grow = g.data() + i * cols;
            for (std::size_t p = 0; p < k; ++p) {
              const double s = a.data()[i * k + p];
              if (s == 0.0) continue;
              double* dbrow = db.data() + p * cols;
              for (std::size_t j = 0; j < cols; ++j) dbrow[j] += s * grow[j];
            }
          }
        }
        return;
      }
      case OpKind::matmul_bt: {  // C = A B^T, A m x k, B n x k
        const Tensor& a = in(n, 0);
        const Tensor& b = in(n, 1);
        const std::size_t m = a.rows(), k = a.cols(), cols = b.rows();
        if (wants(n, 0)) {  // dA = G B
          auto& da = grad_buffer(n.inputs[0]);
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < cols; ++j) {
              const double s = g[i * cols + j];
              if (s == 0.0) continue;
              const double* brow = b.data() + j * k;
              double* darow = da.data() + i * k;
              for (std::size_t p = 0; p < k; ++p) darow[p] += s * brow[p];
            }
          }
        }
        if (wants(n, 1)) {  // dB = G^T A
          auto& db = grad_buffer(n.inputs[1]);
          for (std::size_t i = 0; i < m; ++i) {
            const double* arow = a.data() + i * k;
            for (std::size_t j = 0; j < cols; ++j) {
              const double s = g[i * cols + j];
              if (s == 0.0) continue;
              double* dbrow = db.data() + j * k;
              for (std::size_t p = 0; p < k; ++p) dbrow[p] += s * arow[p];
            }
          }
        }
        return;
      }
      case OpKind::add:
      case OpKind::sub: {
        if (wants(n, 0)) {
          auto& da = grad_buffer(n.inputs[0]);
          for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
        }
        if (wants(n, 1)) {
          auto& db = grad_buffer(n.inputs[1]);
          const double sign = n.kind == OpKind::add ? 1.0 : -1.0;
          for (std::size_t i = 0; i < g.size(); ++i) db[i] += sign * g[i];
        }
        return;
      }
      case OpKind::mul: {
        const Tensor& a = in(n, 0);
        const Tensor& b = in(n, 1);
        if (wants(n, 0)) {
          auto& da = grad_buffer(n.inputs[0]);
          for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * b.data()[i];
        }
        if (wants(n, 1)) {
          auto& db = grad_buffer(n.inputs[1]);
          for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * a.data()[i];
        }
        return;
      }
      case OpKind::scale: {
        auto& da = grad_buffer(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * n.scalar;
        return;
      }
      case OpKind::add_scalar: {
        auto& da = grad_buffer(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
        return;
      }
      case OpKind::gelu:
      case OpKind::relu: {
        const Tensor& a = in(n, 0);
        auto& da = grad_buffer(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double x = a.data()[i];
          da[i] += g[i] * (n.kind == OpKind::gelu ? gelu_derivative(x) : (x > 0.0 ? 1.0 : 0.0));
        }
        return;
      }
      case OpKind::sum: {
        auto& da = grad_buffer(n.inputs[0]);
        for (double& x : da) x += g[0];
        return;
      }
      case OpKind::layer_norm: propagate_layer_norm(n); return;
      case OpKind::attention: {
        double* dq = wants(n, 0) ? grad_buffer(n.inputs[0]).data() : nullptr;
        double* dk = wants(n, 1) ? grad_buffer(n.inputs[1]).data() : nullptr;
        double* dv = wants(n, 2) ? grad_buffer(n.inputs[2]).data() : nullptr;
        attention_backward(in(n, 0), in(n, 1), in(n, 2), *n.mask, n.heads, n.saved, g, dq, dk, dv);
        return;
      }
      case OpKind::concat_rows: {
        std::size_t offset = 0;
        for (std::size_t i = 0; i < n.inputs.size(); ++i) {
          const std::size_t count = in(n, i).size();
          if (wants(n, i)) {
            auto& di = grad_buffer(n.inputs[i]);
            for (std::size_t j = 0; j < count; ++j) di[j] += g[offset + j];
          }
          offset += count;
        }
        return;
      }
      case OpKind::slice_rows: {
        auto& da = grad_buffer(n.inputs[0]);
        const std::size_t cols = in(n, 0).cols();
        const std::size_t base = n.begin * cols;
        for (std::size_t j = 0; j < g.size(); ++j) da[base + j] += g[j];
        return;
      }
      case OpKind::gather_rows: {
        auto& dt = grad_buffer(n.inputs[0]);
        const std::size_t cols = in(n, 0).cols();
        for (std::size_t r = 0; r < n.indices.size(); ++r) {
          double* dst = dt.data() + n.indices[r] * cols;
          for (std::size_t j = 0; j < cols; ++j) dst[j] += g[r * cols + j];
        }
        return;
      }
      case OpKind::nll: {
        const Tensor& logits = in(n, 0);
        auto& dl = grad_buffer(n.inputs[0]);
        const std::size_t cols = logits.cols();
        for (std::size_t r = 0; r < logits.rows(); ++r) {
          const double w = n.weights[r] * g[0];
          if (w == 0.0) continue;
          for (std::size_t j = 0; j < cols; ++j) dl[r * cols + j] += w * n.saved[r * cols + j];
          dl[r * cols + n.indices[r]] -= w;
        }
        return;
      }
    }
  }

  void propagate_layer_norm(const Node& n) {
    const Tensor& x = in(n, 0);
    const Tensor& gain = in(n, 1);
    const std::size_t rows = x.rows(), d = x.cols();
    const std::vector<double>& g = n.grad;
    double* dx = wants(n, 0) ? grad_buffer(n.inputs[0]).data() : nullptr;
    double* dg = wants(n, 1) ? grad_buffer(n.inputs[1]).data() : nullptr;
    double* db = wants(n, 2) ? grad_buffer(n.inputs[2]).data() : nullptr;
    std::vector<double> xhat(d), dxhat(d);
    for (std::size_t r = 0; r < rows; ++r) {
      const double mean = n.saved[2 * r];
      const double rstd = n.saved[2 * r + 1];
      const double* gr = g.data() + r * d;
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        xhat[j] = (x.data()[r * d + j] - mean) * rstd;
        dxhat[j] = gr[j] * gain.data()[j];
        sum_dxhat += dxhat[j];
        sum_dxhat_xhat += dxhat[j] * xhat[j];
        if (dg) dg[j] += gr[j] * xhat[j];
        if (db) db[j] += gr[j];
      }
      if (dx) {
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
          dx[r * d + j] += rstd * (dxhat[j] - inv_d * sum_dxhat - xhat[j] * inv_d * sum_dxhat_xhat);
        }
      }
    }
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, Var> external_;
};

}  // namespace memorag::diff
