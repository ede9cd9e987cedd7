#pragma once

#include <cstddef>
#include <vector>

#include "memorag/diff/tensor.hpp"
#include "memorag/error.hpp"

namespace memorag::model {

using diff::Tensor;

/// Per-layer key and value rows. Heads are contiguous column blocks, so the
/// length is shared by every layer and head by construction.
struct KVCache {
  std::size_t n_heads = 1;
  std::vector<Tensor> keys;    // per layer, [len x d_model]
  std::vector<Tensor> values;  // per layer, [len x d_model]

  KVCache() = default;
  KVCache(std::size_t n_layers, std::size_t heads) : n_heads(heads), keys(n_layers), values(n_layers) {}

  std::size_t n_layers() const { return keys.size(); }
  std::size_t length() const { return keys.empty() || keys[0].empty() ? 0 : keys[0].rows(); }
  std::size_t width() const { return keys.empty() || keys[0].empty() ? 0 : keys[0].cols(); }

  void append(std::size_t layer, const Tensor& k, const Tensor& v) {
    keys.at(layer).append_rows(k);
    values.at(layer).append_rows(v);
  }

  /// len x head_dim slice of one head's keys.
  Tensor head_keys(std::size_t layer, std::size_t head) const { return head_block(keys.at(layer), head); }
  Tensor head_values(std::size_t layer, std::size_t head) const { return head_block(values.at(layer), head); }

  /// Payload size when stored as 32-bit floats (keys and values, all layers).
  std::size_t payload_bytes() const { return 2 * n_layers() * length() * width() * sizeof(float); }

  friend bool operator==(const KVCache&, const KVCache&) = default;

 private:
  Tensor head_block(const Tensor& t, std::size_t head) const {
    detail::require(head < n_heads, "kv cache: head index out of range");
    const std::size_t hd = t.cols() / n_heads;
    return t.slice_cols(head * hd, (head + 1) * hd);
  }
};

}  // namespace memorag::model
