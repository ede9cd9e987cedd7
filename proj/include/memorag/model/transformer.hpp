#pragma once

#include <cmath>
#include <memory>
#include <span>
#include <vector>

#include "memorag/diff/tape.hpp"
#include "memorag/error.hpp"
#include "memorag/model/parameters.hpp"
#include "memorag/text/tokenizer.hpp"

namespace memorag::model {

using diff::Tape;
using diff::Var;
using text::TokenId;

enum class Trainable {
  none,
  memory,  // memory projections + memory-token embeddings
  base,    // everything except the memory side
  all,
};

struct LayerVars {
  Var wq, wk, wv, wo;
  Var ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  Var ffn_in, ffn_out;
  Var wq_mem, wk_mem, wv_mem;
};

struct ModelVars {
  Var token_embeddings;
  Var mem_token_embeddings;
  std::vector<LayerVars> layers;
};

inline ModelVars bind_parameters(Tape& tape, const Parameters& p, Trainable trainable) {
  auto bind = [&](const Tensor& t, ParamGroup group) {
    const bool train = trainable == Trainable::all || (trainable == Trainable::memory && group == ParamGroup::memory) ||
                       (trainable == Trainable::base && group == ParamGroup::base);
    return tape.parameter(t, train);
  };
  ModelVars mv;
  mv.token_embeddings = bind(p.token_embeddings, ParamGroup::base);
  if (p.config.memory_enabled) mv.mem_token_embeddings = bind(p.mem_token_embeddings, ParamGroup::memory);
  for (const auto& L : p.layers) {
    LayerVars lv;
    lv.wq = bind(L.wq, ParamGroup::base);
    lv.wk = bind(L.wk, ParamGroup::base);
    lv.wv = bind(L.wv, ParamGroup::base);
    lv.wo = bind(L.wo, ParamGroup::base);
    lv.ln1_gain = bind(L.ln1_gain, ParamGroup::base);
    lv.ln1_bias = bind(L.ln1_bias, ParamGroup::base);
    lv.ln2_gain = bind(L.ln2_gain, ParamGroup::base);
    lv.ln2_bias = bind(L.ln2_bias, ParamGroup::base);
    lv.ffn_in = bind(L.ffn_in, ParamGroup::base);
    lv.ffn_out = bind(L.ffn_out, ParamGroup::base);
    if (p.config.memory_enabled) {
      lv.wq_mem = bind(L.wq_mem, ParamGroup::memory);
      lv.wk_mem = bind(L.wk_mem, ParamGroup::memory);
      lv.wv_mem = bind(L.wv_mem, ParamGroup::memory);
    }
    mv.layers.push_back(lv);
  }
  return mv;
}

/// Sinusoidal position vectors scaled to unit norm.
inline Tensor positional_rows(std::size_t first, std::size_t count, std::size_t d) {
  Tensor out = Tensor::matrix(count, d);
  const double norm = std::sqrt(2.0 / static_cast<double>(d));
  for (std::size_t r = 0; r < count; ++r) {
    const double pos = static_cast<double>(first + r);
    for (std::size_t i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(d));
      out.at(r, i) = norm * (i % 2 == 0 ? std::sin(pos * freq) : std::cos(pos * freq));
    }
  }
  return out;
}

/// Keys and values already in the cache, one var per layer.
struct PrefixKV {
  std::vector<Var> keys;
  std::vector<Var> values;
  std::size_t length = 0;
};

struct SegmentOutput {
  Var logits;               // raw-token rows only; invalid if not requested
  std::vector<Var> keys;    // per layer: new rows, raw tokens then memory tokens
  std::vector<Var> values;
};

/// Visibility for a segment of `n_raw` regular rows followed by `n_mem`
/// memory rows, placed after `prefix` cached entries:
///   regular row i sees [prefix; regular rows 0..i]
///   memory row j sees  [prefix; all regular rows; memory rows 0..j]
/// Both are prefixes of the [prefix; regular; memory] key layout.
inline std::shared_ptr<const diff::VisibilityMask> segment_mask(std::size_t prefix, std::size_t n_raw,
                                                                std::size_t n_mem) {
  std::vector<std::size_t> limits(n_raw + n_mem);
  for (std::size_t i = 0; i < n_raw; ++i) limits[i] = prefix + i + 1;
  for (std::size_t j = 0; j < n_mem; ++j) limits[n_raw + j] = prefix + n_raw + j + 1;
  return std::make_shared<const diff::VisibilityMask>(
      diff::VisibilityMask::prefix(std::move(limits), prefix + n_raw + n_mem));
}

/// Runs one block of tokens through the transformer. Raw tokens use the base
/// projections; the trailing `n_mem` memory slots use the memory projections.
/// Positions are assigned consecutively from `position`.
inline SegmentOutput run_segment(Tape& tape, const ModelVars& mv, const ModelConfig& cfg,
                                 std::span<const TokenId> tokens, std::size_t n_mem, std::size_t position,
                                 const PrefixKV& prefix, bool want_logits) {
  detail::require(!tokens.empty(), "forward: empty token segment");
  detail::require(n_mem == 0 || cfg.memory_enabled, "forward: memory tokens requested but memory mode is disabled");
  detail::require(n_mem <= cfg.mem_k || !cfg.memory_enabled, "forward: more memory tokens than embedding slots");
  for (TokenId t : tokens) {
    if (t >= cfg.vocab_size) {
      throw InputError("forward: unknown token id " + std::to_string(t) + " (vocab " +
                       std::to_string(cfg.vocab_size) + ")");
    }
  }
  const std::size_t n_raw = tokens.size();
  const std::size_t d = cfg.d_model;

  Var h = tape.add(tape.gather_rows(mv.token_embeddings, std::vector<std::size_t>(tokens.begin(), tokens.end())),
                   tape.constant(positional_rows(position, n_raw, d)));
  if (n_mem > 0) {
    Var mem = tape.add(tape.slice_rows(mv.mem_token_embeddings, 0, n_mem),
                       tape.constant(positional_rows(position + n_raw, n_mem, d)));
    h = tape.concat_rows({h, mem});
  }

  const auto mask = segment_mask(prefix.length, n_raw, n_mem);
  SegmentOutput out;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const LayerVars& L = mv.layers[l];
    Var x = tape.layer_norm(h, L.ln1_gain, L.ln1_bias);
    Var q, k, v;
    if (n_mem == 0) {
      q = tape.matmul(x, L.wq);
      k = tape.matmul(x, L.wk);
      v = tape.matmul(x, L.wv);
    } else {
      Var xr = tape.slice_rows(x, 0, n_raw);
      Var xm = tape.slice_rows(x, n_raw, n_raw + n_mem);
      q = tape.concat_rows({tape.matmul(xr, L.wq), tape.matmul(xm, L.wq_mem)});
      k = tape.concat_rows({tape.matmul(xr, L.wk), tape.matmul(xm, L.wk_mem)});
      v = tape.concat_rows({tape.matmul(xr, L.wv), tape.matmul(xm, L.wv_mem)});
    }
    out.keys.push_back(k);
    out.values.push_back(v);
    Var keys = prefix.length > 0 ? tape.concat_rows({prefix.keys[l], k}) : k;
    Var values = prefix.length > 0 ? tape.concat_rows({prefix.values[l], v}) : v;
    Var att = tape.attention(q, keys, values, mask, cfg.n_heads);
    h = tape.add(h, tape.matmul(att, L.wo));
    Var f = tape.layer_norm(h, L.ln2_gain, L.ln2_bias);
    f = tape.matmul(tape.gelu(tape.matmul(f, L.ffn_in)), L.ffn_out);
    h = tape.add(h, f);
  }
  if (want_logits) {
    Var raw = n_mem > 0 ? tape.slice_rows(h, 0, n_raw) : h;
    out.logits = tape.matmul_bt(raw, mv.token_embeddings);
  }
  return out;
}

}  // namespace memorag::model
