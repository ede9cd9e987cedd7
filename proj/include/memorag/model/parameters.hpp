#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "memorag/diff/tensor.hpp"
#include "memorag/io/fingerprint.hpp"
#include "memorag/model/config.hpp"

namespace memorag::model {

using diff::Tensor;

struct LayerParams {
  Tensor wq, wk, wv, wo;
  Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  Tensor ffn_in, ffn_out;
  // Memory-token projections; empty when memory mode is disabled.
  Tensor wq_mem, wk_mem, wv_mem;
};

enum class ParamGroup {
  base,    // the underlying transformer; frozen in the memory training stages
  memory,  // memory projections and memory-token embeddings
};

/// All model weights. The output head is tied to token_embeddings.
struct Parameters {
  ModelConfig config;
  Tensor token_embeddings;      // vocab x d
  Tensor mem_token_embeddings;  // mem_k x d, one row per memory slot
  std::vector<LayerParams> layers;

  /// Visits every tensor in declaration order (the checkpoint order).
  template <typename Self, typename Fn>
  static void visit(Self& self, Fn&& fn) {
    fn("token_embeddings", self.token_embeddings, ParamGroup::base);
    if (self.config.memory_enabled) fn("mem_token_embeddings", self.mem_token_embeddings, ParamGroup::memory);
    for (std::size_t i = 0; i < self.layers.size(); ++i) {
      auto& L = self.layers[i];
      const std::string p = "layers." + std::to_string(i) + ".";
      fn(p + "wq", L.wq, ParamGroup::base);
      fn(p + "wk", L.wk, ParamGroup::base);
      fn(p + "wv", L.wv, ParamGroup::base);
      fn(p + "wo", L.wo, ParamGroup::base);
      fn(p + "ln1_gain", L.ln1_gain, ParamGroup::base);
      fn(p + "ln1_bias", L.ln1_bias, ParamGroup::base);
      fn(p + "ln2_gain", L.ln2_gain, ParamGroup::base);
      fn(p + "ln2_bias", L.ln2_bias, ParamGroup::base);
      fn(p + "ffn_in", L.ffn_in, ParamGroup::base);
      fn(p + "ffn_out", L.ffn_out, ParamGroup::base);
      if (self.config.memory_enabled) {
        fn(p + "wq_mem", L.wq_mem, ParamGroup::memory);
        fn(p + "wk_mem", L.wk_mem, ParamGroup::memory);
        fn(p + "wv_mem", L.wv_mem, ParamGroup::memory);
      }
    }
  }

  template <typename Fn>
  void for_each(Fn&& fn) {
    visit(*this, std::forward<Fn>(fn));
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    visit(*this, std::forward<Fn>(fn));
  }

  std::vector<Tensor*> tensors(ParamGroup group) {
    std::vector<Tensor*> out;
    for_each([&](const std::string&, Tensor& t, ParamGroup g) {
      if (g == group) out.push_back(&t);
    });
    return out;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Tensor& t, ParamGroup) { n += t.size(); });
    return n;
  }

  bool all_finite() const {
    bool ok = true;
    for_each([&](const std::string&, const Tensor& t, ParamGroup) { ok = ok && t.all_finite(); });
    return ok;
  }

  /// FNV-1a over the config and the exact bits of every weight.
  std::uint64_t fingerprint() const {
    io::Fnv1a h;
    for (std::size_t v : {config.vocab_size, config.d_model, config.n_layers, config.n_heads, config.ffn_mult,
                          config.window_l, config.mem_k, config.max_seq}) {
      h.u64(v);
    }
    h.u32(config.memory_enabled ? 1 : 0);
    for_each([&](const std::string&, const Tensor& t, ParamGroup) {
      for (double v : t.values()) h.f64(v);
    });
    return h.value();
  }
};

struct InitOptions {
  std::uint64_t seed = 0;
  double embedding_std = -1.0;   // default 1/sqrt(d)
  double memory_noise_std = 0.02;  // noise added to copied base projections
  bool allow_any_ratio = false;  // test-only: skip the compression-ratio set check
};

inline Parameters init_parameters(const ModelConfig& config, const InitOptions& opts = {}) {
  if (opts.allow_any_ratio) config.validate_structure();
  else config.validate();
  std::mt19937_64 rng(opts.seed);
  const auto d = config.d_model;
  auto gaussian = [&](std::size_t rows, std::size_t cols, double std) {
    std::normal_distribution<double> dist(0.0, std);
    Tensor t = Tensor::matrix(rows, cols);
    for (double& v : t.values()) v = dist(rng);
    return t;
  };
  const double emb_std = opts.embedding_std > 0 ? opts.embedding_std : 1.0 / std::sqrt(static_cast<double>(d));
  const double proj_std = 1.0 / std::sqrt(static_cast<double>(d));
  const double resid_std = proj_std / std::sqrt(2.0 * static_cast<double>(config.n_layers));

  Parameters p;
  p.config = config;
  p.token_embeddings = gaussian(config.vocab_size, d, emb_std);
  if (config.memory_enabled) p.mem_token_embeddings = gaussian(config.mem_k, d, emb_std);
  for (std::size_t i = 0; i < config.n_layers; ++i) {
    LayerParams L;
    L.wq = gaussian(d, d, proj_std);
    L.wk = gaussian(d, d, proj_std);
    L.wv = gaussian(d, d, proj_std);
    L.wo = gaussian(d, d, resid_std);
    L.ln1_gain = Tensor::matrix(1, d, 1.0);
    L.ln1_bias = Tensor::matrix(1, d, 0.0);
    L.ln2_gain = Tensor::matrix(1, d, 1.0);
    L.ln2_bias = Tensor::matrix(1, d, 0.0);
    L.ffn_in = gaussian(d, config.ffn_dim(), proj_std);
    L.ffn_out = gaussian(config.ffn_dim(), d, resid_std / std::sqrt(static_cast<double>(config.ffn_mult)));
    p.layers.push_back(std::move(L));
  }
  if (config.memory_enabled) {
    std::normal_distribution<double> noise(0.0, opts.memory_noise_std);
    auto noisy_copy = [&](const Tensor& base) {
      Tensor t = base;
      if (opts.memory_noise_std > 0.0) {
        for (double& v : t.values()) v += noise(rng);
      }
      return t;
    };
    for (auto& L : p.layers) {
      L.wq_mem = noisy_copy(L.wq);
      L.wk_mem = noisy_copy(L.wk);
      L.wv_mem = noisy_copy(L.wv);
    }
  }
  return p;
}

}  // namespace memorag::model
