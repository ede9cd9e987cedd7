#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "memorag/io/binary.hpp"
#include "memorag/io/fingerprint.hpp"
#include "memorag/memory/memory_state.hpp"
#include "memorag/model/kv_cache.hpp"
#include "memorag/model/transformer.hpp"

namespace memorag::model {

/// Working cache of one decode session. In light sessions it holds every
/// token seen so far; sessions started from a compact memory begin with the
/// memory entries and then grow by the regular tokens of the session.
struct DecodeState {
  KVCache cache;
  std::uint64_t position = 0;
  std::size_t n_regular = 0;  // regular (non-memory) tokens in the cache
  std::uint64_t params_fingerprint = 0;

  std::size_t length() const { return cache.length(); }
};

struct LightPrefill {
  Tensor logits;  // n x vocab
  DecodeState state;
};

namespace detail_inference {

inline PrefixKV bind_prefix(Tape& tape, const KVCache& cache) {
  PrefixKV prefix;
  prefix.length = cache.length();
  if (prefix.length == 0) return prefix;
  for (std::size_t l = 0; l < cache.n_layers(); ++l) {
    prefix.keys.push_back(tape.parameter(cache.keys[l], false));
    prefix.values.push_back(tape.parameter(cache.values[l], false));
  }
  return prefix;
}

inline void check_fingerprint(std::uint64_t expected, const Parameters& params) {
  const std::uint64_t actual = params.fingerprint();
  if (expected != actual) {
    throw CompatibilityError("cache was built with parameters " + std::to_string(expected) +
                             " but decoding with parameters " + std::to_string(actual));
  }
}

}  // namespace detail_inference

/// Processes `tokens` on top of the session cache, appending their keys and
/// values. Returns logits for each new token.
inline Tensor extend(const Parameters& params, DecodeState& state, std::span<const TokenId> tokens) {
  detail_inference::check_fingerprint(state.params_fingerprint, params);
  const auto& cfg = params.config;
  if (state.n_regular + tokens.size() > cfg.max_seq) {
    throw CapacityError("decode: " + std::to_string(state.n_regular + tokens.size()) +
                        " regular tokens exceed max_seq " + std::to_string(cfg.max_seq));
  }
  Tape tape;
  const ModelVars mv = bind_parameters(tape, params, Trainable::none);
  const PrefixKV prefix = detail_inference::bind_prefix(tape, state.cache);
  const SegmentOutput out = run_segment(tape, mv, cfg, tokens, 0, state.position, prefix, true);
  Tensor logits = tape.value(out.logits);
  std::vector<Tensor> ks, vs;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    ks.push_back(tape.value(out.keys[l]));
    vs.push_back(tape.value(out.values[l]));
  }
  if (state.cache.n_layers() == 0) state.cache = KVCache(cfg.n_layers, cfg.n_heads);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) state.cache.append(l, ks[l], vs[l]);
  state.position += tokens.size();
  state.n_regular += tokens.size();
  return logits;
}

/// One decode step: appends the token's regular K/V and returns 1 x vocab logits.
inline Tensor forward_decode(const Parameters& params, DecodeState& state, TokenId next_token) {
  const TokenId one[1] = {next_token};
  return extend(params, state, one);
}

/// Full-KV prefill of the whole sequence (light mode).
inline LightPrefill prefill_light(const Parameters& params, std::span<const TokenId> tokens) {
  detail::require(!tokens.empty(), "prefill: empty input");
  if (tokens.size() > params.config.max_seq) {
    throw CapacityError("prefill: " + std::to_string(tokens.size()) + " tokens exceed the native context max_seq " +
                        std::to_string(params.config.max_seq));
  }
  LightPrefill out;
  out.state.params_fingerprint = params.fingerprint();
  out.logits = extend(params, out.state, tokens);
  return out;
}

/// Continues window-by-window compact formation on top of `state`. Regular
/// KV is dropped after each window; only the memory-token KV is kept,
/// rounded to storage precision. If `logits` is given, raw-token logits are
/// appended to it.
inline void compact_continue(const Parameters& params, memory::MemoryState& state, std::span<const TokenId> tokens,
                             Tensor* logits = nullptr) {
  const auto& cfg = params.config;
  detail::require(cfg.memory_enabled, "compact prefill: memory mode disabled");
  detail::require(state.n_raw_tokens % state.window_l == 0,
                  "compact prefill: can only continue after a complete window");
  const std::uint64_t fp = params.fingerprint();
  if (state.params_fingerprint != fp) {
    throw CompatibilityError("compact prefill: memory built with parameters " +
                             std::to_string(state.params_fingerprint) + ", continuing with " + std::to_string(fp));
  }
  for (std::size_t begin = 0; begin < tokens.size(); begin += state.window_l) {
    const std::size_t end = std::min(tokens.size(), begin + state.window_l);
    const auto window = tokens.subspan(begin, end - begin);
    const std::size_t n_raw = window.size();
    Tape tape;
    const ModelVars mv = bind_parameters(tape, params, Trainable::none);
    const PrefixKV prefix = detail_inference::bind_prefix(tape, state.cache);
    const SegmentOutput out =
        run_segment(tape, mv, cfg, window, state.mem_k, state.next_position(), prefix, logits != nullptr);
    std::vector<Tensor> ks, vs;
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      Tensor k = tape.value(out.keys[l]).slice_rows(n_raw, n_raw + state.mem_k);
      Tensor v = tape.value(out.values[l]).slice_rows(n_raw, n_raw + state.mem_k);
      for (double& x : k.values()) x = io::to_storage_precision(x);
      for (double& x : v.values()) x = io::to_storage_precision(x);
      ks.push_back(std::move(k));
      vs.push_back(std::move(v));
    }
    if (logits) logits->append_rows(tape.value(out.logits));
    for (std::size_t l = 0; l < cfg.n_layers; ++l) state.cache.append(l, ks[l], vs[l]);
    state.n_raw_tokens += n_raw;
  }
  state.context_fingerprint = io::fingerprint_tokens(tokens, state.context_fingerprint);
}

inline memory::MemoryState empty_memory(const Parameters& params, std::size_t mem_k) {
  const auto& cfg = params.config;
  detail::require(mem_k >= 1 && mem_k <= cfg.mem_k && cfg.window_l % mem_k == 0,
                  "compact prefill: " + std::to_string(mem_k) + " memory tokens per window not supported");
  memory::MemoryState s;
  s.window_l = cfg.window_l;
  s.mem_k = mem_k;
  s.d_model = cfg.d_model;
  s.cache = KVCache(cfg.n_layers, cfg.n_heads);
  s.params_fingerprint = params.fingerprint();
  return s;
}

struct CompactPrefill {
  Tensor logits;
  memory::MemoryState memory;
};

/// Compact-mode prefill: any length, processed one window at a time.
inline CompactPrefill prefill_compact(const Parameters& params, std::span<const TokenId> tokens,
                                      std::size_t mem_k, bool want_logits = true) {
  detail::require(!tokens.empty(), "prefill: empty input");
  CompactPrefill out;
  out.memory = empty_memory(params, mem_k);
  compact_continue(params, out.memory, tokens, want_logits ? &out.logits : nullptr);
  return out;
}

/// Starts a decode session that sees the memory as its cached prefix.
inline DecodeState session_from_memory(const memory::MemoryState& memory) {
  DecodeState s;
  s.cache = memory.cache;
  s.position = memory.next_position();
  s.params_fingerprint = memory.params_fingerprint;
  return s;
}

/// Index of the largest entry; the lowest index wins ties.
inline TokenId argmax_token(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i) {
    if (row[i] > row[best]) best = i;
  }
  return static_cast<TokenId>(best);
}

/// Greedy decoding: feeds the prompt, then emits up to `max_new` tokens,
/// stopping after `stop_token`. The stop token is included in the output.
inline std::vector<TokenId> generate(const Parameters& params, DecodeState& state, std::span<const TokenId> prompt,
                                     std::size_t max_new, std::optional<TokenId> stop_token) {
  detail::require(max_new >= 1, "generate: max_new must be >= 1");
  detail::require(!prompt.empty(), "generate: empty prompt");
  Tensor logits = extend(params, state, prompt);
  std::vector<TokenId> out;
  while (true) {
    const TokenId next = argmax_token(logits.row_span(logits.rows() - 1));
    out.push_back(next);
    if ((stop_token && next == *stop_token) || out.size() >= max_new) break;
    logits = forward_decode(params, state, next);
  }
  return out;
}

}  // namespace memorag::model
