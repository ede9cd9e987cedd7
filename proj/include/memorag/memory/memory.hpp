#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>

#include "memorag/io/binary.hpp"
#include "memorag/memory/memory_state.hpp"
#include "memorag/model/inference.hpp"

namespace memorag::memory {

using text::TokenId;
using diff::Tensor;

inline constexpr std::uint32_t kMemoryFormatVersion = 1;

/// Counts compact formations process-wide (used to check memory reuse).
inline std::atomic<std::uint64_t>& formation_counter() {
  static std::atomic<std::uint64_t> n{0};
  return n;
}

inline std::size_t mem_tokens_for(const model::ModelConfig& cfg, std::size_t beta) {
  if (!model::is_allowed_beta(beta)) {
    throw InputError("compression ratio " + std::to_string(beta) + " not allowed; choose one of " +
                     model::allowed_betas_string());
  }
  if (cfg.window_l % beta != 0) {
    throw InputError("window_l " + std::to_string(cfg.window_l) + " not divisible by compression ratio " +
                     std::to_string(beta));
  }
  const std::size_t k = cfg.window_l / beta;
  if (k > cfg.mem_k) {
    throw CapacityError("compression ratio " + std::to_string(beta) + " needs " + std::to_string(k) +
                        " memory slots per window; the model has " + std::to_string(cfg.mem_k));
  }
  return k;
}

/// Forms the compact global memory over an arbitrarily long context.
inline MemoryState memorize(std::span<const TokenId> context, const model::Parameters& params, std::size_t beta) {
  if (context.empty()) throw InputError("memorize: empty context");
  const std::size_t k = mem_tokens_for(params.config, beta);
  ++formation_counter();
  return model::prefill_compact(params, context, k, false).memory;
}

/// Streams more tokens into an existing memory. The memory must end on a
/// window boundary.
inline void memorize_continue(MemoryState& memory, std::span<const TokenId> more, const model::Parameters& params) {
  if (more.empty()) return;
  model::compact_continue(params, memory, more, nullptr);
}

/// Full-KV cache of the whole context; bounded by the native context size.
inline LightMemory light_memorize(std::span<const TokenId> context, const model::Parameters& params) {
  if (context.empty()) throw InputError("light memorize: empty context");
  if (context.size() > params.config.max_seq) {
    throw CapacityError("light memorize: " + std::to_string(context.size()) +
                        " tokens exceed the native context max_seq " + std::to_string(params.config.max_seq));
  }
  model::DecodeState state;
  state.params_fingerprint = params.fingerprint();
  // Blocked prefill keeps the score matrices small; cache-equivalent to one shot.
  constexpr std::size_t block = 256;
  for (std::size_t begin = 0; begin < context.size(); begin += block) {
    model::extend(params, state, context.subspan(begin, std::min(block, context.size() - begin)));
  }
  LightMemory out;
  out.n_raw_tokens = context.size();
  out.cache = std::move(state.cache);
  out.context_fingerprint = io::fingerprint_tokens(context);
  out.params_fingerprint = state.params_fingerprint;
  return out;
}

struct MemoryStats {
  std::uint64_t n_raw_tokens = 0;
  std::size_t n_mem_entries = 0;
  std::size_t bytes = 0;
  std::size_t beta = 0;
};

inline MemoryStats memory_stats(const MemoryState& m) {
  return {m.n_raw_tokens, m.entries(), m.payload_bytes(), m.beta()};
}

inline void write_memory(std::ostream& os, const MemoryState& m) {
  io::BinaryWriter w(os);
  w.magic("MRAG");
  w.u32(kMemoryFormatVersion);
  w.u32(static_cast<std::uint32_t>(m.window_l));
  w.u32(static_cast<std::uint32_t>(m.mem_k));
  w.u32(static_cast<std::uint32_t>(m.d_model));
  w.u32(static_cast<std::uint32_t>(m.n_layers()));
  w.u32(static_cast<std::uint32_t>(m.n_heads()));
  w.u64(m.n_raw_tokens);
  w.u64(m.entries());
  w.u64(m.context_fingerprint);
  w.u64(m.params_fingerprint);
  const std::size_t hd = m.n_heads() == 0 ? 0 : m.d_model / m.n_heads();
  for (std::size_t l = 0; l < m.n_layers(); ++l) {
    for (std::size_t h = 0; h < m.n_heads(); ++h) {
      for (const Tensor* t : {&m.cache.keys[l], &m.cache.values[l]}) {
        for (std::size_t r = 0; r < m.entries(); ++r) {
          for (std::size_t c = 0; c < hd; ++c) w.f32(t->at(r, h * hd + c));
        }
      }
    }
  }
}

/// Parses a memory file. No state is returned unless the whole payload is valid.
inline MemoryState read_memory(std::istream& is, const std::string& source) {
  io::BinaryReader r(is, source);
  r.expect_magic("MRAG");
  const std::uint32_t version = r.u32("version");
  if (version != kMemoryFormatVersion) {
    throw FormatError(source + ": unsupported memory format version " + std::to_string(version));
  }
  MemoryState m;
  m.window_l = r.u32("window_l");
  m.mem_k = r.u32("mem_k");
  m.d_model = r.u32("d_model");
  const std::uint32_t n_layers = r.u32("n_layers");
  const std::uint32_t n_heads = r.u32("n_heads");
  m.n_raw_tokens = r.u64("n_raw_tokens");
  const std::uint64_t entries = r.u64("entries");
  m.context_fingerprint = r.u64("context_fingerprint");
  m.params_fingerprint = r.u64("params_fingerprint");
  if (m.mem_k == 0 || m.window_l == 0 || n_heads == 0 || n_layers == 0 || m.d_model % n_heads != 0 ||
      m.window_l % m.mem_k != 0) {
    throw FormatError(source + ": inconsistent memory header");
  }
  const std::uint64_t windows = (m.n_raw_tokens + m.window_l - 1) / m.window_l;
  if (entries != windows * m.mem_k || entries > (std::uint64_t{1} << 32)) {
    throw FormatError(source + ": entry count " + std::to_string(entries) + " does not match " +
                      std::to_string(m.n_raw_tokens) + " raw tokens");
  }
  m.cache = model::KVCache(n_layers, n_heads);
  if (entries == 0) {
    r.expect_end();
    return m;
  }
  const std::size_t hd = m.d_model / n_heads;
  std::vector<double> block(entries * hd);
  for (std::size_t l = 0; l < n_layers; ++l) {
    Tensor keys = Tensor::matrix(entries, m.d_model);
    Tensor values = Tensor::matrix(entries, m.d_model);
    for (std::size_t h = 0; h < n_heads; ++h) {
      for (Tensor* t : {&keys, &values}) {
        r.f32_array(block, "memory payload");
        for (std::size_t row = 0; row < entries; ++row) {
          for (std::size_t c = 0; c < hd; ++c) t->at(row, h * hd + c) = block[row * hd + c];
        }
      }
    }
    m.cache.keys[l] = std::move(keys);
    m.cache.values[l] = std::move(values);
  }
  r.expect_end();
  return m;
}

/// Writes the memory to `path` via a temporary file, so a failed write never
/// leaves a partial file behind.
inline void offload(const MemoryState& m, const std::filesystem::path& path) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw InputError("offload: cannot open " + tmp.string() + " for writing");
    write_memory(os, m);
    os.flush();
    if (!os) throw InputError("offload: write to " + tmp.string() + " failed");
  }
  std::filesystem::rename(tmp, path);
}

/// Loads a memory file and checks it was formed with `params`.
inline MemoryState load(const std::filesystem::path& path, const model::Parameters& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("load: cannot open memory file " + path.string());
  MemoryState m = read_memory(is, path.string());
  const std::uint64_t fp = params.fingerprint();
  if (m.params_fingerprint != fp) {
    throw CompatibilityError("memory file " + path.string() + " was formed with parameters " +
                             std::to_string(m.params_fingerprint) + " but the loaded parameters are " +
                             std::to_string(fp));
  }
  const auto& cfg = params.config;
  if (m.window_l != cfg.window_l || m.d_model != cfg.d_model || m.n_layers() != cfg.n_layers ||
      m.n_heads() != cfg.n_heads) {
    throw CompatibilityError("memory file " + path.string() + " shape does not match the model config");
  }
  return m;
}

}  // namespace memorag::memory
