#pragma once

#include <cstdint>
#include <string>

#include "memorag/io/fingerprint.hpp"
#include "memorag/model/kv_cache.hpp"

namespace memorag::memory {

/// Compact global memory: cached memory-token keys and values for every
/// layer, plus the compression config it was formed with and the
/// fingerprints that tie it to a context and a parameter set.
struct MemoryState {
  std::size_t window_l = 0;
  std::size_t mem_k = 0;
  std::size_t d_model = 0;
  std::uint64_t n_raw_tokens = 0;
  model::KVCache cache;
  std::uint64_t context_fingerprint = io::Fnv1a::offset_basis;
  std::uint64_t params_fingerprint = 0;

  std::size_t n_layers() const { return cache.n_layers(); }
  std::size_t n_heads() const { return cache.n_heads; }
  std::size_t beta() const { return mem_k == 0 ? 0 : window_l / mem_k; }
  std::size_t entries() const { return cache.length(); }
  std::uint64_t windows() const { return window_l == 0 ? 0 : (n_raw_tokens + window_l - 1) / window_l; }

  /// Position counter after the interleaved raw + memory sequence.
  std::uint64_t next_position() const { return n_raw_tokens + entries(); }

  std::size_t payload_bytes() const { return cache.payload_bytes(); }

  friend bool operator==(const MemoryState&, const MemoryState&) = default;
};

/// Uncompressed baseline: the full KV cache of every context token.
struct LightMemory {
  std::uint64_t n_raw_tokens = 0;
  model::KVCache cache;
  std::uint64_t context_fingerprint = io::Fnv1a::offset_basis;
  std::uint64_t params_fingerprint = 0;

  std::size_t payload_bytes() const { return cache.payload_bytes(); }
};

}  // namespace memorag::memory
