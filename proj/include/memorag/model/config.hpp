#pragma once

#include <array>
#include <cstddef>
#include <string>

#include "memorag/error.hpp"

namespace memorag::model {

/// Compression ratios accepted for memory formation.
inline constexpr std::array<std::size_t, 5> kAllowedBetas = {4, 8, 16, 32, 64};

inline bool is_allowed_beta(std::size_t beta) {
  for (std::size_t b : kAllowedBetas) {
    if (b == beta) return true;
  }
  return false;
}

inline std::string allowed_betas_string() { return "{4,8,16,32,64}"; }

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 32;
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t ffn_mult = 4;
  std::size_t window_l = 2048;  // raw tokens per memory window
  std::size_t mem_k = 512;      // memory tokens per window (beta = l / k)
  std::size_t max_seq = 4096;   // raw-token capacity of the uncompressed path
  bool memory_enabled = true;

  std::size_t head_dim() const { return d_model / n_heads; }
  std::size_t ffn_dim() const { return d_model * ffn_mult; }
  std::size_t beta() const { return mem_k == 0 ? 0 : window_l / mem_k; }

  /// Shape constraints the forward pass relies on.
  void validate_structure() const {
    detail::require(vocab_size >= 1, "config: vocab_size must be >= 1");
    detail::require(d_model >= 1 && n_layers >= 1 && n_heads >= 1 && ffn_mult >= 1, "config: zero-sized model");
    detail::require(d_model % n_heads == 0, "config: d_model " + std::to_string(d_model) +
                                                " not divisible by n_heads " + std::to_string(n_heads));
    detail::require(max_seq >= 1, "config: max_seq must be >= 1");
    if (memory_enabled) {
      detail::require(window_l >= 1 && mem_k >= 1 && mem_k <= window_l, "config: need 1 <= mem_k <= window_l");
      detail::require(window_l % mem_k == 0, "config: window_l " + std::to_string(window_l) +
                                                 " not divisible by mem_k " + std::to_string(mem_k));
    }
  }

  /// Full invariants, including the compression-ratio set.
  void validate() const {
    validate_structure();
    if (memory_enabled) {
      detail::require(mem_k < window_l, "config: mem_k must be smaller than window_l");
      detail::require(is_allowed_beta(beta()), "config: compression ratio " + std::to_string(beta()) +
                                                   " not in " + allowed_betas_string());
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

}  // namespace memorag::model
