#pragma once

#include <cstdint>
#include <cstring>
#include <span>

namespace memorag::io {

/// Streaming 64-bit FNV-1a.
class Fnv1a {
 public:
  static constexpr std::uint64_t offset_basis = 0xcbf29ce484222325ULL;
  static constexpr std::uint64_t prime = 0x100000001b3ULL;

  Fnv1a() = default;
  explicit Fnv1a(std::uint64_t state) : state_(state) {}

  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= prime;
    }
  }

  void u32(std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 4);
  }

  void u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 8);
  }

  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    u64(bits);
  }

  std::uint64_t value() const { return state_; }

 private:
  std::uint64_t state_ = offset_basis;
};

/// Context fingerprint: FNV-1a over the little-endian 32-bit token ids.
template <typename Id>
std::uint64_t fingerprint_tokens(std::span<const Id> tokens, std::uint64_t state = Fnv1a::offset_basis) {
  Fnv1a h(state);
  for (Id t : tokens) h.u32(static_cast<std::uint32_t>(t));
  return h.value();
}

}  // namespace memorag::io
