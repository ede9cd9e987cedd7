#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "memorag/error.hpp"

namespace memorag::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& out) : out_(out) {}

  void magic(const char (&tag)[5]) { out_.write(tag, 4); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void f32(double v) {
    const auto f = static_cast<float>(v);
    raw(&f, sizeof f);
  }
  void string(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

 private:
  void raw(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  std::ostream& out_;
};

/// Reader that turns any short read into a FormatError naming the field.
class BinaryReader {
 public:
  BinaryReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  void expect_magic(const char (&tag)[5]) {
    char got[4] = {};
    raw(got, 4, "magic");
    if (std::memcmp(got, tag, 4) != 0) {
      throw FormatError(source_ + ": bad magic, expected \"" + std::string(tag, 4) + "\"");
    }
  }
  std::uint32_t u32(const char* field) {
    std::uint32_t v;
    raw(&v, sizeof v, field);
    return v;
  }
  std::uint64_t u64(const char* field) {
    std::uint64_t v;
    raw(&v, sizeof v, field);
    return v;
  }
  double f32(const char* field) {
    float f;
    raw(&f, sizeof f, field);
    return static_cast<double>(f);
  }
  void f32_array(std::vector<double>& dst, const char* field) {
    std::vector<float> buf(dst.size());
    raw(buf.data(), buf.size() * sizeof(float), field);
    for (std::size_t i = 0; i < buf.size(); ++i) dst[i] = static_cast<double>(buf[i]);
  }
  std::string string(const char* field) {
    const std::uint32_t n = u32(field);
    if (n > (1u << 20)) throw FormatError(source_ + ": implausible string length in " + field);
    std::string s(n, '\0');
    raw(s.data(), n, field);
    return s;
  }
  void expect_end() {
    if (in_.peek() != std::char_traits<char>::eof()) throw FormatError(source_ + ": trailing bytes after payload");
  }

 private:
  void raw(void* p, std::size_t n, const char* field) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw FormatError(source_ + ": truncated while reading " + field);
    }
  }
  std::istream& in_;
  std::string source_;
};

/// Rounds to the nearest 32-bit float and widens back.
inline double to_storage_precision(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace memorag::io
