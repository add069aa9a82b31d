#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "epd/error.hpp"

// Little-endian primitives shared by the checkpoint and waveform store formats.

namespace epd::binary {

template <class U>
void put_le(std::ostream& os, U value) {
  static_assert(std::is_unsigned_v<U>);
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  os.write(bytes.data(), bytes.size());
}

inline void put_f32(std::ostream& os, float v) { put_le(os, std::bit_cast<std::uint32_t>(v)); }

inline void put_f32s(std::ostream& os, std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (float v : values) put_f32(os, v);
  }
}

/// Sequential reader that reports the byte offset of any short read.
class Reader {
 public:
  Reader(std::istream& is, std::string what) : is_(is), what_(std::move(what)) {}

  [[nodiscard]] std::uint64_t offset() const noexcept { return offset_; }

  void read(char* dst, std::size_t n) {
    is_.read(dst, static_cast<std::streamsize>(n));
    const auto got = static_cast<std::size_t>(is_.gcount());
    if (got != n) throw FormatError(what_ + ": truncated file", offset_ + got);
    offset_ += n;
  }

  template <class U>
  U le() {
    std::array<unsigned char, sizeof(U)> bytes{};
    read(reinterpret_cast<char*>(bytes.data()), bytes.size());
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
    return v;
  }

  void f32s(std::span<float> out) {
    read(reinterpret_cast<char*>(out.data()), out.size_bytes());
    if constexpr (std::endian::native != std::endian::little) {
      for (auto& v : out) {
        auto u = std::bit_cast<std::uint32_t>(v);
        u = __builtin_bswap32(u);
        v = std::bit_cast<float>(u);
      }
    }
  }

  void seek(std::uint64_t pos) {
    is_.clear();
    is_.seekg(static_cast<std::streamoff>(pos));
    if (!is_) throw FormatError(what_ + ": seek past end", pos);
    offset_ = pos;
  }

 private:
  std::istream& is_;
  std::string what_;
  std::uint64_t offset_ = 0;
};

}  // namespace epd::binary
