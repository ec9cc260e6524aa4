#pragma once

// Little-endian primitive encoding independent of host byte order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "codesfm/error.hpp"

namespace codesfm::detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
  write_u32(os, static_cast<std::uint32_t>(v));
  write_u32(os, static_cast<std::uint32_t>(v >> 32));
}

inline void write_f32_array(std::ostream& os, std::span<const float> values) {
  std::vector<unsigned char> buf(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(values[i]);
    buf[4 * i] = static_cast<unsigned char>(bits);
    buf[4 * i + 1] = static_cast<unsigned char>(bits >> 8);
    buf[4 * i + 2] = static_cast<unsigned char>(bits >> 16);
    buf[4 * i + 3] = static_cast<unsigned char>(bits >> 24);
  }
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

inline void write_f64(std::ostream& os, double v) { write_u64(os, std::bit_cast<std::uint64_t>(v)); }

class Reader {
 public:
  explicit Reader(std::istream& is, std::string what) : is_(is), what_(std::move(what)) {}

  void read_bytes(void* dst, std::size_t n) {
    is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) {
      throw Error(ErrorCode::FormatError, what_ + ": unexpected end of file");
    }
  }

  std::uint32_t u32() {
    unsigned char b[4];
    read_bytes(b, 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }

  std::uint64_t u64() {
    const std::uint64_t lo = u32();
    const std::uint64_t hi = u32();
    return lo | (hi << 32);
  }

  double f64() { return std::bit_cast<double>(u64()); }

  std::vector<float> f32_array(std::size_t n) {
    std::vector<unsigned char> buf(n * 4);
    read_bytes(buf.data(), buf.size());
    std::vector<float> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t bits = static_cast<std::uint32_t>(buf[4 * i]) |
                                 (static_cast<std::uint32_t>(buf[4 * i + 1]) << 8) |
                                 (static_cast<std::uint32_t>(buf[4 * i + 2]) << 16) |
                                 (static_cast<std::uint32_t>(buf[4 * i + 3]) << 24);
      out[i] = std::bit_cast<float>(bits);
    }
    return out;
  }

  bool at_end() { return is_.peek() == std::char_traits<char>::eof(); }

  [[noreturn]] void fail(const std::string& msg) const {
    throw Error(ErrorCode::FormatError, what_ + ": " + msg);
  }

 private:
  std::istream& is_;
  std::string what_;
};

}  // namespace codesfm::detail
