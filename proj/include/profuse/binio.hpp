#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace profuse::binio {

// Little-endian primitives for the on-disk tensor formats. On little-endian
// hosts the float bulk paths reduce to a single read/write.

inline void write_u16(std::ostream& out, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>(v >> 8)};
  out.write(reinterpret_cast<const char*>(b), 2);
}

inline void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline bool read_u16(std::istream& in, std::uint16_t& v) {
  unsigned char b[2];
  if (!in.read(reinterpret_cast<char*>(b), 2)) return false;
  v = static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  return true;
}

inline bool read_u32(std::istream& in, std::uint32_t& v) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) return false;
  v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return true;
}

template <typename Float>
void write_floats(std::ostream& out, const Float* data, std::size_t count) {
  static_assert(sizeof(Float) == 4 || sizeof(Float) == 8);
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(data),
              static_cast<std::streamsize>(count * sizeof(Float)));
    return;
  }
  using Bits = std::conditional_t<sizeof(Float) == 4, std::uint32_t, std::uint64_t>;
  std::vector<unsigned char> buf(count * sizeof(Float));
  for (std::size_t i = 0; i < count; ++i) {
    const Bits bits = std::bit_cast<Bits>(data[i]);
    for (std::size_t b = 0; b < sizeof(Float); ++b)
      buf[i * sizeof(Float) + b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xff);
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

template <typename Float>
bool read_floats(std::istream& in, Float* data, std::size_t count) {
  static_assert(sizeof(Float) == 4 || sizeof(Float) == 8);
  if constexpr (std::endian::native == std::endian::little) {
    return static_cast<bool>(in.read(reinterpret_cast<char*>(data),
                                     static_cast<std::streamsize>(count * sizeof(Float))));
  }
  using Bits = std::conditional_t<sizeof(Float) == 4, std::uint32_t, std::uint64_t>;
  std::vector<unsigned char> buf(count * sizeof(Float));
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
    return false;
  for (std::size_t i = 0; i < count; ++i) {
    Bits bits = 0;
    for (std::size_t b = 0; b < sizeof(Float); ++b)
      bits |= static_cast<Bits>(buf[i * sizeof(Float) + b]) << (8 * b);
    data[i] = std::bit_cast<Float>(bits);
  }
  return true;
}

}  // namespace profuse::binio
