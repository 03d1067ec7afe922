#pragma once

// Internal little-endian binary IO helpers shared by the checkpoint and
// dataset containers. Not installed; implementation detail only.

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tvmerge::binio {

inline void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), 8);
}

inline std::uint64_t read_u64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  if (!in) throw std::runtime_error("binary container truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

inline void write_f64(std::ostream& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  write_u64(out, bits);
}

inline double read_f64(std::istream& in) {
  std::uint64_t bits = read_u64(in);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

inline void write_u8(std::ostream& out, std::uint8_t v) {
  out.put(static_cast<char>(v));
}

inline std::uint8_t read_u8(std::istream& in) {
  int c = in.get();
  if (c == EOF) throw std::runtime_error("binary container truncated");
  return static_cast<std::uint8_t>(c);
}

// Magic strings are written as the bare characters plus a newline.
inline void write_magic(std::ostream& out, std::string_view magic) {
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
  out.put('\n');
}

inline void expect_magic(std::istream& in, std::string_view magic,
                         const std::string& path) {
  std::string got(magic.size() + 1, '\0');
  in.read(got.data(), static_cast<std::streamsize>(got.size()));
  if (!in || std::string_view(got.data(), magic.size()) != magic ||
      got.back() != '\n') {
    throw std::runtime_error("bad magic header in " + path);
  }
}

}  // namespace tvmerge::binio
