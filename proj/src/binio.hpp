#pragma once

// Little helpers for the binary dump formats. Host byte order (little-endian
// on every platform we build for).

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "adasim/error.hpp"

namespace adasim::binio {

template <typename T>
void put(std::ostream& os, const T& v) {
  static_assert(std::is_trivially_copyable_v<T>);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  static_assert(std::is_trivially_copyable_v<T>);
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) fail(ErrorKind::kFormat, "truncated binary stream");
  return v;
}

inline void put_bytes(std::ostream& os, const void* data, std::size_t n) {
  os.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

inline void get_bytes(std::istream& is, void* data, std::size_t n) {
  is.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (!is) fail(ErrorKind::kFormat, "truncated binary stream");
}

inline void put_magic(std::ostream& os, const char* magic) {
  put_bytes(os, magic, std::strlen(magic));
  os.put('\n');
}

inline void expect_magic(std::istream& is, const char* magic) {
  std::string buf(std::strlen(magic) + 1, '\0');
  is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!is || buf.compare(0, buf.size() - 1, magic) != 0 || buf.back() != '\n') {
    fail(ErrorKind::kFormat, std::string("bad magic, expected ") + magic);
  }
}

inline void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  put_bytes(os, s.data(), s.size());
}

inline std::string get_string(std::istream& is) {
  auto n = get<std::uint32_t>(is);
  if (n > (1u << 20)) fail(ErrorKind::kFormat, "implausible string length");
  std::string s(n, '\0');
  get_bytes(is, s.data(), n);
  return s;
}

}  // namespace adasim::binio
