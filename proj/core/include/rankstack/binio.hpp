#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rankstack::binio {

// All on-disk integers and floats are little-endian.

template <typename T>
inline void write_le(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::big) {
    auto* p = reinterpret_cast<unsigned char*>(&v);
    std::reverse(p, p + sizeof(T));
  }
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
inline T read_le(std::istream& is) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("unexpected end of file");
  if constexpr (std::endian::native == std::endian::big) {
    auto* p = reinterpret_cast<unsigned char*>(&v);
    std::reverse(p, p + sizeof(T));
  }
  return v;
}

inline void write_string32(std::ostream& os, const std::string& s) {
  write_le<uint32_t>(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string32(std::istream& is) {
  uint32_t n = read_le<uint32_t>(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw std::runtime_error("unexpected end of file in string");
  return s;
}

inline void write_f32_array(std::ostream& os, const double* v, size_t n) {
  std::vector<float> buf(n);
  for (size_t i = 0; i < n; ++i) buf[i] = static_cast<float>(v[i]);
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& f : buf) {
      auto* p = reinterpret_cast<unsigned char*>(&f);
      std::reverse(p, p + sizeof(float));
    }
  }
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(n * sizeof(float)));
}

inline void read_f32_array(std::istream& is, double* v, size_t n) {
  std::vector<float> buf(n);
  is.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(n * sizeof(float)));
  if (!is) throw std::runtime_error("unexpected end of file in float array");
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& f : buf) {
      auto* p = reinterpret_cast<unsigned char*>(&f);
      std::reverse(p, p + sizeof(float));
    }
  }
  for (size_t i = 0; i < n; ++i) v[i] = static_cast<double>(buf[i]);
}

inline void expect_magic(std::istream& is, const char magic[4],
                         const std::string& what) {
  char got[4];
  is.read(got, 4);
  if (!is || std::memcmp(got, magic, 4) != 0)
    throw std::runtime_error("bad magic for " + what);
}

}  // namespace rankstack::binio
