#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "mmsa/errors.hpp"

// Little-endian binary buffer helpers shared by the dataset and checkpoint
// containers.
namespace mmsa::io {

inline void put_u32(std::vector<uint8_t>& buf, uint32_t v) {
  buf.push_back(uint8_t(v & 0xff));
  buf.push_back(uint8_t((v >> 8) & 0xff));
  buf.push_back(uint8_t((v >> 16) & 0xff));
  buf.push_back(uint8_t((v >> 24) & 0xff));
}

inline void put_f32(std::vector<uint8_t>& buf, float v) {
  put_u32(buf, std::bit_cast<uint32_t>(v));
}

// A length-prefixed byte string.
inline void put_string(std::vector<uint8_t>& buf, const std::string& s) {
  put_u32(buf, uint32_t(s.size()));
  buf.insert(buf.end(), s.begin(), s.end());
}

struct Reader {
  const std::vector<uint8_t>& buf;
  size_t off = 0;

  void need(size_t n, const std::string& what) {
    if (off + n > buf.size()) {
      throw LengthError("file truncated at byte offset " + std::to_string(buf.size()) +
                        " while reading " + what + " (needs " + std::to_string(off + n) +
                        " bytes)");
    }
  }

  uint32_t u32(const std::string& what) {
    need(4, what);
    uint32_t v = uint32_t(buf[off]) | (uint32_t(buf[off + 1]) << 8) |
                 (uint32_t(buf[off + 2]) << 16) | (uint32_t(buf[off + 3]) << 24);
    off += 4;
    return v;
  }

  float f32(const std::string& what) { return std::bit_cast<float>(u32(what)); }

  std::string string(const std::string& what) {
    uint32_t n = u32(what + " length");
    need(n, what);
    std::string s(buf.begin() + std::ptrdiff_t(off), buf.begin() + std::ptrdiff_t(off + n));
    off += n;
    return s;
  }
};

inline std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for reading");
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed on " + path);
  return buf;
}

inline void write_file(const std::string& path, const std::vector<uint8_t>& buf) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
  if (!out) throw IoError("write failed on " + path);
}

}  // namespace mmsa::io
