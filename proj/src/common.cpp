#include "ndet/common.hpp"

#include <algorithm>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <ostream>

namespace ndet {

std::string strf(const char* fmt, ...) {
  va_list args;
  va_start(args, fmt);
  va_list copy;
  va_copy(copy, args);
  int n = std::vsnprintf(nullptr, 0, fmt, copy);
  va_end(copy);
  std::string out(n > 0 ? static_cast<std::size_t>(n) : 0, '\0');
  if (n > 0) std::vsnprintf(out.data(), out.size() + 1, fmt, args);
  va_end(args);
  return out;
}

namespace {

void put_bytes(std::ostream& os, const unsigned char* b, std::size_t n) {
  os.write(reinterpret_cast<const char*>(b), static_cast<std::streamsize>(n));
  if (!os) throw DataError("write failed");
}

void get_bytes(std::istream& is, unsigned char* b, std::size_t n) {
  is.read(reinterpret_cast<char*>(b), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n)
    throw DataError("unexpected end of file");
}

}  // namespace

void write_u8(std::ostream& os, std::uint8_t v) { put_bytes(os, &v, 1); }

void write_u16(std::ostream& os, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>(v >> 8)};
  put_bytes(os, b, 2);
}

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  put_bytes(os, b, 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  put_bytes(os, b, 8);
}

void write_i16(std::ostream& os, std::int16_t v) {
  write_u16(os, static_cast<std::uint16_t>(v));
}

void write_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_u64(os, bits);
}

void write_lp_string(std::ostream& os, const std::string& s) {
  if (s.size() > 0xffff) throw DataError("string too long for u16 length prefix");
  write_u16(os, static_cast<std::uint16_t>(s.size()));
  if (!s.empty())
    put_bytes(os, reinterpret_cast<const unsigned char*>(s.data()), s.size());
}

std::uint8_t read_u8(std::istream& is) {
  unsigned char b;
  get_bytes(is, &b, 1);
  return b;
}

std::uint16_t read_u16(std::istream& is) {
  unsigned char b[2];
  get_bytes(is, b, 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  get_bytes(is, b, 4);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  get_bytes(is, b, 8);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

std::int16_t read_i16(std::istream& is) {
  return static_cast<std::int16_t>(read_u16(is));
}

double read_f64(std::istream& is) {
  std::uint64_t bits = read_u64(is);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

std::string read_lp_string(std::istream& is) {
  std::uint16_t n = read_u16(is);
  std::string s(n, '\0');
  if (n) get_bytes(is, reinterpret_cast<unsigned char*>(s.data()), n);
  return s;
}

std::uint64_t fnv1a64(const void* data, std::size_t n) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("unreadable: cannot open '" + path + "'");
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 16];
  while (is) {
    is.read(buf, sizeof(buf));
    std::streamsize got = is.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

void write_manifest(const std::string& dir, const std::vector<std::string>& names,
                    const std::string& manifest_name) {
  std::vector<std::string> sorted = names;
  std::sort(sorted.begin(), sorted.end());
  std::ofstream os(dir + "/" + manifest_name, std::ios::binary);
  if (!os) throw DataError("write failed: cannot open manifest in '" + dir + "'");
  for (const auto& name : sorted) {
    std::uint64_t h = fnv1a64_file(dir + "/" + name);
    os << strf("%016llx  %s\n", static_cast<unsigned long long>(h), name.c_str());
  }
}

}  // namespace ndet
