// Shared error types, little-endian binary I/O, and content hashing.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace ndet {

// Base error carrying a machine-parsable class ("config", "data", "numeric").
class Error : public std::runtime_error {
 public:
  Error(std::string cls, const std::string& msg)
      : std::runtime_error(msg), cls_(std::move(cls)) {}
  const std::string& error_class() const noexcept { return cls_; }

 private:
  std::string cls_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error("config", msg) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& msg) : Error("data", msg) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error("numeric", msg) {}
};

std::string strf(const char* fmt, ...);

// --- little-endian binary primitives ------------------------------------

void write_u8(std::ostream& os, std::uint8_t v);
void write_u16(std::ostream& os, std::uint16_t v);
void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_i16(std::ostream& os, std::int16_t v);
void write_f64(std::ostream& os, double v);
void write_lp_string(std::ostream& os, const std::string& s);  // u16 length prefix

std::uint8_t read_u8(std::istream& is);
std::uint16_t read_u16(std::istream& is);
std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
std::int16_t read_i16(std::istream& is);
double read_f64(std::istream& is);
std::string read_lp_string(std::istream& is);

// --- content hashing (manifests) -----------------------------------------

std::uint64_t fnv1a64(const void* data, std::size_t n);
std::uint64_t fnv1a64_file(const std::string& path);

// Writes "<hex hash>  <name>" lines, one per file, sorted by name.
void write_manifest(const std::string& dir, const std::vector<std::string>& names,
                    const std::string& manifest_name = "manifest.txt");

}  // namespace ndet
