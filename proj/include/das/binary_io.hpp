#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>

#include "das/errors.hpp"

namespace das {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

/// Appends little-endian scalars to a byte string.
class ByteWriter {
 public:
  void magic(std::string_view m) { bytes_.append(m); }
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void i64(std::int64_t v) { put(v); }
  void f64(double v) { put(v); }
  void f64s(const double* data, std::size_t n) {
    bytes_.append(reinterpret_cast<const char*>(data), n * sizeof(double));
  }

  const std::string& bytes() const { return bytes_; }
  std::string take() { return std::move(bytes_); }

 private:
  template <typename T>
  void put(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    bytes_.append(buf, sizeof(T));
  }
  std::string bytes_;
};

/// Bounds-checked reader; every failure is a FormatError carrying the offset.
class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string context) : bytes_(bytes), context_(std::move(context)) {}

  void expect_magic(std::string_view m) {
    need(m.size(), "magic");
    if (bytes_.substr(pos_, m.size()) != m) {
      throw FormatError(context_ + ": bad magic, expected '" + std::string(m) + "'", pos_);
    }
    pos_ += m.size();
  }
  std::uint32_t u32(const char* what) { return get<std::uint32_t>(what); }
  std::uint64_t u64(const char* what) { return get<std::uint64_t>(what); }
  std::int64_t i64(const char* what) { return get<std::int64_t>(what); }
  double f64(const char* what) { return get<double>(what); }
  void f64s(double* out, std::size_t n, const char* what) {
    if (n > (bytes_.size() - pos_) / sizeof(double)) {
      throw FormatError(context_ + ": truncated while reading " + what, pos_);
    }
    std::memcpy(out, bytes_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }

  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }
  [[noreturn]] void fail(const std::string& msg) const { throw FormatError(context_ + ": " + msg, pos_); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw FormatError(context_ + ": truncated while reading " + what, pos_);
  }
  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string_view bytes_;
  std::string context_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temporary and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

/// 64-bit FNV-1a, used for content fingerprints and cache keys.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

}  // namespace das
