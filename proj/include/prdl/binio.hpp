#ifndef PRDL_BINIO_HPP
#define PRDL_BINIO_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "prdl/errors.hpp"

namespace prdl::binio {

// Little-endian byte buffer writer.
class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { put_uint(v, 2); }
  void u32(std::uint32_t v) { put_uint(v, 4); }
  void u64(std::uint64_t v) { put_uint(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void str(const std::string& s) { bytes(s.data(), s.size()); }

  const std::vector<std::uint8_t>& buffer() const { return buf_; }
  std::size_t size() const { return buf_.size(); }

 private:
  void put_uint(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back((v >> (8 * i)) & 0xff);
  }
  std::vector<std::uint8_t> buf_;
};

// Bounds-checked little-endian reader; parse failures report byte offsets.
class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size, std::string origin)
      : data_(data), size_(size), origin_(std::move(origin)) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return size_ - pos_; }

  std::uint8_t u8() { return static_cast<std::uint8_t>(get_uint(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get_uint(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get_uint(4)); }
  std::uint64_t u64() { return get_uint(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }

  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }

  void raw(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, data_ + pos_, n);
    pos_ += n;
  }

  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }

  [[noreturn]] void fail(const std::string& cause) const {
    throw IoError(origin_ + ": " + cause + " at byte offset " +
                  std::to_string(pos_));
  }

 private:
  void need(std::size_t n) {
    if (pos_ + n > size_) fail("truncated (need " + std::to_string(n) +
                               " bytes, have " + std::to_string(size_ - pos_) +
                               ")");
  }
  std::uint64_t get_uint(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::string origin_;
};

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<std::uint8_t>& buf);

}  // namespace prdl::binio

#endif  // PRDL_BINIO_HPP
