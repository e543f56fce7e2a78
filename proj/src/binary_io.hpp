#pragma once

// Little-endian packing helpers shared by the SALB and GZDF codecs.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

namespace gazediff::detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  template <class U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }

  const std::vector<unsigned char>& data() const { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

/// Bounds-checked reader; `ok()` turns false on the first overrun and `offset()` stays at the failure point.
class ByteReader {
 public:
  explicit ByteReader(const std::vector<unsigned char>& buf) : buf_(buf) {}

  bool has(std::size_t n) const { return pos_ + n <= buf_.size(); }
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return buf_.size() - pos_; }

  template <class U>
  bool uint(U& out) {
    if (!has(sizeof(U))) return false;
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(buf_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    out = v;
    return true;
  }
  bool f32(float& out) {
    std::uint32_t u = 0;
    if (!uint(u)) return false;
    out = std::bit_cast<float>(u);
    return true;
  }
  bool bytes(std::string& out, std::size_t n) {
    if (!has(n)) return false;
    out.assign(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return true;
  }

 private:
  const std::vector<unsigned char>& buf_;
  std::size_t pos_ = 0;
};

}  // namespace gazediff::detail
