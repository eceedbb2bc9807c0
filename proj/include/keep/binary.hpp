#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>

#include "keep/error.hpp"

namespace keep {

// Little-endian byte encoding shared by checkpoints, snapshots and the GKC
// wire protocol.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) { put_le(v); }
  void u64(std::uint64_t v) { put_le(v); }
  void i64(std::int64_t v) { put_le(static_cast<std::uint64_t>(v)); }
  void f32(float v) { put_le(std::bit_cast<std::uint32_t>(v)); }
  void bytes(std::string_view b) { buf_.append(b); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }
  void f32s(std::span<const float> v) {
    for (float x : v) f32(x);
  }

  // Overwrites 4 bytes at `pos` (used to back-patch lengths).
  void patch_u32(std::size_t pos, std::uint32_t v) {
    for (int b = 0; b < 4; ++b) buf_[pos + b] = static_cast<char>((v >> (8 * b)) & 0xFF);
  }

  std::size_t size() const { return buf_.size(); }
  const std::string& buffer() const { return buf_; }
  std::string take() { return std::move(buf_); }

 private:
  template <class U>
  void put_le(U v) {
    for (std::size_t b = 0; b < sizeof(U); ++b) {
      buf_.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
    }
  }
  std::string buf_;
};

// Bounds-checked reader; running past the end throws `Err`.
template <class Err = IoError>
class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint32_t u32() { return get_le<std::uint32_t>(); }
  std::uint64_t u64() { return get_le<std::uint64_t>(); }
  std::int64_t i64() { return static_cast<std::int64_t>(get_le<std::uint64_t>()); }
  float f32() { return std::bit_cast<float>(get_le<std::uint32_t>()); }
  std::string_view bytes(std::size_t n) { return take(n); }
  std::string str() {
    const auto n = u32();
    return std::string(take(n));
  }
  void f32s(std::span<float> out) {
    auto raw = take(out.size() * 4);
    for (std::size_t k = 0; k < out.size(); ++k) {
      std::uint32_t v = 0;
      for (int b = 0; b < 4; ++b) {
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(raw[4 * k + b])) << (8 * b);
      }
      out[k] = std::bit_cast<float>(v);
    }
  }

  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  std::string_view take(std::size_t n) {
    if (n > remaining()) {
      throw Err("truncated input: need " + std::to_string(n) + " bytes at offset " +
                std::to_string(pos_) + ", have " + std::to_string(remaining()));
    }
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  template <class U>
  U get_le() {
    auto raw = take(sizeof(U));
    U v = 0;
    for (std::size_t b = 0; b < sizeof(U); ++b) {
      v |= static_cast<U>(static_cast<unsigned char>(raw[b])) << (8 * b);
    }
    return v;
  }

  std::string_view data_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

}  // namespace keep
