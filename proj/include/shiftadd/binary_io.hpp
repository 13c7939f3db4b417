// SPDX-License-Identifier: Apache-2.0
#pragma once

// Little-endian byte streams and atomic file replacement shared by the
// on-disk formats (SACW weights, SAQM quantized models, DVSF samples).

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "shiftadd/errors.hpp"

namespace shiftadd {

class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) {
    u8(static_cast<std::uint8_t>(v & 0xff));
    u8(static_cast<std::uint8_t>(v >> 8));
  }
  void i16(std::int16_t v) { u16(static_cast<std::uint16_t>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

  const std::vector<std::uint8_t> &data() const { return buf_; }
  std::vector<std::uint8_t> &data() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(std::vector<std::uint8_t> data, std::string source)
      : buf_(std::move(data)), source_(std::move(source)) {}

  void expect_magic(std::string_view magic) {
    need(magic.size());
    if (std::memcmp(buf_.data() + pos_, magic.data(), magic.size()) != 0)
      throw FormatError(source_ + ": bad magic, expected '" +
                        std::string(magic) + "'");
    pos_ += magic.size();
  }
  std::uint8_t u8() {
    need(1);
    return buf_[pos_++];
  }
  std::uint16_t u16() {
    const std::uint16_t lo = u8();
    return static_cast<std::uint16_t>(lo | (u8() << 8));
  }
  std::int16_t i16() { return static_cast<std::int16_t>(u16()); }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }

  std::size_t remaining() const { return buf_.size() - pos_; }
  bool at_end() const { return pos_ == buf_.size(); }
  const std::string &source() const { return source_; }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n)
      throw FormatError(source_ + ": truncated at byte " + std::to_string(pos_));
  }

  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
  std::string source_;
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path &path);
std::string read_file_text(const std::filesystem::path &path);

/// Writes to a sibling temporary and renames it over `path`.
void write_file_atomic(const std::filesystem::path &path,
                       const std::vector<std::uint8_t> &bytes);
void write_file_atomic(const std::filesystem::path &path, std::string_view text);

}  // namespace shiftadd
