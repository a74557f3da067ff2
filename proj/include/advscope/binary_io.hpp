#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "advscope/error.hpp"

namespace advscope {

using Bytes = std::vector<std::uint8_t>;

Bytes read_file(const std::filesystem::path& path);
/// Writes through a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

inline void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f32(Bytes& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

inline void put_f32s(Bytes& out, std::span<const float> values) {
  out.reserve(out.size() + 4 * values.size());
  for (float v : values) put_f32(out, v);
}

inline void put_bytes(Bytes& out, std::string_view s) { out.insert(out.end(), s.begin(), s.end()); }

/// Bounds-checked little-endian reader; running past the end is a FormatError.
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string what)
      : bytes_(bytes), what_(std::move(what)) {}

  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t position() const { return pos_; }

  std::span<const std::uint8_t> take(std::size_t count) {
    if (count > remaining()) throw FormatError(what_ + ": truncated");
    auto out = bytes_.subspan(pos_, count);
    pos_ += count;
    return out;
  }

  std::uint32_t u32() {
    auto b = take(4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }

  float f32() { return std::bit_cast<float>(u32()); }

  void f32s(std::span<float> out) {
    for (auto& v : out) v = f32();
  }

  void expect(std::string_view magic) {
    auto b = take(magic.size());
    if (std::memcmp(b.data(), magic.data(), magic.size()) != 0) {
      throw FormatError(what_ + ": bad magic");
    }
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace advscope
