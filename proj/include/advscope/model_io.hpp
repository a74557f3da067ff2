#pragma once

#include <filesystem>

#include "advscope/binary_io.hpp"
#include "advscope/model.hpp"

namespace advscope {

// Model file layout:
//   "MNET1\0" magic (6 bytes)
//   u32 little-endian byte length of the JSON header
//   UTF-8 JSON header: input extents, class names, layer descriptors and
//   "blob_bytes", the byte length of the parameter blob
//   parameter blob: little-endian f32 values, layer by layer in declaration
//   order (conv weight OIHW then bias; BN gamma, beta, running mean, running
//   var; dense weight row-major classes x neurons then bias)

inline constexpr std::string_view kModelMagic{"MNET1\0", 6};

Bytes encode_model(const Model<float>& model);
Model<float> decode_model(std::span<const std::uint8_t> bytes);

void save_model(const Model<float>& model, const std::filesystem::path& path);
Model<float> load_model(const std::filesystem::path& path);

}  // namespace advscope
