#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advscope/tensor.hpp"

namespace advscope {

/// Bilinear resize of a (C, H, W) tensor to (C, out_h, out_w) using
/// half-pixel centres with edge clamping.
Tensor<float> resize_bilinear(const Tensor<float>& image, std::size_t out_h, std::size_t out_w);

/// 8-bit RGB (3 channels) or grayscale (1 channel) PNG of a [0, 1] tensor.
std::vector<std::uint8_t> encode_png(const Tensor<float>& image);

/// Heatmap PNG (grayscale intensity scaled by the grid maximum) of an
/// H x W grid of nonnegative values.
std::vector<std::uint8_t> encode_heatmap_png(const std::vector<double>& grid, std::size_t height,
                                             std::size_t width);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);

}  // namespace advscope
