#include "advscope/image_ops.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>

namespace advscope {

Tensor<float> resize_bilinear(const Tensor<float>& image, std::size_t out_h, std::size_t out_w) {
  if (image.rank() != 3) throw ValidationError("resize expects a (C, H, W) tensor", "image");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (out_h == 0 || out_w == 0 || h == 0 || w == 0) throw ValidationError("resize extents must be positive", "size");
  Tensor<float> out({c, out_h, out_w});
  if (out_h == h && out_w == w) return image;
  auto source = [](std::size_t dst, std::size_t in, std::size_t outn, std::size_t& i0, std::size_t& i1,
                   double& frac) {
    double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(outn) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    i0 = static_cast<std::size_t>(std::floor(s));
    i1 = std::min(i0 + 1, in - 1);
    frac = s - static_cast<double>(i0);
  };
  for (std::size_t y = 0; y < out_h; ++y) {
    std::size_t y0, y1;
    double fy;
    source(y, h, out_h, y0, y1, fy);
    for (std::size_t x = 0; x < out_w; ++x) {
      std::size_t x0, x1;
      double fx;
      source(x, w, out_w, x0, x1, fx);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const float* plane = image.data() + ch * h * w;
        const double top = plane[y0 * w + x0] * (1 - fx) + plane[y0 * w + x1] * fx;
        const double bottom = plane[y1 * w + x0] * (1 - fx) + plane[y1 * w + x1] * fx;
        out[(ch * out_h + y) * out_w + x] = static_cast<float>(top * (1 - fy) + bottom * fy);
      }
    }
  }
  return out;
}

namespace {

void append_png_data(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

std::vector<std::uint8_t> encode_rows(const std::vector<std::uint8_t>& pixels, std::size_t height,
                                      std::size_t width, int color_type, std::size_t channels) {
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, info ? &info : nullptr);
    throw Error("PNG encoding failed");
  }
  png_set_write_fn(png, &out, append_png_data, nullptr);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(pixels.data() + y * width * channels));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

std::vector<std::uint8_t> encode_png(const Tensor<float>& image) {
  if (image.rank() != 3 || (image.dim(0) != 3 && image.dim(0) != 1)) {
    throw ValidationError("PNG export expects (3, H, W) or (1, H, W)", "image");
  }
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::vector<std::uint8_t> pixels(c * h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) pixels[(y * w + x) * c + ch] = to_byte(image[(ch * h + y) * w + x]);
    }
  }
  return encode_rows(pixels, h, w, c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, c);
}

std::vector<std::uint8_t> encode_heatmap_png(const std::vector<double>& grid, std::size_t height,
                                             std::size_t width) {
  if (grid.size() != height * width) throw ValidationError("heatmap grid size mismatch", "grid");
  const double peak = grid.empty() ? 0.0 : *std::max_element(grid.begin(), grid.end());
  std::vector<std::uint8_t> pixels(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) pixels[i] = peak > 0 ? to_byte(grid[i] / peak) : 0;
  return encode_rows(pixels, height, width, PNG_COLOR_TYPE_GRAY, 1);
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (i < bytes.size()) {
    std::uint32_t v = bytes[i] << 16;
    if (i + 1 < bytes.size()) v |= bytes[i + 1] << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += i + 1 < bytes.size() ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

}  // namespace advscope
