#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "advscope/error.hpp"

namespace advscope {

/// Binary grid, row-major, one byte per cell holding 0 or 1.
struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), bits(h * w, fill) {}

  std::size_t size() const { return bits.size(); }
  std::size_t count() const;
  bool operator==(const Mask&) const = default;

  /// Run lengths alternating 0-runs and 1-runs, starting with a (possibly
  /// empty) run of zeros.
  std::vector<std::size_t> run_lengths() const;
  static Mask from_run_lengths(std::size_t h, std::size_t w, std::span<const std::size_t> runs);
};

Mask mask_union(std::span<const Mask> masks);
Mask mask_intersection(std::span<const Mask> masks);
Mask mask_complement(const Mask& mask);

/// |A and B| / |A or B|, defined as 0 when both masks are empty.
double iou(const Mask& a, const Mask& b);

}  // namespace advscope
