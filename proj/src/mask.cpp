#include "advscope/mask.hpp"

#include <numeric>

namespace advscope {

std::size_t Mask::count() const { return std::accumulate(bits.begin(), bits.end(), std::size_t{0}); }

std::vector<std::size_t> Mask::run_lengths() const {
  std::vector<std::size_t> runs;
  std::uint8_t current = 0;
  std::size_t length = 0;
  for (std::uint8_t b : bits) {
    if (b != current) {
      runs.push_back(length);
      current = b;
      length = 0;
    }
    ++length;
  }
  runs.push_back(length);
  return runs;
}

Mask Mask::from_run_lengths(std::size_t h, std::size_t w, std::span<const std::size_t> runs) {
  Mask m(h, w);
  std::size_t pos = 0;
  std::uint8_t value = 0;
  for (std::size_t run : runs) {
    if (pos + run > m.size()) throw FormatError("run lengths exceed mask size");
    std::fill(m.bits.begin() + static_cast<std::ptrdiff_t>(pos), m.bits.begin() + static_cast<std::ptrdiff_t>(pos + run), value);
    pos += run;
    value ^= 1;
  }
  if (pos != m.size()) throw FormatError("run lengths do not cover the mask");
  return m;
}

namespace {

template <typename Op>
Mask combine(std::span<const Mask> masks, Op op) {
  if (masks.empty()) throw ValidationError("mask combination needs at least one mask", "masks");
  Mask out = masks.front();
  for (const Mask& m : masks.subspan(1)) {
    if (m.height != out.height || m.width != out.width) throw ValidationError("mask shapes differ", "masks");
    for (std::size_t i = 0; i < out.size(); ++i) out.bits[i] = op(out.bits[i], m.bits[i]);
  }
  return out;
}

}  // namespace

Mask mask_union(std::span<const Mask> masks) {
  return combine(masks, [](std::uint8_t a, std::uint8_t b) -> std::uint8_t { return a | b; });
}

Mask mask_intersection(std::span<const Mask> masks) {
  return combine(masks, [](std::uint8_t a, std::uint8_t b) -> std::uint8_t { return a & b; });
}

Mask mask_complement(const Mask& mask) {
  Mask out = mask;
  for (auto& b : out.bits) b ^= 1;
  return out;
}

double iou(const Mask& a, const Mask& b) {
  if (a.height != b.height || a.width != b.width) throw ValidationError("mask shapes differ", "masks");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a.bits[i] & b.bits[i];
    uni += a.bits[i] | b.bits[i];
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace advscope
