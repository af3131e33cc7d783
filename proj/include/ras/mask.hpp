#pragma once

#include <cstdint>
#include <vector>

#include "ras/errors.hpp"

namespace ras {

/// Half-open bounding box: x in [x_min, x_max), y in [y_min, y_max).
struct BBox {
  int x_min = 0;
  int y_min = 0;
  int x_max = 0;
  int y_max = 0;

  bool operator==(const BBox&) const = default;
  double center_x() const { return 0.5 * (x_min + x_max); }
  double center_y() const { return 0.5 * (y_min + y_max); }
};

/// Pixel-exact binary mask, row-major bits (0/1), size width*height.
struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(int w, int h) : width(w), height(h), bits(size_t(w) * size_t(h), 0) {}

  bool operator==(const BinaryMask&) const = default;

  uint8_t at(int y, int x) const { return bits[size_t(y) * width + x]; }
  void set(int y, int x, uint8_t v = 1) { bits[size_t(y) * width + x] = v; }

  int64_t area() const {
    int64_t a = 0;
    for (uint8_t b : bits) a += b;
    return a;
  }

  bool empty_mask() const {
    for (uint8_t b : bits)
      if (b) return false;
    return true;
  }
};

/// Column-major run-length coding: alternating background/foreground run
/// lengths, first run is background (may be zero, all others positive).
struct RleMask {
  int width = 0;
  int height = 0;
  std::vector<int> counts;

  bool operator==(const RleMask&) const = default;
};

inline RleMask rle_encode(const BinaryMask& mask) {
  RleMask rle;
  rle.width = mask.width;
  rle.height = mask.height;
  int64_t total = int64_t(mask.width) * mask.height;
  uint8_t cur = 0;  // background first
  int run = 0;
  for (int64_t p = 0; p < total; ++p) {
    int x = int(p / mask.height);
    int y = int(p % mask.height);
    uint8_t b = mask.at(y, x);
    if (b == cur) {
      ++run;
    } else {
      rle.counts.push_back(run);
      cur = b;
      run = 1;
    }
  }
  rle.counts.push_back(run);
  return rle;
}

inline BinaryMask rle_decode(const RleMask& rle) {
  int64_t total = int64_t(rle.width) * rle.height;
  int64_t sum = 0;
  for (size_t i = 0; i < rle.counts.size(); ++i) {
    int c = rle.counts[i];
    if (c < 0 || (c == 0 && i != 0))
      fail(ErrorCode::IllegalZeroRun, "run " + std::to_string(i) + " has length " + std::to_string(c));
    sum += c;
  }
  if (sum != total)
    fail(ErrorCode::SumMismatch,
         "counts sum to " + std::to_string(sum) + ", expected " + std::to_string(total));

  BinaryMask mask(rle.width, rle.height);
  int64_t p = 0;
  uint8_t cur = 0;
  for (int c : rle.counts) {
    for (int i = 0; i < c; ++i, ++p) {
      int x = int(p / rle.height);
      int y = int(p % rle.height);
      mask.set(y, x, cur);
    }
    cur = !cur;
  }
  return mask;
}

/// IoU with the GRES no-target convention: both empty -> 1, exactly one empty -> 0.
inline double iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.width != b.width || a.height != b.height)
    fail(ErrorCode::DimensionMismatch, "iou on masks of different size");
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.bits.size(); ++i) {
    inter += a.bits[i] & b.bits[i];
    uni += a.bits[i] | b.bits[i];
  }
  if (uni == 0) return 1.0;
  return double(inter) / double(uni);
}

/// Tightest half-open box around the foreground. Errors on empty masks.
inline BBox bbox_of(const BinaryMask& mask) {
  int x0 = mask.width, y0 = mask.height, x1 = -1, y1 = -1;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(y, x)) {
        if (x < x0) x0 = x;
        if (x > x1) x1 = x;
        if (y < y0) y0 = y;
        if (y > y1) y1 = y;
      }
  if (x1 < 0) fail(ErrorCode::EmptyMask, "bbox_of on empty mask");
  return BBox{x0, y0, x1 + 1, y1 + 1};
}

}  // namespace ras
