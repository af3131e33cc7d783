#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "ras/errors.hpp"
#include "ras/mask.hpp"

namespace ras {

/// Dense per-cell features, layout values[c * grid_h * grid_w + gy * grid_w + gx].
struct FeatureMap {
  int channels = 0;
  int grid_h = 0;
  int grid_w = 0;
  std::vector<double> values;

  FeatureMap() = default;
  FeatureMap(int c, int gh, int gw)
      : channels(c), grid_h(gh), grid_w(gw), values(size_t(c) * gh * gw, 0.0) {}

  double at(int c, int gy, int gx) const {
    return values[(size_t(c) * grid_h + gy) * grid_w + gx];
  }
  double& at(int c, int gy, int gx) { return values[(size_t(c) * grid_h + gy) * grid_w + gx]; }
};

/// Fraction of each grid cell covered by a full-resolution mask.
/// `units` are exact integer numerators: coverage = units / unit_denom, where a
/// full pixel counts grid_h*grid_w units and unit_denom = image_h*image_w.
struct CoverageMask {
  int grid_h = 0;
  int grid_w = 0;
  std::vector<double> coverage;
  std::vector<int64_t> units;
  int64_t unit_denom = 1;

  double at(int gy, int gx) const { return coverage[size_t(gy) * grid_w + gx]; }
};

/// Downsample by exact fractional area accounting: a pixel straddling cell
/// boundaries contributes the exact sub-areas. Total coverage times cell area
/// equals the mask area with no rounding in the integer domain.
inline CoverageMask downsample(const BinaryMask& mask, int grid_h, int grid_w) {
  CoverageMask cov;
  cov.grid_h = grid_h;
  cov.grid_w = grid_w;
  cov.units.assign(size_t(grid_h) * grid_w, 0);
  cov.unit_denom = int64_t(mask.height) * mask.width;

  const int h = mask.height, w = mask.width;
  for (int y = 0; y < h; ++y) {
    // Pixel row y spans [y*grid_h, (y+1)*grid_h) in units of (pixel/grid_h).
    int64_t ry0 = int64_t(y) * grid_h, ry1 = ry0 + grid_h;
    int gy0 = int(ry0 / h), gy1 = int((ry1 - 1) / h);
    for (int x = 0; x < w; ++x) {
      if (!mask.at(y, x)) continue;
      int64_t rx0 = int64_t(x) * grid_w, rx1 = rx0 + grid_w;
      int gx0 = int(rx0 / w), gx1 = int((rx1 - 1) / w);
      for (int gy = gy0; gy <= gy1; ++gy) {
        int64_t oy = std::min(ry1, int64_t(gy + 1) * h) - std::max(ry0, int64_t(gy) * h);
        for (int gx = gx0; gx <= gx1; ++gx) {
          int64_t ox = std::min(rx1, int64_t(gx + 1) * w) - std::max(rx0, int64_t(gx) * w);
          cov.units[size_t(gy) * grid_w + gx] += oy * ox;
        }
      }
    }
  }
  cov.coverage.resize(cov.units.size());
  for (size_t i = 0; i < cov.units.size(); ++i)
    cov.coverage[i] = double(cov.units[i]) / double(cov.unit_denom);
  return cov;
}

/// Coverage-weighted mean of the feature map per channel. When total coverage
/// is zero the value of `fallback_cell` (row, col) is returned, defaulting to
/// the grid center.
inline std::vector<double> mask_pool(const FeatureMap& fm, const CoverageMask& cov,
                                     std::optional<std::pair<int, int>> fallback_cell = {}) {
  if (fm.grid_h != cov.grid_h || fm.grid_w != cov.grid_w)
    fail(ErrorCode::DimensionMismatch, "mask_pool grid mismatch");
  double total = 0.0;
  for (double c : cov.coverage) total += c;

  std::vector<double> out(fm.channels, 0.0);
  if (total <= 0.0) {
    auto [fy, fx] = fallback_cell.value_or(std::pair<int, int>{fm.grid_h / 2, fm.grid_w / 2});
    for (int c = 0; c < fm.channels; ++c) out[c] = fm.at(c, fy, fx);
    return out;
  }
  for (int c = 0; c < fm.channels; ++c) {
    double acc = 0.0;
    for (int gy = 0; gy < fm.grid_h; ++gy)
      for (int gx = 0; gx < fm.grid_w; ++gx) acc += cov.at(gy, gx) * fm.at(c, gy, gx);
    out[c] = acc / total;
  }
  return out;
}

/// Grid cell containing the bbox center of a mask; grid center for empty masks.
inline std::pair<int, int> pool_fallback_cell(const BinaryMask& mask, int grid_h, int grid_w) {
  if (mask.empty_mask()) return {grid_h / 2, grid_w / 2};
  BBox box = bbox_of(mask);
  int row = std::min(grid_h - 1, int(box.center_y() * grid_h / mask.height));
  int col = std::min(grid_w - 1, int(box.center_x() * grid_w / mask.width));
  return {row, col};
}

}  // namespace ras
