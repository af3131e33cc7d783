#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ras/feature.hpp"
#include "ras/image.hpp"

namespace ras {

struct EncoderSpec {
  std::string name;
  int grid_h = 0;
  int grid_w = 0;
  int channels = 0;
};

/// The fixed toy encoder ensemble. Grids deliberately differ per encoder so
/// mask tokenization has to handle heterogeneous resolutions.
inline std::vector<EncoderSpec> default_ensemble() {
  return {
      {"rgb_mean", 16, 16, 3},    // mean RGB of foreground pixels per cell
      {"grad_stats", 32, 32, 2},  // gradient magnitude (mean, max) per cell
      {"cell_coords", 8, 8, 2},   // normalized cell-center coordinates
      {"sincos_pe", 32, 32, 8},   // 2D sinusoidal position embeddings
  };
}

inline int ensemble_channels(const std::vector<EncoderSpec>& specs) {
  int total = 0;
  for (const auto& s : specs) total += s.channels;
  return total;
}

namespace detail {

inline void cell_range(int g, int size, int grid, int& lo, int& hi) {
  lo = int(int64_t(g) * size / grid);
  hi = int(int64_t(g + 1) * size / grid);
}

}  // namespace detail

/// Mean RGB (scaled to [0,1]) over the non-background pixels of each cell;
/// background is exact black, so a cell holding part of one shape reports that
/// shape's palette color exactly. Cells with no foreground report zeros.
inline FeatureMap encode_rgb_mean(const Image& img, int gh, int gw) {
  FeatureMap fm(3, gh, gw);
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx) {
      int y0, y1, x0, x1;
      detail::cell_range(gy, img.height, gh, y0, y1);
      detail::cell_range(gx, img.width, gw, x0, x1);
      double sum[3] = {0, 0, 0};
      int fg = 0;
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
          const uint8_t* p = img.px(y, x);
          if (p[0] == 0 && p[1] == 0 && p[2] == 0) continue;
          ++fg;
          for (int c = 0; c < 3; ++c) sum[c] += p[c] / 255.0;
        }
      if (fg > 0)
        for (int c = 0; c < 3; ++c) fm.at(c, gy, gx) = sum[c] / fg;
    }
  return fm;
}

/// Per-pixel gradient magnitude (central differences over RGB, borders
/// clamped), reduced per cell to mean and max.
inline FeatureMap encode_grad_stats(const Image& img, int gh, int gw) {
  const int h = img.height, w = img.width;
  std::vector<double> mag(size_t(h) * w, 0.0);
  auto chan = [&](int y, int x, int c) {
    y = std::clamp(y, 0, h - 1);
    x = std::clamp(x, 0, w - 1);
    return img.px(y, x)[c] / 255.0;
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int c = 0; c < 3; ++c) {
        double gx = 0.5 * (chan(y, x + 1, c) - chan(y, x - 1, c));
        double gy = 0.5 * (chan(y + 1, x, c) - chan(y - 1, x, c));
        s += gx * gx + gy * gy;
      }
      mag[size_t(y) * w + x] = std::sqrt(s);
    }

  FeatureMap fm(2, gh, gw);
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx) {
      int y0, y1, x0, x1;
      detail::cell_range(gy, h, gh, y0, y1);
      detail::cell_range(gx, w, gw, x0, x1);
      double sum = 0.0, mx = 0.0;
      int n = 0;
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
          double v = mag[size_t(y) * w + x];
          sum += v;
          mx = std::max(mx, v);
          ++n;
        }
      fm.at(0, gy, gx) = n ? sum / n : 0.0;
      fm.at(1, gy, gx) = mx;
    }
  return fm;
}

/// Normalized cell-center coordinates, channels (x, y).
inline FeatureMap encode_cell_coords(int gh, int gw) {
  FeatureMap fm(2, gh, gw);
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx) {
      fm.at(0, gy, gx) = (gx + 0.5) / gw;
      fm.at(1, gy, gx) = (gy + 0.5) / gh;
    }
  return fm;
}

/// Standard 2D sin/cos position embeddings over cell indices. Half the
/// channels encode the row, half the column; within each half, frequency k
/// uses omega_k = 10000^(-2k/half) with the usual sin/cos interleave.
inline FeatureMap encode_sincos_pe(int gh, int gw, int channels) {
  FeatureMap fm(channels, gh, gw);
  int half = channels / 2;
  int freqs = half / 2;
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx)
      for (int k = 0; k < freqs; ++k) {
        double omega = std::pow(10000.0, -2.0 * k / half);
        fm.at(2 * k, gy, gx) = std::sin(gy * omega);
        fm.at(2 * k + 1, gy, gx) = std::cos(gy * omega);
        fm.at(half + 2 * k, gy, gx) = std::sin(gx * omega);
        fm.at(half + 2 * k + 1, gy, gx) = std::cos(gx * omega);
      }
  return fm;
}

inline std::vector<FeatureMap> encode_ensemble(const Image& img) {
  auto specs = default_ensemble();
  std::vector<FeatureMap> fms;
  fms.push_back(encode_rgb_mean(img, specs[0].grid_h, specs[0].grid_w));
  fms.push_back(encode_grad_stats(img, specs[1].grid_h, specs[1].grid_w));
  fms.push_back(encode_cell_coords(specs[2].grid_h, specs[2].grid_w));
  fms.push_back(encode_sincos_pe(specs[3].grid_h, specs[3].grid_w, specs[3].channels));
  return fms;
}

}  // namespace ras
