#pragma once

#include <variant>

#include "ras/mask.hpp"

namespace ras {

// Mask perturbations standing in for imperfect proposal models. All are pure;
// results are clipped to image bounds and may be empty (erode, split).

struct Translate {
  int dx = 0;
  int dy = 0;
};
struct Dilate {
  int radius = 0;
};
struct Erode {
  int radius = 0;
};
struct MergeWith {
  BinaryMask other;
};
enum class SplitAxis { Horizontal, Vertical };
struct SplitHalf {
  SplitAxis axis = SplitAxis::Horizontal;
  bool keep_low = true;  // keep coordinates below the bbox midpoint
};

using PerturbSpec = std::variant<Translate, Dilate, Erode, MergeWith, SplitHalf>;

namespace detail {

inline BinaryMask dilate_step(const BinaryMask& m) {
  BinaryMask out = m;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      if (m.at(y, x)) continue;
      bool near = (x > 0 && m.at(y, x - 1)) || (x + 1 < m.width && m.at(y, x + 1)) ||
                  (y > 0 && m.at(y - 1, x)) || (y + 1 < m.height && m.at(y + 1, x));
      if (near) out.set(y, x);
    }
  return out;
}

inline BinaryMask erode_step(const BinaryMask& m) {
  BinaryMask out(m.width, m.height);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      if (!m.at(y, x)) continue;
      bool keep = (x > 0 && m.at(y, x - 1)) && (x + 1 < m.width && m.at(y, x + 1)) &&
                  (y > 0 && m.at(y - 1, x)) && (y + 1 < m.height && m.at(y + 1, x));
      if (keep) out.set(y, x);
    }
  return out;
}

}  // namespace detail

inline BinaryMask perturb(const BinaryMask& mask, const PerturbSpec& spec) {
  return std::visit(
      [&](const auto& s) -> BinaryMask {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Translate>) {
          BinaryMask out(mask.width, mask.height);
          for (int y = 0; y < mask.height; ++y)
            for (int x = 0; x < mask.width; ++x) {
              if (!mask.at(y, x)) continue;
              int nx = x + s.dx, ny = y + s.dy;
              if (nx >= 0 && nx < mask.width && ny >= 0 && ny < mask.height) out.set(ny, nx);
            }
          return out;
        } else if constexpr (std::is_same_v<T, Dilate>) {
          BinaryMask out = mask;
          for (int i = 0; i < s.radius; ++i) out = detail::dilate_step(out);
          return out;
        } else if constexpr (std::is_same_v<T, Erode>) {
          BinaryMask out = mask;
          for (int i = 0; i < s.radius; ++i) out = detail::erode_step(out);
          return out;
        } else if constexpr (std::is_same_v<T, MergeWith>) {
          if (s.other.width != mask.width || s.other.height != mask.height)
            fail(ErrorCode::DimensionMismatch, "merge-with mask of different size");
          BinaryMask out = mask;
          for (size_t i = 0; i < out.bits.size(); ++i) out.bits[i] |= s.other.bits[i];
          return out;
        } else {
          static_assert(std::is_same_v<T, SplitHalf>);
          if (mask.empty_mask()) return mask;
          BBox box = bbox_of(mask);
          BinaryMask out(mask.width, mask.height);
          if (s.axis == SplitAxis::Vertical) {
            int xmid = (box.x_min + box.x_max) / 2;
            for (int y = 0; y < mask.height; ++y)
              for (int x = 0; x < mask.width; ++x)
                if (mask.at(y, x) && ((x < xmid) == s.keep_low)) out.set(y, x);
          } else {
            int ymid = (box.y_min + box.y_max) / 2;
            for (int y = 0; y < mask.height; ++y)
              for (int x = 0; x < mask.width; ++x)
                if (mask.at(y, x) && ((y < ymid) == s.keep_low)) out.set(y, x);
          }
          return out;
        }
      },
      spec);
}

}  // namespace ras
