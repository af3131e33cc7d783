#pragma once

#include <cstdlib>
#include <string>
#include <vector>

#include "ras/image.hpp"
#include "ras/mask.hpp"
#include "ras/rng.hpp"
#include "ras/scene.hpp"

namespace ras {

enum class ShapeKind { Circle, Square, Triangle };

inline const char* shape_kind_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::Circle: return "circle";
    case ShapeKind::Square: return "square";
    case ShapeKind::Triangle: return "triangle";
  }
  return "unknown";
}

struct PaletteColor {
  const char* name;
  uint8_t r, g, b;
};

// Six colors with (near-)equal RGB norm, so edge contrast against the black
// background is the same for every color and only E1 carries color identity.
inline constexpr PaletteColor kPalette[6] = {
    {"red", 230, 0, 0},     {"green", 0, 230, 0},    {"blue", 0, 0, 230},
    {"yellow", 163, 163, 0}, {"cyan", 0, 163, 163},   {"magenta", 163, 0, 163},
};

inline int palette_index(const std::string& name) {
  for (int i = 0; i < 6; ++i)
    if (name == kPalette[i].name) return i;
  fail(ErrorCode::SchemaError, "unknown palette color '" + name + "'");
}

struct ShapeSpec {
  ShapeKind kind = ShapeKind::Circle;
  int color = 0;  // palette index
  bool large = false;
  int cx = 0, cy = 0;
  int r = 1;  // radius / half-side / half-extent
};

struct SceneConfig {
  int width = 128;
  int height = 128;
  int min_shapes = 3;
  int max_shapes = 8;
  int small_r_min = 6, small_r_max = 10;
  int large_r_min = 14, large_r_max = 20;
  double max_pair_iou = 0.2;
  int max_attempts = 1000;
  int touch_distance = 2;  // Chebyshev distance for the "touching" relation
};

struct SynthScene {
  int scene_id = 0;
  int width = 0;
  int height = 0;
  std::vector<ShapeSpec> shapes;
  SceneAnnotation annotation;  // masks are post-occlusion visible regions
};

/// Full shape footprint before occlusion, no anti-aliasing.
inline BinaryMask raw_shape_mask(const ShapeSpec& s, int w, int h) {
  BinaryMask m(w, h);
  int y0 = std::max(0, s.cy - s.r), y1 = std::min(h - 1, s.cy + s.r);
  int x0 = std::max(0, s.cx - s.r), x1 = std::min(w - 1, s.cx + s.r);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      bool in = false;
      switch (s.kind) {
        case ShapeKind::Circle:
          in = (x - s.cx) * (x - s.cx) + (y - s.cy) * (y - s.cy) <= s.r * s.r;
          break;
        case ShapeKind::Square:
          in = true;  // already restricted to the box
          break;
        case ShapeKind::Triangle:
          // apex (cx, cy-r), base corners (cx±r, cy+r)
          in = 2 * std::abs(x - s.cx) <= (y - s.cy + s.r);
          break;
      }
      if (in) m.set(y, x);
    }
  return m;
}

namespace detail {

inline std::vector<BinaryMask> visible_masks(const std::vector<BinaryMask>& raw) {
  std::vector<BinaryMask> vis = raw;
  for (size_t i = 0; i < raw.size(); ++i)
    for (size_t j = i + 1; j < raw.size(); ++j)
      for (size_t k = 0; k < vis[i].bits.size(); ++k)
        if (raw[j].bits[k]) vis[i].bits[k] = 0;
  return vis;
}

inline BinaryMask chebyshev_dilate(const BinaryMask& m, int r) {
  BinaryMask out(m.width, m.height);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      if (!m.at(y, x)) continue;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          int ny = y + dy, nx = x + dx;
          if (ny >= 0 && ny < m.height && nx >= 0 && nx < m.width) out.set(ny, nx);
        }
    }
  return out;
}

inline bool touching(const BinaryMask& a, const BinaryMask& b, int dist) {
  BinaryMask da = chebyshev_dilate(a, dist);
  for (size_t k = 0; k < da.bits.size(); ++k)
    if (da.bits[k] && b.bits[k]) return true;
  return false;
}

}  // namespace detail

/// Rejection-samples a scene whose raw shape masks overlap pairwise with IoU
/// at most max_pair_iou and whose visible (post-occlusion) masks all stay
/// non-empty. Entities are annotated with kind as category, color and size
/// class as attributes, and symmetric "touching" relations.
inline SynthScene sample_scene(Rng& rng, const SceneConfig& cfg, int scene_id) {
  SynthScene scene;
  scene.scene_id = scene_id;
  scene.width = cfg.width;
  scene.height = cfg.height;

  int n = rng.uniform_int(cfg.min_shapes, cfg.max_shapes);
  std::vector<BinaryMask> raw;
  for (int i = 0; i < n; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_attempts && !placed; ++attempt) {
      ShapeSpec s;
      s.kind = ShapeKind(rng.uniform_int(0, 2));
      s.color = rng.uniform_int(0, 5);
      s.large = rng.bernoulli(0.5);
      s.r = s.large ? rng.uniform_int(cfg.large_r_min, cfg.large_r_max)
                    : rng.uniform_int(cfg.small_r_min, cfg.small_r_max);
      if (2 * s.r + 1 > std::min(cfg.width, cfg.height)) continue;
      s.cx = rng.uniform_int(s.r, cfg.width - 1 - s.r);
      s.cy = rng.uniform_int(s.r, cfg.height - 1 - s.r);

      BinaryMask cand = raw_shape_mask(s, cfg.width, cfg.height);
      bool ok = true;
      for (const BinaryMask& other : raw)
        if (iou(cand, other) > cfg.max_pair_iou) {
          ok = false;
          break;
        }
      if (ok) {
        // the newcomer is drawn last; earlier shapes must keep visible pixels
        std::vector<BinaryMask> tentative = raw;
        tentative.push_back(cand);
        for (const BinaryMask& v : detail::visible_masks(tentative))
          if (v.empty_mask()) {
            ok = false;
            break;
          }
      }
      if (ok) {
        raw.push_back(std::move(cand));
        scene.shapes.push_back(s);
        placed = true;
      }
    }
    if (!placed)
      fail(ErrorCode::SamplingExhausted,
           "no valid placement for shape " + std::to_string(i) + " after " +
               std::to_string(cfg.max_attempts) + " attempts");
  }

  std::vector<BinaryMask> vis = detail::visible_masks(raw);
  SceneAnnotation& ann = scene.annotation;
  ann.scene_id = scene_id;
  ann.width = cfg.width;
  ann.height = cfg.height;
  for (int i = 0; i < int(scene.shapes.size()); ++i) {
    const ShapeSpec& s = scene.shapes[size_t(i)];
    Entity e;
    e.entity_id = i;
    e.category = shape_kind_name(s.kind);
    e.attributes = {kPalette[s.color].name, s.large ? "large" : "small"};
    e.mask = vis[size_t(i)];
    e.bbox = bbox_of(e.mask);
    ann.entities.push_back(std::move(e));
  }
  for (int i = 0; i < int(vis.size()); ++i)
    for (int j = 0; j < int(vis.size()); ++j)
      if (i != j && detail::touching(vis[size_t(i)], vis[size_t(j)], cfg.touch_distance))
        ann.entities[size_t(i)].relations.emplace_back("touching", j);
  return scene;
}

/// Painter's-algorithm raster; pixels belong to the last-drawn shape.
inline Image render(const SynthScene& scene) {
  Image img(scene.width, scene.height);
  for (const ShapeSpec& s : scene.shapes) {
    BinaryMask m = raw_shape_mask(s, scene.width, scene.height);
    const PaletteColor& c = kPalette[s.color];
    for (int y = 0; y < scene.height; ++y)
      for (int x = 0; x < scene.width; ++x)
        if (m.at(y, x)) img.set_px(y, x, c.r, c.g, c.b);
  }
  return img;
}

/// Rebuild the raster from an annotation alone: visible masks are disjoint, so
/// painting each entity mask with its color attribute reproduces render().
inline Image render_annotation(const SceneAnnotation& ann) {
  Image img(ann.width, ann.height);
  for (const Entity& e : ann.entities) {
    if (e.attributes.empty()) fail(ErrorCode::SchemaError, "entity without color attribute");
    const PaletteColor& c = kPalette[palette_index(e.attributes[0])];
    for (int y = 0; y < ann.height; ++y)
      for (int x = 0; x < ann.width; ++x)
        if (e.mask.at(y, x)) img.set_px(y, x, c.r, c.g, c.b);
  }
  return img;
}

inline constexpr PaletteColor kOverlayColors[8] = {
    {"o0", 255, 64, 64},  {"o1", 64, 255, 64},  {"o2", 64, 64, 255},  {"o3", 255, 255, 64},
    {"o4", 64, 255, 255}, {"o5", 255, 64, 255}, {"o6", 255, 160, 64}, {"o7", 255, 255, 255},
};

/// Half-transparent tint per selected mask, palette fixed by selection index.
inline Image overlay_image(const Image& base, const std::vector<BinaryMask>& masks) {
  Image img = base;
  for (size_t i = 0; i < masks.size(); ++i) {
    if (masks[i].width != base.width || masks[i].height != base.height)
      fail(ErrorCode::DimensionMismatch, "overlay mask size mismatch");
    const PaletteColor& c = kOverlayColors[i % 8];
    for (int y = 0; y < base.height; ++y)
      for (int x = 0; x < base.width; ++x)
        if (masks[i].at(y, x)) {
          const uint8_t* p = img.px(y, x);
          img.set_px(y, x, uint8_t((p[0] + c.r) / 2), uint8_t((p[1] + c.g) / 2),
                     uint8_t((p[2] + c.b) / 2));
        }
  }
  return img;
}

inline void render_overlay(const Image& base, const std::vector<BinaryMask>& masks,
                           const std::string& path) {
  write_png(path, overlay_image(base, masks));
}

}  // namespace ras
