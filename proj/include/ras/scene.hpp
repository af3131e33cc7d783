#pragma once

#include <algorithm>
#include <fstream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ras/errors.hpp"
#include "ras/mask.hpp"
#include "ras/sample.hpp"

namespace ras {

/// One annotated object: category, attribute labels, tight box, pixel mask and
/// outgoing relations (label, object entity id).
struct Entity {
  int entity_id = 0;
  std::string category;
  std::vector<std::string> attributes;
  BBox bbox;
  BinaryMask mask;
  std::vector<std::pair<std::string, int>> relations;
};

struct SceneAnnotation {
  int scene_id = 0;
  int width = 0;
  int height = 0;
  std::vector<Entity> entities;
};

inline void validate_scene(const SceneAnnotation& scene) {
  std::set<int> ids;
  for (const Entity& e : scene.entities) {
    if (!ids.insert(e.entity_id).second)
      fail(ErrorCode::SchemaError, "duplicate entity_id " + std::to_string(e.entity_id));
    if (e.mask.width != scene.width || e.mask.height != scene.height)
      fail(ErrorCode::SchemaError, "entity mask size differs from scene");
    if (!e.mask.empty_mask() && bbox_of(e.mask) != e.bbox)
      fail(ErrorCode::SchemaError, "entity bbox is not the tight box of its mask");
  }
}

// COCO-style container: an "images" array plus an "annotations" array keyed by
// image_id. bbox is [x, y, w, h]; segmentation is the RleMask object.

inline nlohmann::ordered_json scenes_to_json(const std::vector<SceneAnnotation>& scenes) {
  nlohmann::ordered_json images = nlohmann::ordered_json::array();
  nlohmann::ordered_json annotations = nlohmann::ordered_json::array();
  for (const auto& s : scenes) {
    images.push_back(
        nlohmann::ordered_json{{"id", s.scene_id}, {"width", s.width}, {"height", s.height}});
    for (const Entity& e : s.entities) {
      nlohmann::ordered_json a;
      a["id"] = e.entity_id;
      a["image_id"] = s.scene_id;
      a["category"] = e.category;
      a["attributes"] = e.attributes;
      a["bbox"] = {e.bbox.x_min, e.bbox.y_min, e.bbox.x_max - e.bbox.x_min,
                   e.bbox.y_max - e.bbox.y_min};
      a["segmentation"] = rle_to_json(rle_encode(e.mask));
      auto rels = nlohmann::ordered_json::array();
      for (const auto& [label, obj] : e.relations)
        rels.push_back(nlohmann::ordered_json{{"relation", label}, {"object_id", obj}});
      a["relations"] = std::move(rels);
      annotations.push_back(std::move(a));
    }
  }
  return nlohmann::ordered_json{{"images", images}, {"annotations", annotations}};
}

inline std::vector<SceneAnnotation> scenes_from_json(const nlohmann::json& j) {
  std::vector<SceneAnnotation> scenes;
  std::vector<int> order;
  std::map<int, size_t> by_id;
  for (const auto& img : j.at("images")) {
    SceneAnnotation s;
    s.scene_id = img.at("id").get<int>();
    s.width = img.at("width").get<int>();
    s.height = img.at("height").get<int>();
    if (by_id.count(s.scene_id)) fail(ErrorCode::SchemaError, "duplicate image id");
    by_id[s.scene_id] = scenes.size();
    scenes.push_back(std::move(s));
  }
  for (const auto& a : j.at("annotations")) {
    int image_id = a.at("image_id").get<int>();
    auto it = by_id.find(image_id);
    if (it == by_id.end())
      fail(ErrorCode::SchemaError, "annotation references unknown image " + std::to_string(image_id));
    SceneAnnotation& s = scenes[it->second];
    Entity e;
    e.entity_id = a.at("id").get<int>();
    e.category = a.at("category").get<std::string>();
    e.attributes = a.at("attributes").get<std::vector<std::string>>();
    auto box = a.at("bbox").get<std::vector<int>>();
    if (box.size() != 4) fail(ErrorCode::SchemaError, "bbox must be [x,y,w,h]");
    e.bbox = BBox{box[0], box[1], box[0] + box[2], box[1] + box[3]};
    e.mask = rle_decode(rle_from_json(a.at("segmentation")));
    if (a.contains("relations"))
      for (const auto& r : a.at("relations"))
        e.relations.emplace_back(r.at("relation").get<std::string>(),
                                 r.at("object_id").get<int>());
    s.entities.push_back(std::move(e));
  }
  for (const auto& s : scenes) validate_scene(s);
  return scenes;
}

inline void write_scenes(const std::vector<SceneAnnotation>& scenes, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot open " + path + " for writing");
  out << scenes_to_json(scenes).dump(1) << '\n';
}

inline std::vector<SceneAnnotation> read_scenes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::SchemaError, "invalid JSON in " + path);
  return scenes_from_json(j);
}

}  // namespace ras
