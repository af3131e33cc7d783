#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ras/perturb.hpp"
#include "ras/rng.hpp"
#include "ras/sample.hpp"
#include "ras/scene.hpp"

namespace ras {

struct GenConfig {
  double theta_merge = 0.5;  // IoU threshold for annotation merging
  double delta_pos = 0.05;   // dead-zone margin for position rules, fraction of image side
  double p_miss = 0.0;       // probability a gt mask is omitted from the candidates
  int distractors_per_scene = 0;
  std::set<int> exclusion_ids;
  uint64_t seed = 0;

  std::set<Provenance> rules = {Provenance::Category,    Provenance::Attribute,
                                Provenance::PositionAbs, Provenance::PositionRel,
                                Provenance::Relation,    Provenance::NoTarget,
                                Provenance::Freeform};
  std::vector<std::string> attribute_filter;  // empty = all attribute labels
  std::vector<std::string> label_universe = {"circle", "square", "triangle"};
  bool include_ref_in_targets = true;
  int max_no_target_per_scene = 2;
};

/// Entity-level group emitted by a generation rule, before candidate proposal
/// remaps entity ids to candidate indices.
struct EntityGroup {
  std::string prompt;
  std::vector<int> ref_entity_ids;
  std::vector<int> target_entity_ids;  // sorted ascending
  Provenance provenance = Provenance::Category;
};

/// Pre-paired free-form record (RES/GRES-style conversion); loaded as-is.
struct FreeformRecord {
  int scene_id = 0;
  std::string expression;
  std::vector<int> target_entity_ids;
};

// ---------------------------------------------------------------------------
// Prompt templates

inline std::string tpl_category(const std::string& cat) { return "Select all " + cat; }
inline std::string tpl_category_ref() {
  return std::string("Segment everything of the same class as ") + kMaskRefPlaceholder;
}
inline std::string tpl_attribute(const std::string& attr) {
  return "Select all " + attr + " objects";
}
inline std::string tpl_attribute_ref() {
  return std::string("Find all the objects with the same attribute as ") + kMaskRefPlaceholder +
         " in the image.";
}
inline std::string tpl_position_abs(const std::string& direction) {
  if (direction == "left") return "Locate all the items on the left side of the image.";
  if (direction == "right") return "Locate all the items on the right side of the image.";
  if (direction == "top") return "Locate all the items on the top of the image.";
  return "Locate all the items at the bottom of the image.";
}
inline std::string tpl_position_rel(const std::string& direction) {
  std::string ref = kMaskRefPlaceholder;
  if (direction == "left") return "Find all the objects on the left side of " + ref + ".";
  if (direction == "right") return "Find all the objects on the right side of " + ref + ".";
  if (direction == "above") return "Find all the objects above " + ref + ".";
  return "Find all the objects below " + ref + ".";
}
inline std::string tpl_relation_subject(const std::string& relation) {
  return std::string("Select all objects that ") + kMaskRefPlaceholder + " " + relation + ".";
}
inline std::string tpl_relation_object(const std::string& relation) {
  return "Select all objects that " + relation + " " + std::string(kMaskRefPlaceholder) + ".";
}
inline std::string tpl_freeform(const std::string& expression) {
  return "Select the " + expression + " in the image.";
}

/// Fully instantiated template strings over the given label sets, for building
/// a closed prompt vocabulary.
inline std::vector<std::string> vocabulary_strings(const std::vector<std::string>& categories,
                                                   const std::vector<std::string>& attributes,
                                                   const std::vector<std::string>& relations) {
  std::vector<std::string> out;
  for (const auto& c : categories) out.push_back(tpl_category(c));
  out.push_back(tpl_category_ref());
  for (const auto& a : attributes) out.push_back(tpl_attribute(a));
  out.push_back(tpl_attribute_ref());
  for (const char* d : {"left", "right", "top", "bottom"}) out.push_back(tpl_position_abs(d));
  for (const char* d : {"left", "right", "above", "below"}) out.push_back(tpl_position_rel(d));
  for (const auto& r : relations) {
    out.push_back(tpl_relation_subject(r));
    out.push_back(tpl_relation_object(r));
  }
  out.push_back(tpl_freeform(""));
  return out;
}

// ---------------------------------------------------------------------------
// Annotation merging (COCO+LVIS-style)

/// Entities of b whose mask IoU with some entity of a reaches theta_merge are
/// fused into that entity (attribute union, b's mask kept as the finer one);
/// the rest are appended with fresh ids. Relation targets are remapped.
inline SceneAnnotation merge_annotations(const SceneAnnotation& a, const SceneAnnotation& b,
                                         double theta_merge) {
  if (a.scene_id != b.scene_id || a.width != b.width || a.height != b.height)
    fail(ErrorCode::SceneMismatch, "merge_annotations on different scenes");

  SceneAnnotation out = a;
  int next_id = 0;
  for (const Entity& e : out.entities) next_id = std::max(next_id, e.entity_id + 1);

  // pass 1: decide fuse target (index into a) or fresh id for each b entity
  std::map<int, int> id_map;  // b entity_id -> final entity_id
  std::vector<int> fuse_into(b.entities.size(), -1);
  for (size_t i = 0; i < b.entities.size(); ++i) {
    int best = -1;
    double best_iou = -1.0;
    for (size_t j = 0; j < a.entities.size(); ++j) {
      double v = iou(b.entities[i].mask, a.entities[j].mask);
      if (v > best_iou) {
        best_iou = v;
        best = int(j);
      }
    }
    if (best >= 0 && best_iou >= theta_merge) {
      fuse_into[i] = best;
      id_map[b.entities[i].entity_id] = a.entities[size_t(best)].entity_id;
    } else {
      id_map[b.entities[i].entity_id] = next_id++;
    }
  }

  // pass 2: apply fuses and appends with remapped relations
  for (size_t i = 0; i < b.entities.size(); ++i) {
    const Entity& eb = b.entities[i];
    std::vector<std::pair<std::string, int>> rels;
    for (const auto& [label, obj] : eb.relations) {
      auto it = id_map.find(obj);
      rels.emplace_back(label, it != id_map.end() ? it->second : obj);
    }
    if (fuse_into[i] >= 0) {
      Entity& target = out.entities[size_t(fuse_into[i])];
      for (const auto& attr : eb.attributes)
        if (std::find(target.attributes.begin(), target.attributes.end(), attr) ==
            target.attributes.end())
          target.attributes.push_back(attr);
      target.mask = eb.mask;
      target.bbox = bbox_of(target.mask);
      for (const auto& r : rels)
        if (std::find(target.relations.begin(), target.relations.end(), r) ==
            target.relations.end())
          target.relations.push_back(r);
    } else {
      Entity e = eb;
      e.entity_id = id_map[eb.entity_id];
      e.relations = rels;
      out.entities.push_back(std::move(e));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generation rules

namespace detail {

inline std::vector<int> sorted_ids(std::vector<int> ids) {
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace detail

inline std::vector<EntityGroup> gen_category_groups(const SceneAnnotation& scene,
                                                    bool include_ref = true) {
  std::map<std::string, std::vector<int>> by_cat;
  for (const Entity& e : scene.entities) by_cat[e.category].push_back(e.entity_id);

  std::vector<EntityGroup> out;
  for (auto& [cat, ids] : by_cat) {
    if (ids.size() < 2) continue;
    std::vector<int> targets = detail::sorted_ids(ids);
    out.push_back(EntityGroup{tpl_category(cat), {}, targets, Provenance::Category});

    int ref = targets.front();  // lowest entity id
    std::vector<int> ref_targets = targets;
    if (!include_ref) std::erase(ref_targets, ref);
    out.push_back(EntityGroup{tpl_category_ref(), {ref}, ref_targets, Provenance::Category});
  }
  return out;
}

inline std::vector<EntityGroup> gen_attribute_groups(const SceneAnnotation& scene,
                                                     const std::vector<std::string>& filter = {},
                                                     bool include_ref = true) {
  std::map<std::string, std::vector<int>> by_attr;
  for (const Entity& e : scene.entities)
    for (const std::string& a : e.attributes) {
      if (!filter.empty() && std::find(filter.begin(), filter.end(), a) == filter.end()) continue;
      by_attr[a].push_back(e.entity_id);
    }

  std::vector<EntityGroup> out;
  for (auto& [attr, ids] : by_attr) {
    if (ids.size() < 2) continue;
    std::vector<int> targets = detail::sorted_ids(ids);
    out.push_back(EntityGroup{tpl_attribute(attr), {}, targets, Provenance::Attribute});

    int ref = targets.front();
    std::vector<int> ref_targets = targets;
    if (!include_ref) std::erase(ref_targets, ref);
    out.push_back(EntityGroup{tpl_attribute_ref(), {ref}, ref_targets, Provenance::Attribute});
  }
  return out;
}

inline std::vector<EntityGroup> gen_position_groups(const SceneAnnotation& scene,
                                                    double delta_pos) {
  std::vector<EntityGroup> out;
  const double w = scene.width, h = scene.height;

  // absolute positions against the image center, with a dead zone of delta_pos
  struct AbsRule {
    const char* name;
    bool (*test)(double cx, double cy, double w, double h, double d);
  };
  static const AbsRule abs_rules[4] = {
      {"left", [](double cx, double, double w2, double, double d) { return cx < (0.5 - d) * w2; }},
      {"right", [](double cx, double, double w2, double, double d) { return cx > (0.5 + d) * w2; }},
      {"top", [](double, double cy, double, double h2, double d) { return cy < (0.5 - d) * h2; }},
      {"bottom",
       [](double, double cy, double, double h2, double d) { return cy > (0.5 + d) * h2; }},
  };
  for (const AbsRule& rule : abs_rules) {
    std::vector<int> targets;
    for (const Entity& e : scene.entities)
      if (rule.test(e.bbox.center_x(), e.bbox.center_y(), w, h, delta_pos))
        targets.push_back(e.entity_id);
    if (!targets.empty())
      out.push_back(EntityGroup{tpl_position_abs(rule.name), {}, detail::sorted_ids(targets),
                                Provenance::PositionAbs});
  }

  // relative positions per (anchor, direction); the anchor becomes <mask-ref>
  // and is excluded from the targets
  struct RelRule {
    const char* name;
    bool (*test)(const BBox& a, const BBox& anchor, double w, double h, double d);
  };
  static const RelRule rel_rules[4] = {
      {"left",
       [](const BBox& a, const BBox& b, double w2, double, double d) {
         return a.center_x() < b.center_x() - d * w2;
       }},
      {"right",
       [](const BBox& a, const BBox& b, double w2, double, double d) {
         return a.center_x() > b.center_x() + d * w2;
       }},
      {"above",
       [](const BBox& a, const BBox& b, double, double h2, double d) {
         return a.center_y() < b.center_y() - d * h2;
       }},
      {"below",
       [](const BBox& a, const BBox& b, double, double h2, double d) {
         return a.center_y() > b.center_y() + d * h2;
       }},
  };
  std::vector<const Entity*> by_id;
  for (const Entity& e : scene.entities) by_id.push_back(&e);
  std::sort(by_id.begin(), by_id.end(),
            [](const Entity* a, const Entity* b) { return a->entity_id < b->entity_id; });
  for (const Entity* anchor : by_id) {
    for (const RelRule& rule : rel_rules) {
      std::vector<int> targets;
      for (const Entity& e : scene.entities) {
        if (e.entity_id == anchor->entity_id) continue;
        if (rule.test(e.bbox, anchor->bbox, w, h, delta_pos)) targets.push_back(e.entity_id);
      }
      if (!targets.empty())
        out.push_back(EntityGroup{tpl_position_rel(rule.name),
                                  {anchor->entity_id},
                                  detail::sorted_ids(targets),
                                  Provenance::PositionRel});
    }
  }
  return out;
}

inline std::vector<EntityGroup> gen_relation_groups(const SceneAnnotation& scene) {
  std::vector<EntityGroup> out;
  std::vector<const Entity*> by_id;
  for (const Entity& e : scene.entities) by_id.push_back(&e);
  std::sort(by_id.begin(), by_id.end(),
            [](const Entity* a, const Entity* b) { return a->entity_id < b->entity_id; });

  // shared subject: same subject, same relation, >= 2 distinct objects
  for (const Entity* subj : by_id) {
    std::map<std::string, std::set<int>> by_label;
    for (const auto& [label, obj] : subj->relations) by_label[label].insert(obj);
    for (const auto& [label, objs] : by_label) {
      if (objs.size() < 2) continue;
      out.push_back(EntityGroup{tpl_relation_subject(label),
                                {subj->entity_id},
                                std::vector<int>(objs.begin(), objs.end()),
                                Provenance::Relation});
    }
  }

  // shared object: same object, same relation, >= 2 distinct subjects
  std::map<int, std::map<std::string, std::set<int>>> incoming;
  for (const Entity& e : scene.entities)
    for (const auto& [label, obj] : e.relations) incoming[obj][label].insert(e.entity_id);
  for (const Entity* obj : by_id) {
    auto it = incoming.find(obj->entity_id);
    if (it == incoming.end()) continue;
    for (const auto& [label, subjects] : it->second) {
      if (subjects.size() < 2) continue;
      out.push_back(EntityGroup{tpl_relation_object(label),
                                {obj->entity_id},
                                std::vector<int>(subjects.begin(), subjects.end()),
                                Provenance::Relation});
    }
  }
  return out;
}

inline std::vector<EntityGroup> gen_no_target_groups(const SceneAnnotation& scene,
                                                     const std::vector<std::string>& universe,
                                                     int max_per_scene) {
  std::set<std::string> present;
  for (const Entity& e : scene.entities) present.insert(e.category);
  for (const auto& p : present)
    if (std::find(universe.begin(), universe.end(), p) == universe.end())
      fail(ErrorCode::SchemaError, "label universe is missing present category '" + p + "'");

  std::vector<std::string> absent;
  for (const auto& label : universe)
    if (!present.count(label)) absent.push_back(label);
  std::sort(absent.begin(), absent.end());

  std::vector<EntityGroup> out;
  for (const auto& label : absent) {
    if (int(out.size()) >= max_per_scene) break;
    out.push_back(EntityGroup{tpl_category(label), {}, {}, Provenance::NoTarget});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Candidate proposal

struct CandidateSet {
  std::vector<BinaryMask> masks;   // surviving gt masks in entity order, then distractors
  std::map<int, int> gt_index;     // entity_id -> candidate index (survivors only)
};

/// Stand-in for a segmentation proposal model: gt masks, each dropped with
/// probability p_miss, plus perturbed/merged/split distractors. Streams are
/// derived per entity/distractor, so drop decisions are coupled across
/// configs that share a seed (raising p_miss only removes candidates).
inline CandidateSet propose_candidates(const SceneAnnotation& scene, const GenConfig& cfg,
                                       const Rng& rng) {
  CandidateSet set;
  for (const Entity& e : scene.entities) {
    Rng drop = rng.child("drop", uint64_t(e.entity_id));
    if (drop.uniform() < cfg.p_miss) continue;
    set.gt_index[e.entity_id] = int(set.masks.size());
    set.masks.push_back(e.mask);
  }

  int n = int(scene.entities.size());
  for (int j = 0; j < cfg.distractors_per_scene && n > 0; ++j) {
    Rng r = rng.child("distractor", uint64_t(j));
    const Entity& base = scene.entities[size_t(r.uniform_int(0, n - 1))];
    int kind = r.uniform_int(0, 4);
    PerturbSpec spec = Translate{3, 0};
    switch (kind) {
      case 0: {
        int span = std::max(2, scene.width / 16);
        int dx = 0, dy = 0;
        for (int tries = 0; tries < 8 && dx == 0 && dy == 0; ++tries) {
          dx = r.uniform_int(-span, span);
          dy = r.uniform_int(-span, span);
        }
        if (dx == 0 && dy == 0) dx = span;
        spec = Translate{dx, dy};
        break;
      }
      case 1:
        spec = Dilate{r.uniform_int(1, 3)};
        break;
      case 2:
        spec = Erode{r.uniform_int(1, 2)};
        break;
      case 3: {
        if (n < 2) {
          spec = Translate{std::max(2, scene.width / 16), 0};
        } else {
          int other = r.uniform_int(0, n - 2);
          if (scene.entities[size_t(other)].entity_id == base.entity_id) other = n - 1;
          spec = MergeWith{scene.entities[size_t(other)].mask};
        }
        break;
      }
      case 4: {
        SplitAxis axis = r.bernoulli(0.5) ? SplitAxis::Horizontal : SplitAxis::Vertical;
        bool low = r.bernoulli(0.5);
        BBox box = base.mask.empty_mask() ? BBox{} : bbox_of(base.mask);
        int extent = (axis == SplitAxis::Vertical) ? box.x_max - box.x_min : box.y_max - box.y_min;
        if (extent < 2)
          spec = Translate{std::max(2, scene.width / 16), 0};
        else
          spec = SplitHalf{axis, low};
        break;
      }
    }
    set.masks.push_back(perturb(base.mask, spec));
  }
  return set;
}

// ---------------------------------------------------------------------------
// Dataset assembly

inline std::vector<EntityGroup> generate_groups(const SceneAnnotation& scene,
                                                const GenConfig& cfg) {
  std::vector<EntityGroup> groups;
  auto append = [&](std::vector<EntityGroup> g) {
    groups.insert(groups.end(), std::make_move_iterator(g.begin()),
                  std::make_move_iterator(g.end()));
  };
  if (cfg.rules.count(Provenance::Category))
    append(gen_category_groups(scene, cfg.include_ref_in_targets));
  if (cfg.rules.count(Provenance::Attribute))
    append(gen_attribute_groups(scene, cfg.attribute_filter, cfg.include_ref_in_targets));
  if (cfg.rules.count(Provenance::PositionAbs) || cfg.rules.count(Provenance::PositionRel)) {
    for (auto& g : gen_position_groups(scene, cfg.delta_pos))
      if (cfg.rules.count(g.provenance)) groups.push_back(std::move(g));
  }
  if (cfg.rules.count(Provenance::Relation)) append(gen_relation_groups(scene));
  if (cfg.rules.count(Provenance::NoTarget))
    append(gen_no_target_groups(scene, cfg.label_universe, cfg.max_no_target_per_scene));
  return groups;
}

/// Full generation pipeline: skip excluded scenes, propose candidates, run the
/// enabled rules, remap entity ids through the gt-index map. Samples whose
/// reference was dropped are discarded; samples whose target set became empty
/// are discarded unless they were no-target to begin with.
inline std::vector<GroupSample> build_dataset(const std::vector<SceneAnnotation>& scenes,
                                              const GenConfig& cfg,
                                              const std::vector<FreeformRecord>& freeform = {}) {
  Rng root(cfg.seed);
  std::vector<GroupSample> out;
  for (const SceneAnnotation& scene : scenes) {
    if (cfg.exclusion_ids.count(scene.scene_id)) continue;

    CandidateSet cands = propose_candidates(scene, cfg, root.child("scene", uint64_t(scene.scene_id)));
    std::vector<RleMask> rle;
    rle.reserve(cands.masks.size());
    for (const auto& m : cands.masks) rle.push_back(rle_encode(m));

    std::vector<EntityGroup> groups = generate_groups(scene, cfg);
    if (cfg.rules.count(Provenance::Freeform))
      for (const FreeformRecord& f : freeform)
        if (f.scene_id == scene.scene_id)
          groups.push_back(EntityGroup{tpl_freeform(f.expression),
                                       {},
                                       detail::sorted_ids(f.target_entity_ids),
                                       Provenance::Freeform});

    for (const EntityGroup& g : groups) {
      GroupSample s;
      s.scene_id = scene.scene_id;
      s.prompt = g.prompt;
      s.provenance = g.provenance;

      bool ref_alive = true;
      for (int id : g.ref_entity_ids) {
        auto it = cands.gt_index.find(id);
        if (it == cands.gt_index.end()) {
          ref_alive = false;
          break;
        }
        s.ref_indices.push_back(it->second);
      }
      if (!ref_alive) continue;

      for (int id : g.target_entity_ids) {
        auto it = cands.gt_index.find(id);
        if (it != cands.gt_index.end()) s.targets.push_back(it->second);
      }
      std::sort(s.targets.begin(), s.targets.end());
      if (s.targets.empty() && !g.target_entity_ids.empty()) continue;

      s.candidates = rle;
      validate_sample(s);
      out.push_back(std::move(s));
    }
  }
  return out;
}

inline std::map<std::string, int> dataset_summary(const std::vector<GroupSample>& dataset) {
  std::map<std::string, int> counts;
  for (const auto& s : dataset) ++counts[provenance_name(s.provenance)];
  counts["total"] = int(dataset.size());
  return counts;
}

inline std::vector<FreeformRecord> read_freeform(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::SchemaError, "invalid JSON in " + path);
  std::vector<FreeformRecord> out;
  for (const auto& r : j) {
    FreeformRecord f;
    f.scene_id = r.at("scene_id").get<int>();
    f.expression = r.at("expression").get<std::string>();
    f.target_entity_ids = r.at("targets").get<std::vector<int>>();
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace ras
