#pragma once

#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ras/errors.hpp"
#include "ras/mask.hpp"
#include "ras/sample.hpp"

namespace ras {

/// Selected candidate indices for one sample; empty selection = no-target.
struct GroupPrediction {
  int sample_id = 0;
  std::vector<int> selected;  // unique, ascending
};

struct PerSampleRow {
  int sample_id = 0;
  int64_t intersection = 0;
  int64_t union_ = 0;
  double iou = 0.0;
};

struct EvalReport {
  double giou = 0.0;
  double ciou = 0.0;
  std::optional<double> n_acc;  // absent when no gt-empty samples exist
  std::vector<PerSampleRow> per_sample;
};

/// Pixelwise OR of the selected masks; empty selection yields an empty mask.
inline BinaryMask group_union(const std::vector<BinaryMask>& masks, std::span<const int> selected) {
  if (masks.empty()) return BinaryMask(0, 0);
  BinaryMask out(masks[0].width, masks[0].height);
  for (int i : selected) {
    if (i < 0 || i >= int(masks.size()))
      fail(ErrorCode::IndexOutOfRange, "group_union index " + std::to_string(i));
    const BinaryMask& m = masks[size_t(i)];
    if (m.width != out.width || m.height != out.height)
      fail(ErrorCode::DimensionMismatch, "group_union mask size mismatch");
    for (size_t k = 0; k < out.bits.size(); ++k) out.bits[k] |= m.bits[k];
  }
  return out;
}

/// gIoU / cIoU / N-acc over a dataset. Each sample scores the union of its
/// selected masks against the union of its target masks. gt-empty & pred-empty
/// samples count as IoU 1 toward gIoU but contribute 0/0 to the cIoU sums.
inline EvalReport evaluate(const std::vector<GroupPrediction>& predictions,
                           const std::vector<GroupSample>& dataset) {
  if (predictions.size() != dataset.size())
    fail(ErrorCode::IdMismatch, "prediction/dataset size mismatch");

  EvalReport report;
  int64_t sum_inter = 0, sum_union = 0;
  double sum_iou = 0.0;
  int gt_empty = 0, gt_empty_hit = 0;

  for (size_t i = 0; i < dataset.size(); ++i) {
    if (predictions[i].sample_id != int(i))
      fail(ErrorCode::IdMismatch, "prediction id " + std::to_string(predictions[i].sample_id) +
                                      " at position " + std::to_string(i));
    const GroupSample& s = dataset[i];
    std::vector<BinaryMask> masks;
    masks.reserve(s.candidates.size());
    for (const auto& c : s.candidates) masks.push_back(rle_decode(c));

    BinaryMask pred = group_union(masks, predictions[i].selected);
    BinaryMask gt = group_union(masks, s.targets);

    int64_t inter = 0, uni = 0;
    for (size_t k = 0; k < pred.bits.size(); ++k) {
      inter += pred.bits[k] & gt.bits[k];
      uni += pred.bits[k] | gt.bits[k];
    }
    double sample_iou = (uni == 0) ? 1.0 : double(inter) / double(uni);

    if (s.targets.empty()) {
      ++gt_empty;
      if (predictions[i].selected.empty()) ++gt_empty_hit;
    }
    sum_inter += inter;
    sum_union += uni;
    sum_iou += sample_iou;
    report.per_sample.push_back(PerSampleRow{int(i), inter, uni, sample_iou});
  }

  report.giou = dataset.empty() ? 1.0 : sum_iou / double(dataset.size());
  report.ciou = (sum_union == 0) ? 1.0 : double(sum_inter) / double(sum_union);
  if (gt_empty > 0) report.n_acc = double(gt_empty_hit) / double(gt_empty);
  return report;
}

/// For each ground-truth mask pick the candidate with maximal IoU (ties go to
/// the lowest index); the prediction is the set of picks.
inline std::vector<int> oracle_select(const std::vector<BinaryMask>& candidates,
                                      const std::vector<BinaryMask>& gt_targets) {
  std::vector<int> picks;
  for (const BinaryMask& gt : gt_targets) {
    int best = -1;
    double best_iou = -1.0;
    for (size_t c = 0; c < candidates.size(); ++c) {
      double v = iou(candidates[c], gt);
      if (v > best_iou) {
        best_iou = v;
        best = int(c);
      }
    }
    if (best >= 0) picks.push_back(best);
  }
  std::sort(picks.begin(), picks.end());
  picks.erase(std::unique(picks.begin(), picks.end()), picks.end());
  return picks;
}

/// Oracle predictions for a whole dataset (targets are known).
inline std::vector<GroupPrediction> oracle_predictions(const std::vector<GroupSample>& dataset) {
  std::vector<GroupPrediction> preds;
  preds.reserve(dataset.size());
  for (size_t i = 0; i < dataset.size(); ++i) {
    const GroupSample& s = dataset[i];
    std::vector<BinaryMask> masks;
    for (const auto& c : s.candidates) masks.push_back(rle_decode(c));
    std::vector<BinaryMask> gts;
    for (int t : s.targets) gts.push_back(masks[size_t(t)]);
    preds.push_back(GroupPrediction{int(i), oracle_select(masks, gts)});
  }
  return preds;
}

inline nlohmann::ordered_json report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["giou"] = r.giou;
  j["ciou"] = r.ciou;
  if (r.n_acc)
    j["n_acc"] = *r.n_acc;
  else
    j["n_acc"] = nullptr;
  auto rows = nlohmann::ordered_json::array();
  for (const auto& row : r.per_sample)
    rows.push_back(nlohmann::ordered_json{{"sample_id", row.sample_id},
                                          {"intersection", row.intersection},
                                          {"union", row.union_},
                                          {"iou", row.iou}});
  j["per_sample"] = std::move(rows);
  return j;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string report_to_csv(const EvalReport& r) {
  std::string out = "sample_id,intersection,union,iou\n";
  for (const auto& row : r.per_sample) {
    out += std::to_string(row.sample_id) + ',' + std::to_string(row.intersection) + ',' +
           std::to_string(row.union_) + ',' + format_double(row.iou) + '\n';
  }
  return out;
}

}  // namespace ras

#include "ras/datagen.hpp"

namespace ras {

/// One candidate-quality case: the proposed candidates of a scene against the
/// original ground-truth masks of one group. The gt masks stay fixed while the
/// candidate pool degrades, which is what the oracle analysis measures.
struct OracleCase {
  std::vector<BinaryMask> candidates;
  std::vector<BinaryMask> gts;
};

inline double oracle_ciou(const std::vector<OracleCase>& cases) {
  int64_t sum_inter = 0, sum_union = 0;
  for (const OracleCase& c : cases) {
    std::vector<int> picks = oracle_select(c.candidates, c.gts);
    BinaryMask pred = c.gts.empty() ? BinaryMask(0, 0) : group_union(c.candidates, picks);
    BinaryMask gt(pred.width, pred.height);
    for (const BinaryMask& g : c.gts) {
      if (gt.bits.empty()) gt = BinaryMask(g.width, g.height);
      for (size_t k = 0; k < gt.bits.size(); ++k) gt.bits[k] |= g.bits[k];
    }
    for (size_t k = 0; k < gt.bits.size(); ++k) {
      sum_inter += (k < pred.bits.size() ? pred.bits[k] : 0) & gt.bits[k];
      sum_union += (k < pred.bits.size() ? pred.bits[k] : 0) | gt.bits[k];
    }
  }
  return sum_union == 0 ? 1.0 : double(sum_inter) / double(sum_union);
}

/// All (candidates, gt masks) pairs a quality config induces over the scenes:
/// groups are enumerated at the entity level and never discarded, so dropped
/// gt masks show up as coverage the candidates cannot reach.
inline std::vector<OracleCase> oracle_cases(const std::vector<SceneAnnotation>& scenes,
                                            const GenConfig& cfg) {
  Rng root(cfg.seed);
  std::vector<OracleCase> cases;
  for (const SceneAnnotation& scene : scenes) {
    if (cfg.exclusion_ids.count(scene.scene_id)) continue;
    CandidateSet cands =
        propose_candidates(scene, cfg, root.child("scene", uint64_t(scene.scene_id)));
    std::map<int, const BinaryMask*> by_id;
    for (const Entity& e : scene.entities) by_id[e.entity_id] = &e.mask;
    for (const EntityGroup& g : generate_groups(scene, cfg)) {
      OracleCase c;
      c.candidates = cands.masks;
      for (int id : g.target_entity_ids) c.gts.push_back(*by_id.at(id));
      cases.push_back(std::move(c));
    }
  }
  return cases;
}

struct SweepRow {
  double p_miss = 0.0;
  int distractors = 0;
  double oracle_ciou = 0.0;
};

/// Candidate-quality analysis over a grid of quality configs (same seed, so
/// the scenes and drop decisions are matched). With no dropped gt masks the
/// oracle reaches cIoU 1 exactly; raising p_miss can only degrade it.
inline std::vector<SweepRow> oracle_sweep(const std::vector<SceneAnnotation>& scenes,
                                          const GenConfig& base,
                                          const std::vector<double>& p_miss_grid,
                                          const std::vector<int>& distractor_grid) {
  std::vector<SweepRow> rows;
  for (double p : p_miss_grid)
    for (int d : distractor_grid) {
      GenConfig cfg = base;
      cfg.p_miss = p;
      cfg.distractors_per_scene = d;
      rows.push_back(SweepRow{p, d, oracle_ciou(oracle_cases(scenes, cfg))});
    }
  return rows;
}

inline std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
  std::string out = "p_miss,distractors,oracle_ciou\n";
  for (const auto& r : rows)
    out += format_double(r.p_miss) + ',' + std::to_string(r.distractors) + ',' +
           format_double(r.oracle_ciou) + '\n';
  return out;
}

}  // namespace ras
