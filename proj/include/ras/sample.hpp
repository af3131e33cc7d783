#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ras/errors.hpp"
#include "ras/mask.hpp"

namespace ras {

enum class Provenance {
  Category,
  Attribute,
  PositionAbs,
  PositionRel,
  Relation,
  Freeform,
  NoTarget,
};

inline const char* provenance_name(Provenance p) {
  switch (p) {
    case Provenance::Category: return "category";
    case Provenance::Attribute: return "attribute";
    case Provenance::PositionAbs: return "position_abs";
    case Provenance::PositionRel: return "position_rel";
    case Provenance::Relation: return "relation";
    case Provenance::Freeform: return "freeform";
    case Provenance::NoTarget: return "no_target";
  }
  return "unknown";
}

inline Provenance provenance_from_name(const std::string& s) {
  for (Provenance p : {Provenance::Category, Provenance::Attribute, Provenance::PositionAbs,
                       Provenance::PositionRel, Provenance::Relation, Provenance::Freeform,
                       Provenance::NoTarget})
    if (s == provenance_name(p)) return p;
  fail(ErrorCode::SchemaError, "unknown provenance '" + s + "'");
}

/// One referring-expression instance: candidate masks, a prompt whose
/// `<mask-ref>` placeholders point at candidates via ref_indices, and the
/// target candidate index set (possibly empty).
struct GroupSample {
  int scene_id = 0;
  std::vector<RleMask> candidates;
  std::string prompt;
  std::vector<int> ref_indices;
  std::vector<int> targets;  // sorted ascending
  Provenance provenance = Provenance::Category;
};

inline constexpr const char* kMaskRefPlaceholder = "<mask-ref>";

inline int count_placeholders(const std::string& prompt) {
  int n = 0;
  for (size_t pos = prompt.find(kMaskRefPlaceholder); pos != std::string::npos;
       pos = prompt.find(kMaskRefPlaceholder, pos + 1))
    ++n;
  return n;
}

inline void validate_sample(const GroupSample& s) {
  int n = int(s.candidates.size());
  for (int i : s.ref_indices)
    if (i < 0 || i >= n) fail(ErrorCode::IndexOutOfRange, "ref index out of range");
  for (size_t k = 0; k < s.targets.size(); ++k) {
    int t = s.targets[k];
    if (t < 0 || t >= n) fail(ErrorCode::IndexOutOfRange, "target index out of range");
    if (k > 0 && s.targets[k - 1] >= t) fail(ErrorCode::SchemaError, "targets not sorted unique");
  }
  if (count_placeholders(s.prompt) != int(s.ref_indices.size()))
    fail(ErrorCode::SchemaError, "placeholder count does not match ref_indices");
}

inline nlohmann::ordered_json rle_to_json(const RleMask& r) {
  return nlohmann::ordered_json{{"w", r.width}, {"h", r.height}, {"counts", r.counts}};
}

inline RleMask rle_from_json(const nlohmann::json& j) {
  RleMask r;
  r.width = j.at("w").get<int>();
  r.height = j.at("h").get<int>();
  r.counts = j.at("counts").get<std::vector<int>>();
  return r;
}

inline nlohmann::ordered_json sample_to_json(const GroupSample& s) {
  nlohmann::ordered_json j;
  j["scene_id"] = s.scene_id;
  auto cands = nlohmann::ordered_json::array();
  for (const auto& c : s.candidates) cands.push_back(rle_to_json(c));
  j["candidates"] = std::move(cands);
  j["prompt"] = s.prompt;
  j["ref_indices"] = s.ref_indices;
  j["targets"] = s.targets;
  j["provenance"] = provenance_name(s.provenance);
  return j;
}

inline GroupSample sample_from_json(const nlohmann::json& j) {
  GroupSample s;
  s.scene_id = j.at("scene_id").get<int>();
  for (const auto& c : j.at("candidates")) s.candidates.push_back(rle_from_json(c));
  s.prompt = j.at("prompt").get<std::string>();
  s.ref_indices = j.at("ref_indices").get<std::vector<int>>();
  s.targets = j.at("targets").get<std::vector<int>>();
  s.provenance = provenance_from_name(j.at("provenance").get<std::string>());
  validate_sample(s);
  return s;
}

inline void write_dataset(const std::vector<GroupSample>& samples, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot open " + path + " for writing");
  for (const auto& s : samples) out << sample_to_json(s).dump() << '\n';
}

inline std::vector<GroupSample> read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  std::vector<GroupSample> samples;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) fail(ErrorCode::SchemaError, "invalid JSON line in " + path);
    samples.push_back(sample_from_json(j));
  }
  return samples;
}

}  // namespace ras
