#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ras/checkpoint.hpp"
#include "ras/datagen.hpp"
#include "ras/encoders.hpp"
#include "ras/metrics.hpp"
#include "ras/synth.hpp"
#include "ras/train.hpp"

namespace ras {

using Json = nlohmann::ordered_json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitGate = 4;

// ---------------------------------------------------------------------------
// Run configuration: one JSON document, any leaf overridable by a CLI flag of
// the same dotted name. Unknown keys are rejected; the effective document is
// echoed to the report directory so every run can be replayed.

inline Json default_config() {
  Json j;
  j["seed"] = 0;
  j["threads"] = 1;
  j["paths"] = {{"scenes", "scenes.json"},
                {"dataset", "dataset.jsonl"},
                {"holdout_scenes", ""},
                {"holdout_dataset", ""},
                {"checkpoint", "checkpoint.bin"},
                {"resume", ""},
                {"freeform", ""},
                {"report_dir", "report"}};
  j["scene"] = {{"count", 100}, {"width", 128},     {"height", 128}, {"min_shapes", 3},
                {"max_shapes", 8}, {"id_offset", 0}, {"write_pngs", false}};
  j["gen"] = {{"theta_merge", 0.5},
              {"delta_pos", 0.05},
              {"p_miss", 0.0},
              {"distractors_per_scene", 4},
              {"exclusion_ids", Json::array()},
              {"rules", Json::array({"category", "attribute", "position_abs", "position_rel",
                                     "relation", "no_target", "freeform"})},
              {"attribute_filter", Json::array()},
              {"label_universe", Json::array({"circle", "square", "triangle"})},
              {"include_ref_in_targets", true},
              {"max_no_target_per_scene", 2}};
  j["train"] = {{"d", 64},
                {"layers", 3},
                {"heads", 4},
                {"ffn_hidden", 128},
                {"pos_weight", 5.0},
                {"threshold", 0.5},
                {"base_lr", 3e-4},
                {"warmup_frac", 0.03},
                {"beta1", 0.9},
                {"beta2", 0.999},
                {"adam_eps", 1e-8},
                {"weight_decay", 0.0},
                {"batch_size", 32},
                {"epochs", 10},
                {"special_token_mode", "distinct"},
                {"max_candidates", 24},
                {"max_seq_len", 128},
                {"normalize_by_weight_sum", false},
                {"decoder", "nonar"},
                {"init_std", 0.02}};
  j["eval"] = {{"oracle", false},   {"zero_ref", false}, {"provenance", ""}, {"overlays", 0},
               {"min_giou", -1.0},  {"min_ciou", -1.0},  {"min_nacc", -1.0}};
  j["oracle"] = {{"p_miss_grid", Json::array({0.0, 0.25, 0.5, 1.0})},
                 {"distractor_grid", Json::array({4})}};
  j["ablate"] = {{"axis", "decoder"}, {"epochs", 4}, {"latency_samples", 200}};
  return j;
}

namespace detail {

inline void merge_checked(Json& base, const Json& user, const std::string& prefix) {
  for (auto it = user.begin(); it != user.end(); ++it) {
    std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) fail(ErrorCode::ConfigInvalid, "unknown config key '" + path + "'");
    Json& slot = base[it.key()];
    if (slot.is_object()) {
      if (!it->is_object())
        fail(ErrorCode::ConfigInvalid, "config key '" + path + "' must be an object");
      merge_checked(slot, *it, path);
    } else {
      bool ok = (slot.is_boolean() && it->is_boolean()) ||
                (slot.is_number() && it->is_number()) ||
                (slot.is_string() && it->is_string()) || (slot.is_array() && it->is_array());
      if (!ok) fail(ErrorCode::ConfigInvalid, "config key '" + path + "' has the wrong type");
      slot = *it;
    }
  }
}

inline Json parse_override_value(const Json& slot, const std::string& value,
                                 const std::string& path) {
  if (slot.is_string()) return value;
  Json parsed = Json::parse(value, nullptr, false);
  if (slot.is_array()) {
    if (!parsed.is_discarded() && parsed.is_array()) return parsed;
    // fall back to comma-separated scalars
    Json arr = Json::array();
    std::string item;
    std::stringstream ss(value);
    while (std::getline(ss, item, ','))
      if (!item.empty()) {
        Json v = Json::parse(item, nullptr, false);
        arr.push_back(v.is_discarded() ? Json(item) : v);
      }
    return arr;
  }
  if (parsed.is_discarded() || parsed.is_object() || parsed.is_array())
    fail(ErrorCode::ConfigInvalid, "cannot parse override for '" + path + "': " + value);
  if (slot.is_boolean() && !parsed.is_boolean())
    fail(ErrorCode::ConfigInvalid, "override for '" + path + "' must be true/false");
  if (slot.is_number() && !parsed.is_number())
    fail(ErrorCode::ConfigInvalid, "override for '" + path + "' must be a number");
  return parsed;
}

}  // namespace detail

/// Config file merged over the defaults; flags always win over the file.
inline Json load_config(const std::string& config_path,
                        const std::vector<std::pair<std::string, std::string>>& overrides = {}) {
  Json cfg = default_config();
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) fail(ErrorCode::IoError, "cannot open config " + config_path);
    Json user = Json::parse(in, nullptr, false);
    if (user.is_discarded()) fail(ErrorCode::ConfigInvalid, "invalid JSON in " + config_path);
    detail::merge_checked(cfg, user, "");
  }
  for (const auto& [dotted, value] : overrides) {
    Json* slot = &cfg;
    std::string rest = dotted;
    while (true) {
      size_t dot = rest.find('.');
      std::string head = rest.substr(0, dot);
      if (!slot->contains(head))
        fail(ErrorCode::ConfigInvalid, "unknown config key '" + dotted + "'");
      slot = &(*slot)[head];
      if (dot == std::string::npos) break;
      rest = rest.substr(dot + 1);
    }
    if (slot->is_object()) fail(ErrorCode::ConfigInvalid, "'" + dotted + "' is not a leaf key");
    *slot = detail::parse_override_value(*slot, value, dotted);
  }
  return cfg;
}

/// Dotted leaf paths of the config schema, for CLI flag registration.
inline void config_leaves(const Json& j, const std::string& prefix,
                          std::vector<std::string>& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object())
      config_leaves(*it, path, out);
    else
      out.push_back(path);
  }
}

// ---------------------------------------------------------------------------
// Conversions from the config document to module configs

inline SceneConfig scene_config(const Json& cfg) {
  SceneConfig s;
  s.width = cfg.at("scene").at("width").get<int>();
  s.height = cfg.at("scene").at("height").get<int>();
  s.min_shapes = cfg.at("scene").at("min_shapes").get<int>();
  s.max_shapes = cfg.at("scene").at("max_shapes").get<int>();
  if (s.min_shapes < 1 || s.max_shapes < s.min_shapes)
    fail(ErrorCode::ConfigInvalid, "invalid shape count bounds");
  return s;
}

inline GenConfig gen_config(const Json& cfg) {
  const Json& g = cfg.at("gen");
  GenConfig out;
  out.theta_merge = g.at("theta_merge").get<double>();
  out.delta_pos = g.at("delta_pos").get<double>();
  out.p_miss = g.at("p_miss").get<double>();
  out.distractors_per_scene = g.at("distractors_per_scene").get<int>();
  for (const auto& id : g.at("exclusion_ids")) out.exclusion_ids.insert(id.get<int>());
  out.seed = cfg.at("seed").get<uint64_t>();
  out.rules.clear();
  for (const auto& r : g.at("rules")) out.rules.insert(provenance_from_name(r.get<std::string>()));
  out.attribute_filter = g.at("attribute_filter").get<std::vector<std::string>>();
  out.label_universe = g.at("label_universe").get<std::vector<std::string>>();
  out.include_ref_in_targets = g.at("include_ref_in_targets").get<bool>();
  out.max_no_target_per_scene = g.at("max_no_target_per_scene").get<int>();
  if (out.theta_merge <= 0 || out.theta_merge > 1)
    fail(ErrorCode::ConfigInvalid, "theta_merge must be in (0,1]");
  if (out.delta_pos < 0 || out.delta_pos >= 0.5)
    fail(ErrorCode::ConfigInvalid, "delta_pos must be in [0,0.5)");
  if (out.p_miss < 0 || out.p_miss > 1)
    fail(ErrorCode::ConfigInvalid, "p_miss must be in [0,1]");
  return out;
}

inline TrainConfig train_config(const Json& cfg) {
  const Json& t = cfg.at("train");
  TrainConfig out;
  out.d = t.at("d").get<int>();
  out.layers = t.at("layers").get<int>();
  out.heads = t.at("heads").get<int>();
  out.ffn_hidden = t.at("ffn_hidden").get<int>();
  out.pos_weight = t.at("pos_weight").get<double>();
  out.threshold = t.at("threshold").get<double>();
  out.base_lr = t.at("base_lr").get<double>();
  out.warmup_frac = t.at("warmup_frac").get<double>();
  out.beta1 = t.at("beta1").get<double>();
  out.beta2 = t.at("beta2").get<double>();
  out.adam_eps = t.at("adam_eps").get<double>();
  out.weight_decay = t.at("weight_decay").get<double>();
  out.batch_size = t.at("batch_size").get<int>();
  out.epochs = t.at("epochs").get<int>();
  out.seed = cfg.at("seed").get<uint64_t>();
  out.special_token_mode = token_mode_from_name(t.at("special_token_mode").get<std::string>());
  out.max_candidates = t.at("max_candidates").get<int>();
  out.max_seq_len = t.at("max_seq_len").get<int>();
  out.normalize_by_weight_sum = t.at("normalize_by_weight_sum").get<bool>();
  out.decoder = decoder_from_name(t.at("decoder").get<std::string>());
  out.init_std = t.at("init_std").get<double>();
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Shared plumbing

inline void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot open " + path + " for writing");
  out << content;
}

/// Effective config echo plus a timestamp sidecar; the sidecar is the only
/// artifact carrying wall-clock state, so payload outputs stay reproducible.
inline void echo_run(const Json& cfg, const std::string& command) {
  std::string dir = cfg.at("paths").at("report_dir").get<std::string>();
  std::filesystem::create_directories(dir);
  write_text(dir + "/effective_config.json", cfg.dump(2) + "\n");
  std::time_t now = std::time(nullptr);
  char buf[64];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  write_text(dir + "/run_info.txt", command + " at " + buf + "\n");
}

struct SceneBundle {
  std::vector<SceneAnnotation> scenes;
  std::map<int, std::vector<FeatureMap>> features;
  std::map<int, Image> images;
};

inline SceneBundle load_scene_bundle(const std::string& path) {
  SceneBundle b;
  b.scenes = read_scenes(path);
  for (const auto& s : b.scenes) {
    Image img = render_annotation(s);
    b.features[s.scene_id] = encode_ensemble(img);
    b.images[s.scene_id] = std::move(img);
  }
  return b;
}

/// Vocabulary covering every template over the synthetic label sets plus all
/// prompts present in the given datasets (free-form expressions included).
inline Vocab pipeline_vocab(const Json& cfg, const std::vector<const std::vector<GroupSample>*>& datasets) {
  std::vector<std::string> categories = cfg.at("gen").at("label_universe").get<std::vector<std::string>>();
  std::vector<std::string> attributes;
  for (const auto& c : kPalette) attributes.push_back(c.name);
  attributes.push_back("small");
  attributes.push_back("large");
  std::vector<std::string> prompts = vocabulary_strings(categories, attributes, {"touching"});
  for (const auto* ds : datasets)
    for (const auto& s : *ds) prompts.push_back(s.prompt);
  return build_vocab(prompts);
}

inline std::vector<TrainingSample> prepare_samples(const std::vector<GroupSample>& dataset,
                                                   const SceneBundle& bundle, const Vocab& vocab,
                                                   const TrainConfig& tcfg) {
  // pooled features are cached per scene and candidate RLE, since every sample
  // of a scene shares the same candidate list
  std::map<int, std::map<std::vector<int>, std::vector<double>>> cache;
  std::vector<TrainingSample> out;
  out.reserve(dataset.size());
  for (size_t i = 0; i < dataset.size(); ++i) {
    const GroupSample& gs = dataset[i];
    auto fit = bundle.features.find(gs.scene_id);
    if (fit == bundle.features.end())
      fail(ErrorCode::IdMismatch, "dataset references unknown scene " + std::to_string(gs.scene_id));
    Mat pooled(Eigen::Index(gs.candidates.size()), ensemble_channels(default_ensemble()));
    auto& scene_cache = cache[gs.scene_id];
    for (size_t c = 0; c < gs.candidates.size(); ++c) {
      auto key = gs.candidates[c].counts;
      key.push_back(gs.candidates[c].width);
      key.push_back(gs.candidates[c].height);
      auto cit = scene_cache.find(key);
      if (cit == scene_cache.end()) {
        auto vec = pool_ensemble(fit->second, rle_decode(gs.candidates[c]));
        cit = scene_cache.emplace(std::move(key), std::move(vec)).first;
      }
      for (size_t k = 0; k < cit->second.size(); ++k)
        pooled(Eigen::Index(c), Eigen::Index(k)) = cit->second[k];
    }
    out.push_back(make_training_sample(gs, pooled, vocab, tcfg, int(i)));
  }
  return out;
}

inline std::vector<GroupPrediction> predict_dataset(const ModelParams& params,
                                                    const std::vector<TrainingSample>& samples,
                                                    DecoderKind decoder, bool zero_ref = false) {
  std::vector<GroupPrediction> preds;
  preds.reserve(samples.size());
  for (const auto& ts : samples) preds.push_back(predict_with(params, ts, decoder, zero_ref));
  return preds;
}

// ---------------------------------------------------------------------------
// Commands

inline int cmd_synth(const Json& cfg) {
  echo_run(cfg, "synth");
  SceneConfig scfg = scene_config(cfg);
  uint64_t seed = cfg.at("seed").get<uint64_t>();
  int count = cfg.at("scene").at("count").get<int>();
  int offset = cfg.at("scene").at("id_offset").get<int>();

  Rng root = Rng(seed).child("synth");
  std::vector<SceneAnnotation> scenes;
  std::vector<SynthScene> raw;
  for (int i = 0; i < count; ++i) {
    int scene_id = offset + i;
    Rng child = root.child("scene", uint64_t(scene_id));
    SynthScene s = sample_scene(child, scfg, scene_id);
    scenes.push_back(s.annotation);
    raw.push_back(std::move(s));
  }
  write_scenes(scenes, cfg.at("paths").at("scenes").get<std::string>());

  if (cfg.at("scene").at("write_pngs").get<bool>()) {
    std::string dir = cfg.at("paths").at("report_dir").get<std::string>();
    for (const auto& s : raw)
      write_png(dir + "/scene_" + std::to_string(s.scene_id) + ".png", render(s));
  }
  return kExitOk;
}

inline int cmd_datagen(const Json& cfg) {
  echo_run(cfg, "datagen");
  auto scenes = read_scenes(cfg.at("paths").at("scenes").get<std::string>());
  GenConfig gcfg = gen_config(cfg);
  std::vector<FreeformRecord> freeform;
  std::string ff_path = cfg.at("paths").at("freeform").get<std::string>();
  if (!ff_path.empty()) freeform = read_freeform(ff_path);

  auto dataset = build_dataset(scenes, gcfg, freeform);
  write_dataset(dataset, cfg.at("paths").at("dataset").get<std::string>());

  Json summary;
  for (const auto& [k, v] : dataset_summary(dataset)) summary[k] = v;
  std::string dir = cfg.at("paths").at("report_dir").get<std::string>();
  write_text(dir + "/datagen_summary.json", summary.dump(2) + "\n");
  return kExitOk;
}

inline int cmd_train(const Json& cfg) {
  echo_run(cfg, "train");
  TrainConfig tcfg = train_config(cfg);
  SceneBundle bundle = load_scene_bundle(cfg.at("paths").at("scenes").get<std::string>());
  auto dataset = read_dataset(cfg.at("paths").at("dataset").get<std::string>());

  std::vector<GroupSample> holdout;
  SceneBundle holdout_bundle;
  std::string hd = cfg.at("paths").at("holdout_dataset").get<std::string>();
  std::string hs = cfg.at("paths").at("holdout_scenes").get<std::string>();
  if (!hd.empty()) {
    holdout = read_dataset(hd);
    holdout_bundle = hs.empty() ? load_scene_bundle(cfg.at("paths").at("scenes").get<std::string>())
                                : load_scene_bundle(hs);
  }

  std::string resume_path = cfg.at("paths").at("resume").get<std::string>();
  Checkpoint resume;
  bool resuming = !resume_path.empty();
  if (resuming) resume = load_checkpoint(resume_path);

  Vocab vocab = resuming ? resume.vocab : pipeline_vocab(cfg, {&dataset, &holdout});
  auto samples = prepare_samples(dataset, bundle, vocab, tcfg);
  std::vector<TrainingSample> holdout_samples;
  if (!holdout.empty()) holdout_samples = prepare_samples(holdout, holdout_bundle, vocab, tcfg);

  std::function<double(const ModelParams&)> eval_cb;
  if (!holdout.empty())
    eval_cb = [&](const ModelParams& p) {
      return evaluate(predict_dataset(p, holdout_samples, p.cfg.decoder), holdout).giou;
    };

  const int feat_dim = ensemble_channels(default_ensemble());
  int64_t spe = (int64_t(samples.size()) + tcfg.batch_size - 1) / tcfg.batch_size;
  TrainResult result =
      resuming ? train(samples, tcfg, vocab.size(), feat_dim, eval_cb, &resume.params, resume.step,
                       resume.total_steps + spe * tcfg.epochs)
               : train(samples, tcfg, vocab.size(), feat_dim, eval_cb);

  save_checkpoint(cfg.at("paths").at("checkpoint").get<std::string>(), result.params, vocab,
                  result.step, result.total_steps,
                  (resuming ? resume.epoch : 0) + tcfg.epochs);
  std::string dir = cfg.at("paths").at("report_dir").get<std::string>();
  write_text(dir + "/train_log.csv", train_log_csv(result.log));
  return kExitOk;
}

inline int cmd_eval(const Json& cfg) {
  echo_run(cfg, "eval");
  auto dataset = read_dataset(cfg.at("paths").at("dataset").get<std::string>());
  SceneBundle bundle = load_scene_bundle(cfg.at("paths").at("scenes").get<std::string>());

  std::string prov_filter = cfg.at("eval").at("provenance").get<std::string>();
  if (!prov_filter.empty()) {
    Provenance want = provenance_from_name(prov_filter);
    std::vector<GroupSample> filtered;
    for (auto& s : dataset)
      if (s.provenance == want) filtered.push_back(std::move(s));
    dataset = std::move(filtered);
  }

  std::vector<GroupPrediction> preds;
  if (cfg.at("eval").at("oracle").get<bool>()) {
    preds = oracle_predictions(dataset);
  } else {
    Checkpoint ck = load_checkpoint(cfg.at("paths").at("checkpoint").get<std::string>());
    auto samples = prepare_samples(dataset, bundle, ck.vocab, ck.params.cfg);
    preds = predict_dataset(ck.params, samples, ck.params.cfg.decoder,
                            cfg.at("eval").at("zero_ref").get<bool>());
  }

  EvalReport report = evaluate(preds, dataset);
  std::string dir = cfg.at("paths").at("report_dir").get<std::string>();
  write_text(dir + "/eval_report.json", report_to_json(report).dump(2) + "\n");
  write_text(dir + "/eval_report.csv", report_to_csv(report));

  int overlays = cfg.at("eval").at("overlays").get<int>();
  for (int i = 0; i < overlays && i < int(dataset.size()); ++i) {
    const GroupSample& s = dataset[size_t(i)];
    std::vector<BinaryMask> masks;
    for (int sel : preds[size_t(i)].selected) masks.push_back(rle_decode(s.candidates[size_t(sel)]));
    render_overlay(bundle.images.at(s.scene_id), masks,
                   dir + "/overlay_" + std::to_string(i) + ".png");
  }

  double min_giou = cfg.at("eval").at("min_giou").get<double>();
  double min_ciou = cfg.at("eval").at("min_ciou").get<double>();
  double min_nacc = cfg.at("eval").at("min_nacc").get<double>();
  bool gate_fail = (min_giou >= 0 && report.giou < min_giou) ||
                   (min_ciou >= 0 && report.ciou < min_ciou) ||
                   (min_nacc >= 0 && (!report.n_acc || *report.n_acc < min_nacc));
  return gate_fail ? kExitGate : kExitOk;
}

inline int cmd_oracle(const Json& cfg) {
  echo_run(cfg, "oracle");
  auto scenes = read_scenes(cfg.at("paths").at("scenes").get<std::string>());
  GenConfig gcfg = gen_config(cfg);
  auto p_grid = cfg.at("oracle").at("p_miss_grid").get<std::vector<double>>();
  auto d_grid = cfg.at("oracle").at("distractor_grid").get<std::vector<int>>();
  auto rows = oracle_sweep(scenes, gcfg, p_grid, d_grid);
  std::string dir = cfg.at("paths").at("report_dir").get<std::string>();
  write_text(dir + "/oracle_sweep.csv", sweep_to_csv(rows));
  return kExitOk;
}

struct AblationRow {
  std::string arm;
  double giou = 0.0, ciou = 0.0;
  std::optional<double> n_acc;
  double latency = 0.0;
};

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "arm,giou,ciou,n_acc,latency\n";
  for (const auto& r : rows)
    out += r.arm + ',' + format_double(r.giou) + ',' + format_double(r.ciou) + ',' +
           (r.n_acc ? format_double(*r.n_acc) : std::string()) + ',' + format_double(r.latency) +
           '\n';
  return out;
}

/// Train and evaluate every arm of the requested ablation axis under a shared
/// seed and budget, and time both decoders' inference.
inline std::vector<AblationRow> run_ablation(const Json& cfg) {
  TrainConfig base = train_config(cfg);
  base.epochs = cfg.at("ablate").at("epochs").get<int>();
  SceneBundle bundle = load_scene_bundle(cfg.at("paths").at("scenes").get<std::string>());
  auto dataset = read_dataset(cfg.at("paths").at("dataset").get<std::string>());
  std::string hd = cfg.at("paths").at("holdout_dataset").get<std::string>();
  if (hd.empty()) fail(ErrorCode::ConfigInvalid, "ablate requires paths.holdout_dataset");
  auto holdout = read_dataset(hd);
  std::string hs = cfg.at("paths").at("holdout_scenes").get<std::string>();
  SceneBundle hbundle = hs.empty() ? load_scene_bundle(cfg.at("paths").at("scenes").get<std::string>())
                                   : load_scene_bundle(hs);
  Vocab vocab = pipeline_vocab(cfg, {&dataset, &holdout});
  const int feat_dim = ensemble_channels(default_ensemble());
  size_t lat_n = size_t(cfg.at("ablate").at("latency_samples").get<int>());

  std::string axis = cfg.at("ablate").at("axis").get<std::string>();
  std::vector<std::pair<std::string, TrainConfig>> arms;
  if (axis == "decoder") {
    TrainConfig non = base, ar = base;
    non.decoder = DecoderKind::NonAr;
    ar.decoder = DecoderKind::Ar;
    arms = {{"nonar", non}, {"ar", ar}};
  } else if (axis == "special_tokens") {
    for (TokenMode m : {TokenMode::None, TokenMode::Shared, TokenMode::Distinct}) {
      TrainConfig c = base;
      c.special_token_mode = m;
      arms.emplace_back(token_mode_name(m), c);
    }
  } else {
    fail(ErrorCode::ConfigInvalid, "ablate.axis must be 'decoder' or 'special_tokens'");
  }

  std::vector<AblationRow> rows;
  for (auto& [name, tcfg] : arms) {
    auto samples = prepare_samples(dataset, bundle, vocab, tcfg);
    auto hsamples = prepare_samples(holdout, hbundle, vocab, tcfg);
    TrainResult r = train(samples, tcfg, vocab.size(), feat_dim);
    EvalReport rep = evaluate(predict_dataset(r.params, hsamples, tcfg.decoder), holdout);
    AblationRow row;
    row.arm = name;
    row.giou = rep.giou;
    row.ciou = rep.ciou;
    row.n_acc = rep.n_acc;
    row.latency = latency_bench(r.params, hsamples, tcfg.decoder, lat_n);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline int cmd_ablate(const Json& cfg) {
  echo_run(cfg, "ablate");
  auto rows = run_ablation(cfg);
  std::string dir = cfg.at("paths").at("report_dir").get<std::string>();
  write_text(dir + "/ablate.csv", ablation_csv(rows));
  return kExitOk;
}

}  // namespace ras
