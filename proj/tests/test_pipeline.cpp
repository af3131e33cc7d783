#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "ras/pipeline.hpp"

using namespace ras;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

struct TempDir {
  fs::path path;
  TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("ras_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

Json tiny_config(const TempDir& dir) {
  Json cfg = default_config();
  cfg["seed"] = 11;
  cfg["scene"]["count"] = 6;
  cfg["scene"]["min_shapes"] = 2;
  cfg["scene"]["max_shapes"] = 4;
  cfg["paths"]["scenes"] = dir / "scenes.json";
  cfg["paths"]["dataset"] = dir / "data.jsonl";
  cfg["paths"]["checkpoint"] = dir / "ck.bin";
  cfg["paths"]["report_dir"] = dir / "report";
  cfg["train"]["d"] = 16;
  cfg["train"]["layers"] = 1;
  cfg["train"]["ffn_hidden"] = 32;
  cfg["train"]["epochs"] = 1;
  cfg["train"]["batch_size"] = 8;
  return cfg;
}

}  // namespace

TEST_CASE("config: unknown keys and wrong types are rejected") {
  TempDir dir("cfg");
  write_text(dir / "bad1.json", "{\"trian\": {}}");
  CHECK_THROWS_AS(load_config(dir / "bad1.json"), Error);
  write_text(dir / "bad2.json", "{\"train\": {\"epochs\": \"five\"}}");
  CHECK_THROWS_AS(load_config(dir / "bad2.json"), Error);
  write_text(dir / "bad3.json", "{\"train\": {\"zzz\": 1}}");
  CHECK_THROWS_AS(load_config(dir / "bad3.json"), Error);
  CHECK_THROWS_AS(load_config("", {{"train.nope", "1"}}), Error);
}

TEST_CASE("config: flags override the file") {
  TempDir dir("cfg2");
  write_text(dir / "c.json", "{\"seed\": 5, \"train\": {\"epochs\": 7}}");
  Json cfg = load_config(dir / "c.json", {{"train.epochs", "9"}, {"gen.p_miss", "0.25"},
                                          {"oracle.p_miss_grid", "[0,1]"},
                                          {"gen.rules", "category,no_target"}});
  CHECK(cfg["seed"] == 5);
  CHECK(cfg["train"]["epochs"] == 9);
  CHECK(cfg["gen"]["p_miss"] == 0.25);
  CHECK(cfg["oracle"]["p_miss_grid"] == Json::array({0, 1}));
  CHECK(cfg["gen"]["rules"] == Json::array({"category", "no_target"}));
}

TEST_CASE("synth: deterministic output, empty file is valid") {
  TempDir dir("synth");
  Json cfg = tiny_config(dir);
  REQUIRE(cmd_synth(cfg) == kExitOk);
  std::string first = slurp(cfg["paths"]["scenes"].get<std::string>());
  REQUIRE(cmd_synth(cfg) == kExitOk);
  CHECK(slurp(cfg["paths"]["scenes"].get<std::string>()) == first);

  cfg["scene"]["count"] = 0;
  cfg["paths"]["scenes"] = dir / "empty.json";
  REQUIRE(cmd_synth(cfg) == kExitOk);
  auto scenes = read_scenes(dir / "empty.json");
  CHECK(scenes.empty());
}

TEST_CASE("datagen: summary counts, exclusions, reproducibility") {
  TempDir dir("datagen");
  Json cfg = tiny_config(dir);
  REQUIRE(cmd_synth(cfg) == kExitOk);
  REQUIRE(cmd_datagen(cfg) == kExitOk);
  std::string bytes = slurp(cfg["paths"]["dataset"].get<std::string>());

  auto dataset = read_dataset(cfg["paths"]["dataset"].get<std::string>());
  Json summary = Json::parse(slurp(std::string(cfg["paths"]["report_dir"].get<std::string>()) +
                                   "/datagen_summary.json"));
  int total = 0;
  for (auto it = summary.begin(); it != summary.end(); ++it)
    if (it.key() != "total") total += it->get<int>();
  CHECK(total == summary["total"].get<int>());
  CHECK(size_t(summary["total"].get<int>()) == dataset.size());

  REQUIRE(cmd_datagen(cfg) == kExitOk);
  CHECK(slurp(cfg["paths"]["dataset"].get<std::string>()) == bytes);

  // exclusion removes every sample of the excluded scene
  cfg["gen"]["exclusion_ids"] = Json::array({0, 1});
  cfg["paths"]["dataset"] = dir / "excl.jsonl";
  REQUIRE(cmd_datagen(cfg) == kExitOk);
  for (const auto& s : read_dataset(dir / "excl.jsonl")) {
    CHECK(s.scene_id != 0);
    CHECK(s.scene_id != 1);
  }
}

TEST_CASE("train and eval: checkpoints, reports, gating") {
  TempDir dir("train");
  Json cfg = tiny_config(dir);
  REQUIRE(cmd_synth(cfg) == kExitOk);
  REQUIRE(cmd_datagen(cfg) == kExitOk);

  // holdout = same scenes/dataset for this smoke check
  cfg["paths"]["holdout_scenes"] = cfg["paths"]["scenes"];
  cfg["paths"]["holdout_dataset"] = cfg["paths"]["dataset"];
  REQUIRE(cmd_train(cfg) == kExitOk);
  std::string ck1 = slurp(cfg["paths"]["checkpoint"].get<std::string>());
  REQUIRE(cmd_train(cfg) == kExitOk);
  CHECK(slurp(cfg["paths"]["checkpoint"].get<std::string>()) == ck1);

  std::string log = slurp(std::string(cfg["paths"]["report_dir"].get<std::string>()) + "/train_log.csv");
  CHECK(log.starts_with("epoch,loss,mask_acc,holdout_giou\n"));

  REQUIRE(cmd_eval(cfg) == kExitOk);
  std::string report = slurp(std::string(cfg["paths"]["report_dir"].get<std::string>()) + "/eval_report.json");
  REQUIRE(cmd_eval(cfg) == kExitOk);
  CHECK(slurp(std::string(cfg["paths"]["report_dir"].get<std::string>()) + "/eval_report.json") == report);

  // an untrained 1-epoch model cannot reach gIoU 0.99: the gate must trip
  cfg["eval"]["min_giou"] = 0.99;
  CHECK(cmd_eval(cfg) == kExitGate);
}

TEST_CASE("train: epochs 0 writes the initialization, resume continues steps") {
  TempDir dir("resume");
  Json cfg = tiny_config(dir);
  REQUIRE(cmd_synth(cfg) == kExitOk);
  REQUIRE(cmd_datagen(cfg) == kExitOk);

  cfg["train"]["epochs"] = 0;
  REQUIRE(cmd_train(cfg) == kExitOk);
  Checkpoint init = load_checkpoint(cfg["paths"]["checkpoint"].get<std::string>());
  CHECK(init.step == 0);

  cfg["train"]["epochs"] = 2;
  REQUIRE(cmd_train(cfg) == kExitOk);
  Checkpoint trained = load_checkpoint(cfg["paths"]["checkpoint"].get<std::string>());
  CHECK(trained.step > 0);

  cfg["paths"]["resume"] = cfg["paths"]["checkpoint"];
  cfg["paths"]["checkpoint"] = dir / "ck2.bin";
  cfg["train"]["epochs"] = 1;
  REQUIRE(cmd_train(cfg) == kExitOk);
  Checkpoint resumed = load_checkpoint(dir / "ck2.bin");
  CHECK(resumed.step > trained.step);
  CHECK(resumed.total_steps > trained.total_steps);
}

TEST_CASE("eval --oracle scores a p_miss=0 dataset perfectly") {
  TempDir dir("oracle");
  Json cfg = tiny_config(dir);
  REQUIRE(cmd_synth(cfg) == kExitOk);
  REQUIRE(cmd_datagen(cfg) == kExitOk);
  cfg["eval"]["oracle"] = true;
  REQUIRE(cmd_eval(cfg) == kExitOk);
  Json report = Json::parse(slurp(std::string(cfg["paths"]["report_dir"].get<std::string>()) +
                                  "/eval_report.json"));
  CHECK(report["ciou"].get<double>() == 1.0);
  CHECK(report["giou"].get<double>() == 1.0);
}

TEST_CASE("oracle sweep command writes the full grid") {
  TempDir dir("sweep");
  Json cfg = tiny_config(dir);
  REQUIRE(cmd_synth(cfg) == kExitOk);
  cfg["oracle"]["p_miss_grid"] = Json::array({0.0, 1.0});
  cfg["oracle"]["distractor_grid"] = Json::array({2, 4});
  REQUIRE(cmd_oracle(cfg) == kExitOk);
  std::string csv = slurp(std::string(cfg["paths"]["report_dir"].get<std::string>()) + "/oracle_sweep.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);  // header + 2x2 grid
  CHECK(csv.find("0,2,1\n") != std::string::npos);       // p_miss 0 -> oracle ciou exactly 1
}

TEST_CASE("ablate: both axes produce one row per arm") {
  TempDir dir("ablate");
  Json cfg = tiny_config(dir);
  REQUIRE(cmd_synth(cfg) == kExitOk);
  REQUIRE(cmd_datagen(cfg) == kExitOk);
  cfg["paths"]["holdout_scenes"] = cfg["paths"]["scenes"];
  cfg["paths"]["holdout_dataset"] = cfg["paths"]["dataset"];
  cfg["ablate"]["epochs"] = 1;
  cfg["ablate"]["latency_samples"] = 10;

  auto rows = run_ablation(cfg);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].arm == "nonar");
  CHECK(rows[1].arm == "ar");
  CHECK(rows[0].latency > 0.0);
  CHECK(rows[1].latency > 0.0);

  cfg["ablate"]["axis"] = "special_tokens";
  auto trows = run_ablation(cfg);
  REQUIRE(trows.size() == 3);
  CHECK(trows[0].arm == "none");
  CHECK(trows[1].arm == "shared");
  CHECK(trows[2].arm == "distinct");

  REQUIRE(cmd_ablate(cfg) == kExitOk);
  std::string csv = slurp(std::string(cfg["paths"]["report_dir"].get<std::string>()) + "/ablate.csv");
  CHECK(csv.starts_with("arm,giou,ciou,n_acc,latency\n"));
}
