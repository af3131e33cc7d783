// Command-line entry point wiring the pipeline commands together. Every config
// leaf is exposed as a flag of the same dotted name; flags override the file.

#include <CLI11.hpp>
#include <cstdio>

#include "ras/pipeline.hpp"

using namespace ras;

namespace {

int dispatch(const std::string& command, const Json& cfg) {
  if (command == "synth") return cmd_synth(cfg);
  if (command == "datagen") return cmd_datagen(cfg);
  if (command == "train") return cmd_train(cfg);
  if (command == "eval") return cmd_eval(cfg);
  if (command == "oracle") return cmd_oracle(cfg);
  if (command == "ablate") return cmd_ablate(cfg);
  fail(ErrorCode::ConfigInvalid, "unknown command '" + command + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mask-group selection pipeline: scene synthesis, dataset generation, "
               "training, evaluation, oracle sweeps and ablations"};
  app.require_subcommand(1);

  std::string config_path;
  std::map<std::string, std::string> overrides;
  std::vector<std::string> leaves;
  config_leaves(default_config(), "", leaves);

  std::vector<CLI::App*> subs;
  for (const char* name : {"synth", "datagen", "train", "eval", "oracle", "ablate"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "JSON config file; flags override it");
    for (const auto& leaf : leaves) {
      sub->add_option_function<std::string>(
          "--" + leaf, [&overrides, leaf](const std::string& v) { overrides[leaf] = v; });
    }
    subs.push_back(sub);
  }

  CLI11_PARSE(app, argc, argv);

  try {
    Json cfg = load_config(config_path, {overrides.begin(), overrides.end()});
    for (CLI::App* sub : subs)
      if (sub->parsed()) return dispatch(sub->get_name(), cfg);
    return kExitConfig;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.code() == ErrorCode::ConfigInvalid ? kExitConfig : kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
}
