// Stage runner for the federated adapter-tuning pipeline. Subcommands map
// onto the pipeline stages; every run is driven by a JSON config file plus
// --seed / --out overrides.

#include <cstdio>
#include <exception>
#include <functional>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "fedadapt/pipeline.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::int64_t seed = -1;
  std::string out_dir;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "experiment config file")
      ->required();
  cmd->add_option("--seed", args.seed, "override the config seed");
  cmd->add_option("--out", args.out_dir, "override the output directory");
}

fedadapt::ExperimentConfig load_config(const CommonArgs& args) {
  fedadapt::ExperimentConfig cfg =
      fedadapt::ExperimentConfig::load(args.config_path);
  if (args.seed >= 0) {
    cfg.seed = static_cast<std::uint64_t>(args.seed);
    cfg.seed_set = true;
  }
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  return cfg;
}

int run_stage(const CommonArgs& args,
              const std::function<fedadapt::StageResult(
                  const fedadapt::ExperimentConfig&)>& stage) {
  try {
    const fedadapt::StageResult result = stage(load_config(args));
    for (const auto& [key, value] : result.metrics)
      std::cout << key << " = " << value << '\n';
    if (!result.checkpoint_path.empty())
      std::cout << "checkpoint: " << result.checkpoint_path << '\n';
    if (!result.manifest_path.empty())
      std::cout << "manifest: " << result.manifest_path << '\n';
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated adapter tuning simulator"};
  app.require_subcommand(1);

  struct Sub {
    const char* name;
    const char* help;
    fedadapt::StageResult (*fn)(const fedadapt::ExperimentConfig&);
  };
  const Sub subs[] = {
      {"make-data", "generate and pin dataset fixtures",
       fedadapt::stage_make_data},
      {"pretrain-encoder", "stage 1: masked-prediction encoder pretraining",
       fedadapt::stage_pretrain_encoder},
      {"pretrain-decoder",
       "stage 2: train decoder (and optionally adapters) on the source domain",
       fedadapt::stage_pretrain_decoder},
      {"fedtune", "stage 3: federated adapter tuning on the target domain",
       fedadapt::stage_fedtune},
      {"centralized-tune", "centralized adapter tuning on the target domain",
       fedadapt::stage_centralized_tune},
      {"ablation", "federated vs centralized arms with matched sample budgets",
       fedadapt::stage_ablation},
      {"eval", "evaluate a checkpoint on the configured eval fixtures",
       fedadapt::stage_eval},
      {"params-report", "parameter/communication accounting report",
       fedadapt::stage_params_report},
  };

  CommonArgs args[std::size(subs)];
  CLI::App* cmds[std::size(subs)];
  for (std::size_t i = 0; i < std::size(subs); ++i) {
    cmds[i] = app.add_subcommand(subs[i].name, subs[i].help);
    add_common(cmds[i], args[i]);
  }

  CLI11_PARSE(app, argc, argv);

  for (std::size_t i = 0; i < std::size(subs); ++i)
    if (cmds[i]->parsed()) return run_stage(args[i], subs[i].fn);
  return 1;
}
