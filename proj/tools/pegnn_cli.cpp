// pegnn: data generation, training, evaluation and parameter accounting.
//
// Exit codes: 0 ok, 2 configuration, 3 i/o, 4 divergence, 5 checkpoint
// incompatibility.

#include <CLI11.hpp>
#include <iostream>

#include "pegnn/commands.hpp"
#include "pegnn/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Perturbed E(n)-equivariant graph networks on the charged N-body task"};
  app.set_version_flag("--version", std::string(pegnn::version_string()));
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;

  auto* gen = app.add_subcommand("generate", "simulate train/val/test datasets");
  gen->add_option("--config", config_path, "run configuration")->required();
  gen->add_option("--out", out_dir, "output directory")->required();

  pegnn::TrainOptions train_opt;
  std::string train_config, data_dir, train_out, mode;
  std::uint64_t seed = 0;
  int max_epochs = 0;
  auto* tr = app.add_subcommand("train", "train one model (or one ensemble)");
  tr->add_option("--config", train_config)->required();
  tr->add_option("--data", data_dir, "directory holding train.bin and val.bin")->required();
  tr->add_option("--out", train_out)->required();
  auto* seed_opt = tr->add_option("--seed", seed);
  auto* mode_opt = tr->add_option("--mode", mode, "deterministic | ensemble | crps");
  tr->add_flag("--resume", train_opt.resume, "continue from <out>/train_state.bin");
  auto* max_opt = tr->add_option("--max-epochs-this-run", max_epochs)->check(CLI::PositiveNumber);

  pegnn::EvaluateOptions eval_opt;
  std::vector<std::string> ckpts;
  std::string test_path, eval_config, eval_csv;
  auto* ev = app.add_subcommand("evaluate", "score checkpoints on a test set");
  ev->add_option("--checkpoints", ckpts, "checkpoint files or ensemble directories")->required();
  ev->add_option("--test", test_path)->required();
  ev->add_option("--K", eval_opt.k, "noise draws per structure")->capture_default_str();
  ev->add_option("--seeds", eval_opt.seeds, "evaluation noise seeds")->capture_default_str();
  auto* eval_config_opt = ev->add_option("--config", eval_config, "check compatibility against this config");
  auto* eval_csv_opt = ev->add_option("--out", eval_csv, "metrics CSV path (default: stdout)");

  std::string params_config;
  auto* pa = app.add_subcommand("params", "print parameter accounting");
  pa->add_option("--config", params_config)->required();

  pegnn::SweepOptions sweep_opt;
  std::string sweep_config, sweep_out;
  std::vector<std::size_t> sizes;
  std::vector<std::uint64_t> seeds;
  auto* sw = app.add_subcommand("sweep", "training-size x seed sweep over all three models");
  sw->add_option("--config", sweep_config)->required();
  sw->add_option("--out", sweep_out)->required();
  auto* sizes_opt = sw->add_option("--sizes", sizes);
  auto* seeds_opt = sw->add_option("--seeds", seeds);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : pegnn::kExitConfig;
  }

  if (*gen) return pegnn::cmd_generate(config_path, out_dir, std::cout, std::cerr);
  if (*tr) {
    train_opt.config_path = train_config;
    train_opt.data_dir = data_dir;
    train_opt.out_dir = train_out;
    if (*seed_opt) train_opt.seed = seed;
    if (*mode_opt) train_opt.mode = mode;
    if (*max_opt) train_opt.max_epochs_this_run = max_epochs;
    return pegnn::cmd_train(train_opt, std::cout, std::cerr);
  }
  if (*ev) {
    eval_opt.checkpoints.assign(ckpts.begin(), ckpts.end());
    eval_opt.test_path = test_path;
    if (*eval_config_opt) eval_opt.config_path = eval_config;
    if (*eval_csv_opt) eval_opt.out_csv = eval_csv;
    return pegnn::cmd_evaluate(eval_opt, std::cout, std::cerr);
  }
  if (*pa) return pegnn::cmd_params(params_config, std::cout, std::cerr);
  if (*sw) {
    sweep_opt.config_path = sweep_config;
    sweep_opt.out_dir = sweep_out;
    if (*sizes_opt) sweep_opt.sizes = sizes;
    if (*seeds_opt) sweep_opt.seeds = seeds;
    return pegnn::cmd_sweep(sweep_opt, std::cout, std::cerr);
  }
  return pegnn::kExitConfig;
}
