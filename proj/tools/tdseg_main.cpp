#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>

#include "tdseg/commands.hpp"

using tdseg::RunConfig;

namespace {

// relative --out paths land under TDSEG_OUT_ROOT when it is set
void apply_out_root(RunConfig& cfg) {
  const char* root = std::getenv("TDSEG_OUT_ROOT");
  if (!root || cfg.out_dir.empty() || cfg.out_dir.front() == '/') return;
  cfg.out_dir = std::string(root) + "/" + cfg.out_dir;
}

void add_common(CLI::App* cmd, RunConfig& cfg) {
  cmd->add_option("--out", cfg.out_dir, "output directory")->required();
  cmd->add_option("--seed", cfg.seed, "root random seed");
}

void add_model_flags(CLI::App* cmd, RunConfig& cfg) {
  cmd->add_option("--data", cfg.data_dir, "dataset directory")->required();
  cmd->add_option("--arch", cfg.arch_path, "architecture config file")->required();
  cmd->add_option("--k", cfg.classes, "number of classes including background");
  cmd->add_option("--init", cfg.init, "seeding strategy: gt | top1 | threshold");
  cmd->add_option("--theta-attention", cfg.theta_attention, "confidence threshold for seeding");
  cmd->add_option("--modulation", cfg.modulation, "fusion mode: add | mul | concat");
  cmd->add_option("--levels", cfg.levels, "decoder levels");
  cmd->add_option("--inputs", cfg.inputs, "decoder inputs: both | bu | td");
  cmd->add_option("--alpha-td", cfg.alpha_td, "selection fusion factor");
  cmd->add_option("--alpha-loss", cfg.alpha_loss, "segmentation loss weight");
  cmd->add_option("--theta-pos", cfg.theta_pos, "positive anchor IoU threshold");
  cmd->add_option("--theta-neg", cfg.theta_neg, "negative anchor IoU threshold");
  cmd->add_option("--max-targets", cfg.max_targets, "sampled anchor budget per image");
}

void add_sgd_flags(CLI::App* cmd, RunConfig& cfg) {
  cmd->add_option("--epochs", cfg.epochs, "training epochs");
  cmd->add_option("--lr", cfg.lr, "learning rate");
  cmd->add_option("--momentum", cfg.momentum, "sgd momentum");
  cmd->add_option("--weight-decay", cfg.weight_decay, "weight decay (biases exempt)");
  cmd->add_option("--batch", cfg.batch, "batch size");
  cmd->add_option("--resume", cfg.resume_path, "checkpoint to resume from");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-pass gated segmentation experiments"};
  app.require_subcommand(1);

  RunConfig cfg;

  auto* synth = app.add_subcommand("synth", "generate a synthetic shapes dataset");
  add_common(synth, cfg);
  synth->add_option("--n", cfg.n_train, "training samples");
  synth->add_option("--n-val", cfg.n_val, "validation samples");
  synth->add_option("--canvas", cfg.canvas, "image side length");
  synth->add_option("--k", cfg.classes, "classes including background");

  auto* pretrain = app.add_subcommand("pretrain", "phase 1: encoder + detection head");
  add_common(pretrain, cfg);
  add_model_flags(pretrain, cfg);
  add_sgd_flags(pretrain, cfg);
  pretrain->add_option("--pretrain-epochs", cfg.pretrain_epochs, "phase-1 epochs");

  auto* train = app.add_subcommand("train", "phase 2: joint two-loss training");
  add_common(train, cfg);
  add_model_flags(train, cfg);
  add_sgd_flags(train, cfg);
  train->add_option("--ckpt", cfg.ckpt_path, "phase-1 checkpoint")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  add_common(eval, cfg);
  add_model_flags(eval, cfg);
  eval->add_option("--ckpt", cfg.ckpt_path, "checkpoint to evaluate")->required();
  eval->add_option("--split", cfg.split, "train | val");

  auto* perturb = app.add_subcommand("perturb", "robustness sweep over perturbations");
  add_common(perturb, cfg);
  add_model_flags(perturb, cfg);
  perturb->add_option("--ckpt", cfg.ckpt_path, "checkpoint to evaluate")->required();
  perturb->add_option("--split", cfg.split, "train | val");
  perturb->add_option("--kinds", cfg.kinds, "perturbation kinds");
  perturb->add_option("--sigmas", cfg.sigmas, "perturbation strengths");

  auto* ablate = app.add_subcommand("ablate", "grid over seeding/modulation/levels/inputs");
  add_common(ablate, cfg);
  add_model_flags(ablate, cfg);
  add_sgd_flags(ablate, cfg);
  ablate->add_option("--pretrain-epochs", cfg.pretrain_epochs, "phase-1 epochs");
  ablate->add_option("--inits", cfg.ablate_inits, "seeding strategies to sweep");
  ablate->add_option("--mods", cfg.ablate_mods, "modulations to sweep");
  ablate->add_option("--levels-list", cfg.ablate_levels, "level counts to sweep");
  ablate->add_option("--inputs-list", cfg.ablate_inputs, "decoder inputs to sweep");

  auto* gate = app.add_subcommand("gate-dump", "write gate heatmaps for one sample");
  add_common(gate, cfg);
  add_model_flags(gate, cfg);
  gate->add_option("--ckpt", cfg.ckpt_path, "checkpoint")->required();
  gate->add_option("--split", cfg.split, "train | val");
  gate->add_option("--sample-index", cfg.sample_index, "sample to inspect");

  std::string rerun_path;
  auto* rerun = app.add_subcommand("rerun", "re-execute a persisted config snapshot");
  rerun->add_option("snapshot", rerun_path, "path to config.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) ? 1 : 0;
  }

  try {
    if (rerun->parsed()) {
      cfg = tdseg::load_run_config(rerun_path);
    } else {
      cfg.command = app.get_subcommands().front()->get_name();
      apply_out_root(cfg);
    }
    tdseg::run_command(cfg);
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
