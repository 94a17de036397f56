#ifndef TDSEG_COMMANDS_HPP
#define TDSEG_COMMANDS_HPP

#include <string>
#include <vector>

namespace tdseg {

// One experiment invocation. Serialized verbatim to config.json next to the
// outputs; any command can be rerun from that snapshot and must reproduce its
// outputs byte for byte.
struct RunConfig {
  std::string command;
  std::string out_dir;
  std::string data_dir;
  std::string arch_path;
  std::string ckpt_path;
  std::string resume_path;
  uint64_t seed = 7;

  // synth
  int n_train = 500, n_val = 100, canvas = 64, classes = 4;

  // optimization
  int epochs = 15;
  int pretrain_epochs = 15;
  double lr = 1e-3, momentum = 0.9, weight_decay = 5e-4;
  int batch = 4;

  // model
  std::string init = "threshold";
  double theta_attention = 0.9;
  std::string modulation = "mul";
  int levels = 3;
  std::string inputs = "both";
  double alpha_td = 0.2, alpha_loss = 1.0;
  double theta_pos = 0.5, theta_neg = 0.3;
  int max_targets = 128;

  // eval / perturb / gate-dump
  std::string split = "val";
  std::vector<std::string> kinds = {"uniform", "salt-pepper", "box-occlusion"};
  std::vector<double> sigmas = {0.0, 0.25, 0.45, 0.65};
  int sample_index = 0;

  // ablation grid (empty list = the full axis)
  std::vector<std::string> ablate_inits, ablate_mods, ablate_inputs;
  std::vector<int> ablate_levels;
};

std::string to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::string& path);

// Executes one command; outputs land in cfg.out_dir with a config.json
// snapshot. Throws std::invalid_argument for configuration problems and other
// exceptions for runtime failures.
void run_command(const RunConfig& cfg);

void cmd_synth(const RunConfig& cfg);
void cmd_pretrain(const RunConfig& cfg);
void cmd_train(const RunConfig& cfg);
void cmd_eval(const RunConfig& cfg);
void cmd_perturb(const RunConfig& cfg);
void cmd_ablate(const RunConfig& cfg);
void cmd_gate_dump(const RunConfig& cfg);

}  // namespace tdseg

#endif
