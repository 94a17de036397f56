#ifndef TDSEG_TRAIN_HPP
#define TDSEG_TRAIN_HPP

#include <array>
#include <string>
#include <vector>

#include "tdseg/data.hpp"
#include "tdseg/metrics.hpp"
#include "tdseg/model.hpp"

namespace tdseg {

struct SgdConfig {
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int batch = 4;
  int epochs = 15;
};

// v <- momentum * v + grad + weight_decay * param; param <- param - lr * v.
// Biases (names ending in ".b") are exempt from weight decay.
struct Optimizer {
  std::vector<std::vector<double>> velocity;

  void ensure(const ParamRegistry& params);
  void step(ParamRegistry& params, const SgdConfig& cfg);
  static bool decays(const std::string& name) { return name.size() < 2 || name.substr(name.size() - 2) != ".b"; }
};

// Versioned little-endian binary: name-length-prefixed tensor records for
// parameters and optimizer velocities, plus the rng root, epoch counter and
// a config fingerprint. Round-trips bit-exactly.
struct Checkpoint {
  uint64_t config_hash = 0;
  uint32_t epoch = 0;
  uint64_t root_seed = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::vector<std::pair<std::string, Tensor>> velocities;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint snapshot_state(const Model& m, const Optimizer& opt, uint32_t epoch,
                          uint64_t root_seed, uint64_t config_hash);
// copies values for names present in both; missing names stay at their
// current (freshly initialized) values
void restore_params(const Checkpoint& ckpt, ParamRegistry& params);
void restore_velocities(const Checkpoint& ckpt, ParamRegistry& params, Optimizer& opt);

uint64_t fnv1a64(const std::string& s);
uint64_t config_fingerprint(const NetworkSpec& spec, const ModelConfig& mcfg,
                            const SgdConfig& scfg);

struct TrainDataset {
  std::vector<Sample> train, val;
  std::array<double, 3> mean{};
  int classes = 4;
  int target = 64;  // resize/crop extent L
};

TrainDataset load_dataset(const std::string& root);

struct TrainResult {
  Checkpoint ckpt;
  std::string metrics_csv;
  double final_loss = 0.0;
};

// Phase 1: encoder + detection head against the anchor targets only.
TrainResult pretrain_head(const TrainDataset& data, const NetworkSpec& spec,
                          const ModelConfig& mcfg, const SgdConfig& scfg, uint64_t seed,
                          const Checkpoint* resume = nullptr);

// Phase 2: full two-pass network against the joint loss, starting from the
// phase-1 weights.
TrainResult train_multiloss(const TrainDataset& data, const NetworkSpec& spec,
                            const ModelConfig& mcfg, const SgdConfig& scfg,
                            const Checkpoint& init, uint64_t seed,
                            const Checkpoint* resume = nullptr);

struct EvalOptions {
  bool use_perturb = false;
  PerturbSpec perturb;
};

struct EvalResult {
  double per_image_macc = 0.0, per_image_miou = 0.0;
  double cm_macc = 0.0, cm_miou = 0.0;
  std::vector<double> image_macc, image_miou;
  std::vector<std::vector<int>> masks;  // predicted labels per sample
  std::string metrics_csv;
};

EvalResult evaluate(const TrainDataset& data, const std::vector<Sample>& split, Model& model,
                    const EvalOptions& opts = {});

// anchor-target classification accuracy of the detection head on a split
double head_anchor_accuracy(const TrainDataset& data, const std::vector<Sample>& split,
                            Model& model);

}  // namespace tdseg

#endif
