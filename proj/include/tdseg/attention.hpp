#ifndef TDSEG_ATTENTION_HPP
#define TDSEG_ATTENTION_HPP

#include <vector>

#include "tdseg/detect.hpp"

namespace tdseg {

enum class InitStrategy { GroundTruth, Top1, Threshold };

// One-hot (unit, class) seeds for the top-down pass. At most one class per
// unit; the background class is never seeded.
struct AttentionSignal {
  int units = 0;
  int classes = 0;
  std::vector<std::pair<int, int>> active;  // (unit, class), unit-ascending
};

// Seeds exactly the foreground, non-don't-care targets.
AttentionSignal init_ground_truth(const std::vector<int>& targets, int classes);

// Seeds each unit at its argmax class (ties to the lowest class index),
// skipping units whose argmax is the background.
AttentionSignal init_top1(const ScoreMaps& maps, int sample);

// As init_top1, but only where the max softmax probability exceeds theta.
AttentionSignal init_threshold(const ScoreMaps& maps, int sample, double theta);

}  // namespace tdseg

#endif
