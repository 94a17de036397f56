#include "tdseg/attention.hpp"

#include <cmath>
#include <stdexcept>

#include "tdseg/anchors.hpp"

namespace tdseg {

AttentionSignal init_ground_truth(const std::vector<int>& targets, int classes) {
  AttentionSignal d;
  d.units = (int)targets.size();
  d.classes = classes;
  for (int u = 0; u < d.units; ++u) {
    const int t = targets[u];
    if (t == kDontCare || t == 0) continue;
    d.active.emplace_back(u, t);
  }
  return d;
}

namespace {

// argmax class and softmax probability of the max
void unit_top(const std::vector<double>& logits, int& cls, double& prob) {
  cls = 0;
  for (size_t c = 1; c < logits.size(); ++c)
    if (logits[c] > logits[cls]) cls = (int)c;
  double z = 0.0;
  for (double v : logits) z += std::exp(v - logits[cls]);
  prob = 1.0 / z;
}

}  // namespace

AttentionSignal init_top1(const ScoreMaps& maps, int sample) {
  AttentionSignal d;
  d.units = maps.total_units;
  d.classes = maps.classes;
  for (int u = 0; u < maps.total_units; ++u) {
    int cls;
    double prob;
    unit_top(maps.unit_logits(sample, u), cls, prob);
    if (cls == 0) continue;
    d.active.emplace_back(u, cls);
  }
  return d;
}

AttentionSignal init_threshold(const ScoreMaps& maps, int sample, double theta) {
  if (!(theta > 0.0 && theta < 1.0))
    throw std::invalid_argument("init_threshold: theta must lie in (0,1)");
  AttentionSignal d;
  d.units = maps.total_units;
  d.classes = maps.classes;
  for (int u = 0; u < maps.total_units; ++u) {
    int cls;
    double prob;
    unit_top(maps.unit_logits(sample, u), cls, prob);
    if (cls == 0 || !(prob > theta)) continue;
    d.active.emplace_back(u, cls);
  }
  return d;
}

}  // namespace tdseg
