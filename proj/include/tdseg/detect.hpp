#ifndef TDSEG_DETECT_HPP
#define TDSEG_DETECT_HPP

#include <memory>
#include <string>
#include <vector>

#include "tdseg/arch.hpp"
#include "tdseg/encoder.hpp"
#include "tdseg/tensor.hpp"

namespace tdseg {

// One layer as seen by the top-down pass: spec, the tensors around it, and
// (for pools) the routing indices.
struct TdLayerRec {
  LayerSpec spec;
  Tensor input;
  Tensor output;
  Tensor kernel;  // conv kinds only
  std::shared_ptr<std::vector<int32_t>> argmax;  // pools only
};

// Multi-scale class score maps with a flattened unit view. Unit indices run
// group-major, row-major within a group.
struct ScoreMaps {
  int classes = 0;
  int total_units = 0;  // A
  std::vector<Tensor> group_scores;   // (N, K, h_i, w_i) logits
  std::vector<int> group_offset;      // flattened offset of each group
  std::vector<int> group_h, group_w;

  int groups() const { return (int)group_scores.size(); }
  int units_in_group(int g) const { return group_h[g] * group_w[g]; }
  // unit index -> (group, y, x)
  void locate(int unit, int& g, int& y, int& x) const;
  int unit_at(int g, int y, int x) const { return group_offset[g] + y * group_w[g] + x; }
  // logits of one unit for batch element n
  std::vector<double> unit_logits(int n, int unit) const;
};

struct DetectResult {
  ScoreMaps scores;
  // layers executed per group in forward order (convs have implicit relu
  // entries); used by the top-down traversal
  std::vector<std::vector<TdLayerRec>> group_layers;
  std::vector<TdLayerRec> pred_layers;  // one collapsed conv per group
};

// Registers intermediate conv parameters ("det.g<i>.l<j>") and the 1x1
// prediction layer ("det.g<i>.pred") for each group.
void register_detect_params(const NetworkSpec& spec, int head_channels, int classes,
                            ParamRegistry& params, Rng& rng);

// s = head(h): parallel groups consume h independently; sequential groups
// chain, each feeding both its prediction layer and the next group.
DetectResult detect_forward(const Tensor& h, const NetworkSpec& spec, int classes,
                            ParamRegistry& params);

struct UnitGeometry {
  RfGeometry rf;
  int group = 0, y = 0, x = 0;
  double cy = 0, cx = 0;  // input-space center
};

// Input-space geometry of one flattened unit (before clipping).
UnitGeometry detect_unit_geometry(const NetworkSpec& spec, const ScoreMaps& maps, int unit);

// Receptive-field geometry of each group's prediction units.
std::vector<RfGeometry> detect_group_rf(const NetworkSpec& spec);

}  // namespace tdseg

#endif
