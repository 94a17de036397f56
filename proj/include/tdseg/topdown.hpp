#ifndef TDSEG_TOPDOWN_HPP
#define TDSEG_TOPDOWN_HPP

#include <map>
#include <vector>

#include "tdseg/attention.hpp"
#include "tdseg/detect.hpp"
#include "tdseg/encoder.hpp"

namespace tdseg {

// Post-synaptic contribution of one input unit to a gated node: the
// weight-activity product and the contributor's coordinates.
struct PsEntry {
  int channel = 0, y = 0, x = 0;
  double ps = 0.0;
};

// Winners are the entries at or above the mean of the strictly positive
// values; empty when nothing is positive.
std::vector<int> stage1_competition(const std::vector<PsEntry>& ps);

// Winners are partitioned into 4-connected spatial components (coordinates
// merged across channels); the component maximizing
//   alpha * size-share + (1 - alpha) * activity-share
// is selected. Ties go to the larger activity sum, then to the component with
// the lexicographically smallest coordinate.
std::vector<int> stage2_group_select_conv(const std::vector<PsEntry>& ps,
                                          const std::vector<int>& winners, double alpha_td);

// Collapsed (1x1) convolutions use winner-take-all: the single largest ps,
// ties to the lowest channel index.
std::vector<int> stage2_wta_collapsed(const std::vector<PsEntry>& ps,
                                      const std::vector<int>& winners);

// Gate maps at encoder-layer outputs. Values are plain constants: the
// selection process is non-differentiable by construction and no gradient
// ever flows through it.
struct GatingTrace {
  double alpha_td = 0.2;
  std::map<int, Tensor> gates;  // encoder layer index -> (N,C,H,W)
  const Tensor& at_layer(int layer) const;
  double mass(int layer) const;  // sum of one gate map
};

// Dense single-layer propagation: gate at rec's output level (one sample) to
// gate at its input level. conv -> three-stage selection per active node;
// collapsed conv -> WTA; maxpool -> argmax routing; relu -> pass where the
// input is positive.
std::vector<double> td_layer(const TdLayerRec& rec, const std::vector<double>& g_above,
                             int sample, double alpha_td);

// Full top-down pass: every active (unit, class) seed descends one at a time
// through its group chain and the encoder down to the stop layer, summing
// into the gate maps. Per-seed descent makes the pass exactly additive over
// seeds.
GatingTrace td_pass(const std::vector<AttentionSignal>& seeds, const ActivationTrace& trace,
                    const DetectResult& det, const NetworkSpec& spec, ParamRegistry& params,
                    double alpha_td = 0.2, const std::string& prefix = "bu");

}  // namespace tdseg

#endif
