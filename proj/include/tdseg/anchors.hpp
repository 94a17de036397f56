#ifndef TDSEG_ANCHORS_HPP
#define TDSEG_ANCHORS_HPP

#include <vector>

#include "tdseg/detect.hpp"
#include "tdseg/rng.hpp"
#include "tdseg/tensor.hpp"

namespace tdseg {

// Half-open box in input-pixel units.
struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double area() const { return (x1 - x0) * (y1 - y0); }
};

struct GtBox {
  Box box;
  int cls = 0;  // 1..K-1
};

constexpr int kDontCare = 255;

double iou(const Box& a, const Box& b);

struct LossConfig {
  double theta_pos = 0.5;
  double theta_neg = 0.3;
  int max_targets = 128;
  int neg_pos_ratio = 3;
  double alpha_loss = 1.0;
};

// Square anchors with side = receptive-field size, centered on each unit's
// projected location and clipped to the image bounds.
std::vector<Box> unit_anchors(const NetworkSpec& spec, const ScoreMaps& maps, int image_h,
                              int image_w);

// t_i = class of the max-IoU gt box when that IoU > theta_pos, 0 when the best
// IoU < theta_neg, don't-care otherwise; afterwards, each gt box forces its
// best anchor to its class.
std::vector<int> assign_targets(const std::vector<Box>& anchors, const std::vector<GtBox>& gt,
                                const LossConfig& cfg);

// Keeps at most max_targets labels: all positives (randomly capped), then
// negatives up to neg_pos_ratio x positives; the rest become don't-care.
// With no positives, negatives fill the whole budget.
std::vector<int> sample_targets(const std::vector<int>& t, Rng& rng, const LossConfig& cfg);

// Mean NLL of softmax scores at the sampled targets, skipping don't-care
// units. All-don't-care input yields a zero-valued, zero-gradient scalar.
Tensor detect_loss(const ScoreMaps& maps, const std::vector<std::vector<int>>& targets_per_sample);

// Mean per-pixel NLL over pixels whose label != 255.
Tensor seg_loss(const Tensor& logits, const std::vector<int>& mask_labels);

Tensor total_loss(const Tensor& detect_term, const Tensor& seg_term, double alpha_loss);

}  // namespace tdseg

#endif
