#include "tdseg/anchors.hpp"

#include <algorithm>
#include <stdexcept>

namespace tdseg {

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double ih = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::vector<Box> unit_anchors(const NetworkSpec& spec, const ScoreMaps& maps, int image_h,
                              int image_w) {
  auto rfs = detect_group_rf(spec);
  std::vector<Box> anchors;
  anchors.reserve(maps.total_units);
  for (int g = 0; g < maps.groups(); ++g) {
    const RfGeometry& rf = rfs[g];
    for (int y = 0; y < maps.group_h[g]; ++y)
      for (int x = 0; x < maps.group_w[g]; ++x) {
        const double cy = rf.offset + y * rf.jump;
        const double cx = rf.offset + x * rf.jump;
        Box b{cx - rf.size / 2.0, cy - rf.size / 2.0, cx + rf.size / 2.0, cy + rf.size / 2.0};
        b.x0 = std::max(0.0, b.x0);
        b.y0 = std::max(0.0, b.y0);
        b.x1 = std::min((double)image_w, b.x1);
        b.y1 = std::min((double)image_h, b.y1);
        anchors.push_back(b);
      }
  }
  return anchors;
}

std::vector<int> assign_targets(const std::vector<Box>& anchors, const std::vector<GtBox>& gt,
                                const LossConfig& cfg) {
  if (anchors.empty()) throw std::invalid_argument("assign_targets: no anchors");
  std::vector<int> t(anchors.size(), 0);
  for (size_t i = 0; i < anchors.size(); ++i) {
    double best = 0.0;
    int best_cls = 0;
    for (const auto& g : gt) {
      const double v = iou(anchors[i], g.box);
      if (v > best) {
        best = v;
        best_cls = g.cls;
      }
    }
    if (best > cfg.theta_pos)
      t[i] = best_cls;
    else if (best < cfg.theta_neg)
      t[i] = 0;
    else
      t[i] = kDontCare;
  }
  // every gt box keeps at least one anchor
  for (const auto& g : gt) {
    double best = -1.0;
    size_t bi = 0;
    for (size_t i = 0; i < anchors.size(); ++i) {
      const double v = iou(anchors[i], g.box);
      if (v > best) {
        best = v;
        bi = i;
      }
    }
    t[bi] = g.cls;
  }
  return t;
}

std::vector<int> sample_targets(const std::vector<int>& t, Rng& rng, const LossConfig& cfg) {
  std::vector<int> out(t.size(), kDontCare);
  std::vector<int> pos, neg;
  for (size_t i = 0; i < t.size(); ++i) {
    if (t[i] == kDontCare) continue;
    (t[i] == 0 ? neg : pos).push_back((int)i);
  }
  auto pick = [&rng](std::vector<int>& pool, int count) {
    for (int i = 0; i < count; ++i) {
      const int j = i + (int)rng.uniform_int(pool.size() - i);
      std::swap(pool[i], pool[j]);
    }
    pool.resize(count);
  };
  int keep_pos = std::min((int)pos.size(), cfg.max_targets);
  if (keep_pos < (int)pos.size()) pick(pos, keep_pos);
  int neg_budget = keep_pos > 0 ? std::min(cfg.neg_pos_ratio * keep_pos, cfg.max_targets - keep_pos)
                                : cfg.max_targets;
  int keep_neg = std::min((int)neg.size(), neg_budget);
  if (keep_neg < (int)neg.size()) pick(neg, keep_neg);
  for (int i : pos) out[i] = t[i];
  for (int i : neg) out[i] = 0;
  return out;
}

Tensor detect_loss(const ScoreMaps& maps, const std::vector<std::vector<int>>& targets_per_sample) {
  const int batch = maps.group_scores.empty() ? 0 : maps.group_scores[0].shape().n;
  if ((int)targets_per_sample.size() != batch)
    throw std::invalid_argument("detect_loss: one target vector per batch element required");
  Tensor total;
  int64_t count = 0;
  for (int g = 0; g < maps.groups(); ++g) {
    const Tensor& s = maps.group_scores[g];
    const int units = maps.units_in_group(g);
    std::vector<int> labels((size_t)batch * units);
    for (int n = 0; n < batch; ++n)
      for (int u = 0; u < units; ++u)
        labels[(size_t)n * units + u] = targets_per_sample[n][maps.group_offset[g] + u];
    int64_t cnt = 0;
    Tensor part = cross_entropy_sum(s, labels, kDontCare, &cnt);
    count += cnt;
    total = total.defined() ? add(total, part) : part;
  }
  if (count == 0) return Tensor::zeros({1, 1, 1, 1});
  return scale(total, 1.0 / (double)count);
}

Tensor seg_loss(const Tensor& logits, const std::vector<int>& mask_labels) {
  int64_t cnt = 0;
  Tensor sum = cross_entropy_sum(logits, mask_labels, kDontCare, &cnt);
  if (cnt == 0) return Tensor::zeros({1, 1, 1, 1});
  return scale(sum, 1.0 / (double)cnt);
}

Tensor total_loss(const Tensor& detect_term, const Tensor& seg_term, double alpha_loss) {
  return add(detect_term, scale(seg_term, alpha_loss));
}

}  // namespace tdseg
