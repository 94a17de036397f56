#include "tdseg/detect.hpp"

#include <stdexcept>

namespace tdseg {

void ScoreMaps::locate(int unit, int& g, int& y, int& x) const {
  if (unit < 0 || unit >= total_units)
    throw std::invalid_argument("unit index out of range: " + std::to_string(unit));
  g = groups() - 1;
  while (g > 0 && unit < group_offset[g]) --g;
  const int rel = unit - group_offset[g];
  y = rel / group_w[g];
  x = rel % group_w[g];
}

std::vector<double> ScoreMaps::unit_logits(int n, int unit) const {
  int g, y, x;
  locate(unit, g, y, x);
  const Tensor& t = group_scores[g];
  const Shape s = t.shape();
  std::vector<double> out(classes);
  const size_t plane = (size_t)s.h * s.w;
  for (int c = 0; c < classes; ++c)
    out[c] = t.value()[(((size_t)n * s.c + c) * plane) + (size_t)y * s.w + x];
  return out;
}

void register_detect_params(const NetworkSpec& spec, int head_channels, int classes,
                            ParamRegistry& params, Rng& rng) {
  int chain_c = head_channels;
  for (int gi = 0; gi < (int)spec.groups.size(); ++gi) {
    const DetectGroupSpec& g = spec.groups[gi];
    int in_c = spec.design == DetectDesign::Parallel ? head_channels : chain_c;
    for (int li = 0; li < (int)g.inner.size(); ++li) {
      const LayerSpec& l = g.inner[li];
      if (!l.is_conv()) continue;
      const std::string base = "det.g" + std::to_string(gi) + ".l" + std::to_string(li);
      auto w = make_kernel(g.channels, in_c, l.k, l.k,
                           std::vector<double>((size_t)g.channels * in_c * l.k * l.k));
      init_conv_params(w, rng);
      params.add(base + ".w", w);
      params.add(base + ".b", Tensor::zeros({1, g.channels, 1, 1}, true));
      in_c = g.channels;
    }
    const std::string pb = "det.g" + std::to_string(gi) + ".pred";
    auto wp = make_kernel(classes, in_c, 1, 1, std::vector<double>((size_t)classes * in_c));
    init_conv_params(wp, rng);
    params.add(pb + ".w", wp);
    params.add(pb + ".b", Tensor::zeros({1, classes, 1, 1}, true));
    chain_c = in_c;
  }
}

DetectResult detect_forward(const Tensor& h, const NetworkSpec& spec, int classes,
                            ParamRegistry& params) {
  if (spec.groups.empty()) throw std::invalid_argument("detect_forward: no groups configured");
  DetectResult res;
  res.scores.classes = classes;

  Tensor chain = h;
  for (int gi = 0; gi < (int)spec.groups.size(); ++gi) {
    const DetectGroupSpec& g = spec.groups[gi];
    Tensor cur = spec.design == DetectDesign::Parallel ? h : chain;
    std::vector<TdLayerRec> recs;
    for (int li = 0; li < (int)g.inner.size(); ++li) {
      const LayerSpec& l = g.inner[li];
      TdLayerRec rec;
      rec.spec = l;
      rec.input = cur;
      if (l.is_conv()) {
        const std::string base = "det.g" + std::to_string(gi) + ".l" + std::to_string(li);
        cur = conv2d(cur, params.at(base + ".w"), params.at(base + ".b"), l.stride, l.pad, l.dil);
        rec.kernel = params.at(base + ".w");
        rec.output = cur;
        recs.push_back(rec);
        // implicit nonlinearity after intermediate convs
        TdLayerRec rrec;
        rrec.spec = {LayerKind::Relu, 0, 1, 1, 0, 1};
        rrec.input = cur;
        cur = relu(cur);
        rrec.output = cur;
        recs.push_back(rrec);
      } else if (l.kind == LayerKind::MaxPool) {
        auto pr = maxpool2d(cur, l.k, l.stride);
        rec.argmax = pr.argmax;
        cur = pr.out;
        rec.output = cur;
        recs.push_back(rec);
      } else {
        throw std::invalid_argument("unsupported kind in detect group");
      }
    }
    if (spec.design == DetectDesign::Sequential) chain = cur;

    const std::string pb = "det.g" + std::to_string(gi) + ".pred";
    TdLayerRec prec;
    prec.spec = {LayerKind::CollapsedConv, classes, 1, 1, 0, 1};
    prec.input = cur;
    Tensor s = conv2d(cur, params.at(pb + ".w"), params.at(pb + ".b"), 1, 0, 1);
    prec.kernel = params.at(pb + ".w");
    prec.output = s;

    res.scores.group_offset.push_back(res.scores.total_units);
    res.scores.group_h.push_back(s.shape().h);
    res.scores.group_w.push_back(s.shape().w);
    res.scores.total_units += s.shape().h * s.shape().w;
    res.scores.group_scores.push_back(s);
    res.group_layers.push_back(std::move(recs));
    res.pred_layers.push_back(std::move(prec));
  }

  // unit counts must fall strictly as receptive fields grow
  for (int gi = 0; gi + 1 < res.scores.groups(); ++gi)
    if (res.scores.units_in_group(gi) <= res.scores.units_in_group(gi + 1))
      throw std::invalid_argument("detect groups must have strictly decreasing unit counts");
  return res;
}

std::vector<RfGeometry> detect_group_rf(const NetworkSpec& spec) {
  const int head_layer = spec.tap_layer(spec.head_tap);
  RfGeometry base = receptive_field_prefix(spec, head_layer + 1);
  std::vector<RfGeometry> out;
  RfGeometry chain = base;
  for (const auto& g : spec.groups) {
    RfGeometry cur = spec.design == DetectDesign::Parallel ? base : chain;
    for (const auto& l : g.inner) cur = rf_step(cur, l);
    chain = cur;
    // 1x1 prediction layer leaves the geometry unchanged
    out.push_back(cur);
  }
  return out;
}

UnitGeometry detect_unit_geometry(const NetworkSpec& spec, const ScoreMaps& maps, int unit) {
  UnitGeometry ug;
  maps.locate(unit, ug.group, ug.y, ug.x);
  ug.rf = detect_group_rf(spec)[ug.group];
  ug.cy = ug.rf.offset + ug.y * ug.rf.jump;
  ug.cx = ug.rf.offset + ug.x * ug.rf.jump;
  return ug;
}

}  // namespace tdseg
