#include "tdseg/decoder.hpp"

#include <stdexcept>

namespace tdseg {

Modulation parse_modulation(const std::string& s) {
  if (s == "add") return Modulation::Add;
  if (s == "mul") return Modulation::Mul;
  if (s == "concat") return Modulation::Concat;
  throw std::invalid_argument("unknown modulation: " + s);
}

std::string format_modulation(Modulation m) {
  switch (m) {
    case Modulation::Add: return "add";
    case Modulation::Mul: return "mul";
    case Modulation::Concat: return "concat";
  }
  return "?";
}

DecoderInputs parse_decoder_inputs(const std::string& s) {
  if (s == "both") return DecoderInputs::Both;
  if (s == "bu") return DecoderInputs::BuOnly;
  if (s == "td") return DecoderInputs::TdOnly;
  throw std::invalid_argument("unknown decoder inputs: " + s);
}

std::string format_decoder_inputs(DecoderInputs d) {
  switch (d) {
    case DecoderInputs::Both: return "both";
    case DecoderInputs::BuOnly: return "bu";
    case DecoderInputs::TdOnly: return "td";
  }
  return "?";
}

Tensor modulate(const Tensor& u, const Tensor& v, Modulation mode) {
  switch (mode) {
    case Modulation::Add: return add(u, v);
    case Modulation::Mul: return mul(u, v);
    case Modulation::Concat: return concat_channels(u, v);
  }
  throw std::logic_error("bad modulation");
}

namespace {

int tap_channels(const NetworkSpec& spec, int tap_layer) {
  for (int i = tap_layer; i >= 0; --i)
    if (spec.layers[i].is_conv()) return spec.layers[i].out_c;
  return spec.in_channels;
}

std::string lvl(int level, const char* unit) {
  return "seg.l" + std::to_string(level) + "." + unit;
}

}  // namespace

void register_decoder_params(const NetworkSpec& spec, const DecoderConfig& cfg, int classes,
                             ParamRegistry& params, Rng& rng) {
  if (cfg.levels < 1 || cfg.levels > (int)spec.seg_levels.size())
    throw std::invalid_argument("decoder levels out of range for this architecture");
  int above_c = classes;  // level 1 fuses the class probabilities
  for (int li = 1; li <= cfg.levels; ++li) {
    const SegLevelSpec& sl = spec.seg_levels[li - 1];
    const int in_c = tap_channels(spec, spec.tap_layer(sl.tap));
    auto add_conv = [&](const std::string& name, int ic, int oc, int k, bool bias) {
      auto w = make_kernel(oc, ic, k, k, std::vector<double>((size_t)oc * ic * k * k));
      init_conv_params(w, rng);
      params.add(name + ".w", w);
      if (bias) params.add(name + ".b", Tensor::zeros({1, oc, 1, 1}, true));
    };
    add_conv(lvl(li, "bu"), in_c, sl.b, 3, true);
    add_conv(lvl(li, "td"), in_c, sl.b, 1, false);
    const int mod_c = cfg.mode == Modulation::Concat ? 2 * sl.b : sl.b;
    add_conv(lvl(li, "r"), mod_c, sl.r, 3, true);
    add_conv(lvl(li, "q"), sl.r + above_c, sl.q, 3, true);
    above_c = sl.q;
  }
  auto add_conv = [&](const std::string& name, int ic, int oc, int k) {
    auto w = make_kernel(oc, ic, k, k, std::vector<double>((size_t)oc * ic * k * k));
    init_conv_params(w, rng);
    params.add(name + ".w", w);
    params.add(name + ".b", Tensor::zeros({1, oc, 1, 1}, true));
  };
  add_conv("seg.head3", above_c, above_c, 3);
  add_conv("seg.head1", above_c, classes, 1);
}

Tensor decoder_level(const Tensor& h, const Tensor& g, const Tensor& above, int level,
                     const DecoderConfig& cfg, ParamRegistry& params, int target_h) {
  if (h.shape() != g.shape())
    throw std::invalid_argument("decoder_level: feature/gate shape mismatch " + h.shape().str() +
                                " vs " + g.shape().str());
  Tensor mod;
  bool gate_dead = cfg.mode == Modulation::Mul;
  if (gate_dead)
    for (double v : g.value())
      if (v != 0.0) {
        gate_dead = false;
        break;
      }
  if (gate_dead) {
    // silent gating under mul blocks the whole branch: the modulated tensor
    // is exactly zero and neither branch conv receives a gradient
    const Shape hs = h.shape();
    const int bc = params.at(lvl(level, "bu") + ".w").shape().n;
    mod = Tensor::zeros({hs.n, bc, hs.h, hs.w});
  } else {
    Tensor bu = relu(conv2d(h, params.at(lvl(level, "bu") + ".w"),
                            params.at(lvl(level, "bu") + ".b"), 1, 1, 1));
    Tensor td = relu(conv2d(g, params.at(lvl(level, "td") + ".w"), Tensor(), 1, 0, 1));
    mod = modulate(bu, td, cfg.mode);
  }
  Tensor r = relu(conv2d(mod, params.at(lvl(level, "r") + ".w"), params.at(lvl(level, "r") + ".b"),
                         1, 1, 1));
  Tensor cat = concat_channels(r, above);
  Tensor q = relu(conv2d(cat, params.at(lvl(level, "q") + ".w"), params.at(lvl(level, "q") + ".b"),
                         1, 1, 1));
  return q.shape().h < target_h ? upsample2x(q) : q;
}

Tensor decoder_forward(const ActivationTrace& trace, const GatingTrace& gates,
                       const Tensor& first_group_scores, const NetworkSpec& spec,
                       const DecoderConfig& cfg, ParamRegistry& params, int target_h,
                       int target_w) {
  Tensor above = softmax_channel(first_group_scores);
  for (int li = 1; li <= cfg.levels; ++li) {
    const SegLevelSpec& sl = spec.seg_levels[li - 1];
    const int tap = spec.tap_layer(sl.tap);
    Tensor h = trace.tap(tap);
    Tensor g = gates.at_layer(tap);
    if (cfg.inputs == DecoderInputs::BuOnly) g = Tensor::zeros(g.shape());
    if (cfg.inputs == DecoderInputs::TdOnly) h = Tensor::zeros(h.shape());
    above = decoder_level(h, g, above, li, cfg, params, target_h);
  }
  while (above.shape().h < target_h || above.shape().w < target_w) above = upsample2x(above);
  if (above.shape().h != target_h || above.shape().w != target_w)
    throw std::invalid_argument("decoder output cannot reach the target resolution");
  Tensor head = relu(conv2d(above, params.at("seg.head3.w"), params.at("seg.head3.b"), 1, 1, 1));
  return conv2d(head, params.at("seg.head1.w"), params.at("seg.head1.b"), 1, 0, 1);
}

std::vector<int> predict_mask(const Tensor& logits) {
  const Shape s = logits.shape();
  std::vector<int> labels((size_t)s.n * s.h * s.w);
  const double* v = logits.value().data();
  const size_t plane = (size_t)s.h * s.w;
  for (int n = 0; n < s.n; ++n)
    for (size_t p = 0; p < plane; ++p) {
      int best = 0;
      double bv = v[(size_t)n * s.c * plane + p];
      for (int c = 1; c < s.c; ++c) {
        const double e = v[((size_t)n * s.c + c) * plane + p];
        if (e > bv) {
          bv = e;
          best = c;
        }
      }
      labels[(size_t)n * plane + p] = best;
    }
  return labels;
}

}  // namespace tdseg
