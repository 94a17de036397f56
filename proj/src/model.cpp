#include "tdseg/model.hpp"

#include <stdexcept>

namespace tdseg {

InitStrategy parse_init_strategy(const std::string& s) {
  if (s == "gt") return InitStrategy::GroundTruth;
  if (s == "top1") return InitStrategy::Top1;
  if (s == "threshold") return InitStrategy::Threshold;
  throw std::invalid_argument("unknown init strategy: " + s);
}

std::string format_init_strategy(InitStrategy s) {
  switch (s) {
    case InitStrategy::GroundTruth: return "gt";
    case InitStrategy::Top1: return "top1";
    case InitStrategy::Threshold: return "threshold";
  }
  return "?";
}

int channels_at_layer(const NetworkSpec& spec, int layer) {
  for (int i = layer; i >= 0; --i)
    if (spec.layers[i].is_conv()) return spec.layers[i].out_c;
  return spec.in_channels;
}

int Model::head_channels() const {
  return channels_at_layer(spec, spec.tap_layer(spec.head_tap));
}

void Model::init_params(uint64_t seed, bool with_decoder) {
  Rng bu_rng = sub_rng(seed, 0x6275);  // independent stream per section
  register_encoder_params(spec, "bu", params, bu_rng);
  Rng det_rng = sub_rng(seed, 0x6465);
  register_detect_params(spec, head_channels(), cfg.classes, params, det_rng);
  if (with_decoder) {
    Rng dec_rng = sub_rng(seed, 0x7365);
    register_decoder_params(spec, cfg.dec, cfg.classes, params, dec_rng);
  }
}

Model::HeadResult Model::forward_head(const Tensor& x) {
  EncodeResult enc = forward_encode(x, spec, params);
  Tensor h = enc.trace.tap(spec.tap_layer(spec.head_tap));
  DetectResult det = detect_forward(h, spec, cfg.classes, params);
  return {std::move(enc), std::move(det)};
}

Model::FullResult Model::forward_full(const Tensor& x,
                                      const std::vector<std::vector<int>>* gt_targets) {
  FullResult r;
  auto head = forward_head(x);
  r.enc = std::move(head.enc);
  r.det = std::move(head.det);

  const int batch = x.shape().n;
  r.seeds.resize(batch);
  for (int n = 0; n < batch; ++n) {
    switch (cfg.init) {
      case InitStrategy::GroundTruth:
        if (!gt_targets || (int)gt_targets->size() != batch)
          throw std::invalid_argument("ground-truth seeding needs per-sample anchor targets");
        r.seeds[n] = init_ground_truth((*gt_targets)[n], cfg.classes);
        break;
      case InitStrategy::Top1:
        r.seeds[n] = init_top1(r.det.scores, n);
        break;
      case InitStrategy::Threshold:
        r.seeds[n] = init_threshold(r.det.scores, n, cfg.theta_attention);
        break;
    }
  }
  r.gates = td_pass(r.seeds, r.enc.trace, r.det, spec, params, cfg.alpha_td);
  r.seg_logits = decoder_forward(r.enc.trace, r.gates, r.det.scores.group_scores[0], spec, cfg.dec,
                                 params, x.shape().h, x.shape().w);
  return r;
}

}  // namespace tdseg
