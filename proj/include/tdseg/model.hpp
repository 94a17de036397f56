#ifndef TDSEG_MODEL_HPP
#define TDSEG_MODEL_HPP

#include <optional>
#include <string>
#include <vector>

#include "tdseg/anchors.hpp"
#include "tdseg/attention.hpp"
#include "tdseg/decoder.hpp"
#include "tdseg/detect.hpp"
#include "tdseg/encoder.hpp"
#include "tdseg/topdown.hpp"

namespace tdseg {

InitStrategy parse_init_strategy(const std::string& s);
std::string format_init_strategy(InitStrategy s);

struct ModelConfig {
  int classes = 4;
  DecoderConfig dec;
  InitStrategy init = InitStrategy::Threshold;
  double theta_attention = 0.9;
  double alpha_td = 0.2;
  LossConfig loss;
};

// The full two-pass network: encoder, detection head, attention seeding,
// top-down gating, and the segmentation decoder.
struct Model {
  NetworkSpec spec;
  ModelConfig cfg;
  ParamRegistry params;

  // registers encoder + head parameters; with_decoder also registers the
  // decoder (fresh streams are derived from the seed per section)
  void init_params(uint64_t seed, bool with_decoder);

  struct HeadResult {
    EncodeResult enc;
    DetectResult det;
  };
  HeadResult forward_head(const Tensor& x);

  struct FullResult {
    EncodeResult enc;
    DetectResult det;
    std::vector<AttentionSignal> seeds;
    GatingTrace gates;
    Tensor seg_logits;
  };
  // gt_targets: per-sample assigned anchor labels, required for the
  // ground-truth seeding strategy
  FullResult forward_full(const Tensor& x,
                          const std::vector<std::vector<int>>* gt_targets = nullptr);

  int head_channels() const;
};

// channels flowing out of layer `layer` (the nearest conv at or below it)
int channels_at_layer(const NetworkSpec& spec, int layer);

}  // namespace tdseg

#endif
