#ifndef TDSEG_DECODER_HPP
#define TDSEG_DECODER_HPP

#include <string>
#include <vector>

#include "tdseg/encoder.hpp"
#include "tdseg/topdown.hpp"

namespace tdseg {

enum class Modulation { Add, Mul, Concat };

Modulation parse_modulation(const std::string& s);
std::string format_modulation(Modulation m);

// Which decoder inputs are live; the zeroed branch feeds constant zeros.
enum class DecoderInputs { Both, BuOnly, TdOnly };

DecoderInputs parse_decoder_inputs(const std::string& s);
std::string format_decoder_inputs(DecoderInputs d);

// Elementwise sum, elementwise product, or channel concatenation.
Tensor modulate(const Tensor& u, const Tensor& v, Modulation mode);

struct DecoderConfig {
  int levels = 3;
  Modulation mode = Modulation::Mul;
  DecoderInputs inputs = DecoderInputs::Both;
};

// Registers per-level parameters: bu-branch 3x3 conv (with bias), td-branch
// 1x1 conv (bias-free so that zero gating stays exactly zero through mul),
// reduce and fuse 3x3 convs, plus the two-layer prediction head.
void register_decoder_params(const NetworkSpec& spec, const DecoderConfig& cfg, int classes,
                             ParamRegistry& params, Rng& rng);

// One decoder level: modulate the transformed feature/gate pair, reduce,
// concatenate the stream from above, fuse, then upsample x2 while below the
// target resolution.
Tensor decoder_level(const Tensor& h, const Tensor& g, const Tensor& above, int level,
                     const DecoderConfig& cfg, ParamRegistry& params, int target_h);

// Full decoder: level 1 concatenates the class probabilities of the first
// score-map group; output logits are at (target_h, target_w).
Tensor decoder_forward(const ActivationTrace& trace, const GatingTrace& gates,
                       const Tensor& first_group_scores, const NetworkSpec& spec,
                       const DecoderConfig& cfg, ParamRegistry& params, int target_h,
                       int target_w);

// Per-pixel argmax class, ties to the lowest index. Returns (n, h, w) labels.
std::vector<int> predict_mask(const Tensor& logits);

}  // namespace tdseg

#endif
