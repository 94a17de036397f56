#ifndef TDSEG_ENCODER_HPP
#define TDSEG_ENCODER_HPP

#include <memory>
#include <string>
#include <vector>

#include "tdseg/arch.hpp"
#include "tdseg/rng.hpp"
#include "tdseg/tensor.hpp"

namespace tdseg {

// Ordered name -> tensor map; iteration order is creation order so that
// seeded initialization and checkpoint layout are reproducible.
class ParamRegistry {
 public:
  Tensor& add(const std::string& name, Tensor t);
  Tensor* find(const std::string& name);
  const Tensor* find(const std::string& name) const;
  Tensor& at(const std::string& name);
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
  void zero_grads();

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

// Uniform(-b, b) with b = sqrt(6 / (fan_in + fan_out)).
void init_conv_params(Tensor& w, Rng& rng);

// Registers kernel+bias pairs for every conv layer of the encoder under
// "<prefix>.conv<i>.{w,b}".
void register_encoder_params(const NetworkSpec& spec, const std::string& prefix,
                             ParamRegistry& params, Rng& rng);

struct TraceEntry {
  int layer = -1;
  Tensor out;
  std::shared_ptr<std::vector<int32_t>> argmax;  // maxpool layers only
};

// Per-layer record of the bottom-up pass; consumed by the top-down pass and
// the decoder.
struct ActivationTrace {
  Tensor input;
  std::vector<TraceEntry> entries;

  const TraceEntry& at_layer(int layer) const;
  // tensor at a tap (by layer index), i.e. the output of that layer
  Tensor tap(int layer) const { return at_layer(layer).out; }
};

struct EncodeResult {
  Tensor top;
  ActivationTrace trace;
};

// h = encoder(x); returns the top activation and the full per-layer trace.
EncodeResult forward_encode(const Tensor& x, const NetworkSpec& spec, ParamRegistry& params,
                            const std::string& prefix = "bu");

}  // namespace tdseg

#endif
