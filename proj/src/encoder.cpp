#include "tdseg/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace tdseg {

Tensor& ParamRegistry::add(const std::string& name, Tensor t) {
  if (find(name)) throw std::logic_error("duplicate parameter name: " + name);
  items_.emplace_back(name, std::move(t));
  return items_.back().second;
}

Tensor* ParamRegistry::find(const std::string& name) {
  for (auto& [n, t] : items_)
    if (n == name) return &t;
  return nullptr;
}

const Tensor* ParamRegistry::find(const std::string& name) const {
  for (auto& [n, t] : items_)
    if (n == name) return &t;
  return nullptr;
}

Tensor& ParamRegistry::at(const std::string& name) {
  Tensor* t = find(name);
  if (!t) throw std::logic_error("unknown parameter: " + name);
  return *t;
}

void ParamRegistry::zero_grads() {
  for (auto& [n, t] : items_) t.zero_grad();
}

void init_conv_params(Tensor& w, Rng& rng) {
  const Shape s = w.shape();
  const double fan_in = (double)s.c * s.h * s.w;
  const double fan_out = (double)s.n * s.h * s.w;
  const double b = std::sqrt(6.0 / (fan_in + fan_out));
  for (auto& v : w.value_mut()) v = rng.uniform(-b, b);
}

void register_encoder_params(const NetworkSpec& spec, const std::string& prefix,
                             ParamRegistry& params, Rng& rng) {
  int in_c = spec.in_channels;
  for (int i = 0; i < (int)spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (!l.is_conv()) continue;
    auto w = make_kernel(l.out_c, in_c, l.k, l.k, std::vector<double>((size_t)l.out_c * in_c * l.k * l.k));
    init_conv_params(w, rng);
    params.add(prefix + ".conv" + std::to_string(i) + ".w", w);
    params.add(prefix + ".conv" + std::to_string(i) + ".b",
               Tensor::zeros({1, l.out_c, 1, 1}, true));
    in_c = l.out_c;
  }
}

const TraceEntry& ActivationTrace::at_layer(int layer) const {
  for (const auto& e : entries)
    if (e.layer == layer) return e;
  throw std::invalid_argument("no trace entry for layer " + std::to_string(layer));
}

EncodeResult forward_encode(const Tensor& x, const NetworkSpec& spec, ParamRegistry& params,
                            const std::string& prefix) {
  if (x.shape().c != spec.in_channels)
    throw std::invalid_argument("forward_encode: input has " + std::to_string(x.shape().c) +
                                " channels, spec wants " + std::to_string(spec.in_channels));
  ActivationTrace trace;
  trace.input = x;
  Tensor cur = x;
  for (int i = 0; i < (int)spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    TraceEntry e;
    e.layer = i;
    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::CollapsedConv: {
        const std::string base = prefix + ".conv" + std::to_string(i);
        cur = conv2d(cur, params.at(base + ".w"), params.at(base + ".b"), l.stride, l.pad, l.dil);
        break;
      }
      case LayerKind::Relu:
        cur = relu(cur);
        break;
      case LayerKind::MaxPool: {
        auto r = maxpool2d(cur, l.k, l.stride);
        cur = r.out;
        e.argmax = r.argmax;
        break;
      }
    }
    e.out = cur;
    trace.entries.push_back(std::move(e));
  }
  return {cur, std::move(trace)};
}

}  // namespace tdseg
