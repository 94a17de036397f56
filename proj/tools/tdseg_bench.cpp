// Micro-benchmark for the desk-scale training step: per-phase wall times.
#include <chrono>
#include <cstdio>

#include "tdseg/anchors.hpp"
#include "tdseg/conv_engine.hpp"
#include "tdseg/data.hpp"
#include "tdseg/model.hpp"
#include "tdseg/train.hpp"

using namespace tdseg;
using clk = std::chrono::steady_clock;

static double ms_since(clk::time_point t0) {
  return std::chrono::duration<double, std::milli>(clk::now() - t0).count();
}

int main(int argc, char** argv) {
  const char* arch = argc > 1 ? argv[1] : "configs/desk64.cfg";
  const int iters = argc > 2 ? std::atoi(argv[2]) : 10;

  Model model;
  model.spec = load_network_config(arch);
  model.cfg.classes = 4;
  model.cfg.init = InitStrategy::Top1;  // guarantees live gates
  model.init_params(7, true);

  auto samples = synth_generate(3, 4, 64, 4);
  std::vector<const Sample*> ptrs;
  for (auto& s : samples) ptrs.push_back(&s);
  auto mean = mean_pixel(samples);
  Tensor x = to_input_tensor(ptrs, mean);

  auto probe = model.forward_head(Tensor::zeros({1, 3, 64, 64}));
  auto anchors = unit_anchors(model.spec, probe.det.scores, 64, 64);
  std::vector<std::vector<int>> assigned, sampled;
  Rng srng(5);
  LossConfig lcfg;
  std::vector<int> seg_labels;
  for (auto& s : samples) {
    auto a = assign_targets(anchors, s.boxes, lcfg);
    sampled.push_back(sample_targets(a, srng, lcfg));
    assigned.push_back(std::move(a));
    for (uint8_t v : s.mask) seg_labels.push_back(v);
  }

  SgdConfig scfg;
  Optimizer opt;
  opt.ensure(model.params);

  double t_head = 0, t_td = 0, t_dec = 0, t_loss = 0, t_bwd = 0, t_step = 0;
  for (int it = 0; it < iters; ++it) {
    auto t0 = clk::now();
    auto head = model.forward_head(x);
    t_head += ms_since(t0);

    t0 = clk::now();
    std::vector<AttentionSignal> seeds(4);
    for (int n = 0; n < 4; ++n) seeds[n] = init_top1(head.det.scores, n);
    auto gates = td_pass(seeds, head.enc.trace, head.det, model.spec, model.params, 0.2);
    t_td += ms_since(t0);

    t0 = clk::now();
    Tensor logits = decoder_forward(head.enc.trace, gates, head.det.scores.group_scores[0],
                                    model.spec, model.cfg.dec, model.params, 64, 64);
    t_dec += ms_since(t0);

    t0 = clk::now();
    Tensor det_term = detect_loss(head.det.scores, sampled);
    Tensor seg_term = seg_loss(logits, seg_labels);
    Tensor loss = total_loss(det_term, seg_term, 1.0);
    t_loss += ms_since(t0);

    t0 = clk::now();
    model.params.zero_grads();
    backward(loss);
    t_bwd += ms_since(t0);

    t0 = clk::now();
    opt.step(model.params, scfg);
    t_step += ms_since(t0);
  }
  const double n = iters;
  std::printf("per step (batch 4), ms: head %.2f  td %.2f  decoder %.2f  loss %.2f  backward %.2f  sgd %.2f  TOTAL %.2f\n",
              t_head / n, t_td / n, t_dec / n, t_loss / n, t_bwd / n, t_step / n,
              (t_head + t_td + t_dec + t_loss + t_bwd + t_step) / n);
  std::printf("per image, ms: %.2f\n", (t_head + t_td + t_dec + t_loss + t_bwd + t_step) / n / 4);
  auto& ct = detail::conv_timers();
  std::printf("conv engine, ms/step: forward %.2f  dW %.2f  dX %.2f\n", ct.forward / n * 1e3,
              ct.dw / n * 1e3, ct.dx / n * 1e3);
  return 0;
}
