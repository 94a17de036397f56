// Acceptance suite: runs every gate criterion at its pinned tolerance and
// prints one pass/fail line per criterion. Exit status is the number of
// failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tdseg/commands.hpp"
#include "tdseg/gradcheck.hpp"
#include "tdseg/metrics.hpp"
#include "tdseg/model.hpp"
#include "tdseg/topdown.hpp"
#include "tdseg/train.hpp"

using namespace tdseg;
namespace fs = std::filesystem;
using clk = std::chrono::steady_clock;

namespace {

int g_failures = 0;
bool g_skip_training = false;

void criterion(int number, const std::string& name, const std::function<bool(std::string&)>& fn) {
  std::string note;
  bool ok = false;
  const auto t0 = clk::now();
  try {
    ok = fn(note);
  } catch (const std::exception& e) {
    note = std::string("exception: ") + e.what();
  }
  const double sec = std::chrono::duration<double>(clk::now() - t0).count();
  std::printf("[%s] %2d. %-28s %s(%.1f s)\n", ok ? "PASS" : "FAIL", number, name.c_str(),
              note.empty() ? "" : (note + " ").c_str(), sec);
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

// reduced-width analog of the desk network: every layer type, under 50k
// parameters, 32x32 inputs
const char* kGradcheckSpec = R"(input c=3
conv out=8 k=3 s=1 p=1 d=1
relu
tap name=f32
maxpool k=2 s=2
stop
conv out=16 k=3 s=1 p=1 d=1
relu
tap name=f16
maxpool k=2 s=2
conv out=24 k=3 s=1 p=1 d=1
relu
tap name=f8
tap name=head
detect input=head design=parallel
group channels=8 layers=c1x1,c1x1
group channels=8 layers=c3x3-p2-d2,c1x1,c3x3-s2-p1
seglevel tap=f8 b=16 r=16 q=12
seglevel tap=f16 b=12 r=12 q=8
seglevel tap=f32 b=8 r=8 q=8
)";

Tensor random_tensor(Shape s, uint64_t seed, double lo = -1.0, double hi = 1.0,
                     bool rg = false) {
  Rng rng(seed);
  std::vector<double> v((size_t)s.numel());
  for (auto& e : v) e = rng.uniform(lo, hi);
  return Tensor::from_data(s, std::move(v), rg);
}

// ---------------------------------------------------------------------------
// criterion 1: gradients vs central differences
// ---------------------------------------------------------------------------

bool check_layer_type_gradients(double& worst) {
  Rng pick(99);
  // each op family probed on random shapes; losses are sums of squares so
  // every element matters
  struct OpCase {
    const char* what;
    std::function<Tensor(const Tensor&)> graph;
    Shape shape;
  };
  Rng wr(5);
  std::vector<double> wv, bv;
  auto fill = [&](size_t n) {
    std::vector<double> v(n);
    for (auto& e : v) e = wr.uniform(-1, 1);
    return v;
  };
  wv = fill(6 * 4 * 3 * 3);
  bv = fill(6);
  auto w33 = [&] { return make_kernel(6, 4, 3, 3, wv); };
  std::vector<double> w1v = fill(5 * 4);
  std::vector<double> wdv = fill(3 * 4 * 3 * 3);
  std::vector<double> wsv = fill(4 * 4 * 3 * 3);

  std::vector<OpCase> cases = {
      {"conv3x3", [&](const Tensor& x) {
         auto y = conv2d(x, w33(), Tensor::from_data({1, 6, 1, 1}, bv), 1, 1, 1);
         return sum_all(mul(y, y));
       }, {1, 4, 8, 8}},
      {"conv1x1", [&](const Tensor& x) {
         auto y = conv2d(x, make_kernel(5, 4, 1, 1, w1v), Tensor(), 1, 0, 1);
         return sum_all(mul(y, y));
       }, {1, 4, 6, 6}},
      {"conv-dilated", [&](const Tensor& x) {
         auto y = conv2d(x, make_kernel(3, 4, 3, 3, wdv), Tensor(), 1, 2, 2);
         return sum_all(mul(y, y));
       }, {1, 4, 9, 9}},
      {"conv-strided", [&](const Tensor& x) {
         auto y = conv2d(x, make_kernel(4, 4, 3, 3, wsv), Tensor(), 2, 1, 1);
         return sum_all(mul(y, y));
       }, {1, 4, 9, 9}},
      {"maxpool", [&](const Tensor& x) {
         auto y = maxpool2d(x, 2, 2).out;
         return sum_all(mul(y, y));
       }, {1, 3, 8, 8}},
      {"relu", [&](const Tensor& x) {
         auto y = relu(x);
         return sum_all(mul(y, y));
       }, {1, 3, 6, 6}},
      {"upsample2x", [&](const Tensor& x) {
         auto y = upsample2x(x);
         return sum_all(mul(y, y));
       }, {1, 2, 5, 5}},
      {"softmax", [&](const Tensor& x) {
         auto y = softmax_channel(x);
         return sum_all(mul(y, y));
       }, {1, 4, 4, 4}},
      {"concat", [&](const Tensor& x) {
         auto y = concat_channels(x, relu(x));
         return sum_all(mul(y, y));
       }, {1, 3, 5, 5}},
      {"cross-entropy", [&](const Tensor& x) {
         std::vector<int> labels;
         Rng lr(7);
         for (int i = 0; i < x.shape().h * x.shape().w; ++i)
           labels.push_back(lr.uniform() < 0.2 ? 255 : (int)lr.uniform_int(x.shape().c));
         return cross_entropy_sum(x, labels, 255);
       }, {1, 4, 5, 5}},
  };

  for (auto& c : cases) {
    auto xv = random_tensor(c.shape, pick.next_u64());
    auto x = Tensor::from_data(c.shape, xv.value(), true);
    backward(c.graph(x));
    ScalarFn f = [&](const std::vector<double>& v) {
      return c.graph(Tensor::from_data(c.shape, v)).item();
    };
    for (int probe = 0; probe < 10; ++probe) {
      const size_t i = pick.uniform_int(xv.numel());
      const double fd = finite_diff_at(f, xv.value(), i);
      worst = std::max(worst, rel_err(x.grad()[i], fd));
      if (rel_err(x.grad()[i], fd) >= 1e-4) return false;
    }
  }
  return true;
}

bool criterion1(std::string& note) {
  const auto t0 = clk::now();
  double worst = 0.0;
  if (!check_layer_type_gradients(worst)) {
    note = "per-op gradient check failed";
    return false;
  }

  // full two-pass graph, < 50k parameters; the gating trace is an explicit
  // constant of the differentiable graph, so the oracle re-evaluates the
  // loss with the gates (and target sampling) frozen
  NetworkSpec spec = parse_network_config(kGradcheckSpec);
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    Model model;
    model.spec = spec;
    model.cfg.classes = 3;
    model.cfg.init = InitStrategy::Top1;
    model.init_params(seed, true);
    // zero-initialized biases leave every blocked pixel exactly on a relu
    // kink where no finite-difference oracle is valid; use random biases
    Rng brng(4000 + seed);
    for (auto& [name, t] : model.params.items())
      if (name.substr(name.size() - 2) == ".b")
        for (auto& v : t.value_mut()) v = brng.uniform(-0.2, 0.2);
    int64_t n_params = 0;
    for (const auto& [name, t] : model.params.items()) n_params += t.numel();
    if (n_params > 50000) {
      note = "gradcheck graph exceeds 50k parameters";
      return false;
    }

    Tensor x = random_tensor({1, 3, 32, 32}, 1000 + seed);
    Rng lab_rng(2000 + seed);
    std::vector<int> seg_labels(32 * 32);
    for (auto& v : seg_labels) v = lab_rng.uniform() < 0.1 ? 255 : (int)lab_rng.uniform_int(3);

    auto base = model.forward_full(x);
    std::vector<int> det_labels(base.det.scores.total_units);
    for (auto& v : det_labels) v = lab_rng.uniform() < 0.5 ? 255 : (int)lab_rng.uniform_int(3);
    GatingTrace frozen_gates = base.gates;

    auto eval_with = [&](ParamRegistry& params) {
      EncodeResult enc = forward_encode(x, spec, params);
      Tensor h = enc.trace.tap(spec.tap_layer(spec.head_tap));
      DetectResult det = detect_forward(h, spec, 3, params);
      Tensor logits = decoder_forward(enc.trace, frozen_gates, det.scores.group_scores[0], spec,
                                      model.cfg.dec, params, 32, 32);
      Tensor d = detect_loss(det.scores, {det_labels});
      Tensor s = seg_loss(logits, seg_labels);
      return total_loss(d, s, 1.0);
    };

    model.params.zero_grads();
    backward(eval_with(model.params));

    Rng pick(3000 + seed);
    int probes = 0;
    for (int attempt = 0; attempt < 200 && probes < 25; ++attempt) {
      const size_t pi = pick.uniform_int(model.params.items().size());
      auto& [name, t] = model.params.items()[pi];
      if (!t.has_grad()) continue;  // e.g. branch silenced by dead gating
      const size_t ci = pick.uniform_int(t.numel());
      // below ~1e-6 the central-difference oracle's own rounding noise on an
      // O(1) loss exceeds the 1e-4 relative tolerance; those coordinates are
      // covered by the per-op checks above
      if (std::abs(t.grad()[ci]) < 1e-6) continue;
      const double saved = t.value()[ci];
      auto fd_at = [&](double eps) {
        t.value_mut()[ci] = saved + eps;
        const double fp = eval_with(model.params).item();
        t.value_mut()[ci] = saved - eps;
        const double fm = eval_with(model.params).item();
        t.value_mut()[ci] = saved;
        return (fp - fm) / (2 * eps);
      };
      // a step crossing a relu kink invalidates the wider stencil; accept the
      // finer one before declaring a mismatch
      double re = rel_err(t.grad()[ci], fd_at(1e-5));
      if (re >= 1e-4) re = std::min(re, rel_err(t.grad()[ci], fd_at(1e-6)));
      worst = std::max(worst, re);
      ++probes;
      if (re >= 1e-4) {
        note = "mismatch at " + name;
        return false;
      }
    }
  }
  const double sec = std::chrono::duration<double>(clk::now() - t0).count();
  char buf[96];
  std::snprintf(buf, sizeof buf, "max rel err %.2e, %.0f s", worst, sec);
  note = buf;
  return sec < 120.0;
}

// ---------------------------------------------------------------------------
// criterion 2: stage-3 conservation, monotone gate mass
// ---------------------------------------------------------------------------

bool criterion2(std::string& note) {
  Rng rng(271);
  int conserved = 0, nodes = 0;
  while (nodes < 1000) {
    const int ic = 1 + (int)rng.uniform_int(4);
    const int k = rng.uniform() < 0.3 ? 1 : 3;
    Tensor x = random_tensor({1, ic, 6, 6}, rng.next_u64());
    Tensor w = random_tensor({2, ic, k, k}, rng.next_u64());
    TdLayerRec rec;
    rec.spec = {k == 1 ? LayerKind::CollapsedConv : LayerKind::Conv, 2, k, 1, k == 1 ? 0 : 1, 1};
    rec.input = x;
    rec.kernel = w;
    rec.output = conv2d(x, w, Tensor(), 1, rec.spec.pad, 1);
    const Shape os = rec.output.shape();
    std::vector<double> gate((size_t)os.c * os.h * os.w, 0.0);
    const double parent = 0.25 + rng.uniform();
    gate[rng.uniform_int(gate.size())] = parent;
    auto below = td_layer(rec, gate, 0, 0.2);
    double sum = 0.0;
    bool nonneg = true;
    for (double v : below) {
      sum += v;
      nonneg &= v >= 0.0;
    }
    ++nodes;
    if (!nonneg) {
      note = "negative gate";
      return false;
    }
    if (sum == 0.0 || std::abs(sum - parent) < 1e-9) ++conserved;
  }
  if (conserved != nodes) {
    note = "conservation violated";
    return false;
  }

  // layer-wise mass ordering over full passes
  for (int trial = 0; trial < 20; ++trial) {
    Model m;
    m.spec = parse_network_config(kGradcheckSpec);
    m.cfg.classes = 3;
    m.init_params(500 + trial, false);
    auto head = m.forward_head(random_tensor({1, 3, 32, 32}, 600 + trial));
    std::vector<AttentionSignal> seeds = {init_top1(head.det.scores, 0)};
    auto gt = td_pass(seeds, head.enc.trace, head.det, m.spec, m.params, 0.2);
    double prev = -1.0;
    for (const auto& [layer, g] : gt.gates) {
      const double mass = gt.mass(layer);
      if (prev >= 0.0 && prev > mass + 1e-9) {
        note = "gate mass grew downward";
        return false;
      }
      prev = mass;
    }
  }
  note = "1000/1000 nodes conserved";
  return true;
}

// ---------------------------------------------------------------------------
// criterion 3: additivity and support containment
// ---------------------------------------------------------------------------

bool criterion3(std::string& note) {
  // exact additivity: union trace equals the canonical-order fold of
  // single-seed traces
  for (int trial = 0; trial < 20; ++trial) {
    Model m;
    m.spec = parse_network_config(kGradcheckSpec);
    m.cfg.classes = 3;
    m.init_params(700 + trial, false);
    auto head = m.forward_head(random_tensor({1, 3, 32, 32}, 800 + trial));
    auto full = init_top1(head.det.scores, 0);
    if (full.active.size() < 2) continue;
    auto g_union = td_pass({full}, head.enc.trace, head.det, m.spec, m.params, 0.2);
    std::map<int, std::vector<double>> folded;
    for (const auto& seed : full.active) {
      AttentionSignal one = full;
      one.active = {seed};
      auto gs = td_pass({one}, head.enc.trace, head.det, m.spec, m.params, 0.2);
      for (const auto& [layer, g] : gs.gates) {
        auto& dst = folded[layer];
        if (dst.empty()) dst.assign(g.value().size(), 0.0);
        for (size_t i = 0; i < dst.size(); ++i) dst[i] += g.value()[i];
      }
    }
    for (const auto& [layer, g] : g_union.gates)
      for (size_t i = 0; i < g.value().size(); ++i)
        if (g.value()[i] != folded[layer][i]) {
          note = "additivity broke at layer " + std::to_string(layer);
          return false;
        }
  }

  // support containment against the perturbation-derived footprint
  NetworkSpec spec = parse_network_config(kGradcheckSpec);
  const int L = 32;
  int trials_ok = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Model m;
    m.spec = spec;
    m.cfg.classes = 3;
    m.init_params(900 + trial, false);
    Rng pw(910 + trial);
    for (auto& [name, t] : m.params.items())
      for (auto& v : t.value_mut()) v = name.back() == 'b' ? 0.05 : pw.uniform(0.05, 0.5);

    Tensor x = random_tensor({1, 3, L, L}, 920 + trial, 0.1, 1.0);
    auto head = m.forward_head(x);
    Rng pick(930 + trial);
    const int unit = (int)pick.uniform_int(head.det.scores.total_units);
    int gidx, uy, ux;
    head.det.scores.locate(unit, gidx, uy, ux);

    // perturbation footprint of this unit's score
    auto score_of = [&](const Tensor& img) {
      auto h2 = m.forward_head(img);
      return h2.det.scores.unit_logits(0, unit)[1];
    };
    const double base = score_of(x);
    int fy0 = L, fx0 = L, fy1 = -1, fx1 = -1;
    for (int y = 0; y < L; ++y)
      for (int xx = 0; xx < L; ++xx) {
        Tensor img = Tensor::from_data(x.shape(), x.value());
        for (int c = 0; c < 3; ++c)
          img.value_mut()[((size_t)c * L + y) * L + xx] += 1e4;
        if (std::abs(score_of(img) - base) > 1e-6) {
          fy0 = std::min(fy0, y);
          fx0 = std::min(fx0, xx);
          fy1 = std::max(fy1, y);
          fx1 = std::max(fx1, xx);
        }
      }

    AttentionSignal d;
    d.units = head.det.scores.total_units;
    d.classes = 3;
    d.active = {{unit, 1}};
    auto gt = td_pass({d}, head.enc.trace, head.det, m.spec, m.params, 0.2);
    bool contained = true;
    for (const auto& [layer, g] : gt.gates) {
      RfGeometry rf = receptive_field_prefix(spec, layer + 1);
      const Shape s = g.shape();
      for (int c = 0; c < s.c && contained; ++c)
        for (int y = 0; y < s.h && contained; ++y)
          for (int xx = 0; xx < s.w && contained; ++xx) {
            if (g.value()[((size_t)c * s.h + y) * s.w + xx] == 0.0) continue;
            const double cy = rf.offset + y * rf.jump, cx = rf.offset + xx * rf.jump;
            // coordinates are pixel centers: the measured hull of pixels
            // [fy0..fy1] spans [fy0-0.5, fy1+0.5] continuously
            const double lo_y = std::max(-0.5, cy - rf.size / 2);
            const double hi_y = std::min(L - 0.5, cy + rf.size / 2);
            const double lo_x = std::max(-0.5, cx - rf.size / 2);
            const double hi_x = std::min(L - 0.5, cx + rf.size / 2);
            if (lo_y < fy0 - 0.5 - 1e-9 || hi_y > fy1 + 0.5 + 1e-9 ||
                lo_x < fx0 - 0.5 - 1e-9 || hi_x > fx1 + 0.5 + 1e-9)
              contained = false;
          }
    }
    if (!contained) {
      note = "support escaped the footprint";
      return false;
    }
    ++trials_ok;
  }
  note = std::to_string(trials_ok) + "/100 containment trials";
  return trials_ok == 100;
}

// ---------------------------------------------------------------------------
// criterion 4: brute-force oracle equivalence
// ---------------------------------------------------------------------------

double iou_oracle_int(const Box& a, const Box& b) {
  const long ax0 = (long)a.x0, ay0 = (long)a.y0, ax1 = (long)a.x1, ay1 = (long)a.y1;
  const long bx0 = (long)b.x0, by0 = (long)b.y0, bx1 = (long)b.x1, by1 = (long)b.y1;
  const long iw = std::min(ax1, bx1) - std::max(ax0, bx0);
  const long ih = std::min(ay1, by1) - std::max(ay0, by0);
  if (iw <= 0 || ih <= 0) return 0.0;
  const long inter = iw * ih;
  return (double)inter /
         (double)((ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter);
}

Box random_int_box(Rng& rng, int extent) {
  int x0 = (int)rng.uniform_int(extent - 1);
  int y0 = (int)rng.uniform_int(extent - 1);
  return {(double)x0, (double)y0, (double)(x0 + 1 + (int)rng.uniform_int(extent - x0 - 1)),
          (double)(y0 + 1 + (int)rng.uniform_int(extent - y0 - 1))};
}

bool criterion4(std::string& note) {
  Rng rng(404);
  LossConfig cfg;
  for (int trial = 0; trial < 500; ++trial) {
    const int na = 1 + (int)rng.uniform_int(24);
    const int ng = (int)rng.uniform_int(4);
    std::vector<Box> anchors;
    std::vector<GtBox> gt;
    for (int i = 0; i < na; ++i) anchors.push_back(random_int_box(rng, 64));
    for (int i = 0; i < ng; ++i)
      gt.push_back({random_int_box(rng, 64), 1 + (int)rng.uniform_int(3)});
    // pairwise ious must agree exactly
    for (const auto& a : anchors)
      for (const auto& g : gt)
        if (iou(a, g.box) != iou_oracle_int(a, g.box)) {
          note = "iou mismatch";
          return false;
        }
    // rule application from the matrix
    std::vector<int> expect(anchors.size());
    for (size_t i = 0; i < anchors.size(); ++i) {
      double best = 0.0;
      int cls = 0;
      for (const auto& g : gt) {
        const double v = iou_oracle_int(anchors[i], g.box);
        if (v > best) {
          best = v;
          cls = g.cls;
        }
      }
      expect[i] = best > cfg.theta_pos ? cls : (best < cfg.theta_neg ? 0 : kDontCare);
    }
    for (const auto& g : gt) {
      size_t bi = 0;
      double best = -1;
      for (size_t i = 0; i < anchors.size(); ++i) {
        const double v = iou_oracle_int(anchors[i], g.box);
        if (v > best) {
          best = v;
          bi = i;
        }
      }
      expect[bi] = g.cls;
    }
    if (assign_targets(anchors, gt, cfg) != expect) {
      note = "assignment mismatch";
      return false;
    }
  }

  // receptive fields against the perturbation footprint on 20 random stacks
  Rng srng(2024);
  int rf_ok = 0;
  for (int trial = 0; rf_ok < 20 && trial < 80; ++trial) {
    std::vector<LayerSpec> layers;
    const int depth = 1 + (int)srng.uniform_int(3);
    for (int i = 0; i < depth; ++i) {
      if (srng.uniform() < 0.3)
        layers.push_back({LayerKind::MaxPool, 0, 2 + (int)srng.uniform_int(2), 2, 0, 1});
      else {
        const int k = 1 + (int)srng.uniform_int(3) * 2;
        layers.push_back({k == 1 ? LayerKind::CollapsedConv : LayerKind::Conv, 1, k,
                          1 + (int)srng.uniform_int(2), (int)srng.uniform_int(2),
                          k > 1 ? 1 + (int)srng.uniform_int(2) : 1});
      }
      if (layers.back().is_conv() && srng.uniform() < 0.5)
        layers.push_back({LayerKind::Relu, 0, 1, 1, 0, 1});
    }
    NetworkSpec spec;
    spec.in_channels = 1;
    spec.layers = layers;
    const int L = 36;
    RfGeometry rf = receptive_field_prefix(spec, (int)layers.size());
    if (rf.size > 14) continue;
    ParamRegistry params;
    Rng prng(3000 + trial);
    register_encoder_params(spec, "bu", params, prng);
    for (auto& [name, t] : params.items())
      for (auto& v : t.value_mut()) v = name.back() == 'b' ? 0.1 : prng.uniform(0.1, 1.0);
    Rng xr(99);
    std::vector<double> base((size_t)L * L);
    for (auto& v : base) v = xr.uniform(0.1, 1.0);
    auto run = [&](const std::vector<double>& img) {
      return forward_encode(Tensor::from_data({1, 1, L, L}, img), spec, params).top;
    };
    const Shape os = run(base).shape();
    if (os.w < 4 || os.h < 4) continue;
    const int uy = os.h / 2, ux = os.w / 2;
    const double cy = rf.offset + uy * rf.jump, cx = rf.offset + ux * rf.jump;
    if (cy - rf.size / 2 < 0 || cy + rf.size / 2 > L || cx - rf.size / 2 < 0 ||
        cx + rf.size / 2 > L)
      continue;
    auto footprint = [&](int oy, int ox) {
      const auto y0 = run(base).value();
      int a = L, b = L, c = -1, d = -1;
      for (int y = 0; y < L; ++y)
        for (int xx = 0; xx < L; ++xx) {
          auto img = base;
          img[(size_t)y * L + xx] += 1e4;
          const auto y1 = run(img).value();
          if (std::abs(y1[(size_t)oy * os.w + ox] - y0[(size_t)oy * os.w + ox]) > 1e-6) {
            a = std::min(a, y);
            b = std::min(b, xx);
            c = std::max(c, y);
            d = std::max(d, xx);
          }
        }
      return std::array<int, 4>{a, b, c, d};
    };
    auto f0 = footprint(uy, ux);
    auto f1 = footprint(uy, ux + 1);
    if (f0[2] - f0[0] + 1 != (int)rf.size || f0[3] - f0[1] + 1 != (int)rf.size ||
        f1[1] - f0[1] != (int)rf.jump) {
      note = "receptive-field mismatch";
      return false;
    }
    ++rf_ok;
  }
  if (rf_ok != 20) {
    note = "could not complete 20 receptive-field trials";
    return false;
  }

  // stage-2 component selection vs an exhaustive enumerator
  Rng wrng(808);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + (int)wrng.uniform_int(24);
    std::vector<PsEntry> ps;
    for (int i = 0; i < n; ++i)
      ps.push_back({(int)wrng.uniform_int(3), (int)wrng.uniform_int(5), (int)wrng.uniform_int(5),
                    wrng.uniform(0.05, 2.0)});
    std::vector<int> winners(n);
    for (int i = 0; i < n; ++i) winners[i] = i;
    const double alpha = 0.2;
    auto got = stage2_group_select_conv(ps, winners, alpha);

    // enumerator: BFS components, direct scoring
    std::vector<int> comp(n, -1);
    int ncomp = 0;
    for (int i = 0; i < n; ++i) {
      if (comp[i] >= 0) continue;
      comp[i] = ncomp;
      std::vector<int> stack = {i};
      while (!stack.empty()) {
        int cur = stack.back();
        stack.pop_back();
        for (int j = 0; j < n; ++j)
          if (comp[j] < 0 &&
              std::abs(ps[cur].y - ps[j].y) + std::abs(ps[cur].x - ps[j].x) <= 1) {
            comp[j] = ncomp;
            stack.push_back(j);
          }
      }
      ++ncomp;
    }
    double total = 0;
    for (const auto& e : ps) total += e.ps;
    int best = -1;
    double best_score = 0, best_sum = 0;
    std::pair<int, int> best_coord{1 << 30, 1 << 30};
    for (int c = 0; c < ncomp; ++c) {
      int count = 0;
      double sum = 0;
      std::pair<int, int> coord{1 << 30, 1 << 30};
      for (int i = 0; i < n; ++i)
        if (comp[i] == c) {
          ++count;
          sum += ps[i].ps;
          coord = std::min(coord, std::pair{ps[i].y, ps[i].x});
        }
      const double score = alpha * ((double)count / n) + (1 - alpha) * (sum / total);
      if (best < 0 || score > best_score ||
          (score == best_score && (sum > best_sum || (sum == best_sum && coord < best_coord)))) {
        best = c;
        best_score = score;
        best_sum = sum;
        best_coord = coord;
      }
    }
    std::vector<int> expect;
    for (int i = 0; i < n; ++i)
      if (comp[i] == best) expect.push_back(i);
    if (got != expect) {
      note = "stage-2 selection mismatch";
      return false;
    }
  }
  note = "iou/assign 500, rf 20, stage-2 200";
  return true;
}

// ---------------------------------------------------------------------------
// criterion 5: attention monotonicity
// ---------------------------------------------------------------------------

bool criterion5(std::string& note) {
  Rng rng(505);
  for (int trial = 0; trial < 200; ++trial) {
    const int K = 2 + (int)rng.uniform_int(4);
    const int h = 1 + (int)rng.uniform_int(6), w = 1 + (int)rng.uniform_int(6);
    ScoreMaps maps;
    maps.classes = K;
    maps.total_units = h * w;
    maps.group_offset = {0};
    maps.group_h = {h};
    maps.group_w = {w};
    maps.group_scores.push_back(random_tensor({1, K, h, w}, rng.next_u64(), -5, 5));
    auto top = init_top1(maps, 0);
    auto thr = init_threshold(maps, 0, 0.9);
    if (thr.active.size() > top.active.size()) {
      note = "threshold set larger than top-1";
      return false;
    }
    for (const auto& a : thr.active)
      if (std::find(top.active.begin(), top.active.end(), a) == top.active.end()) {
        note = "threshold set is not a subset";
        return false;
      }
  }
  note = "200/200 maps";
  return true;
}

// ---------------------------------------------------------------------------
// criterion 6: multiplicative blocking is exact
// ---------------------------------------------------------------------------

bool criterion6(std::string& note) {
  NetworkSpec spec = load_network_config(std::string(CONFIG_DIR) + "/desk64.cfg");
  DecoderConfig dcfg;
  ParamRegistry params;
  Rng rng(606);
  register_decoder_params(spec, dcfg, 4, params, rng);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor h = random_tensor({2, 48, 16, 16}, 6000 + trial);
    std::vector<double> gv((size_t)2 * 48 * 16 * 16, 0.0);
    Rng grng(6100 + trial);
    for (int i = 0; i < 200; ++i) gv[grng.uniform_int(gv.size())] = grng.uniform(0.01, 3.0);
    Tensor g = Tensor::from_data({2, 48, 16, 16}, gv);
    Tensor bu = relu(conv2d(h, params.at("seg.l1.bu.w"), params.at("seg.l1.bu.b"), 1, 1, 1));
    Tensor td = relu(conv2d(g, params.at("seg.l1.td.w"), Tensor(), 1, 0, 1));
    Tensor mod = modulate(bu, td, Modulation::Mul);
    const Shape ms = mod.shape();
    const size_t plane = (size_t)16 * 16;
    for (int n = 0; n < 2; ++n)
      for (size_t p = 0; p < plane; ++p) {
        bool zero_gated = true;
        for (int c = 0; c < 48 && zero_gated; ++c)
          if (gv[((size_t)n * 48 + c) * plane + p] != 0.0) zero_gated = false;
        if (!zero_gated) continue;
        for (int c = 0; c < ms.c; ++c)
          if (mod.value()[((size_t)n * ms.c + c) * plane + p] != 0.0) {
            note = "nonzero feature at a zero-gated pixel";
            return false;
          }
      }
  }
  note = "bit-exact over 10 random trials";
  return true;
}

// ---------------------------------------------------------------------------
// criteria 7 and 8: budgeted directional training and robustness
// ---------------------------------------------------------------------------

struct SeedRun {
  double miou3 = 0, miou_bu = 0, miou1 = 0;
  std::map<std::string, double> deg3, deg1;  // perturbation degradations
};

SeedRun run_seed(const TrainDataset& data, const NetworkSpec& spec, uint64_t seed) {
  ModelConfig base;
  base.classes = 4;

  // 5e-3 is the desk-scale from-scratch rate: 1e-3 suits
  // fine-tuning a pretrained encoder but leaves the fresh decoder underfit
  // within the fixed epoch budget
  SgdConfig pre_cfg;
  pre_cfg.epochs = 15;
  pre_cfg.lr = 5e-3;
  auto pre = pretrain_head(data, spec, base, pre_cfg, seed);

  SgdConfig joint_cfg;
  joint_cfg.epochs = 30;
  joint_cfg.lr = 5e-3;

  auto train_variant = [&](DecoderInputs inputs, int levels) {
    ModelConfig mc = base;
    mc.dec.inputs = inputs;
    mc.dec.levels = levels;
    return train_multiloss(data, spec, mc, joint_cfg, pre.ckpt, seed);
  };
  auto eval_variant = [&](const Checkpoint& ckpt, DecoderInputs inputs, int levels,
                          const EvalOptions& opts = {}) {
    ModelConfig mc = base;
    mc.dec.inputs = inputs;
    mc.dec.levels = levels;
    Model m;
    m.spec = spec;
    m.cfg = mc;
    m.init_params(seed, true);
    restore_params(ckpt, m.params);
    return evaluate(data, data.val, m, opts);
  };

  auto ssn3 = train_variant(DecoderInputs::Both, 3);
  auto bu = train_variant(DecoderInputs::BuOnly, 3);
  auto ssn1 = train_variant(DecoderInputs::Both, 1);

  SeedRun r;
  r.miou3 = eval_variant(ssn3.ckpt, DecoderInputs::Both, 3).cm_miou;
  r.miou_bu = eval_variant(bu.ckpt, DecoderInputs::BuOnly, 3).cm_miou;
  r.miou1 = eval_variant(ssn1.ckpt, DecoderInputs::Both, 1).cm_miou;

  for (const char* kind : {"uniform", "salt-pepper"}) {
    EvalOptions opts;
    opts.use_perturb = true;
    opts.perturb = {parse_perturb_kind(kind), 0.45, seed};
    const double p3 = eval_variant(ssn3.ckpt, DecoderInputs::Both, 3, opts).cm_miou;
    const double p1 = eval_variant(ssn1.ckpt, DecoderInputs::Both, 1, opts).cm_miou;
    r.deg3[kind] = r.miou3 - p3;
    r.deg1[kind] = r.miou1 - p1;
  }
  return r;
}

std::vector<SeedRun> g_seed_runs;
double g_training_minutes = 0;

bool criterion7(std::string& note) {
  if (g_skip_training) {
    note = "skipped on request";
    return false;
  }
  const auto t0 = clk::now();
  auto samples = synth_generate(2161, 500, 64, 4);
  auto val = synth_generate(mix_seed(2161, fnv1a64("val")), 100, 64, 4);
  TrainDataset data;
  data.train = std::move(samples);
  data.val = std::move(val);
  data.mean = mean_pixel(data.train);
  data.classes = 4;
  data.target = 64;
  NetworkSpec spec = load_network_config(std::string(CONFIG_DIR) + "/desk64.cfg");

  int win_bu = 0, win_levels = 0;
  std::ostringstream detail;
  for (uint64_t seed : {101ull, 102ull, 103ull}) {
    g_seed_runs.push_back(run_seed(data, spec, seed));
    const SeedRun& r = g_seed_runs.back();
    win_bu += r.miou3 >= r.miou_bu;
    win_levels += r.miou3 >= r.miou1;
    char buf[160];
    std::snprintf(buf, sizeof buf, " s%llu[3:%.3f bu:%.3f 1:%.3f]", (unsigned long long)seed,
                  r.miou3, r.miou_bu, r.miou1);
    detail << buf;
  }
  g_training_minutes = std::chrono::duration<double>(clk::now() - t0).count() / 60.0;
  const bool orderings = win_bu >= 2 && win_levels >= 2;
  const bool in_budget = g_training_minutes <= 20.0;
  char buf[280];
  std::snprintf(buf, sizeof buf, "vsBU %d/3, vsL1 %d/3,%s %.1f min%s", win_bu, win_levels,
                detail.str().c_str(), g_training_minutes,
                orderings && !in_budget ? " (orderings hold; 20 min budget exceeded)" : "");
  note = buf;
  return orderings && in_budget;
}

bool criterion8(std::string& note) {
  if (g_seed_runs.size() != 3) {
    note = "training runs unavailable";
    return false;
  }
  std::ostringstream detail;
  bool ok = true;
  for (const char* kind : {"uniform", "salt-pepper"}) {
    int wins = 0;
    for (const auto& r : g_seed_runs) wins += r.deg3.at(kind) <= r.deg1.at(kind);
    detail << " " << kind << ":" << wins << "/3";
    ok &= wins >= 2;
  }
  note = detail.str();
  return ok;
}

// ---------------------------------------------------------------------------
// criterion 9: determinism of commands
// ---------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

bool dirs_identical(const fs::path& a, const fs::path& b, std::string& why) {
  std::map<std::string, std::string> fa, fb;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file() && e.path().filename() != "config.json")
      fa[fs::relative(e.path(), a).string()] = slurp(e.path());
  for (const auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file() && e.path().filename() != "config.json")
      fb[fs::relative(e.path(), b).string()] = slurp(e.path());
  if (fa.size() != fb.size()) {
    why = "file count differs";
    return false;
  }
  for (auto& [name, bytes] : fa)
    if (!fb.count(name) || fb[name] != bytes) {
      why = "differs: " + name;
      return false;
    }
  return true;
}

bool criterion9(std::string& note) {
  const fs::path root = fs::temp_directory_path() / "tdseg_accept_det";
  fs::remove_all(root);
  fs::create_directories(root);
  RunConfig cfg;
  cfg.data_dir = (root / "data").string();
  cfg.arch_path = std::string(CONFIG_DIR) + "/desk64.cfg";
  cfg.classes = 4;
  cfg.canvas = 64;
  cfg.n_train = 8;
  cfg.n_val = 4;
  cfg.epochs = 1;
  cfg.pretrain_epochs = 1;
  cfg.seed = 77;

  auto run_twice = [&](RunConfig rc, const std::string& stem) {
    rc.out_dir = (root / (stem + "_a")).string();
    run_command(rc);
    // the rerun path: reload the persisted snapshot and point it elsewhere
    RunConfig snap = load_run_config(rc.out_dir + "/config.json");
    snap.out_dir = (root / (stem + "_b")).string();
    run_command(snap);
    std::string why;
    if (!dirs_identical(root / (stem + "_a"), root / (stem + "_b"), why))
      throw std::runtime_error(stem + " not reproducible: " + why);
  };

  RunConfig synth = cfg;
  synth.command = "synth";
  synth.out_dir = cfg.data_dir;
  run_command(synth);
  {
    RunConfig again = synth;
    again.out_dir = (root / "data2").string();
    run_command(again);
    std::string why;
    if (!dirs_identical(root / "data", root / "data2", why)) {
      note = "synth not reproducible: " + why;
      return false;
    }
  }

  RunConfig pre = cfg;
  pre.command = "pretrain";
  run_twice(pre, "pre");

  RunConfig train = cfg;
  train.command = "train";
  train.ckpt_path = (root / "pre_a" / "checkpoint.bin").string();
  run_twice(train, "joint");

  RunConfig ev = cfg;
  ev.command = "eval";
  ev.ckpt_path = (root / "joint_a" / "checkpoint.bin").string();
  run_twice(ev, "eval");

  RunConfig gd = cfg;
  gd.command = "gate-dump";
  gd.ckpt_path = (root / "joint_a" / "checkpoint.bin").string();
  gd.init = "top1";
  run_twice(gd, "gates");

  fs::remove_all(root);
  note = "synth/pretrain/train/eval/gate-dump";
  return true;
}

// ---------------------------------------------------------------------------
// criterion 10: metric oracle
// ---------------------------------------------------------------------------

bool criterion10(std::string& note) {
  Rng rng(1010);
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 2 + (int)rng.uniform_int(5);
    const int n = 32 + (int)rng.uniform_int(256);
    std::vector<uint8_t> gt(n);
    std::vector<int> pred(n);
    bool any = false;
    for (int i = 0; i < n; ++i) {
      gt[i] = rng.uniform() < 0.2 ? 255 : (uint8_t)rng.uniform_int(k);
      pred[i] = (int)rng.uniform_int(k);
      any |= gt[i] != 255;
    }
    if (!any) gt[0] = 1;
    std::vector<std::vector<int64_t>> cm(k, std::vector<int64_t>(k, 0));
    for (int i = 0; i < n; ++i)
      if (gt[i] != 255) cm[gt[i]][pred[i]]++;
    double macc = 0, miou = 0;
    int present = 0;
    for (int c = 0; c < k; ++c) {
      int64_t row = 0, col = 0;
      for (int j = 0; j < k; ++j) {
        row += cm[c][j];
        col += cm[j][c];
      }
      if (!row) continue;
      macc += (double)cm[c][c] / row;
      miou += (double)cm[c][c] / (row + col - cm[c][c]);
      ++present;
    }
    macc /= present;
    miou /= present;
    if (std::abs(mean_pixel_accuracy(pred, gt, k) - macc) >= 1e-12 ||
        std::abs(mean_iou(pred, gt, k) - miou) >= 1e-12) {
      note = "metric mismatch";
      return false;
    }
  }
  note = "100/100 pairs within 1e-12";
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 1; i < argc; ++i)
    if (std::string(argv[i]) == "--skip-training") g_skip_training = true;

  std::printf("acceptance suite\n");
  criterion(1, "gradient-correctness", criterion1);
  criterion(2, "gate-conservation", criterion2);
  criterion(3, "additivity-containment", criterion3);
  criterion(4, "oracle-equivalence", criterion4);
  criterion(5, "attention-monotonicity", criterion5);
  criterion(6, "modulation-blocking", criterion6);
  criterion(7, "budgeted-directional", criterion7);
  criterion(8, "perturbation-directional", criterion8);
  criterion(9, "determinism", criterion9);
  criterion(10, "metric-oracle", criterion10);
  std::printf("%d criterion(s) failed\n", g_failures);
  return g_failures;
}
