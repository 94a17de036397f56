#include "tdseg/topdown.hpp"

#include <algorithm>
#include <functional>
#include <stdexcept>
#include <unordered_map>

namespace tdseg {

std::vector<int> stage1_competition(const std::vector<PsEntry>& ps) {
  double sum = 0.0;
  int npos = 0;
  for (const auto& e : ps)
    if (e.ps > 0.0) {
      sum += e.ps;
      ++npos;
    }
  std::vector<int> winners;
  if (npos == 0) return winners;
  const double mean = sum / npos;
  for (int i = 0; i < (int)ps.size(); ++i)
    if (ps[i].ps >= mean) winners.push_back(i);
  return winners;
}

std::vector<int> stage2_group_select_conv(const std::vector<PsEntry>& ps,
                                          const std::vector<int>& winners, double alpha_td) {
  const int n = (int)winners.size();
  if (n == 0) return {};
  // winners at the same pixel always share a component, so label distinct
  // pixels (at most the kernel window) and union 4-neighbours
  struct Pixel {
    int y, x, root;
  };
  static thread_local std::vector<Pixel> pixels;
  static thread_local std::vector<int> pixel_of;  // per winner
  pixels.clear();
  pixel_of.resize(n);
  for (int i = 0; i < n; ++i) {
    const PsEntry& e = ps[winners[i]];
    int pid = -1;
    for (int p = 0; p < (int)pixels.size(); ++p)
      if (pixels[p].y == e.y && pixels[p].x == e.x) {
        pid = p;
        break;
      }
    if (pid < 0) {
      pid = (int)pixels.size();
      pixels.push_back({e.y, e.x, pid});
    }
    pixel_of[i] = pid;
  }
  auto find = [&](int i) {
    while (pixels[i].root != i) i = pixels[i].root = pixels[pixels[i].root].root;
    return i;
  };
  for (int i = 0; i < (int)pixels.size(); ++i)
    for (int j = i + 1; j < (int)pixels.size(); ++j) {
      const int d = std::abs(pixels[i].y - pixels[j].y) + std::abs(pixels[i].x - pixels[j].x);
      if (d <= 1) {
        int ri = find(i), rj = find(j);
        if (ri != rj) pixels[rj].root = ri;
      }
    }

  struct Comp {
    int count = 0;
    double sum = 0.0;
    int min_y = 1 << 30, min_x = 1 << 30;
  };
  static thread_local std::vector<Comp> comps;
  comps.assign(pixels.size(), Comp{});
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const PsEntry& e = ps[winners[i]];
    Comp& c = comps[find(pixel_of[i])];
    c.count++;
    c.sum += e.ps;
    if (e.y < c.min_y || (e.y == c.min_y && e.x < c.min_x)) {
      c.min_y = e.y;
      c.min_x = e.x;
    }
    total += e.ps;
  }
  int best = -1;
  double best_score = 0.0;
  for (int r = 0; r < (int)comps.size(); ++r) {
    const Comp& c = comps[r];
    if (!c.count) continue;
    const double score = alpha_td * ((double)c.count / n) + (1.0 - alpha_td) * (c.sum / total);
    bool better = false;
    if (best < 0)
      better = true;
    else if (score != best_score)
      better = score > best_score;
    else if (c.sum != comps[best].sum)
      better = c.sum > comps[best].sum;
    else
      better = std::pair(c.min_y, c.min_x) < std::pair(comps[best].min_y, comps[best].min_x);
    if (better) {
      best = r;
      best_score = score;
    }
  }
  std::vector<int> out;
  for (int i = 0; i < n; ++i)
    if (find(pixel_of[i]) == best) out.push_back(winners[i]);
  return out;
}

std::vector<int> stage2_wta_collapsed(const std::vector<PsEntry>& ps,
                                      const std::vector<int>& winners) {
  if (winners.empty()) return {};
  int best = winners[0];
  for (int i : winners) {
    if (ps[i].ps > ps[best].ps || (ps[i].ps == ps[best].ps && ps[i].channel < ps[best].channel))
      best = i;
  }
  return {best};
}

const Tensor& GatingTrace::at_layer(int layer) const {
  auto it = gates.find(layer);
  if (it == gates.end())
    throw std::invalid_argument("no gate map recorded for layer " + std::to_string(layer));
  return it->second;
}

double GatingTrace::mass(int layer) const {
  const Tensor& t = at_layer(layer);
  double s = 0.0;
  for (double v : t.value()) s += v;
  return s;
}

namespace {

// Sparse accumulator over one activity plane: dense values plus the list of
// touched indices (gates are strictly positive, so zero means untouched).
struct SparseGate {
  std::vector<double> dense;
  std::vector<int> touched;

  void ensure(size_t n) {
    if (dense.size() < n) dense.assign(n, 0.0);
  }
  void addv(int i, double v) {
    if (dense[i] == 0.0) touched.push_back(i);
    dense[i] += v;
  }
  void clear() {
    for (int i : touched) dense[i] = 0.0;
    touched.clear();
  }
};

// Selection is independent of the gate value, so per-node results are shared
// across seeds within one pass. idx packs the input-plane coordinate; q is
// the normalized stage-3 weight.
struct CachedShare {
  int32_t idx;
  double q;
};

struct NodeCache {
  std::unordered_map<int64_t, std::pair<int32_t, int32_t>> span;  // node -> (offset, len)
  std::vector<CachedShare> arena;
};

// Emits the stage-3 contributions of one gated node into `out`.
template <typename Emit>
void propagate_node(const TdLayerRec& rec, int sample, int c, int y, int x, double gate,
                    double alpha_td, NodeCache* cache, Emit&& emit) {
  const Shape is = rec.input.shape();
  const Shape os = rec.output.shape();
  switch (rec.spec.kind) {
    case LayerKind::Relu: {
      const size_t i = (((size_t)sample * is.c + c) * is.h + y) * is.w + x;
      if (rec.input.value()[i] > 0.0) emit(c, y, x, gate);
      return;
    }
    case LayerKind::MaxPool: {
      if (!rec.argmax) throw std::logic_error("maxpool without argmax indices in top-down pass");
      const size_t o = (((size_t)sample * os.c + c) * os.h + y) * os.w + x;
      int32_t flat = (*rec.argmax)[o];
      const int64_t rel = flat - (int64_t)sample * is.c * is.h * is.w;
      const int ic = (int)(rel / (is.h * is.w));
      const int r = (int)(rel % (is.h * is.w));
      emit(ic, r / is.w, r % is.w, gate);
      return;
    }
    case LayerKind::Conv:
    case LayerKind::CollapsedConv: {
      if (cache) {
        const int64_t key = (((int64_t)sample * os.c + c) * os.h + y) * os.w + x;
        auto it = cache->span.find(key);
        if (it != cache->span.end()) {
          const auto [off, len] = it->second;
          for (int32_t i = 0; i < len; ++i) {
            const CachedShare& s = cache->arena[off + i];
            const int ic = s.idx / (is.h * is.w);
            const int r = s.idx % (is.h * is.w);
            emit(ic, r / is.w, r % is.w, gate * s.q);
          }
          return;
        }
      }
      const Shape ws = rec.kernel.shape();
      const double* wv = rec.kernel.value().data();
      const double* xv = rec.input.value().data();
      static thread_local std::vector<PsEntry> ps;
      ps.clear();
      ps.reserve((size_t)ws.c * ws.h * ws.w);
      const int iy_base = y * rec.spec.stride - rec.spec.pad;
      const int ix_base = x * rec.spec.stride - rec.spec.pad;
      for (int kh = 0; kh < ws.h; ++kh) {
        const int iy = iy_base + kh * rec.spec.dil;
        if (iy < 0 || iy >= is.h) continue;
        for (int kw = 0; kw < ws.w; ++kw) {
          const int ix = ix_base + kw * rec.spec.dil;
          if (ix < 0 || ix >= is.w) continue;
          const double* wp = wv + ((size_t)c * ws.c * ws.h + kh) * ws.w + kw;
          const double* xp = xv + ((size_t)sample * is.c * is.h + iy) * is.w + ix;
          const size_t wstep = (size_t)ws.h * ws.w;
          const size_t xstep = (size_t)is.h * is.w;
          for (int ic = 0; ic < ws.c; ++ic) {
            const double v = wp[ic * wstep] * xp[ic * xstep];
            if (v != 0.0) ps.push_back({ic, iy, ix, v});
          }
        }
      }
      auto winners = stage1_competition(ps);
      std::vector<int> selected;
      if (!winners.empty())
        selected = rec.spec.kind == LayerKind::CollapsedConv
                       ? stage2_wta_collapsed(ps, winners)
                       : stage2_group_select_conv(ps, winners, alpha_td);
      double denom = 0.0;
      for (int i : selected) denom += ps[i].ps;
      if (cache) {
        const int64_t key = (((int64_t)sample * os.c + c) * os.h + y) * os.w + x;
        const int32_t off = (int32_t)cache->arena.size();
        for (int i : selected)
          cache->arena.push_back(
              {(int32_t)(((size_t)ps[i].channel * is.h + ps[i].y) * is.w + ps[i].x),
               ps[i].ps / denom});
        cache->span.emplace(key, std::pair{off, (int32_t)selected.size()});
      }
      for (int i : selected) emit(ps[i].channel, ps[i].y, ps[i].x, gate * (ps[i].ps / denom));
      return;
    }
  }
}

struct ActiveUnit {
  int c, y, x;
  double gate;
};

void propagate_layer(const TdLayerRec& rec, int sample, const std::vector<ActiveUnit>& in,
                     double alpha_td, SparseGate& scratch, std::vector<ActiveUnit>& out,
                     NodeCache* cache = nullptr) {
  const Shape is = rec.input.shape();
  scratch.ensure((size_t)is.c * is.h * is.w);
  for (const auto& a : in)
    propagate_node(rec, sample, a.c, a.y, a.x, a.gate, alpha_td, cache,
                   [&](int c, int y, int x, double v) {
                     scratch.addv(((size_t)c * is.h + y) * is.w + x, v);
                   });
  out.clear();
  for (int i : scratch.touched) {
    const int c = i / (is.h * is.w);
    const int r = i % (is.h * is.w);
    out.push_back({c, r / is.w, r % is.w, scratch.dense[i]});
  }
  scratch.clear();
}

}  // namespace

std::vector<double> td_layer(const TdLayerRec& rec, const std::vector<double>& g_above, int sample,
                             double alpha_td) {
  const Shape os = rec.output.shape();
  const Shape is = rec.input.shape();
  if ((int64_t)g_above.size() != (int64_t)os.c * os.h * os.w)
    throw std::invalid_argument("td_layer: gate size does not match layer output");
  std::vector<ActiveUnit> in;
  for (int c = 0; c < os.c; ++c)
    for (int y = 0; y < os.h; ++y)
      for (int x = 0; x < os.w; ++x) {
        const double g = g_above[((size_t)c * os.h + y) * os.w + x];
        if (g > 0.0) in.push_back({c, y, x, g});
      }
  SparseGate scratch;
  std::vector<ActiveUnit> out;
  propagate_layer(rec, sample, in, alpha_td, scratch, out);
  std::vector<double> g_below((size_t)is.c * is.h * is.w, 0.0);
  for (const auto& a : out) g_below[((size_t)a.c * is.h + a.y) * is.w + a.x] = a.gate;
  return g_below;
}

GatingTrace td_pass(const std::vector<AttentionSignal>& seeds, const ActivationTrace& trace,
                    const DetectResult& det, const NetworkSpec& spec, ParamRegistry& params,
                    double alpha_td, const std::string& prefix) {
  GatingTrace gt;
  gt.alpha_td = alpha_td;
  const int head_layer = spec.tap_layer(spec.head_tap);
  if (spec.stop_layer < 0) throw std::invalid_argument("td_pass: no stop layer configured");

  // encoder chain in top-down order: head_layer down to stop_layer
  std::vector<TdLayerRec> bu_chain;
  for (int i = head_layer; i >= spec.stop_layer; --i) {
    TdLayerRec rec;
    rec.spec = spec.layers[i];
    rec.input = i == 0 ? trace.input : trace.entries[i - 1].out;
    rec.output = trace.entries[i].out;
    if (rec.spec.is_conv()) rec.kernel = params.at(prefix + ".conv" + std::to_string(i) + ".w");
    rec.argmax = trace.entries[i].argmax;
    bu_chain.push_back(rec);
  }

  // per-seed chains through the head: prediction layer, own group reversed,
  // then (sequential only) every group below it
  std::vector<std::vector<TdLayerRec>> chains(det.group_layers.size());
  for (int g = 0; g < (int)det.group_layers.size(); ++g) {
    chains[g].push_back(det.pred_layers[g]);
    const int lowest = spec.design == DetectDesign::Sequential ? 0 : g;
    for (int gg = g; gg >= lowest; --gg)
      for (auto it = det.group_layers[gg].rbegin(); it != det.group_layers[gg].rend(); ++it)
        chains[g].push_back(*it);
  }

  // gate buffers: one per encoder level from the stop layer's input upward
  const int batch = trace.input.shape().n;
  std::map<int, std::vector<double>> acc;
  std::map<int, Shape> acc_shape;
  for (int i = spec.stop_layer - 1; i <= head_layer; ++i) {
    const Shape s = i < 0 ? trace.input.shape() : trace.entries[i].out.shape();
    acc_shape[i] = s;
    acc[i].assign((size_t)s.numel(), 0.0);
  }

  SparseGate scratch;
  std::vector<ActiveUnit> cur, nxt;
  std::vector<std::vector<NodeCache>> chain_caches(chains.size());
  for (size_t g = 0; g < chains.size(); ++g) chain_caches[g].resize(chains[g].size());
  std::vector<NodeCache> bu_caches(bu_chain.size());
  for (int n = 0; n < batch; ++n) {
    if (seeds[n].active.empty()) continue;
    for (const auto& [unit, cls] : seeds[n].active) {
      int g, y, x;
      det.scores.locate(unit, g, y, x);
      cur.assign(1, {cls, y, x, 1.0});
      for (size_t si = 0; si < chains[g].size(); ++si) {
        propagate_layer(chains[g][si], n, cur, alpha_td, scratch, nxt, &chain_caches[g][si]);
        std::swap(cur, nxt);
        if (cur.empty()) break;
      }
      if (cur.empty()) continue;
      // arrived at the head level; accumulate and walk the encoder down
      auto add_into = [&](int level) {
        const Shape s = acc_shape[level];
        double* dst = acc[level].data() + (size_t)n * s.c * s.h * s.w;
        for (const auto& a : cur) dst[((size_t)a.c * s.h + a.y) * s.w + a.x] += a.gate;
      };
      add_into(head_layer);
      for (size_t step = 0; step < bu_chain.size(); ++step) {
        propagate_layer(bu_chain[step], n, cur, alpha_td, scratch, nxt, &bu_caches[step]);
        std::swap(cur, nxt);
        if (cur.empty()) break;
        add_into(head_layer - (int)step - 1);
      }
    }
  }
  for (auto& [level, buf] : acc)
    gt.gates.emplace(level, Tensor::from_data(acc_shape[level], std::move(buf)));
  return gt;
}

}  // namespace tdseg
