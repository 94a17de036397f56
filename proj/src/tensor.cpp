#include "tdseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "tdseg/conv_engine.hpp"

namespace tdseg {

namespace {
// training allocates and frees the same multi-megabyte activation buffers
// every step; keep them on the heap instead of returning pages to the kernel
struct MallocTuning {
  MallocTuning() {
#ifdef __GLIBC__
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  }
};
const MallocTuning malloc_tuning;
}  // namespace

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

namespace detail {

double* TensorNode::grad_data() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad.data();
}

}  // namespace detail

using detail::TensorNode;

namespace {

std::shared_ptr<TensorNode> new_node(Shape s, bool rg) {
  auto n = std::make_shared<TensorNode>();
  n->shape = s;
  n->value.assign((size_t)s.numel(), 0.0);
  n->requires_grad = rg;
  return n;
}

std::shared_ptr<TensorNode> op_node(Shape s, std::vector<std::shared_ptr<TensorNode>> parents) {
  auto n = new_node(s, false);
  n->is_leaf = false;
  for (auto& p : parents)
    if (p && p->requires_grad) n->requires_grad = true;
  n->parents = std::move(parents);
  return n;
}

[[noreturn]] void reject(const std::string& msg) { throw std::invalid_argument(msg); }

}  // namespace

Tensor Tensor::zeros(Shape s, bool rg) { return Tensor(new_node(s, rg)); }

Tensor Tensor::full(Shape s, double v, bool rg) {
  auto n = new_node(s, rg);
  std::fill(n->value.begin(), n->value.end(), v);
  return Tensor(n);
}

Tensor Tensor::from_data(Shape s, std::vector<double> data, bool rg) {
  if ((int64_t)data.size() != s.numel()) reject("tensor data length does not match shape " + s.str());
  auto n = new_node(s, rg);
  n->value = std::move(data);
  return Tensor(n);
}

const std::vector<double>& Tensor::grad() const {
  if (node_->grad.empty()) node_->grad.assign(node_->value.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detached() const {
  auto n = new_node(node_->shape, false);
  n->value = node_->value;
  return Tensor(n);
}

double Tensor::item() const {
  if (numel() != 1) reject("item() requires a scalar tensor, got " + shape().str());
  return node_->value[0];
}

Kernel make_kernel(int out_c, int in_c, int kh, int kw, std::vector<double> data) {
  if (kh < 1 || kw < 1) reject("kernel extents must be >= 1");
  return Tensor::from_data({out_c, in_c, kh, kw}, std::move(data), true);
}

// ---- conv2d ---------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Kernel& w, const Tensor& bias, int stride, int pad, int dil) {
  if (stride < 1 || pad < 0 || dil < 1) reject("conv2d: need stride>=1, pad>=0, dil>=1");
  const Shape xs = x.shape(), ws = w.shape();
  if (xs.c != ws.c) reject("conv2d: input channels " + std::to_string(xs.c) +
                           " do not match kernel channels " + std::to_string(ws.c));
  const int oh = conv_out_extent(xs.h, ws.h, stride, pad, dil);
  const int ow = conv_out_extent(xs.w, ws.w, stride, pad, dil);
  if (oh < 1 || ow < 1) reject("conv2d: kernel does not fit input " + xs.str());
  if (bias.defined() && bias.numel() != ws.n) reject("conv2d: bias length != out channels");

  detail::ConvGeom g{xs.c, xs.h, xs.w, ws.n, oh, ow, ws.h, ws.w, stride, pad, dil};
  auto out = op_node({xs.n, ws.n, oh, ow},
                     {x.node(), w.node(), bias.defined() ? bias.node() : nullptr});
  detail::conv_forward(x.value().data(), w.value().data(),
                       bias.defined() ? bias.value().data() : nullptr, out->value.data(), g,
                       xs.n);

  auto xn = x.node(), wn = w.node(), bn = bias.defined() ? bias.node() : nullptr;
  out->backward_fn = [xn, wn, bn, g](TensorNode& self) {
    const double* dy = self.grad.data();
    const int batch = self.shape.n;
    if (wn->requires_grad || (bn && bn->requires_grad))
      detail::conv_backward_weights(xn->value.data(), dy,
                                    wn->requires_grad ? wn->grad_data() : nullptr,
                                    bn && bn->requires_grad ? bn->grad_data() : nullptr, g, batch);
    if (xn->requires_grad) detail::conv_backward_input(dy, wn->value.data(), xn->grad_data(), g, batch);
  };
  return Tensor(out);
}

// ---- maxpool ---------------------------------------------------------------

PoolResult maxpool2d(const Tensor& x, int k, int stride) {
  if (k < 1 || stride < 1) reject("maxpool2d: need k>=1 and stride>=1");
  const Shape xs = x.shape();
  if (xs.h < k || xs.w < k) reject("maxpool2d: window exceeds input extent " + xs.str());
  const int oh = (xs.h - k) / stride + 1;
  const int ow = (xs.w - k) / stride + 1;

  auto out = op_node({xs.n, xs.c, oh, ow}, {x.node()});
  auto idx = std::make_shared<std::vector<int32_t>>((size_t)out->shape.numel());
  const double* xv = x.value().data();
  double* yv = out->value.data();
  int64_t o = 0;
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c) {
      const size_t plane = ((size_t)n * xs.c + c) * xs.h * xs.w;
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox, ++o) {
          const int iy0 = oy * stride, ix0 = ox * stride;
          double best = xv[plane + (size_t)iy0 * xs.w + ix0];
          int32_t bi = (int32_t)(plane + (size_t)iy0 * xs.w + ix0);
          for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx) {
              const size_t i = plane + (size_t)(iy0 + dy) * xs.w + (ix0 + dx);
              if (xv[i] > best) {
                best = xv[i];
                bi = (int32_t)i;
              }
            }
          yv[o] = best;
          (*idx)[o] = bi;
        }
    }

  auto xn = x.node();
  out->backward_fn = [xn, idx](TensorNode& self) {
    if (!xn->requires_grad) return;
    double* dx = xn->grad_data();
    const double* dy = self.grad.data();
    const size_t m = self.value.size();
    for (size_t i = 0; i < m; ++i) dx[(*idx)[i]] += dy[i];
  };
  return {Tensor(out), idx};
}

// ---- elementwise ------------------------------------------------------------

Tensor relu(const Tensor& x) {
  auto out = op_node(x.shape(), {x.node()});
  const double* xv = x.value().data();
  double* yv = out->value.data();
  const size_t m = out->value.size();
  for (size_t i = 0; i < m; ++i) yv[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  auto xn = x.node();
  out->backward_fn = [xn](TensorNode& self) {
    if (!xn->requires_grad) return;
    double* dx = xn->grad_data();
    const double* dy = self.grad.data();
    const double* xv = xn->value.data();
    for (size_t i = 0; i < self.value.size(); ++i)
      if (xv[i] > 0.0) dx[i] += dy[i];
  };
  return Tensor(out);
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) reject("add: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  auto out = op_node(a.shape(), {a.node(), b.node()});
  const double* av = a.value().data();
  const double* bv = b.value().data();
  double* yv = out->value.data();
  for (size_t i = 0; i < out->value.size(); ++i) yv[i] = av[i] + bv[i];
  auto an = a.node(), bn = b.node();
  out->backward_fn = [an, bn](TensorNode& self) {
    const double* dy = self.grad.data();
    if (an->requires_grad) {
      double* da = an->grad_data();
      for (size_t i = 0; i < self.value.size(); ++i) da[i] += dy[i];
    }
    if (bn->requires_grad) {
      double* db = bn->grad_data();
      for (size_t i = 0; i < self.value.size(); ++i) db[i] += dy[i];
    }
  };
  return Tensor(out);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) reject("mul: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  auto out = op_node(a.shape(), {a.node(), b.node()});
  const double* av = a.value().data();
  const double* bv = b.value().data();
  double* yv = out->value.data();
  for (size_t i = 0; i < out->value.size(); ++i) yv[i] = av[i] * bv[i];
  auto an = a.node(), bn = b.node();
  out->backward_fn = [an, bn](TensorNode& self) {
    const double* dy = self.grad.data();
    if (an->requires_grad) {
      double* da = an->grad_data();
      const double* bv2 = bn->value.data();
      for (size_t i = 0; i < self.value.size(); ++i) da[i] += dy[i] * bv2[i];
    }
    if (bn->requires_grad) {
      double* db = bn->grad_data();
      const double* av2 = an->value.data();
      for (size_t i = 0; i < self.value.size(); ++i) db[i] += dy[i] * av2[i];
    }
  };
  return Tensor(out);
}

Tensor scale(const Tensor& a, double s) {
  auto out = op_node(a.shape(), {a.node()});
  const double* av = a.value().data();
  double* yv = out->value.data();
  for (size_t i = 0; i < out->value.size(); ++i) yv[i] = av[i] * s;
  auto an = a.node();
  out->backward_fn = [an, s](TensorNode& self) {
    if (!an->requires_grad) return;
    double* da = an->grad_data();
    const double* dy = self.grad.data();
    for (size_t i = 0; i < self.value.size(); ++i) da[i] += dy[i] * s;
  };
  return Tensor(out);
}

Tensor sum_all(const Tensor& a) {
  auto out = op_node({1, 1, 1, 1}, {a.node()});
  double acc = 0.0;
  for (double v : a.value()) acc += v;
  out->value[0] = acc;
  auto an = a.node();
  out->backward_fn = [an](TensorNode& self) {
    if (!an->requires_grad) return;
    double* da = an->grad_data();
    const double d = self.grad[0];
    for (size_t i = 0; i < an->value.size(); ++i) da[i] += d;
  };
  return Tensor(out);
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const Shape as = a.shape(), bs = b.shape();
  if (as.n != bs.n || as.h != bs.h || as.w != bs.w)
    reject("concat_channels: spatial mismatch " + as.str() + " vs " + bs.str());
  auto out = op_node({as.n, as.c + bs.c, as.h, as.w}, {a.node(), b.node()});
  const size_t plane = (size_t)as.h * as.w;
  const double* av = a.value().data();
  const double* bv = b.value().data();
  double* yv = out->value.data();
  for (int n = 0; n < as.n; ++n) {
    std::copy(av + (size_t)n * as.c * plane, av + (size_t)(n + 1) * as.c * plane,
              yv + (size_t)n * (as.c + bs.c) * plane);
    std::copy(bv + (size_t)n * bs.c * plane, bv + (size_t)(n + 1) * bs.c * plane,
              yv + ((size_t)n * (as.c + bs.c) + as.c) * plane);
  }
  auto an = a.node(), bn = b.node();
  out->backward_fn = [an, bn, plane](TensorNode& self) {
    const Shape as2 = an->shape, bs2 = bn->shape;
    const double* dy = self.grad.data();
    for (int n = 0; n < as2.n; ++n) {
      if (an->requires_grad) {
        double* da = an->grad_data() + (size_t)n * as2.c * plane;
        const double* s = dy + (size_t)n * (as2.c + bs2.c) * plane;
        for (size_t i = 0; i < as2.c * plane; ++i) da[i] += s[i];
      }
      if (bn->requires_grad) {
        double* db = bn->grad_data() + (size_t)n * bs2.c * plane;
        const double* s = dy + ((size_t)n * (as2.c + bs2.c) + as2.c) * plane;
        for (size_t i = 0; i < bs2.c * plane; ++i) db[i] += s[i];
      }
    }
  };
  return Tensor(out);
}

// ---- bilinear x2 upsampling --------------------------------------------------

namespace {
struct AxisMap {
  std::vector<int> i0, i1;
  std::vector<double> w0, w1;
};

AxisMap upsample_axis(int in, int out) {
  AxisMap m;
  m.i0.resize(out);
  m.i1.resize(out);
  m.w0.resize(out);
  m.w1.resize(out);
  const double f = out > 1 ? (double)(in - 1) / (out - 1) : 0.0;
  for (int o = 0; o < out; ++o) {
    const double pos = o * f;
    int lo = (int)pos;
    if (lo > in - 2) lo = in > 1 ? in - 2 : 0;
    const double t = in > 1 ? pos - lo : 0.0;
    m.i0[o] = lo;
    m.i1[o] = in > 1 ? lo + 1 : 0;
    m.w0[o] = 1.0 - t;
    m.w1[o] = t;
  }
  return m;
}
}  // namespace

Tensor upsample2x(const Tensor& x) {
  const Shape xs = x.shape();
  const int oh = xs.h * 2, ow = xs.w * 2;
  auto ym = std::make_shared<AxisMap>(upsample_axis(xs.h, oh));
  auto xm = std::make_shared<AxisMap>(upsample_axis(xs.w, ow));
  auto out = op_node({xs.n, xs.c, oh, ow}, {x.node()});
  const double* xv = x.value().data();
  double* yv = out->value.data();
  for (int nc = 0; nc < xs.n * xs.c; ++nc) {
    const double* xp = xv + (size_t)nc * xs.h * xs.w;
    double* yp = yv + (size_t)nc * oh * ow;
    for (int oy = 0; oy < oh; ++oy) {
      const double* r0 = xp + (size_t)ym->i0[oy] * xs.w;
      const double* r1 = xp + (size_t)ym->i1[oy] * xs.w;
      const double wy0 = ym->w0[oy], wy1 = ym->w1[oy];
      for (int ox = 0; ox < ow; ++ox)
        yp[(size_t)oy * ow + ox] = wy0 * (xm->w0[ox] * r0[xm->i0[ox]] + xm->w1[ox] * r0[xm->i1[ox]]) +
                                   wy1 * (xm->w0[ox] * r1[xm->i0[ox]] + xm->w1[ox] * r1[xm->i1[ox]]);
    }
  }
  auto xn = x.node();
  out->backward_fn = [xn, ym, xm](TensorNode& self) {
    if (!xn->requires_grad) return;
    const Shape xs2 = xn->shape;
    const int oh2 = self.shape.h, ow2 = self.shape.w;
    double* dx = xn->grad_data();
    const double* dy = self.grad.data();
    for (int nc = 0; nc < xs2.n * xs2.c; ++nc) {
      double* dxp = dx + (size_t)nc * xs2.h * xs2.w;
      const double* dyp = dy + (size_t)nc * oh2 * ow2;
      for (int oy = 0; oy < oh2; ++oy)
        for (int ox = 0; ox < ow2; ++ox) {
          const double d = dyp[(size_t)oy * ow2 + ox];
          dxp[(size_t)ym->i0[oy] * xs2.w + xm->i0[ox]] += ym->w0[oy] * xm->w0[ox] * d;
          dxp[(size_t)ym->i0[oy] * xs2.w + xm->i1[ox]] += ym->w0[oy] * xm->w1[ox] * d;
          dxp[(size_t)ym->i1[oy] * xs2.w + xm->i0[ox]] += ym->w1[oy] * xm->w0[ox] * d;
          dxp[(size_t)ym->i1[oy] * xs2.w + xm->i1[ox]] += ym->w1[oy] * xm->w1[ox] * d;
        }
    }
  };
  return Tensor(out);
}

// ---- softmax over channels ----------------------------------------------------

Tensor softmax_channel(const Tensor& x) {
  const Shape xs = x.shape();
  auto out = op_node(xs, {x.node()});
  const double* xv = x.value().data();
  double* yv = out->value.data();
  const size_t plane = (size_t)xs.h * xs.w;
  for (int n = 0; n < xs.n; ++n)
    for (size_t p = 0; p < plane; ++p) {
      const size_t base = (size_t)n * xs.c * plane + p;
      double mx = xv[base];
      for (int c = 1; c < xs.c; ++c) mx = std::max(mx, xv[base + c * plane]);
      double z = 0.0;
      for (int c = 0; c < xs.c; ++c) z += std::exp(xv[base + c * plane] - mx);
      for (int c = 0; c < xs.c; ++c) yv[base + c * plane] = std::exp(xv[base + c * plane] - mx) / z;
    }
  auto xn = x.node();
  out->backward_fn = [xn, plane](TensorNode& self) {
    if (!xn->requires_grad) return;
    const Shape xs2 = xn->shape;
    double* dx = xn->grad_data();
    const double* dy = self.grad.data();
    const double* s = self.value.data();
    for (int n = 0; n < xs2.n; ++n)
      for (size_t p = 0; p < plane; ++p) {
        const size_t base = (size_t)n * xs2.c * plane + p;
        double dot = 0.0;
        for (int c = 0; c < xs2.c; ++c) dot += dy[base + c * plane] * s[base + c * plane];
        for (int c = 0; c < xs2.c; ++c)
          dx[base + c * plane] += s[base + c * plane] * (dy[base + c * plane] - dot);
      }
  };
  return Tensor(out);
}

// ---- masked cross entropy -------------------------------------------------------

Tensor cross_entropy_sum(const Tensor& logits, const std::vector<int>& labels, int ignore_label,
                         int64_t* valid_count) {
  const Shape xs = logits.shape();
  const size_t plane = (size_t)xs.h * xs.w;
  if (labels.size() != (size_t)xs.n * plane)
    reject("cross_entropy_sum: labels length " + std::to_string(labels.size()) +
           " does not match positions " + std::to_string(xs.n * plane));
  auto out = op_node({1, 1, 1, 1}, {logits.node()});
  const double* xv = logits.value().data();
  // cache softmax for the backward pass
  auto probs = std::make_shared<std::vector<double>>(logits.value().size());
  double loss = 0.0;
  int64_t cnt = 0;
  for (int n = 0; n < xs.n; ++n)
    for (size_t p = 0; p < plane; ++p) {
      const size_t base = (size_t)n * xs.c * plane + p;
      double mx = xv[base];
      for (int c = 1; c < xs.c; ++c) mx = std::max(mx, xv[base + c * plane]);
      double z = 0.0;
      for (int c = 0; c < xs.c; ++c) z += std::exp(xv[base + c * plane] - mx);
      for (int c = 0; c < xs.c; ++c) (*probs)[base + c * plane] = std::exp(xv[base + c * plane] - mx) / z;
      const int lab = labels[(size_t)n * plane + p];
      if (lab == ignore_label) continue;
      if (lab < 0 || lab >= xs.c) reject("cross_entropy_sum: label out of range");
      loss += -(xv[base + (size_t)lab * plane] - mx - std::log(z));
      ++cnt;
    }
  out->value[0] = loss;
  if (valid_count) *valid_count = cnt;

  auto xn = logits.node();
  auto labs = std::make_shared<std::vector<int>>(labels);
  out->backward_fn = [xn, probs, labs, ignore_label, plane](TensorNode& self) {
    if (!xn->requires_grad) return;
    const Shape xs2 = xn->shape;
    double* dx = xn->grad_data();
    const double d = self.grad[0];
    for (int n = 0; n < xs2.n; ++n)
      for (size_t p = 0; p < plane; ++p) {
        const int lab = (*labs)[(size_t)n * plane + p];
        if (lab == ignore_label) continue;
        const size_t base = (size_t)n * xs2.c * plane + p;
        for (int c = 0; c < xs2.c; ++c) {
          const double onehot = c == lab ? 1.0 : 0.0;
          dx[base + c * plane] += d * ((*probs)[base + c * plane] - onehot);
        }
      }
  };
  return Tensor(out);
}

// ---- reverse pass -----------------------------------------------------------------

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    reject("backward: loss must be a defined scalar tensor");
  // iterative DFS topological order
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, size_t>> stack;
  stack.push_back({loss.node().get(), 0});
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* p = node->parents[next++].get();
      if (p && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  auto* root = loss.node().get();
  root->grad_data()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward_fn && n->requires_grad && !n->grad.empty()) n->backward_fn(*n);
  }
}

}  // namespace tdseg
