#include "tdseg/conv_engine.hpp"

#include "tdseg/conv3x3.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <vector>

namespace tdseg::detail {

ConvTimers& conv_timers() {
  static thread_local ConvTimers t;
  return t;
}

namespace {

struct ScopedTimer {
  double& slot;
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  explicit ScopedTimer(double& s) : slot(s) {}
  ~ScopedTimer() { slot += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); }
};

constexpr int MR = 8;  // row tile
constexpr int NR = 8;  // column tile (one cache line of doubles)

int pick_block(int dim_bytes_per_col, int total) {
  // keep the packed panel block within ~1.2 MB so it stays L2-resident
  int nb = (int)(1200000 / std::max(1, dim_bytes_per_col));
  nb = std::max(NR, std::min(nb, 2048));
  nb = (nb / NR) * NR;
  return std::min(nb, (total + NR - 1) / NR * NR);
}

struct Scratch {
  std::vector<double> apan, bpan, cblk;
};

Scratch& scratch() {
  static thread_local Scratch s;
  return s;
}

// acc[MR][NR] += sum_k Ap[k][0..MR) x Bp[k][0..NR)
inline void micro_kernel(const double* Ap, const double* Bp, int kk, double acc[MR][NR]) {
  for (int k = 0; k < kk; ++k) {
    const double* a = Ap + (size_t)k * MR;
    const double* b = Bp + (size_t)k * NR;
#pragma GCC ivdep
    for (int j = 0; j < NR; ++j) {
      double bv = b[j];
      acc[0][j] += a[0] * bv;
      acc[1][j] += a[1] * bv;
      acc[2][j] += a[2] * bv;
      acc[3][j] += a[3] * bv;
      acc[4][j] += a[4] * bv;
      acc[5][j] += a[5] * bv;
      acc[6][j] += a[6] * bv;
      acc[7][j] += a[7] * bv;
    }
  }
}

// pack rows [r0, r0+rw) of a row-major M x L matrix into [L][MR] panels
void pack_rows(const double* src, int ld, int r0, int rw, int cols, double* dst) {
  for (int k = 0; k < cols; ++k) {
    for (int i = 0; i < MR; ++i)
      dst[(size_t)k * MR + i] = i < rw ? src[(size_t)(r0 + i) * ld + k] : 0.0;
  }
}

// im2col panel: for output pixels [n0, n0+NR) fill dst[k][j] with the input
// value under kernel offset k, zero outside the image
void pack_im2col_panel(const double* x, const ConvGeom& g, int n0, int nw, double* dst) {
  const int oy0 = n0 / g.ow, ox0 = n0 % g.ow;
  const bool one_row = (ox0 + nw <= g.ow);
  if (one_row && g.stride == 1) {
    const int iy_base = oy0 - g.pad;
    const int ix_base = ox0 - g.pad;
    double* d = dst;
    for (int ic = 0; ic < g.ic; ++ic) {
      const double* xc = x + (size_t)ic * g.ih * g.iw;
      for (int kh = 0; kh < g.kh; ++kh) {
        const int iy = iy_base + kh * g.dil;
        if (iy < 0 || iy >= g.ih) {
          for (int kw = 0; kw < g.kw; ++kw, d += NR) std::memset(d, 0, NR * sizeof(double));
          continue;
        }
        const double* xr = xc + (size_t)iy * g.iw;
        for (int kw = 0; kw < g.kw; ++kw, d += NR) {
          const int ix0 = ix_base + kw * g.dil;
          for (int j = 0; j < NR; ++j) {
            const int ix = ix0 + j;
            d[j] = (j < nw && ix >= 0 && ix < g.iw) ? xr[ix] : 0.0;
          }
        }
      }
    }
    return;
  }
  // general path: strided or row-crossing panels
  double* d = dst;
  for (int ic = 0; ic < g.ic; ++ic) {
    const double* xc = x + (size_t)ic * g.ih * g.iw;
    for (int kh = 0; kh < g.kh; ++kh) {
      for (int kw = 0; kw < g.kw; ++kw, d += NR) {
        for (int j = 0; j < NR; ++j) {
          double v = 0.0;
          if (j < nw) {
            const int n = n0 + j;
            const int oy = n / g.ow, ox = n % g.ow;
            const int iy = oy * g.stride - g.pad + kh * g.dil;
            const int ix = ox * g.stride - g.pad + kw * g.dil;
            if (iy >= 0 && iy < g.ih && ix >= 0 && ix < g.iw) v = xc[(size_t)iy * g.iw + ix];
          }
          d[j] = v;
        }
      }
    }
  }
}

// decode table: kernel-offset index -> (channel base, dy, dx)
struct KDecode {
  std::vector<size_t> plane;  // ic * ih * iw
  std::vector<int> dy, dx;    // kh * dil, kw * dil
};

const KDecode& k_decode(const ConvGeom& g) {
  static thread_local KDecode kd;
  static thread_local ConvGeom last{-1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
  if (last.ic == g.ic && last.ih == g.ih && last.iw == g.iw && last.kh == g.kh &&
      last.kw == g.kw && last.dil == g.dil)
    return kd;
  last = g;
  const int K = g.ic * g.kh * g.kw;
  kd.plane.resize(K);
  kd.dy.resize(K);
  kd.dx.resize(K);
  int k = 0;
  for (int ic = 0; ic < g.ic; ++ic)
    for (int kh = 0; kh < g.kh; ++kh)
      for (int kw = 0; kw < g.kw; ++kw, ++k) {
        kd.plane[k] = (size_t)ic * g.ih * g.iw;
        kd.dy[k] = kh * g.dil;
        kd.dx[k] = kw * g.dil;
      }
  return kd;
}

// im2row panel for the weight-gradient GEMM: dst[r][jj] holds the input value
// for output pixel n0+r under kernel offset k0+jj
void pack_im2row_panel(const double* x, const ConvGeom& g, const KDecode& kd, int n0, int rw,
                       int k0, int kw_cols, double* dst) {
  for (int r = 0; r < rw; ++r) {
    const int n = n0 + r;
    const int oy = n / g.ow, ox = n % g.ow;
    const int iy0 = oy * g.stride - g.pad;
    const int ix0 = ox * g.stride - g.pad;
    double* d = dst + (size_t)r * NR;
    for (int jj = 0; jj < kw_cols; ++jj) {
      const int k = k0 + jj;
      const int iy = iy0 + kd.dy[k];
      const int ix = ix0 + kd.dx[k];
      d[jj] = (iy >= 0 && iy < g.ih && ix >= 0 && ix < g.iw) ? x[kd.plane[k] + (size_t)iy * g.iw + ix]
                                                             : 0.0;
    }
    for (int jj = kw_cols; jj < NR; ++jj) d[jj] = 0.0;
  }
  for (int r = rw; r < MR; ++r)
    std::memset(dst + (size_t)r * NR, 0, NR * sizeof(double));
}

}  // namespace

void conv_forward(const double* x, const double* w, const double* bias, double* y,
                  const ConvGeom& g, int batch) {
  ScopedTimer timer(conv_timers().forward);
  if (shift3x3_eligible(g)) return shift3x3_forward(x, w, bias, y, g, batch);
  const int K = g.ic * g.kh * g.kw;
  const int N = g.oh * g.ow;
  const int mt = (g.oc + MR - 1) / MR;
  auto& s = scratch();
  s.apan.resize((size_t)mt * K * MR);
  for (int t = 0; t < mt; ++t)
    pack_rows(w, K, t * MR, std::min(MR, g.oc - t * MR), K, s.apan.data() + (size_t)t * K * MR);

  const int NB = pick_block(K * 8, N);
  s.bpan.resize((size_t)(NB / NR) * K * NR);

  for (int n = 0; n < batch; ++n) {
    const double* xn = x + (size_t)n * g.ic * g.ih * g.iw;
    double* yn = y + (size_t)n * g.oc * N;
    for (int n0 = 0; n0 < N; n0 += NB) {
      const int nblk = std::min(NB, N - n0);
      const int npan = (nblk + NR - 1) / NR;
      for (int p = 0; p < npan; ++p)
        pack_im2col_panel(xn, g, n0 + p * NR, std::min(NR, N - (n0 + p * NR)),
                          s.bpan.data() + (size_t)p * K * NR);
      for (int t = 0; t < mt; ++t) {
        const double* Ap = s.apan.data() + (size_t)t * K * MR;
        const int iw = std::min(MR, g.oc - t * MR);
        for (int p = 0; p < npan; ++p) {
          double acc[MR][NR] = {};
          micro_kernel(Ap, s.bpan.data() + (size_t)p * K * NR, K, acc);
          const int j0 = n0 + p * NR;
          const int jw = std::min(NR, N - j0);
          for (int i = 0; i < iw; ++i) {
            double* yr = yn + (size_t)(t * MR + i) * N + j0;
            const double b = bias ? bias[t * MR + i] : 0.0;
            for (int j = 0; j < jw; ++j) yr[j] = acc[i][j] + b;
          }
        }
      }
    }
  }
}

void conv_backward_weights(const double* x, const double* dy, double* dw, double* dbias,
                           const ConvGeom& g, int batch) {
  ScopedTimer timer(conv_timers().dw);
  if (dbias) {
    const int N0 = g.oh * g.ow;
    for (int n = 0; n < batch; ++n)
      for (int oc = 0; oc < g.oc; ++oc) {
        const double* r = dy + ((size_t)n * g.oc + oc) * N0;
        double acc = 0.0;
        for (int i = 0; i < N0; ++i) acc += r[i];
        dbias[oc] += acc;
      }
  }
  if (!dw) return;
  if (shift3x3_eligible(g)) return shift3x3_backward_weights(x, dy, dw, g, batch);
  const int K = g.ic * g.kh * g.kw;
  const int N = g.oh * g.ow;
  const int mt = (g.oc + MR - 1) / MR;
  const int kpan = (K + NR - 1) / NR;
  auto& s = scratch();

  const int RB = pick_block(K * 8, N);
  s.apan.resize((size_t)mt * RB * MR);
  s.bpan.resize((size_t)kpan * RB * NR);

  for (int n = 0; n < batch; ++n) {
    const double* xn = x + (size_t)n * g.ic * g.ih * g.iw;
    const double* dyn = dy + (size_t)n * g.oc * N;
    for (int r0 = 0; r0 < N; r0 += RB) {
      const int rblk = std::min(RB, N - r0);
      // A panels: dy rows, reduction over output pixels
      for (int t = 0; t < mt; ++t) {
        const int iw = std::min(MR, g.oc - t * MR);
        double* dst = s.apan.data() + (size_t)t * rblk * MR;
        for (int r = 0; r < rblk; ++r)
          for (int i = 0; i < MR; ++i)
            dst[(size_t)r * MR + i] =
                i < iw ? dyn[(size_t)(t * MR + i) * N + r0 + r] : 0.0;
      }
      const KDecode& kd = k_decode(g);
      for (int p = 0; p < kpan; ++p) {
        const int k0 = p * NR;
        const int kcols = std::min(NR, K - k0);
        double* bp = s.bpan.data() + (size_t)p * RB * NR;
        for (int r = 0; r < rblk; r += MR)
          pack_im2row_panel(xn, g, kd, r0 + r, std::min(MR, rblk - r), k0, kcols,
                            bp + (size_t)r * NR);
      }
      for (int t = 0; t < mt; ++t) {
        const double* Ap = s.apan.data() + (size_t)t * rblk * MR;
        const int iw = std::min(MR, g.oc - t * MR);
        for (int p = 0; p < kpan; ++p) {
          double acc[MR][NR] = {};
          micro_kernel(Ap, s.bpan.data() + (size_t)p * RB * NR, rblk, acc);
          const int k0 = p * NR;
          const int kcols = std::min(NR, K - k0);
          for (int i = 0; i < iw; ++i) {
            double* dwr = dw + (size_t)(t * MR + i) * K + k0;
            for (int j = 0; j < kcols; ++j) dwr[j] += acc[i][j];
          }
        }
      }
    }
  }
}

void conv_backward_input(const double* dy, const double* w, double* dx, const ConvGeom& g,
                         int batch) {
  ScopedTimer timer(conv_timers().dx);
  if (shift3x3_eligible(g)) return shift3x3_backward_input(dy, w, dx, g, batch);
  const int K = g.ic * g.kh * g.kw;
  const int N = g.oh * g.ow;
  const int mt = (K + MR - 1) / MR;
  auto& s = scratch();
  // A = w^T, K x OC
  s.apan.resize((size_t)mt * g.oc * MR);
  for (int t = 0; t < mt; ++t) {
    double* dst = s.apan.data() + (size_t)t * g.oc * MR;
    const int iw = std::min(MR, K - t * MR);
    for (int oc = 0; oc < g.oc; ++oc)
      for (int i = 0; i < MR; ++i)
        dst[(size_t)oc * MR + i] = i < iw ? w[(size_t)oc * K + t * MR + i] : 0.0;
  }

  const int NB = pick_block(std::max(K, g.oc) * 8, N);
  s.bpan.resize((size_t)(NB / NR) * g.oc * NR);
  s.cblk.resize((size_t)mt * MR * NB);

  for (int n = 0; n < batch; ++n) {
    const double* dyn = dy + (size_t)n * g.oc * N;
    double* dxn = dx + (size_t)n * g.ic * g.ih * g.iw;
    for (int n0 = 0; n0 < N; n0 += NB) {
      const int nblk = std::min(NB, N - n0);
      const int npan = (nblk + NR - 1) / NR;
      for (int p = 0; p < npan; ++p) {
        double* bp = s.bpan.data() + (size_t)p * g.oc * NR;
        const int j0 = n0 + p * NR;
        const int jw = std::min(NR, N - j0);
        for (int oc = 0; oc < g.oc; ++oc) {
          const double* src = dyn + (size_t)oc * N + j0;
          for (int j = 0; j < NR; ++j) bp[(size_t)oc * NR + j] = j < jw ? src[j] : 0.0;
        }
      }
      for (int t = 0; t < mt; ++t) {
        const double* Ap = s.apan.data() + (size_t)t * g.oc * MR;
        for (int p = 0; p < npan; ++p) {
          double acc[MR][NR] = {};
          micro_kernel(Ap, s.bpan.data() + (size_t)p * g.oc * NR, g.oc, acc);
          for (int i = 0; i < MR; ++i) {
            double* c = s.cblk.data() + (size_t)(t * MR + i) * NB + p * NR;
            for (int j = 0; j < NR; ++j) c[j] = acc[i][j];
          }
        }
      }
      // scatter the column block back into dx
      for (int k = 0; k < K; ++k) {
        const int kw = k % g.kw;
        const int kh = (k / g.kw) % g.kh;
        const int ic = k / (g.kw * g.kh);
        const double* crow = s.cblk.data() + (size_t)k * NB;
        double* xc = dxn + (size_t)ic * g.ih * g.iw;
        if (g.stride == 1) {
          int j = 0;
          while (j < nblk) {
            const int nn = n0 + j;
            const int oy = nn / g.ow, ox = nn % g.ow;
            const int seg = std::min(g.ow - ox, nblk - j);
            const int iy = oy - g.pad + kh * g.dil;
            if (iy >= 0 && iy < g.ih) {
              const int ix0 = ox - g.pad + kw * g.dil;
              const int lo = std::max(0, -ix0);
              const int hi = std::min(seg, g.iw - ix0);
              double* xr = xc + (size_t)iy * g.iw + ix0;
              for (int j2 = lo; j2 < hi; ++j2) xr[j2] += crow[j + j2];
            }
            j += seg;
          }
        } else {
          for (int j = 0; j < nblk; ++j) {
            const int nn = n0 + j;
            const int oy = nn / g.ow, ox = nn % g.ow;
            const int iy = oy * g.stride - g.pad + kh * g.dil;
            const int ix = ox * g.stride - g.pad + kw * g.dil;
            if (iy >= 0 && iy < g.ih && ix >= 0 && ix < g.iw)
              xc[(size_t)iy * g.iw + ix] += crow[j];
          }
        }
      }
    }
  }
}

}  // namespace tdseg::detail
