#include "tdseg/conv3x3.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

#ifdef __AVX512F__
#include <immintrin.h>
#endif

namespace tdseg::detail {
namespace {

constexpr int OCT = 4;  // output-channel tile
constexpr int CW = 16;  // output-column chunk

struct Pad {
  std::vector<double> buf;
  int h2 = 0, w2 = 0;
};

Pad& pad_scratch() {
  static thread_local Pad p;
  return p;
}

// zero-padded copy of all channel planes
void pad_planes(const double* x, int c, int h, int w, int pad, Pad& p) {
  p.h2 = h + 2 * pad;
  p.w2 = w + 2 * pad;
  // 16 doubles of zeroed slack: partial-width tiles read (and discard) a few
  // lanes past the row end
  p.buf.assign((size_t)c * p.h2 * p.w2 + 16, 0.0);
  for (int ch = 0; ch < c; ++ch) {
    const double* src = x + (size_t)ch * h * w;
    double* dst = p.buf.data() + (size_t)ch * p.h2 * p.w2 + (size_t)pad * p.w2 + pad;
    for (int y = 0; y < h; ++y)
      std::memcpy(dst + (size_t)y * p.w2, src + (size_t)y * w, (size_t)w * sizeof(double));
  }
}

#ifdef __AVX512F__

// full 4-output-channel, 16-column tile: 8 accumulator vectors, 9 shifted row
// loads per input channel, weight broadcasts fused into the FMAs
template <bool kAccumulate>
inline void tile4x16(const double* xp, int w2, int plane_h2, const double* w, size_t wstride,
                     const double* bias, double* y, size_t ystride, int ic, int ocw, int oy,
                     int ox0, int cw, int ow) {
  __m512d acc[OCT][2];
  for (int o = 0; o < ocw; ++o) {
    const __m512d b = _mm512_set1_pd(bias ? bias[o] : 0.0);
    acc[o][0] = b;
    acc[o][1] = b;
  }
  for (int c = 0; c < ic; ++c) {
    const double* r0 = xp + ((size_t)c * plane_h2 + oy) * w2 + ox0;
    const double* r1 = r0 + w2;
    const double* r2 = r1 + w2;
    __m512d v[9][2];
    v[0][0] = _mm512_loadu_pd(r0);
    v[0][1] = _mm512_loadu_pd(r0 + 8);
    v[1][0] = _mm512_loadu_pd(r0 + 1);
    v[1][1] = _mm512_loadu_pd(r0 + 9);
    v[2][0] = _mm512_loadu_pd(r0 + 2);
    v[2][1] = _mm512_loadu_pd(r0 + 10);
    v[3][0] = _mm512_loadu_pd(r1);
    v[3][1] = _mm512_loadu_pd(r1 + 8);
    v[4][0] = _mm512_loadu_pd(r1 + 1);
    v[4][1] = _mm512_loadu_pd(r1 + 9);
    v[5][0] = _mm512_loadu_pd(r1 + 2);
    v[5][1] = _mm512_loadu_pd(r1 + 10);
    v[6][0] = _mm512_loadu_pd(r2);
    v[6][1] = _mm512_loadu_pd(r2 + 8);
    v[7][0] = _mm512_loadu_pd(r2 + 1);
    v[7][1] = _mm512_loadu_pd(r2 + 9);
    v[8][0] = _mm512_loadu_pd(r2 + 2);
    v[8][1] = _mm512_loadu_pd(r2 + 10);
    for (int o = 0; o < ocw; ++o) {
      const double* wp = w + (size_t)o * wstride + (size_t)c * 9;
      for (int e = 0; e < 9; ++e) {
        const __m512d we = _mm512_set1_pd(wp[e]);
        acc[o][0] = _mm512_fmadd_pd(we, v[e][0], acc[o][0]);
        acc[o][1] = _mm512_fmadd_pd(we, v[e][1], acc[o][1]);
      }
    }
  }
  for (int o = 0; o < ocw; ++o) {
    double* dst = y + (size_t)o * ystride + (size_t)oy * ow + ox0;
    if (cw == CW) {
      if (kAccumulate) {
        _mm512_storeu_pd(dst, _mm512_add_pd(_mm512_loadu_pd(dst), acc[o][0]));
        _mm512_storeu_pd(dst + 8, _mm512_add_pd(_mm512_loadu_pd(dst + 8), acc[o][1]));
      } else {
        _mm512_storeu_pd(dst, acc[o][0]);
        _mm512_storeu_pd(dst + 8, acc[o][1]);
      }
    } else {
      alignas(64) double tmp[CW];
      _mm512_storeu_pd(tmp, acc[o][0]);
      _mm512_storeu_pd(tmp + 8, acc[o][1]);
      if (kAccumulate)
        for (int j = 0; j < cw; ++j) dst[j] += tmp[j];
      else
        for (int j = 0; j < cw; ++j) dst[j] = tmp[j];
    }
  }
}

#endif  // __AVX512F__

// y rows for one image given a padded input; accumulate == true adds into y
template <bool kAccumulate>
void conv_rows(const double* xp, int w2, const double* w, const double* bias, double* y, int ic,
               int oc, int oh, int ow) {
  for (int oc0 = 0; oc0 < oc; oc0 += OCT) {
    const int ocw = std::min(OCT, oc - oc0);
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox0 = 0; ox0 < ow; ox0 += CW) {
        const int cw = std::min(CW, ow - ox0);
#ifdef __AVX512F__
        // padded rows may be read up to 16+2 doubles from ox0; the padded
        // width w2 = ow + 2 guarantees in-bounds reads for any chunk
        tile4x16<kAccumulate>(xp, w2, oh + 2, w + (size_t)oc0 * ic * 9, (size_t)ic * 9,
                              bias ? bias + oc0 : nullptr, y + (size_t)oc0 * oh * ow,
                              (size_t)oh * ow, ic, ocw, oy, ox0, cw, ow);
        continue;
#else
        double acc[OCT][CW];
        for (int o = 0; o < ocw; ++o) {
          const double b = bias ? bias[oc0 + o] : 0.0;
          for (int j = 0; j < cw; ++j) acc[o][j] = b;
        }
        for (int c = 0; c < ic; ++c) {
          const double* r0 = xp + ((size_t)c * (oh + 2) + oy) * w2 + ox0;
          const double* r1 = r0 + w2;
          const double* r2 = r1 + w2;
          for (int o = 0; o < ocw; ++o) {
            const double* wp = w + (((size_t)(oc0 + o) * ic) + c) * 9;
            const double w00 = wp[0], w01 = wp[1], w02 = wp[2];
            const double w10 = wp[3], w11 = wp[4], w12 = wp[5];
            const double w20 = wp[6], w21 = wp[7], w22 = wp[8];
            double* a = acc[o];
#pragma GCC ivdep
            for (int j = 0; j < cw; ++j) {
              a[j] += w00 * r0[j] + w01 * r0[j + 1] + w02 * r0[j + 2] + w10 * r1[j] +
                      w11 * r1[j + 1] + w12 * r1[j + 2] + w20 * r2[j] + w21 * r2[j + 1] +
                      w22 * r2[j + 2];
            }
          }
        }
        for (int o = 0; o < ocw; ++o) {
          double* dst = y + ((size_t)(oc0 + o) * oh + oy) * ow + ox0;
          if (kAccumulate)
            for (int j = 0; j < cw; ++j) dst[j] += acc[o][j];
          else
            for (int j = 0; j < cw; ++j) dst[j] = acc[o][j];
        }
#endif
      }
    }
  }
}

}  // namespace

void shift3x3_forward(const double* x, const double* w, const double* bias, double* y,
                      const ConvGeom& g, int batch) {
  Pad& p = pad_scratch();
  for (int n = 0; n < batch; ++n) {
    pad_planes(x + (size_t)n * g.ic * g.ih * g.iw, g.ic, g.ih, g.iw, g.pad, p);
    // padded rows seen by output row oy are oy .. oy+2 regardless of pad
    conv_rows<false>(p.buf.data(), p.w2, w, bias, y + (size_t)n * g.oc * g.oh * g.ow, g.ic, g.oc,
                     g.oh, g.ow);
  }
}

void shift3x3_backward_input(const double* dy, const double* w, double* dx, const ConvGeom& g,
                             int batch) {
  // input gradient: full correlation of dy with the rotated kernel
  static thread_local std::vector<double> wt;
  wt.resize((size_t)g.ic * g.oc * 9);
  for (int oc = 0; oc < g.oc; ++oc)
    for (int ic = 0; ic < g.ic; ++ic)
      for (int e = 0; e < 9; ++e)
        wt[((size_t)ic * g.oc + oc) * 9 + e] = w[((size_t)oc * g.ic + ic) * 9 + (8 - e)];
  Pad& p = pad_scratch();
  for (int n = 0; n < batch; ++n) {
    pad_planes(dy + (size_t)n * g.oc * g.oh * g.ow, g.oc, g.oh, g.ow, 2 - g.pad, p);
    conv_rows<true>(p.buf.data(), p.w2, wt.data(), nullptr,
                    dx + (size_t)n * g.ic * g.ih * g.iw, g.oc, g.ic, g.ih, g.iw);
  }
}

void shift3x3_backward_weights(const double* x, const double* dy, double* dw, const ConvGeom& g,
                               int batch) {
  Pad& p = pad_scratch();
  for (int n = 0; n < batch; ++n) {
    pad_planes(x + (size_t)n * g.ic * g.ih * g.iw, g.ic, g.ih, g.iw, g.pad, p);
    const double* dyn = dy + (size_t)n * g.oc * g.oh * g.ow;
#ifdef __AVX512F__
    // masked tail keeps whole rows in one pass; two output channels share the
    // nine shifted row loads
    const int tail = g.ow % 8;
    const __mmask8 tmask = tail ? (__mmask8)((1u << tail) - 1) : 0;
    for (int oc0 = 0; oc0 < g.oc; oc0 += 2) {
      const int ocw = std::min(2, g.oc - oc0);
      const double* dp0 = dyn + (size_t)oc0 * g.oh * g.ow;
      const double* dp1 = ocw > 1 ? dp0 + (size_t)g.oh * g.ow : dp0;
      for (int c = 0; c < g.ic; ++c) {
        const double* xplane = p.buf.data() + (size_t)c * p.h2 * p.w2;
        __m512d acc0[9], acc1[9];
        for (int e = 0; e < 9; ++e) acc0[e] = acc1[e] = _mm512_setzero_pd();
        for (int oy = 0; oy < g.oh; ++oy) {
          const double* d0 = dp0 + (size_t)oy * g.ow;
          const double* d1 = dp1 + (size_t)oy * g.ow;
          const double* r0 = xplane + (size_t)oy * p.w2;
          const double* r1 = r0 + p.w2;
          const double* r2 = r1 + p.w2;
          int j = 0;
          for (; j + 8 <= g.ow; j += 8) {
            const __m512d v0 = _mm512_loadu_pd(r0 + j);
            const __m512d v1 = _mm512_loadu_pd(r0 + j + 1);
            const __m512d v2 = _mm512_loadu_pd(r0 + j + 2);
            const __m512d v3 = _mm512_loadu_pd(r1 + j);
            const __m512d v4 = _mm512_loadu_pd(r1 + j + 1);
            const __m512d v5 = _mm512_loadu_pd(r1 + j + 2);
            const __m512d v6 = _mm512_loadu_pd(r2 + j);
            const __m512d v7 = _mm512_loadu_pd(r2 + j + 1);
            const __m512d v8 = _mm512_loadu_pd(r2 + j + 2);
            const __m512d g0 = _mm512_loadu_pd(d0 + j);
            acc0[0] = _mm512_fmadd_pd(g0, v0, acc0[0]);
            acc0[1] = _mm512_fmadd_pd(g0, v1, acc0[1]);
            acc0[2] = _mm512_fmadd_pd(g0, v2, acc0[2]);
            acc0[3] = _mm512_fmadd_pd(g0, v3, acc0[3]);
            acc0[4] = _mm512_fmadd_pd(g0, v4, acc0[4]);
            acc0[5] = _mm512_fmadd_pd(g0, v5, acc0[5]);
            acc0[6] = _mm512_fmadd_pd(g0, v6, acc0[6]);
            acc0[7] = _mm512_fmadd_pd(g0, v7, acc0[7]);
            acc0[8] = _mm512_fmadd_pd(g0, v8, acc0[8]);
            if (ocw > 1) {
              const __m512d g1 = _mm512_loadu_pd(d1 + j);
              acc1[0] = _mm512_fmadd_pd(g1, v0, acc1[0]);
              acc1[1] = _mm512_fmadd_pd(g1, v1, acc1[1]);
              acc1[2] = _mm512_fmadd_pd(g1, v2, acc1[2]);
              acc1[3] = _mm512_fmadd_pd(g1, v3, acc1[3]);
              acc1[4] = _mm512_fmadd_pd(g1, v4, acc1[4]);
              acc1[5] = _mm512_fmadd_pd(g1, v5, acc1[5]);
              acc1[6] = _mm512_fmadd_pd(g1, v6, acc1[6]);
              acc1[7] = _mm512_fmadd_pd(g1, v7, acc1[7]);
              acc1[8] = _mm512_fmadd_pd(g1, v8, acc1[8]);
            }
          }
          if (tail) {
            const __m512d v0 = _mm512_maskz_loadu_pd(tmask, r0 + j);
            const __m512d v1 = _mm512_maskz_loadu_pd(tmask, r0 + j + 1);
            const __m512d v2 = _mm512_maskz_loadu_pd(tmask, r0 + j + 2);
            const __m512d v3 = _mm512_maskz_loadu_pd(tmask, r1 + j);
            const __m512d v4 = _mm512_maskz_loadu_pd(tmask, r1 + j + 1);
            const __m512d v5 = _mm512_maskz_loadu_pd(tmask, r1 + j + 2);
            const __m512d v6 = _mm512_maskz_loadu_pd(tmask, r2 + j);
            const __m512d v7 = _mm512_maskz_loadu_pd(tmask, r2 + j + 1);
            const __m512d v8 = _mm512_maskz_loadu_pd(tmask, r2 + j + 2);
            const __m512d g0 = _mm512_maskz_loadu_pd(tmask, d0 + j);
            acc0[0] = _mm512_fmadd_pd(g0, v0, acc0[0]);
            acc0[1] = _mm512_fmadd_pd(g0, v1, acc0[1]);
            acc0[2] = _mm512_fmadd_pd(g0, v2, acc0[2]);
            acc0[3] = _mm512_fmadd_pd(g0, v3, acc0[3]);
            acc0[4] = _mm512_fmadd_pd(g0, v4, acc0[4]);
            acc0[5] = _mm512_fmadd_pd(g0, v5, acc0[5]);
            acc0[6] = _mm512_fmadd_pd(g0, v6, acc0[6]);
            acc0[7] = _mm512_fmadd_pd(g0, v7, acc0[7]);
            acc0[8] = _mm512_fmadd_pd(g0, v8, acc0[8]);
            if (ocw > 1) {
              const __m512d g1 = _mm512_maskz_loadu_pd(tmask, d1 + j);
              acc1[0] = _mm512_fmadd_pd(g1, v0, acc1[0]);
              acc1[1] = _mm512_fmadd_pd(g1, v1, acc1[1]);
              acc1[2] = _mm512_fmadd_pd(g1, v2, acc1[2]);
              acc1[3] = _mm512_fmadd_pd(g1, v3, acc1[3]);
              acc1[4] = _mm512_fmadd_pd(g1, v4, acc1[4]);
              acc1[5] = _mm512_fmadd_pd(g1, v5, acc1[5]);
              acc1[6] = _mm512_fmadd_pd(g1, v6, acc1[6]);
              acc1[7] = _mm512_fmadd_pd(g1, v7, acc1[7]);
              acc1[8] = _mm512_fmadd_pd(g1, v8, acc1[8]);
            }
          }
        }
        double* dst0 = dw + ((size_t)oc0 * g.ic + c) * 9;
        for (int e = 0; e < 9; ++e) dst0[e] += _mm512_reduce_add_pd(acc0[e]);
        if (ocw > 1) {
          double* dst1 = dw + ((size_t)(oc0 + 1) * g.ic + c) * 9;
          for (int e = 0; e < 9; ++e) dst1[e] += _mm512_reduce_add_pd(acc1[e]);
        }
      }
    }
#else
    for (int oc = 0; oc < g.oc; ++oc) {
      const double* dplane = dyn + (size_t)oc * g.oh * g.ow;
      for (int c = 0; c < g.ic; ++c) {
        const double* xplane = p.buf.data() + (size_t)c * p.h2 * p.w2;
        double acc[9][8] = {};
        for (int oy = 0; oy < g.oh; ++oy) {
          const double* d = dplane + (size_t)oy * g.ow;
          const double* r0 = xplane + (size_t)oy * p.w2;
          const double* r1 = r0 + p.w2;
          const double* r2 = r1 + p.w2;
          int j = 0;
          for (; j + 8 <= g.ow; j += 8) {
#pragma GCC ivdep
            for (int v = 0; v < 8; ++v) {
              const double dv = d[j + v];
              acc[0][v] += dv * r0[j + v];
              acc[1][v] += dv * r0[j + v + 1];
              acc[2][v] += dv * r0[j + v + 2];
              acc[3][v] += dv * r1[j + v];
              acc[4][v] += dv * r1[j + v + 1];
              acc[5][v] += dv * r1[j + v + 2];
              acc[6][v] += dv * r2[j + v];
              acc[7][v] += dv * r2[j + v + 1];
              acc[8][v] += dv * r2[j + v + 2];
            }
          }
          for (; j < g.ow; ++j) {
            const double dv = d[j];
            acc[0][0] += dv * r0[j];
            acc[1][0] += dv * r0[j + 1];
            acc[2][0] += dv * r0[j + 2];
            acc[3][0] += dv * r1[j];
            acc[4][0] += dv * r1[j + 1];
            acc[5][0] += dv * r1[j + 2];
            acc[6][0] += dv * r2[j];
            acc[7][0] += dv * r2[j + 1];
            acc[8][0] += dv * r2[j + 2];
          }
        }
        double* dst = dw + ((size_t)oc * g.ic + c) * 9;
        for (int e = 0; e < 9; ++e) {
          double s = 0.0;
          for (int v = 0; v < 8; ++v) s += acc[e][v];
          dst[e] += s;
        }
      }
    }
#endif
  }
}

}  // namespace tdseg::detail
