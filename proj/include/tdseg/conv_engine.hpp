#ifndef TDSEG_CONV_ENGINE_HPP
#define TDSEG_CONV_ENGINE_HPP

// Single-threaded convolution kernels: blocked GEMM over packed panels with
// im2col fused into the packing step. Values are accumulated in a fixed
// order, so results are reproducible bit-for-bit.

namespace tdseg::detail {

struct ConvGeom {
  int ic, ih, iw;
  int oc, oh, ow;
  int kh, kw;
  int stride, pad, dil;
};

// y[n] = conv(x[n], w) + bias, for n in [0, batch)
void conv_forward(const double* x, const double* w, const double* bias,
                  double* y, const ConvGeom& g, int batch);

// dw += sum_n conv-weight-gradient(x[n], dy[n]); dbias += row sums of dy
void conv_backward_weights(const double* x, const double* dy, double* dw,
                           double* dbias, const ConvGeom& g, int batch);

// dx[n] += conv-input-gradient(dy[n], w)
void conv_backward_input(const double* dy, const double* w, double* dx,
                         const ConvGeom& g, int batch);

// cumulative wall time spent in the three kernels, seconds (single thread)
struct ConvTimers {
  double forward = 0, dw = 0, dx = 0;
};
ConvTimers& conv_timers();

}  // namespace tdseg::detail

#endif
