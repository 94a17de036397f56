#ifndef TDSEG_CONV3X3_HPP
#define TDSEG_CONV3X3_HPP

// Direct kernels for 3x3, stride-1, dilation-1 convolutions: shifted-row
// multiply-accumulate over a zero-padded plane copy. No im2col, no packing.

#include "tdseg/conv_engine.hpp"

namespace tdseg::detail {

inline bool shift3x3_eligible(const ConvGeom& g) {
  return g.kh == 3 && g.kw == 3 && g.stride == 1 && g.dil == 1 && g.pad <= 2;
}

void shift3x3_forward(const double* x, const double* w, const double* bias, double* y,
                      const ConvGeom& g, int batch);
void shift3x3_backward_input(const double* dy, const double* w, double* dx, const ConvGeom& g,
                             int batch);
void shift3x3_backward_weights(const double* x, const double* dy, double* dw, const ConvGeom& g,
                               int batch);

}  // namespace tdseg::detail

#endif
