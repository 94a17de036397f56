#ifndef TDSEG_TENSOR_HPP
#define TDSEG_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace tdseg {

struct Shape {
  int n = 1, c = 1, h = 1, w = 1;

  int64_t numel() const { return (int64_t)n * c * h * w; }
  bool operator==(const Shape& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }
  std::string str() const;
};

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated on first use
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  double* grad_data();  // allocates zeroed buffer on demand
};

}  // namespace detail

// Dense 4-D array (batch, channel, height, width), double precision, with
// optional reverse-mode differentiation graph. Value-semantics handle to a
// shared node; copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape s, bool requires_grad = false);
  static Tensor full(Shape s, double v, bool requires_grad = false);
  static Tensor from_data(Shape s, std::vector<double> data, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  Shape shape() const { return node_->shape; }
  int64_t numel() const { return node_->shape.numel(); }

  const std::vector<double>& value() const { return node_->value; }
  // Direct mutation is only meaningful for leaves (parameters, buffers).
  std::vector<double>& value_mut() { return node_->value; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  const std::vector<double>& grad() const;
  void zero_grad();

  // Constant copy that shares no graph state.
  Tensor detached() const;

  double item() const;  // scalar tensors only

  std::shared_ptr<detail::TensorNode> node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::TensorNode> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// Convolution kernel: shape fields read as (out-channels, in-channels, kH, kW).
using Kernel = Tensor;

Kernel make_kernel(int out_c, int in_c, int kh, int kw, std::vector<double> data);

inline int conv_out_extent(int in, int k, int stride, int pad, int dil) {
  return (in + 2 * pad - dil * (k - 1) - 1) / stride + 1;
}

// ---- differentiable operations ------------------------------------------

// bias may be an empty Tensor (no bias); otherwise shape (1, out_c, 1, 1).
Tensor conv2d(const Tensor& x, const Kernel& w, const Tensor& bias,
              int stride = 1, int pad = 0, int dil = 1);

struct PoolResult {
  Tensor out;
  // flat index into the input value array of each output cell's max,
  // first occurrence in row-major order on ties
  std::shared_ptr<std::vector<int32_t>> argmax;
};
PoolResult maxpool2d(const Tensor& x, int k, int stride);

Tensor relu(const Tensor& x);
Tensor upsample2x(const Tensor& x);  // bilinear, corner-aligned, fixed weights
Tensor softmax_channel(const Tensor& x);
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor sum_all(const Tensor& a);  // scalar

// Sum of -log softmax(logits)[label] over positions whose label != ignore.
// labels has one entry per (n, h, w) position; valid_count reports how many
// positions participated.
Tensor cross_entropy_sum(const Tensor& logits, const std::vector<int>& labels,
                         int ignore_label, int64_t* valid_count = nullptr);

// Reverse-mode pass from a scalar loss. Gradients accumulate into every
// reachable node that requires grad; repeated calls keep accumulating until
// zero_grad.
void backward(const Tensor& loss);

}  // namespace tdseg

#endif
