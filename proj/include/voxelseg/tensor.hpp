#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace voxelseg::ad {

using Shape = std::vector<std::size_t>;
using Triple = std::array<std::size_t, 3>;

std::size_t element_count(const Shape& shape);

struct TensorImpl;

// A recorded operation. backward receives the gradient of the node's output and
// accumulates into the gradient buffers of the inputs that need one (null
// entries are inputs that do not require gradients).
struct TapeNode {
  std::string_view op_kind;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(std::span<const double> grad_out, std::span<std::vector<double>*> grad_in)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass reaches this tensor
  bool requires_grad = false;
  std::shared_ptr<TapeNode> node;  // null for leaves
};

// Dense row-major (last axis fastest) array of 64-bit reals. Copies share
// storage; clone() makes an independent leaf.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t size() const { return impl_->data.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }

  std::span<const double> data() const { return impl_->data; }
  // Mutating the values of a tensor already used in a graph invalidates that graph.
  std::span<double> mutable_data() { return impl_->data; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool value) { impl_->requires_grad = value; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad() { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }
  bool is_leaf() const { return impl_->node == nullptr; }

  // Reverse-mode sweep from this scalar. Gradients accumulate into every
  // reachable leaf that requires them; calling twice without zero_grad() adds.
  void backward() const;

  Tensor detach() const;
  Tensor clone() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
  static Tensor from_impl(std::shared_ptr<TensorImpl> impl);

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// While alive, ops on this thread record no tape (inference mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

// Builds the output of an op, wiring a tape node when any input needs gradients.
Tensor make_result(std::string_view op_kind, Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs,
                   std::function<void(std::span<const double>, std::span<std::vector<double>*>)> backward);

// Elementwise. Shapes must match exactly; no broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor relu(const Tensor& x);
// slope is a one-element tensor shared by every element of x.
Tensor prelu(const Tensor& x, const Tensor& slope);
Tensor sigmoid(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
// Concatenate two [N,C,D,H,W] tensors along C.
Tensor concat_channels(const Tensor& a, const Tensor& b);

// x: [N,C,D,H,W], kernel: [F,C,kd,kh,kw], bias: [F] or undefined.
Tensor conv3d(const Tensor& x, const Tensor& kernel, const Tensor& bias, const Triple& stride,
              const Triple& padding);
// 2x2x2 kernel, stride 2, no padding. Spatial extents must be even.
Tensor conv3d_down(const Tensor& x, const Tensor& kernel, const Tensor& bias);
// Linear adjoint of conv3d(·, kernel, stride, padding 0). x: [N,F,D,H,W],
// kernel: [F,C,kd,kh,kw] -> [N,C,(D-1)*s+kd,...]. bias: [C] or undefined.
Tensor conv_transpose3d(const Tensor& x, const Tensor& kernel, const Tensor& bias, const Triple& stride = {2, 2, 2});

}  // namespace voxelseg::ad
