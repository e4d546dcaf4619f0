#include "voxelseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "voxelseg/error.hpp"

namespace voxelseg::ad {
namespace {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorCode::ShapeMismatch, std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) fail(ErrorCode::ShapeMismatch, "tensor dimensions must be positive: " + shape_str(shape));
  }
  if (data.size() != element_count(shape)) {
    fail(ErrorCode::ShapeMismatch, "data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
  }
  impl_ = std::make_shared<TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = element_count(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

Tensor Tensor::from_impl(std::shared_ptr<TensorImpl> impl) {
  Tensor t;
  t.impl_ = std::move(impl);
  return t;
}

double Tensor::item() const {
  if (size() != 1) fail(ErrorCode::NonScalarRoot, "item() on a tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data, false); }

Tensor Tensor::clone() const { return Tensor(impl_->shape, impl_->data, impl_->requires_grad); }

void Tensor::backward() const {
  if (!impl_ || size() != 1) fail(ErrorCode::NonScalarRoot, "backward() needs a scalar root");
  if (!impl_->requires_grad) return;

  // Post-order DFS gives a topological order; the sweep runs it in reverse.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack{{impl_.get(), 0}};
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    if (t->node && next < t->node->inputs.size()) {
      TensorImpl* child = t->node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(t);
    stack.pop_back();
  }

  std::unordered_map<TensorImpl*, std::vector<double>> grads;
  grads[impl_.get()] = {1.0};
  std::vector<std::vector<double>*> slots;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* t = *it;
    auto found = grads.find(t);
    if (found == grads.end()) continue;
    std::vector<double> g = std::move(found->second);
    grads.erase(found);
    if (!t->node) {
      if (t->grad.empty()) t->grad.assign(t->data.size(), 0.0);
      for (std::size_t i = 0; i < g.size(); ++i) t->grad[i] += g[i];
      continue;
    }
    slots.assign(t->node->inputs.size(), nullptr);
    for (std::size_t i = 0; i < slots.size(); ++i) {
      TensorImpl* in = t->node->inputs[i].get();
      if (!in->requires_grad) continue;
      auto& buf = grads[in];
      if (buf.empty()) buf.assign(in->data.size(), 0.0);
      slots[i] = &buf;
    }
    t->node->backward(g, slots);
  }
}

namespace {
thread_local bool t_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

Tensor make_result(std::string_view op_kind, Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   std::function<void(std::span<const double>, std::span<std::vector<double>*>)> backward) {
  Tensor out(std::move(shape), std::move(data), false);
  const bool needs_grad = t_grad_enabled && std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (!needs_grad) return out;
  auto node = std::make_shared<TapeNode>();
  node->op_kind = op_kind;
  for (const Tensor& t : inputs) node->inputs.push_back(t.impl());
  node->backward = std::move(backward);
  out.impl()->node = std::move(node);
  out.set_requires_grad(true);
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] + b.data()[i];
  return make_result("add", a.shape(), std::move(y), {a, b}, [](std::span<const double> g, std::span<std::vector<double>*> gi) {
    for (auto* slot : gi) {
      if (!slot) continue;
      for (std::size_t i = 0; i < g.size(); ++i) (*slot)[i] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] - b.data()[i];
  return make_result("sub", a.shape(), std::move(y), {a, b}, [](std::span<const double> g, std::span<std::vector<double>*> gi) {
    if (gi[0]) for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
    if (gi[1]) for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] -= g[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * b.data()[i];
  auto ai = a.impl();
  auto bi = b.impl();
  return make_result("mul", a.shape(), std::move(y), {a, b},
                     [ai, bi](std::span<const double> g, std::span<std::vector<double>*> gi) {
                       if (gi[0]) for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * bi->data[i];
                       if (gi[1]) for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] += g[i] * ai->data[i];
                     });
}

Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> y(a.data().begin(), a.data().end());
  for (double& v : y) v += s;
  return make_result("add_scalar", a.shape(), std::move(y), {a}, [](std::span<const double> g, std::span<std::vector<double>*> gi) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
  });
}

Tensor mul_scalar(const Tensor& a, double s) {
  std::vector<double> y(a.data().begin(), a.data().end());
  for (double& v : y) v *= s;
  return make_result("mul_scalar", a.shape(), std::move(y), {a}, [s](std::span<const double> g, std::span<std::vector<double>*> gi) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += s * g[i];
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
  auto xi = x.impl();
  return make_result("relu", x.shape(), std::move(y), {x}, [xi](std::span<const double> g, std::span<std::vector<double>*> gi) {
    // Subgradient at exactly 0 is 0.
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += xi->data[i] > 0.0 ? g[i] : 0.0;
  });
}

Tensor prelu(const Tensor& x, const Tensor& slope) {
  if (slope.size() != 1) fail(ErrorCode::ShapeMismatch, "prelu slope must have one element");
  const double a = slope.data()[0];
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double v = x.data()[i];
    y[i] = v > 0.0 ? v : a * v;
  }
  auto xi = x.impl();
  return make_result("prelu", x.shape(), std::move(y), {x, slope},
                     [xi, a](std::span<const double> g, std::span<std::vector<double>*> gi) {
                       const auto& xv = xi->data;
                       if (gi[0]) {
                         auto& gx = *gi[0];
                         for (std::size_t i = 0; i < g.size(); ++i) gx[i] += xv[i] > 0.0 ? g[i] : a * g[i];
                       }
                       if (gi[1]) {
                         double acc = 0.0;
                         for (std::size_t i = 0; i < g.size(); ++i) acc += xv[i] > 0.0 ? 0.0 : g[i] * xv[i];
                         (*gi[1])[0] += acc;
                       }
                     });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double v = x.data()[i];
    // Split by sign so exp never overflows.
    if (v >= 0.0) {
      y[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      y[i] = e / (1.0 + e);
    }
  }
  auto out = make_result("sigmoid", x.shape(), y, {x}, nullptr);
  if (out.requires_grad()) {
    // Saved output values drive the backward rule s * (1 - s).
    auto saved = std::make_shared<std::vector<double>>(std::move(y));
    out.impl()->node->backward = [saved](std::span<const double> g, std::span<std::vector<double>*> gi) {
      const auto& s = *saved;
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * s[i] * (1.0 - s[i]);
    };
  }
  return out;
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return make_result("sum", {1}, {acc}, {x}, [](std::span<const double> g, std::span<std::vector<double>*> gi) {
    for (double& v : *gi[0]) v += g[0];
  });
}

Tensor mean(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  const double n = static_cast<double>(x.size());
  return make_result("mean", {1}, {acc / n}, {x}, [n](std::span<const double> g, std::span<std::vector<double>*> gi) {
    for (double& v : *gi[0]) v += g[0] / n;
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (element_count(shape) != x.size()) {
    fail(ErrorCode::ShapeMismatch, "reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  std::vector<double> y(x.data().begin(), x.data().end());
  return make_result("reshape", std::move(shape), std::move(y), {x}, [](std::span<const double> g, std::span<std::vector<double>*> gi) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
  });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 5 || b.shape().size() != 5) fail(ErrorCode::ShapeMismatch, "concat_channels needs 5-D tensors");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3] || sa[4] != sb[4]) {
    fail(ErrorCode::ShapeMismatch, "concat_channels: " + shape_str(sa) + " vs " + shape_str(sb));
  }
  const std::size_t n = sa[0];
  const std::size_t plane = sa[2] * sa[3] * sa[4];
  const std::size_t ca = sa[1] * plane;
  const std::size_t cb = sb[1] * plane;
  std::vector<double> y(n * (ca + cb));
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.data().begin() + i * ca, ca, y.begin() + i * (ca + cb));
    std::copy_n(b.data().begin() + i * cb, cb, y.begin() + i * (ca + cb) + ca);
  }
  Shape shape{n, sa[1] + sb[1], sa[2], sa[3], sa[4]};
  return make_result("concat_channels", std::move(shape), std::move(y), {a, b},
                     [n, ca, cb](std::span<const double> g, std::span<std::vector<double>*> gi) {
                       for (std::size_t i = 0; i < n; ++i) {
                         if (gi[0]) for (std::size_t j = 0; j < ca; ++j) (*gi[0])[i * ca + j] += g[i * (ca + cb) + j];
                         if (gi[1]) for (std::size_t j = 0; j < cb; ++j) (*gi[1])[i * cb + j] += g[i * (ca + cb) + ca + j];
                       }
                     });
}

}  // namespace voxelseg::ad
