// Copyright 2026 The StainForge Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "stainforge/nn/ops.hpp"

#include <cmath>
#include <unordered_set>

namespace stainforge::nn {

namespace {

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  for (std::size_t i = 0; i < t.numel(); ++i)
    if (!std::isfinite(static_cast<double>(t[i])))
      throw NonFiniteError(std::string("non-finite value produced by ") + op + " at element " +
                           std::to_string(i) + " of " + t.shape().str());
}

template <typename T>
void accumulate(Node<T>& target, const Tensor<T>& delta) {
  auto& g = target.grad_buffer();
  T* dst = g.data();
  const T* src = delta.data();
  for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += src[i];
}

template <typename T>
Tensor<T> scalar_tensor(double v) {
  return Tensor<T>({1, 1, 1, 1}, static_cast<T>(v));
}

}  // namespace

template <typename T>
Var<T> make_result(Tensor<T> value, const char* op, std::vector<Var<T>> inputs,
                   std::function<void(Node<T>&)> backward_fn) {
  check_finite(value, op);
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (grad_enabled())
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    node->requires_grad = true;
    for (auto& in : inputs) node->inputs.push_back(in.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Var<T>::from_node(std::move(node));
}

template <typename T>
void backward(const Var<T>& loss) {
  if (!loss.defined() || loss.value().numel() != 1)
    throw NonScalarLoss("backward() needs a scalar loss, got " +
                        (loss.defined() ? loss.shape().str() : std::string("undefined")));
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer().fill(T{1});
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>& n = **it;
    if (!n.backward_fn) continue;
    if (n.grad.numel()) n.backward_fn(n);
    // Interior gradients are not needed once propagated.
    n.grad = Tensor<T>();
  }
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, ConvGeometry g) {
  Tensor<T> y;
  const bool has_bias = bias.defined();
  kernels::conv2d_forward(x.value(), weight.value(), has_bias ? &bias.value() : nullptr, g, y);
  std::vector<Var<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result<T>(std::move(y), "conv2d", inputs, [g, has_bias](Node<T>& self) {
    auto& xn = *self.inputs[0];
    auto& wn = *self.inputs[1];
    Tensor<T> dx, dw, db;
    const bool need_b = has_bias && self.inputs[2]->requires_grad;
    kernels::conv2d_backward(xn.value, wn.value, self.grad, g, xn.requires_grad ? &dx : nullptr,
                             wn.requires_grad ? &dw : nullptr, need_b ? &db : nullptr);
    if (xn.requires_grad) accumulate(xn, dx);
    if (wn.requires_grad) accumulate(wn, dw);
    if (need_b) accumulate(*self.inputs[2], db);
  });
}

template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias,
                        ConvGeometry g) {
  Tensor<T> y;
  const bool has_bias = bias.defined();
  kernels::conv_transpose2d_forward(x.value(), weight.value(), has_bias ? &bias.value() : nullptr,
                                    g, y);
  std::vector<Var<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result<T>(std::move(y), "conv_transpose2d", inputs, [g, has_bias](Node<T>& self) {
    auto& xn = *self.inputs[0];
    auto& wn = *self.inputs[1];
    Tensor<T> dx, dw, db;
    const bool need_b = has_bias && self.inputs[2]->requires_grad;
    kernels::conv_transpose2d_backward(xn.value, wn.value, self.grad, g,
                                       xn.requires_grad ? &dx : nullptr,
                                       wn.requires_grad ? &dw : nullptr, need_b ? &db : nullptr);
    if (xn.requires_grad) accumulate(xn, dx);
    if (wn.requires_grad) accumulate(wn, dw);
    if (need_b) accumulate(*self.inputs[2], db);
  });
}

template <typename T>
Var<T> instance_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, double eps) {
  Tensor<T> y;
  std::vector<double> mu, is;
  kernels::instance_norm_forward(x.value(), gamma.value(), beta.value(), eps, y, mu, is);
  return make_result<T>(std::move(y), "instance_norm", {x, gamma, beta},
                        [mu = std::move(mu), is = std::move(is)](Node<T>& self) {
                          auto& xn = *self.inputs[0];
                          auto& gn = *self.inputs[1];
                          auto& bn = *self.inputs[2];
                          Tensor<T> dx, dg, db;
                          kernels::instance_norm_backward(
                              xn.value, gn.value, mu, is, self.grad,
                              xn.requires_grad ? &dx : nullptr, gn.requires_grad ? &dg : nullptr,
                              bn.requires_grad ? &db : nullptr);
                          if (xn.requires_grad) accumulate(xn, dx);
                          if (gn.requires_grad) accumulate(gn, dg);
                          if (bn.requires_grad) accumulate(bn, db);
                        });
}

template <typename T>
Var<T> roi_align(const Var<T>& features, std::span<const BoxSpec> boxes, const RoiAlignParams& p) {
  Tensor<T> out;
  kernels::roi_align_forward(features.value(), boxes, p, out);
  std::vector<BoxSpec> saved(boxes.begin(), boxes.end());
  return make_result<T>(std::move(out), "roi_align", {features},
                        [saved = std::move(saved), p](Node<T>& self) {
                          auto& fn = *self.inputs[0];
                          Tensor<T> df(fn.value.shape());
                          kernels::roi_align_backward<T>(saved, p, self.grad, df);
                          accumulate(fn, df);
                        });
}

template <typename T>
Var<T> reflect_pad(const Var<T>& x, int pad) {
  Tensor<T> y;
  kernels::reflect_pad_forward(x.value(), pad, y);
  return make_result<T>(std::move(y), "reflect_pad", {x}, [pad](Node<T>& self) {
    Tensor<T> dx;
    kernels::reflect_pad_backward(self.grad, pad, dx);
    accumulate(*self.inputs[0], dx);
  });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, double slope) {
  Tensor<T> y = x.value();
  const T s = static_cast<T>(slope);
  for (auto& v : y.values()) v = v > 0 ? v : v * s;
  return make_result<T>(std::move(y), slope == 0 ? "relu" : "leaky_relu", {x}, [s](Node<T>& self) {
    auto& xn = *self.inputs[0];
    Tensor<T> dx(xn.value.shape());
    for (std::size_t i = 0; i < dx.numel(); ++i)
      dx[i] = xn.value[i] > 0 ? self.grad[i] : self.grad[i] * s;
    accumulate(xn, dx);
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return leaky_relu(x, 0.0);
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  Tensor<T> y = x.value();
  for (auto& v : y.values()) v = std::tanh(v);
  Tensor<T> saved = y;
  return make_result<T>(std::move(y), "tanh", {x}, [saved = std::move(saved)](Node<T>& self) {
    Tensor<T> dx(saved.shape());
    for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] = self.grad[i] * (T{1} - saved[i] * saved[i]);
    accumulate(*self.inputs[0], dx);
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) throw ShapeMismatch("add: " + a.shape().str() + " vs " + b.shape().str());
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] += b.value()[i];
  return make_result<T>(std::move(y), "add", {a, b}, [](Node<T>& self) {
    for (auto& in : self.inputs)
      if (in->requires_grad) accumulate(*in, self.grad);
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, double s) {
  Tensor<T> y = x.value();
  for (auto& v : y.values()) v += static_cast<T>(s);
  return make_result<T>(std::move(y), "add_scalar", {x},
                        [](Node<T>& self) { accumulate(*self.inputs[0], self.grad); });
}

template <typename T>
Var<T> mul_scalar(const Var<T>& x, double s) {
  Tensor<T> y = x.value();
  for (auto& v : y.values()) v *= static_cast<T>(s);
  return make_result<T>(std::move(y), "mul_scalar", {x}, [s](Node<T>& self) {
    Tensor<T> dx = self.grad;
    for (auto& v : dx.values()) v *= static_cast<T>(s);
    accumulate(*self.inputs[0], dx);
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  double acc = 0;
  for (auto v : x.value().values()) acc += v;
  return make_result<T>(scalar_tensor<T>(acc), "sum", {x}, [](Node<T>& self) {
    auto& xn = *self.inputs[0];
    Tensor<T> dx(xn.value.shape(), self.grad[0]);
    accumulate(xn, dx);
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  if (x.value().numel() == 0) throw InvalidArgument("mean of empty tensor");
  double acc = 0;
  for (auto v : x.value().values()) acc += v;
  const double n = static_cast<double>(x.value().numel());
  return make_result<T>(scalar_tensor<T>(acc / n), "mean", {x}, [n](Node<T>& self) {
    auto& xn = *self.inputs[0];
    Tensor<T> dx(xn.value.shape(), static_cast<T>(self.grad[0] / n));
    accumulate(xn, dx);
  });
}

template <typename T>
Var<T> mean_squared_to(const Var<T>& x, double target) {
  if (x.value().numel() == 0) throw InvalidArgument("mean_squared_to of empty tensor");
  double acc = 0;
  for (auto v : x.value().values()) {
    const double d = static_cast<double>(v) - target;
    acc += d * d;
  }
  const double n = static_cast<double>(x.value().numel());
  return make_result<T>(scalar_tensor<T>(acc / n), "mean_squared_to", {x},
                        [n, target](Node<T>& self) {
                          auto& xn = *self.inputs[0];
                          Tensor<T> dx(xn.value.shape());
                          const double g = self.grad[0];
                          for (std::size_t i = 0; i < dx.numel(); ++i)
                            dx[i] = static_cast<T>(2.0 * (xn.value[i] - target) / n * g);
                          accumulate(xn, dx);
                        });
}

template <typename T>
Var<T> mean_abs_diff(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeMismatch("mean_abs_diff: " + a.shape().str() + " vs " + b.shape().str());
  if (a.value().numel() == 0) throw InvalidArgument("mean_abs_diff of empty tensor");
  double acc = 0;
  for (std::size_t i = 0; i < a.value().numel(); ++i)
    acc += std::abs(static_cast<double>(a.value()[i]) - b.value()[i]);
  const double n = static_cast<double>(a.value().numel());
  return make_result<T>(scalar_tensor<T>(acc / n), "mean_abs_diff", {a, b}, [n](Node<T>& self) {
    auto& an = *self.inputs[0];
    auto& bn = *self.inputs[1];
    Tensor<T> da(an.value.shape());
    const double g = self.grad[0] / n;
    for (std::size_t i = 0; i < da.numel(); ++i) {
      const T d = an.value[i] - bn.value[i];
      da[i] = static_cast<T>(d > 0 ? g : (d < 0 ? -g : 0.0));
    }
    if (an.requires_grad) accumulate(an, da);
    if (bn.requires_grad) {
      for (auto& v : da.values()) v = -v;
      accumulate(bn, da);
    }
  });
}

template <typename T>
Var<T> weighted_sum(const std::vector<std::pair<double, Var<T>>>& terms) {
  double acc = 0;
  std::vector<Var<T>> inputs;
  std::vector<double> weights;
  for (const auto& [w, t] : terms) {
    if (t.value().numel() != 1) throw NonScalarLoss("weighted_sum term " + t.shape().str());
    if (w == 0) continue;
    acc += w * static_cast<double>(t.value()[0]);
    inputs.push_back(t);
    weights.push_back(w);
  }
  return make_result<T>(scalar_tensor<T>(acc), "weighted_sum", inputs,
                        [weights = std::move(weights)](Node<T>& self) {
                          for (std::size_t i = 0; i < self.inputs.size(); ++i) {
                            auto& in = *self.inputs[i];
                            if (!in.requires_grad) continue;
                            in.grad_buffer()[0] += static_cast<T>(weights[i] * self.grad[0]);
                          }
                        });
}

#define STAINFORGE_INSTANTIATE(T)                                                                \
  template Var<T> make_result<T>(Tensor<T>, const char*, std::vector<Var<T>>,                    \
                                 std::function<void(Node<T>&)>);                                 \
  template void backward<T>(const Var<T>&);                                                      \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, ConvGeometry);          \
  template Var<T> conv_transpose2d<T>(const Var<T>&, const Var<T>&, const Var<T>&,               \
                                      ConvGeometry);                                             \
  template Var<T> instance_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, double);         \
  template Var<T> roi_align<T>(const Var<T>&, std::span<const BoxSpec>, const RoiAlignParams&);  \
  template Var<T> reflect_pad<T>(const Var<T>&, int);                                            \
  template Var<T> relu<T>(const Var<T>&);                                                        \
  template Var<T> leaky_relu<T>(const Var<T>&, double);                                          \
  template Var<T> tanh<T>(const Var<T>&);                                                        \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                          \
  template Var<T> add_scalar<T>(const Var<T>&, double);                                          \
  template Var<T> mul_scalar<T>(const Var<T>&, double);                                          \
  template Var<T> sum<T>(const Var<T>&);                                                         \
  template Var<T> mean<T>(const Var<T>&);                                                        \
  template Var<T> mean_squared_to<T>(const Var<T>&, double);                                     \
  template Var<T> mean_abs_diff<T>(const Var<T>&, const Var<T>&);                                \
  template Var<T> weighted_sum<T>(const std::vector<std::pair<double, Var<T>>>&);

STAINFORGE_INSTANTIATE(float)
STAINFORGE_INSTANTIATE(double)
#undef STAINFORGE_INSTANTIATE

}  // namespace stainforge::nn
