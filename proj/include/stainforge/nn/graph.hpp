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

#pragma once

// Reverse-mode differentiation over a dynamically recorded graph.
//
// A Var is a shared handle to a Node. Ops that receive at least one input
// requiring gradients record their inputs and a backward closure; everything
// else is a constant. backward() walks the graph in reverse topological order
// and accumulates into Node::grad. Leaf parameters keep their gradients until
// the optimizer clears them.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "stainforge/nn/tensor.hpp"

namespace stainforge::nn {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something flows in
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";

  /// Gradient buffer, allocated as zeros on first use.
  Tensor<T>& grad_buffer() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  /// Accumulated gradient (zeros if nothing has flowed in yet).
  const Tensor<T>& grad() const { return node_->grad_buffer(); }
  Tensor<T>& grad() { return node_->grad_buffer(); }
  void zero_grad() {
    if (node_->grad.numel()) node_->grad.fill(T{0});
  }

  /// Scalar value; throws unless the tensor has exactly one element.
  T item() const;
  /// Same value, cut from the graph.
  Var detach() const { return Var(node_->value, false); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }
  static Var from_node(std::shared_ptr<Node<T>> n) {
    Var v;
    v.node_ = std::move(n);
    return v;
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {
inline thread_local bool grad_mode = true;
}

inline bool grad_enabled() { return detail::grad_mode; }

/// While alive, ops on this thread record no graph (inference).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode) { detail::grad_mode = false; }
  ~NoGradGuard() { detail::grad_mode = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Builds an op result. Records inputs only when one of them needs gradients.
template <typename T>
Var<T> make_result(Tensor<T> value, const char* op, std::vector<Var<T>> inputs,
                   std::function<void(Node<T>&)> backward_fn);

/// Fills gradients of every reachable node that requires them.
/// Throws NonScalarLoss unless `loss` holds exactly one element.
template <typename T>
void backward(const Var<T>& loss);

template <typename T>
T Var<T>::item() const {
  if (node_->value.numel() != 1) throw NonScalarLoss("item() on tensor " + shape().str());
  return node_->value[0];
}

}  // namespace stainforge::nn
