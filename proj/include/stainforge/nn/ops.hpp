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

// Differentiable operators. Every op checks its output for NaN/Inf and throws
// NonFiniteError naming the op.

#include <span>
#include <utility>
#include <vector>

#include "stainforge/nn/graph.hpp"
#include "stainforge/nn/kernels.hpp"

namespace stainforge::nn {

/// Weight (C_out, C_in, k, k); `bias` may be an undefined Var. Zero padding.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, ConvGeometry g);

/// Weight (C_in, C_out, k, k). Output side = (H - 1) * stride - 2 * pad + k.
template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias,
                        ConvGeometry g);

template <typename T>
Var<T> instance_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, double eps = 1e-5);

/// (K, C, p, p) pooled features; K = boxes.size(). Empty box list gives an
/// empty (0, C, p, p) tensor.
template <typename T>
Var<T> roi_align(const Var<T>& features, std::span<const BoxSpec> boxes, const RoiAlignParams& p);

template <typename T>
Var<T> reflect_pad(const Var<T>& x, int pad);

template <typename T>
Var<T> relu(const Var<T>& x);
template <typename T>
Var<T> leaky_relu(const Var<T>& x, double slope);
template <typename T>
Var<T> tanh(const Var<T>& x);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> add_scalar(const Var<T>& x, double s);
template <typename T>
Var<T> mul_scalar(const Var<T>& x, double s);

/// Scalar reductions. Accumulation runs in double.
template <typename T>
Var<T> sum(const Var<T>& x);
template <typename T>
Var<T> mean(const Var<T>& x);
/// mean((x - target)^2)
template <typename T>
Var<T> mean_squared_to(const Var<T>& x, double target);
/// mean(|a - b|); subgradient 0 where a == b.
template <typename T>
Var<T> mean_abs_diff(const Var<T>& a, const Var<T>& b);

/// sum_i weight_i * term_i over scalar terms, evaluated in double and rounded
/// once. Zero-weight terms are dropped from the graph.
template <typename T>
Var<T> weighted_sum(const std::vector<std::pair<double, Var<T>>>& terms);

}  // namespace stainforge::nn
