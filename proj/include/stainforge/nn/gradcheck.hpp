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

// Central finite-difference gradient checking for 64-bit graphs.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stainforge/nn/graph.hpp"

namespace stainforge::nn {

struct GradCheckOptions {
  double eps = 1e-3;
  /// Elements probed per input; inputs with more elements are sampled.
  std::size_t max_probes_per_input = 64;
  /// Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-3;
  std::uint64_t seed = 1;
};

struct GradCheckResult {
  double max_rel_error = 0;
  std::size_t probes = 0;
  /// Input index and element of the worst probe.
  std::size_t worst_input = 0;
  std::size_t worst_element = 0;
  double worst_analytic = 0;
  double worst_numeric = 0;
};

/// `loss` rebuilds a scalar from the current values of `inputs` (leaves that
/// require gradients). Analytic gradients come from one backward pass; every
/// probe then perturbs one element by +-eps in place.
GradCheckResult gradient_check(std::vector<Var<double>> inputs,
                               const std::function<Var<double>()>& loss,
                               const GradCheckOptions& opt = {});

/// sum(x * r) for a fixed tensor r of the same shape. Turns any op output
/// into a scalar whose gradient is r.
Var<double> project(const Var<double>& x, const Tensor<double>& r);

}  // namespace stainforge::nn
