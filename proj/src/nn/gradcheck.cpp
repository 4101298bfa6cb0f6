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

#include "stainforge/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "stainforge/nn/ops.hpp"

namespace stainforge::nn {

Var<double> project(const Var<double>& x, const Tensor<double>& r) {
  if (r.shape() != x.shape()) throw ShapeMismatch("project: " + x.shape().str() + " vs " + r.shape().str());
  double acc = 0;
  for (std::size_t i = 0; i < r.numel(); ++i) acc += x.value()[i] * r[i];
  return make_result<double>(Tensor<double>({1, 1, 1, 1}, acc), "project", {x},
                             [r](Node<double>& self) {
                               auto& xn = *self.inputs[0];
                               auto& g = xn.grad_buffer();
                               const double s = self.grad[0];
                               for (std::size_t i = 0; i < g.numel(); ++i) g[i] += s * r[i];
                             });
}

GradCheckResult gradient_check(std::vector<Var<double>> inputs,
                               const std::function<Var<double>()>& loss,
                               const GradCheckOptions& opt) {
  for (auto& in : inputs) in.zero_grad();
  backward(loss());
  std::vector<Tensor<double>> analytic;
  for (auto& in : inputs) analytic.push_back(in.grad());

  std::mt19937_64 rng(opt.seed);
  GradCheckResult res;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& values = inputs[k].mutable_value();
    std::vector<std::size_t> probe(values.numel());
    std::iota(probe.begin(), probe.end(), std::size_t{0});
    if (probe.size() > opt.max_probes_per_input) {
      std::shuffle(probe.begin(), probe.end(), rng);
      probe.resize(opt.max_probes_per_input);
      std::sort(probe.begin(), probe.end());
    }
    for (std::size_t i : probe) {
      const double saved = values[i];
      values[i] = saved + opt.eps;
      const double up = loss().item();
      values[i] = saved - opt.eps;
      const double down = loss().item();
      values[i] = saved;
      const double numeric = (up - down) / (2 * opt.eps);
      const double a = analytic[k][i];
      const double rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opt.floor});
      ++res.probes;
      if (rel >= res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_input = k;
        res.worst_element = i;
        res.worst_analytic = a;
        res.worst_numeric = numeric;
      }
    }
  }
  for (auto& in : inputs) in.zero_grad();
  return res;
}

}  // namespace stainforge::nn
