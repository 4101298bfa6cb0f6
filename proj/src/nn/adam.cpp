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

#include "stainforge/nn/adam.hpp"

#include <cmath>

namespace stainforge::nn {

template <typename T>
Adam<T>::Adam(ParameterList<T> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.emplace_back(p.var.value().shape());
    v_.emplace_back(p.var.value().shape());
  }
}

template <typename T>
void Adam<T>::step() {
  ++step_count_;
  const double b0 = cfg_.beta0, b1 = cfg_.beta1;
  const double c0 = 1.0 - std::pow(b0, static_cast<double>(step_count_));
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var<T> var = params_[i].var;
    const Tensor<T>& g = var.grad();
    Tensor<T>& p = var.mutable_value();
    for (std::size_t j = 0; j < p.numel(); ++j) {
      const double gj = g[j];
      const double m = b0 * m_[i][j] + (1.0 - b0) * gj;
      const double v = b1 * v_[i][j] + (1.0 - b1) * gj * gj;
      m_[i][j] = static_cast<T>(m);
      v_[i][j] = static_cast<T>(v);
      const double mhat = m / c0;
      const double vhat = v / c1;
      p[j] = static_cast<T>(p[j] - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
    }
    var.zero_grad();
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

template class Adam<float>;
template class Adam<double>;

}  // namespace stainforge::nn
