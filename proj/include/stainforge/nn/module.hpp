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

#include <string>
#include <vector>

#include "stainforge/nn/graph.hpp"

namespace stainforge::nn {

template <typename T>
struct NamedParameter {
  std::string name;
  Var<T> var;
};

template <typename T>
using ParameterList = std::vector<NamedParameter<T>>;

/// Owns a flat, ordered list of named leaf parameters.
template <typename T>
class Module {
 public:
  virtual ~Module() = default;

  const ParameterList<T>& parameters() const { return params_; }
  ParameterList<T>& parameters() { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.var.value().numel();
    return n;
  }

  /// Frozen parameters are treated as constants by the graph.
  void set_requires_grad(bool on) {
    for (auto& p : params_) p.var.set_requires_grad(on);
  }

  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }

  std::uint64_t fingerprint() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& p : params_) h = nn::fingerprint(p.var.value(), h);
    return h;
  }

 protected:
  Var<T> add_parameter(std::string name, Tensor<T> value) {
    Var<T> v(std::move(value), true);
    params_.push_back({std::move(name), v});
    return v;
  }

 private:
  ParameterList<T> params_;
};

}  // namespace stainforge::nn
