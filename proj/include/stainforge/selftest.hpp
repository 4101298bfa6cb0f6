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

// Built-in correctness suites shared by the `selftest` command and the test
// binaries: optimized kernels against nested-loop references, and analytic
// gradients against central finite differences.

#include <cstdint>
#include <string>
#include <vector>

namespace stainforge::selftest {

struct CheckResult {
  std::string name;
  bool pass = false;
  /// Worst observed error (absolute for kernel oracles, relative for gradients).
  double error = 0;
  double tolerance = 0;
  std::size_t cases = 0;
};

/// Random small cases (every dimension <= 8) per kernel, computed in 64-bit so
/// the comparison measures the algorithm rather than float32 summation order.
std::vector<CheckResult> run_kernel_oracles(int cases_per_kernel = 100, std::uint64_t seed = 1);

/// Every differentiable op plus the composed networks, 64-bit, eps 1e-3.
std::vector<CheckResult> run_gradient_suite(std::uint64_t seed = 1);

}  // namespace stainforge::selftest
