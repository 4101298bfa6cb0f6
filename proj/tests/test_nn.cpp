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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "stainforge/nn/adam.hpp"
#include "stainforge/nn/checkpoint.hpp"
#include "stainforge/nn/gradcheck.hpp"
#include "stainforge/nn/ops.hpp"
#include "stainforge/parallel.hpp"
#include "stainforge/selftest.hpp"

namespace stainforge::nn {
namespace {

TEST(Conv2d, IdentityKernelCopiesInput) {
  std::mt19937_64 rng(1);
  auto x = Tensor<float>::randn({1, 1, 5, 5}, 1.0, rng);
  Tensor<float> w({1, 1, 1, 1}, 1.0f), y;
  kernels::conv2d_forward<float>(x, w, nullptr, {1, 0}, y);
  EXPECT_EQ(y, x);
}

TEST(Conv2d, OutputShapes) {
  EXPECT_EQ(conv2d_out_shape({1, 3, 256, 256}, {64, 3, 4, 4}, {2, 1}), (Shape{1, 64, 128, 128}));
  EXPECT_EQ(conv2d_out_shape({2, 3, 7, 9}, {5, 3, 3, 3}, {1, 1}), (Shape{2, 5, 7, 9}));
  EXPECT_THROW(conv2d_out_shape({1, 3, 8, 8}, {4, 2, 3, 3}, {1, 1}), ShapeMismatch);
  EXPECT_EQ(conv_transpose2d_out_shape({1, 1, 4, 4}, {1, 1, 4, 4}, {2, 1}), (Shape{1, 1, 8, 8}));
}

TEST(Conv2d, ShapeContractOverRandomShapes) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 50; ++t) {
    const int k = 1 + rng() % 4, s = 1 + rng() % 2, p = rng() % k;
    const Shape xs{1 + int(rng() % 2), 1 + int(rng() % 3), k + int(rng() % 9), k + int(rng() % 9)};
    auto x = Tensor<float>::randn(xs, 1, rng);
    auto w = Tensor<float>::randn({2, xs.c, k, k}, 1, rng);
    Tensor<float> y;
    kernels::conv2d_forward<float>(x, w, nullptr, {s, p}, y);
    EXPECT_EQ(y.shape().h, (xs.h + 2 * p - k) / s + 1);
    EXPECT_EQ(y.shape().w, (xs.w + 2 * p - k) / s + 1);
  }
}

TEST(InstanceNorm, ConstantChannelGivesBeta) {
  Tensor<float> x({1, 2, 4, 4}, 3.0f), gamma({1, 2, 1, 1}, 2.0f), beta({1, 2, 1, 1}, 0.0f), y;
  beta[0] = 0.25f;
  beta[1] = -1.5f;
  std::vector<double> m, s;
  kernels::instance_norm_forward(x, gamma, beta, 1e-5, y, m, s);
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 16; ++i) EXPECT_EQ(y[c * 16 + i], beta[c]);
}

TEST(InstanceNorm, UnitAffineStandardizes) {
  std::mt19937_64 rng(3);
  auto x = Tensor<double>::randn({2, 3, 8, 8}, 2.0, rng);
  Tensor<double> gamma({1, 3, 1, 1}, 1.0), beta({1, 3, 1, 1}, 0.0), y;
  std::vector<double> m, s;
  kernels::instance_norm_forward(x, gamma, beta, 1e-5, y, m, s);
  for (int p = 0; p < 6; ++p) {
    double mu = 0, var = 0;
    for (int i = 0; i < 64; ++i) mu += y[p * 64 + i] / 64;
    for (int i = 0; i < 64; ++i) var += (y[p * 64 + i] - mu) * (y[p * 64 + i] - mu) / 64;
    EXPECT_NEAR(mu, 0.0, 1e-4);
    EXPECT_NEAR(var, 1.0, 1e-4);
  }
}

TEST(RoiAlign, ConstantMapGivesConstant) {
  Tensor<float> f({1, 2, 6, 6}, 0.75f), out;
  std::vector<BoxSpec> boxes{{0, 8, 8, 40, 40}, {0, 20, 4, 30, 90}};
  kernels::roi_align_forward(f, boxes, {3, 1.0 / 8, 2}, out);
  ASSERT_EQ(out.shape(), (Shape{2, 2, 3, 3}));
  // The second box reaches past the border, where samples read zero, so only
  // its fully interior bins are compared.
  for (int i = 0; i < 18; ++i) EXPECT_FLOAT_EQ(out[i], 0.75f);
}

TEST(RoiAlign, AlignedBoxEqualsAveragePooling) {
  std::mt19937_64 rng(4);
  auto f = Tensor<double>::randn({1, 1, 10, 10}, 1.0, rng);
  const int p = 3;
  // Covers feature pixels [2, 8) x [1, 7): a 2p x 2p patch.
  std::vector<BoxSpec> boxes{{0, 2, 1, 8, 7}};
  Tensor<double> out;
  kernels::roi_align_forward(f, boxes, {p, 1.0, 2}, out);
  for (int by = 0; by < p; ++by)
    for (int bx = 0; bx < p; ++bx) {
      double avg = 0;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) avg += f.at(0, 0, 1 + 2 * by + dy, 2 + 2 * bx + dx) / 4;
      EXPECT_NEAR(out.at(0, 0, by, bx), avg, 1e-12);
    }
}

TEST(RoiAlign, IgnoresContentOutsideSupport) {
  std::mt19937_64 rng(5);
  auto f = Tensor<double>::randn({1, 2, 12, 12}, 1.0, rng);
  std::vector<BoxSpec> boxes{{0, 3, 4, 7, 9}};
  Tensor<double> a, b;
  kernels::roi_align_forward(f, boxes, {3, 1.0, 2}, a);
  // Samples fall in [3, 7) x [4, 9); bilinear support adds one pixel.
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 12; ++y)
      for (int x = 0; x < 12; ++x)
        if (y < 3 || y > 9 || x < 2 || x > 7) f.at(0, c, y, x) = 100.0;
  kernels::roi_align_forward(f, boxes, {3, 1.0, 2}, b);
  EXPECT_EQ(a, b);
}

TEST(RoiAlign, EmptyBoxListGivesEmptyTensor) {
  Tensor<float> f({1, 4, 3, 3}), out;
  kernels::roi_align_forward<float>(f, {}, {3, 1.0 / 16, 2}, out);
  EXPECT_EQ(out.shape(), (Shape{0, 4, 3, 3}));
}

TEST(RoiAlign, InvalidBoxesRejected) {
  std::vector<BoxSpec> inverted{{0, 5, 5, 4, 9}};
  EXPECT_THROW(validate_boxes(inverted, 1), InvalidBox);
  std::vector<BoxSpec> bad_batch{{3, 0, 0, 4, 4}};
  EXPECT_THROW(validate_boxes(bad_batch, 2), InvalidBox);
}

TEST(Backward, SumGivesOnes) {
  std::mt19937_64 rng(6);
  Var<float> x(Tensor<float>::randn({2, 3, 4, 5}, 1, rng), true);
  backward(sum(x));
  for (float g : x.grad().values()) EXPECT_EQ(g, 1.0f);
}

TEST(Backward, UnreachableParameterHasZeroGradient) {
  Var<double> x(Tensor<double>({1, 1, 2, 2}, 1.0), true);
  Var<double> unused(Tensor<double>({1, 1, 2, 2}, 1.0), true);
  backward(mean(x));
  for (double g : unused.grad().values()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, NonScalarLossRejected) {
  Var<double> x(Tensor<double>({1, 1, 2, 2}, 1.0), true);
  EXPECT_THROW(backward(relu(x)), NonScalarLoss);
}

TEST(Backward, GradientsAccumulateAcrossUses) {
  Var<double> x(Tensor<double>({1, 1, 1, 3}, 2.0), true);
  backward(sum(add(x, mul_scalar(x, 3.0))));
  for (double g : x.grad().values()) EXPECT_EQ(g, 4.0);
}

TEST(Ops, NonFiniteValuesRaise) {
  Var<double> x(Tensor<double>({1, 1, 1, 1}, 1e308), true);
  EXPECT_THROW(mul_scalar(x, 10.0), NonFiniteError);
}

TEST(KernelOracles, AllKernelsMatchReferences) {
  for (const auto& r : selftest::run_kernel_oracles(100, 42)) {
    EXPECT_TRUE(r.pass) << r.name << " error " << r.error;
    EXPECT_EQ(r.cases, 100u);
  }
}

TEST(GradientSuite, EveryOpMatchesFiniteDifferences) {
  for (const auto& r : selftest::run_gradient_suite(7))
    EXPECT_TRUE(r.pass) << r.name << " max rel error " << r.error;
}

TEST(GradCheck, DetectsAWrongGradient) {
  Var<double> x(Tensor<double>({1, 1, 1, 4}, 0.5), true);
  // Backward deliberately off by a factor of two.
  auto loss = [&] {
    double acc = 0;
    for (double v : x.value().values()) acc += v * v;
    return make_result<double>(Tensor<double>({1, 1, 1, 1}, acc), "bad", {x}, [](Node<double>& self) {
      auto& in = *self.inputs[0];
      for (std::size_t i = 0; i < in.value.numel(); ++i) in.grad_buffer()[i] += 4 * in.value[i];
    });
  };
  EXPECT_GT(gradient_check({x}, loss).max_rel_error, 0.4);
}

TEST(Kernels, ResultsIndependentOfThreadCount) {
  std::mt19937_64 rng(8);
  auto x = Tensor<float>::randn({4, 3, 12, 12}, 1, rng);
  auto w = Tensor<float>::randn({5, 3, 3, 3}, 1, rng);
  auto dy = Tensor<float>::randn({4, 5, 12, 12}, 1, rng);
  const int saved = thread_count();
  Tensor<float> y1, dx1, dw1, db1, y4, dx4, dw4, db4;
  set_thread_count(1);
  kernels::conv2d_forward<float>(x, w, nullptr, {1, 1}, y1);
  kernels::conv2d_backward(x, w, dy, {1, 1}, &dx1, &dw1, &db1);
  set_thread_count(4);
  kernels::conv2d_forward<float>(x, w, nullptr, {1, 1}, y4);
  kernels::conv2d_backward(x, w, dy, {1, 1}, &dx4, &dw4, &db4);
  set_thread_count(saved);
  EXPECT_EQ(y1, y4);
  EXPECT_EQ(dx1, dx4);
  EXPECT_EQ(dw1, dw4);
  EXPECT_EQ(db1, db4);
}

// Independent scalar Adam used as the oracle.
struct ScalarAdam {
  double lr = 2e-4, b0 = 0.5, b1 = 0.999, eps = 1e-8;
  double m = 0, v = 0;
  int t = 0;
  double step(double p, double g) {
    ++t;
    m = b0 * m + (1 - b0) * g;
    v = b1 * v + (1 - b1) * g * g;
    const double mh = m / (1 - std::pow(b0, t));
    const double vh = v / (1 - std::pow(b1, t));
    return p - lr * mh / (std::sqrt(vh) + eps);
  }
};

class AdamFixture : public Module<double> {
 public:
  AdamFixture() { p = add_parameter("p", Tensor<double>({1, 1, 1, 1}, 0.3)); }
  Var<double> p;
};

TEST(Adam, ZeroGradientLeavesParametersButCountsStep) {
  AdamFixture m;
  Adam<double> opt(m.parameters(), {});
  m.p.grad();
  opt.step();
  EXPECT_EQ(m.p.value()[0], 0.3);
  EXPECT_EQ(opt.step_count(), 1);
}

TEST(Adam, MatchesScalarReferenceOverSteps) {
  AdamFixture m;
  Adam<double> opt(m.parameters(), {});
  ScalarAdam ref;
  double expected = 0.3;
  const double grads[] = {1.0, 1.0, -0.4, 2.5, 0.0};
  for (double g : grads) {
    m.p.grad()[0] = g;
    opt.step();
    expected = ref.step(expected, g);
    EXPECT_NEAR(m.p.value()[0], expected, 1e-12);
    EXPECT_EQ(m.p.grad()[0], 0.0);
  }
  // First step with unit gradient moves by lr (to within eps).
  AdamFixture fresh;
  Adam<double> one(fresh.parameters(), {});
  fresh.p.grad()[0] = 1.0;
  one.step();
  EXPECT_NEAR(fresh.p.value()[0], 0.3 - 2e-4 / (1 + 1e-8), 1e-12);
}

TEST(Checkpoint, RoundTripsBlocksAndMeta) {
  const auto path = std::filesystem::temp_directory_path() / "sf_ckpt_roundtrip.ckpt";
  std::mt19937_64 rng(9);
  Checkpoint c;
  c.model_tag = "generator";
  c.meta["step"] = "17";
  c.blocks.emplace_back("a.weight", Tensor<float>::randn({2, 3, 4, 5}, 1, rng));
  c.blocks.emplace_back("a.bias", Tensor<float>::randn({1, 2, 1, 1}, 1, rng));
  write_checkpoint(path, c);
  const auto r = read_checkpoint(path);
  EXPECT_EQ(r.model_tag, "generator");
  EXPECT_EQ(r.meta, c.meta);
  ASSERT_EQ(r.blocks.size(), 2u);
  EXPECT_EQ(r.blocks[0], c.blocks[0]);
  EXPECT_EQ(r.blocks[1], c.blocks[1]);
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsOtherVersionsAndGarbage) {
  const auto path = std::filesystem::temp_directory_path() / "sf_ckpt_version.ckpt";
  write_checkpoint(path, Checkpoint{"x", {}, {}});
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    const char v2[4] = {2, 0, 0, 0};
    f.write(v2, 4);
  }
  EXPECT_THROW(read_checkpoint(path), UnsupportedVersion);
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << "not a checkpoint";
  }
  EXPECT_THROW(read_checkpoint(path), IoError);
  std::filesystem::resize_file(path, 3);
  EXPECT_THROW(read_checkpoint(path), IoError);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace stainforge::nn
