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
#include <random>

#include "stainforge/models.hpp"
#include "stainforge/nn/ops.hpp"

namespace stainforge::models {
namespace {

using nn::BoxSpec;
using nn::Shape;
using nn::Tensor;
using nn::Var;

Var<float> random_image(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor<float> t(s);
  std::uniform_real_distribution<float> u(-1, 1);
  for (auto& v : t.values()) v = u(rng);
  return Var<float>(t);
}

GeneratorConfig desk_generator() {
  GeneratorConfig c;
  c.base_channels = 16;
  c.n_res_blocks = 2;
  c.allow_any_depth = true;
  return c;
}

TEST(Generator, DepthChangesParameterCountByThreeBlocks) {
  GeneratorConfig six, nine;
  nine.n_res_blocks = 9;
  const Generator<float> g6(six, 1), g9(nine, 1);
  const std::size_t block = 2 * (3 * 3 * 64 * 64 + 2 * 64);
  EXPECT_EQ(g9.parameter_count() - g6.parameter_count(), 3 * block);
}

TEST(Generator, RejectsUnsupportedDepthUnlessOverridden) {
  GeneratorConfig c;
  c.n_res_blocks = 2;
  EXPECT_THROW(Generator<float>(c, 1), InvalidArgument);
  c.allow_any_depth = true;
  EXPECT_NO_THROW(Generator<float>(c, 1));
}

TEST(Generator, SameSeedGivesIdenticalParameters) {
  const Generator<float> a(desk_generator(), 42), b(desk_generator(), 42), c(desk_generator(), 43);
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  EXPECT_NE(a.fingerprint(), c.fingerprint());
}

TEST(Generator, PreservesShapeWithinTanhRange) {
  const Generator<float> g(desk_generator(), 3);
  for (Shape s : {Shape{2, 3, 64, 64}, Shape{1, 3, 32, 48}, Shape{1, 3, 16, 16}}) {
    const auto y = g.forward(random_image(s, 5));
    EXPECT_EQ(y.shape(), s);
    for (float v : y.value().values()) {
      EXPECT_GT(v, -1.0f);
      EXPECT_LT(v, 1.0f);
    }
  }
}

TEST(Generator, RejectsBadInputs) {
  const Generator<float> g(desk_generator(), 3);
  EXPECT_THROW(g.forward(random_image({1, 3, 30, 32}, 1)), ShapeMismatch);
  EXPECT_THROW(g.forward(random_image({1, 1, 32, 32}, 1)), ShapeMismatch);
}

TEST(PatchDiscriminator, GridSizesForEveryVariantAndInputSize) {
  const std::pair<PatchVariant, int> variants[] = {
      {PatchVariant::kGrid8, 32}, {PatchVariant::kGrid16, 16}, {PatchVariant::kGrid32, 8}};
  for (auto [variant, divisor] : variants) {
    const PatchDiscriminator<float> d({variant, 4}, 1);
    for (int side : {64, 128, 256}) {
      const auto y = d.forward(random_image({1, 3, side, side}, 2));
      EXPECT_EQ(y.shape(), (Shape{1, 1, side / divisor, side / divisor}))
          << to_string(variant) << " at " << side;
    }
  }
}

TEST(PatchDiscriminator, FullWidthGridOnLargeTile) {
  const PatchDiscriminator<float> d({PatchVariant::kGrid8, 64}, 1);
  EXPECT_EQ(d.forward(random_image({1, 3, 256, 256}, 2)).shape(), (Shape{1, 1, 8, 8}));
}

TEST(PatchDiscriminator, VariantNamesRoundTrip) {
  for (auto v : {PatchVariant::kGrid8, PatchVariant::kGrid16, PatchVariant::kGrid32})
    EXPECT_EQ(parse_patch_variant(to_string(v)), v);
  EXPECT_THROW(parse_patch_variant("grid12"), ConfigError);
}

RoiDiscriminatorConfig desk_roi(bool normalize = true) {
  RoiDiscriminatorConfig c;
  c.base_channels = 8;
  c.normalize = normalize;
  return c;
}

TEST(RoiDiscriminator, OneScorePerBox) {
  const RoiDiscriminator<float> d(desk_roi(), 1);
  std::vector<BoxSpec> boxes;
  for (int i = 0; i < 8; ++i) boxes.push_back({i % 2, 4.0 + 5 * i, 8, 20.0 + 5 * i, 24});
  const auto y = d.forward(random_image({2, 3, 64, 64}, 3), boxes);
  EXPECT_EQ(y.shape(), (Shape{8, 1, 1, 1}));
}

TEST(RoiDiscriminator, DuplicateBoxesScoreIdentically) {
  const RoiDiscriminator<float> d(desk_roi(), 1);
  std::vector<BoxSpec> boxes{{0, 10, 12, 26, 28}, {0, 30, 30, 46, 46}, {0, 10, 12, 26, 28}};
  const auto y = d.forward(random_image({1, 3, 64, 64}, 4), boxes);
  EXPECT_EQ(y.value()[0], y.value()[2]);
}

TEST(RoiDiscriminator, ScoresPermuteWithBoxes) {
  const RoiDiscriminator<float> d(desk_roi(), 1);
  std::vector<BoxSpec> boxes{{0, 2, 3, 18, 19}, {1, 30, 10, 46, 26}, {0, 40, 41, 56, 57}, {1, 0, 0, 16, 16}};
  const auto x = random_image({2, 3, 64, 64}, 5);
  const auto base = d.forward(x, boxes);
  const std::vector<int> perm{2, 0, 3, 1};
  std::vector<BoxSpec> permuted;
  for (int i : perm) permuted.push_back(boxes[i]);
  const auto y = d.forward(x, permuted);
  for (std::size_t i = 0; i < perm.size(); ++i) EXPECT_EQ(y.value()[i], base.value()[perm[i]]);
}

// Four 4x4 stride-2 pad-1 convs: feature j reads input pixels [16j - 15, 16j + 30].
std::pair<int, int> input_support(double lo, double hi) {
  const int j0 = static_cast<int>(std::floor(lo / 16 - 0.5));
  const int j1 = static_cast<int>(std::floor(hi / 16 - 0.5)) + 1;
  return {16 * j0 - 15, 16 * j1 + 30};
}

TEST(RoiDiscriminator, ScoreIgnoresPixelsOutsideReceptiveField) {
  const RoiDiscriminator<float> d(desk_roi(false), 7);
  const BoxSpec box{0, 8, 10, 24, 26};
  std::vector<BoxSpec> boxes{box};
  auto x = random_image({1, 3, 128, 128}, 6);
  const float before = d.forward(x, boxes).item();
  const auto [xlo, xhi] = input_support(box.x0, box.x1);
  const auto [ylo, yhi] = input_support(box.y0, box.y1);
  ASSERT_LT(xhi, 127);
  auto& v = x.mutable_value();
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 128; ++y)
      for (int xx = 0; xx < 128; ++xx)
        if (xx < xlo || xx > xhi || y < ylo || y > yhi) v.at(0, c, y, xx) = -v.at(0, c, y, xx);
  EXPECT_EQ(d.forward(x, boxes).item(), before);
  // A pixel inside the support does move the score.
  v.at(0, 0, 16, 16) += 0.5f;
  EXPECT_NE(d.forward(x, boxes).item(), before);
}

TEST(RoiDiscriminator, NormalizedScoresDependOnlyOnTheirOwnSample) {
  const RoiDiscriminator<float> d(desk_roi(true), 7);
  std::vector<BoxSpec> boxes{{0, 8, 10, 24, 26}};
  auto x = random_image({2, 3, 64, 64}, 8);
  const float before = d.forward(x, boxes).item();
  for (auto& v : std::span(x.mutable_value().data() + 3 * 64 * 64, 3 * 64 * 64)) v = -v;
  EXPECT_EQ(d.forward(x, boxes).item(), before);
}

TEST(RoiDiscriminator, RejectsInvalidBoxes) {
  const RoiDiscriminator<float> d(desk_roi(), 1);
  std::vector<BoxSpec> boxes{{0, 20, 20, 10, 30}};
  EXPECT_THROW(d.forward(random_image({1, 3, 64, 64}, 1), boxes), InvalidBox);
}

TEST(Checkpointing, ExportImportRestoresParameters) {
  const Generator<float> a(desk_generator(), 1);
  Generator<float> b(desk_generator(), 2);
  nn::Checkpoint ckpt;
  export_parameters(a, "g_xy.", ckpt);
  import_parameters(b, "g_xy.", ckpt);
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  EXPECT_THROW(import_parameters(b, "g_yx.", ckpt), IoError);
  GeneratorConfig wider = desk_generator();
  wider.base_channels = 32;
  Generator<float> c(wider, 1);
  EXPECT_THROW(import_parameters(c, "g_xy.", ckpt), IoError);
}

}  // namespace
}  // namespace stainforge::models
