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

#include "stainforge/cell_library.hpp"
#include "stainforge/synthetic.hpp"

namespace stainforge::synthetic {
namespace {

using library::CellLabel;
using library::Domain;

TEST(Rasterize, MatchesPixelCenterDistanceOracle) {
  const std::vector<Circle> discs{{10, 12, 3.5}, {0, 0, 2.2}, {30, 5, 1.0}};
  const auto m = rasterize_discs(discs, 32, 40);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 40; ++x) {
      bool inside = false;
      for (const auto& c : discs) inside |= std::hypot(x - c.cx, y - c.cy) <= c.radius + 1e-12;
      EXPECT_EQ(m.at(y, x), inside) << x << "," << y;
    }
}

TEST(SyntheticDataset, OneCellOneDotGivesExactLibrary) {
  SyntheticDomainSpec spec;
  spec.cells_min = spec.cells_max = 1;
  spec.dots_min = spec.dots_max = 1;
  const auto ds = make_synthetic_dataset(spec, 1);
  ASSERT_EQ(ds.x.size(), 1u);
  ASSERT_EQ(ds.y.size(), 1u);
  const auto& t = ds.x[0];
  ASSERT_EQ(t.cells.size(), 1u);
  ASSERT_EQ(t.dots.size(), 1u);
  const auto boxes = ds.library.boxes(t.id);
  ASSERT_EQ(boxes.size(), 2u);
  for (const auto& b : boxes) {
    const Circle& c = b.label == CellLabel::kCancer ? t.cells[0] : t.dots[0];
    EXPECT_EQ(b, library::make_box(c.cx, c.cy, 16, b.label, 64, 64));
  }
  EXPECT_EQ(t.cell_mask, rasterize_discs(t.cells, 64, 64));
  EXPECT_EQ(ds.library.entries.at("y0000").domain, Domain::kIhc);
  EXPECT_EQ(ds.library.meta.tile_size, 64);
}

TEST(SyntheticDataset, LayoutsKeepObjectsApartAndInside) {
  SyntheticDomainSpec spec;
  spec.seed = 5;
  const auto ds = make_synthetic_dataset(spec, 30);
  for (const auto* tiles : {&ds.x, &ds.y})
    for (const auto& t : *tiles) {
      std::vector<Circle> all = t.cells;
      all.insert(all.end(), t.dots.begin(), t.dots.end());
      EXPECT_GE(t.cells.size(), 1u);
      for (std::size_t i = 0; i < all.size(); ++i) {
        EXPECT_GE(all[i].cx - all[i].radius, 0);
        EXPECT_LE(all[i].cx + all[i].radius, 63);
        for (std::size_t j = i + 1; j < all.size(); ++j)
          EXPECT_GE(std::hypot(all[i].cx - all[j].cx, all[i].cy - all[j].cy),
                    all[i].radius + all[j].radius + 2);
      }
    }
}

TEST(SyntheticDataset, DeterministicPerSeedAndDomainsDiffer) {
  SyntheticDomainSpec spec;
  const auto a = make_synthetic_dataset(spec, 3), b = make_synthetic_dataset(spec, 3);
  EXPECT_EQ(a.library, b.library);
  EXPECT_EQ(a.x[1].image, b.x[1].image);
  spec.seed = 2;
  EXPECT_NE(make_synthetic_dataset(spec, 3).library, a.library);
  // Domain mean colors differ: X is eosin-tinted, Y near white.
  auto mean_green = [](const std::vector<SyntheticTile>& ts) {
    double s = 0;
    for (const auto& t : ts)
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) s += t.image.at(y, x, 1);
    return s / (ts.size() * 64.0 * 64.0);
  };
  EXPECT_LT(mean_green(a.x) + 10, mean_green(a.y));
}

TEST(SyntheticDataset, IhcCellsAreDabWithHematoxylinHoles) {
  SyntheticDomainSpec spec;
  spec.noise = 0;
  const auto t = render_tile(spec, Domain::kIhc, {{32, 32, 7}}, {{8, 8, 2}}, 1);
  const auto st = imgproc::deconvolve_hed(imgproc::rgb_to_optical_density(t.image));
  EXPECT_NEAR(st.concentrations.at(32, 32, 2), 0.0, 0.03);
  EXPECT_NEAR(st.concentrations.at(32, 32, 0), 0.55, 0.03);
  EXPECT_NEAR(st.concentrations.at(32, 38, 2), 0.7, 0.03);
  EXPECT_NEAR(st.concentrations.at(8, 8, 0), 0.8, 0.03);
}

TEST(SyntheticDomainSpec, RejectsInconsistentSpecs) {
  SyntheticDomainSpec s;
  s.cell_radius_max = 2;
  EXPECT_THROW(s.validate(), InvalidArgument);
  s = {};
  s.y_palette = s.x_palette;
  EXPECT_THROW(s.validate(), InvalidArgument);
  s = {};
  s.box_size = 100;
  EXPECT_THROW(s.validate(), InvalidArgument);
  EXPECT_THROW(make_synthetic_dataset(SyntheticDomainSpec{}, 0), InvalidArgument);
}

}  // namespace
}  // namespace stainforge::synthetic
