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

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

#include "stainforge/evaldata.hpp"
#include "stainforge/synthetic.hpp"

namespace stainforge::evaldata {
namespace {

using imgproc::BinaryMask;
using imgproc::RgbImage;
using synthetic::Circle;

std::filesystem::path fresh_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("sf_eval_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

BinaryMask random_mask(int h, int w, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution b(p);
  BinaryMask m(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.set(y, x, b(rng));
  return m;
}

RgbImage paint(int n, const std::function<std::array<double, 3>(int, int)>& f) {
  imgproc::StainImage st{imgproc::RealImage(n, n, 3), imgproc::StainBasis::hed()};
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const auto c = f(x, y);
      for (int k = 0; k < 3; ++k) st.concentrations.at(y, x, k) = c[k];
    }
  return imgproc::optical_density_to_rgb(imgproc::compose_hed(st));
}

const TileTranslator kIdentity = [](const RgbImage& img) { return img; };

TEST(Png, RoundTripsImagesAndMasks) {
  const auto dir = fresh_dir("png");
  std::mt19937_64 rng(1);
  RgbImage img(7, 5, 3);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(rng());
  write_png(dir / "a.png", img);
  EXPECT_EQ(read_png(dir / "a.png"), img);
  const auto m = random_mask(6, 9, 0.4, rng);
  write_mask_png(dir / "m.png", m);
  EXPECT_EQ(read_mask_png(dir / "m.png"), m);
  EXPECT_THROW(read_png(dir / "missing.png"), IoError);
  std::ofstream(dir / "junk.png") << "not a png";
  EXPECT_THROW(read_png(dir / "junk.png"), IoError);
  std::filesystem::remove_all(dir);
}

TEST(Dataset, LoadsManifestInOrder) {
  const auto dir = fresh_dir("manifest");
  synthetic::SyntheticDomainSpec spec;
  const auto ds = synthetic::make_synthetic_dataset(spec, 3);
  for (int i = 0; i < 3; ++i) write_png(dir / ("t" + std::to_string(i) + ".png"), ds.x[i].image);
  write_mask_png(dir / "m1.png", ds.x[1].cell_mask);
  {
    std::ofstream os(dir / "manifest.csv");
    os << "tile_id,domain,image_path,mask_path,row,col\n"
       << "c,he,t2.png,,,\n"
       << "a,he,t0.png,,0,1\n"
       << "b,ihc," << (dir / "t1.png").string() << ",m1.png,2,0\n";
  }
  const auto tiles = load_tile_dataset(dir, dir / "manifest.csv", 64);
  ASSERT_EQ(tiles.size(), 3u);
  EXPECT_EQ(tiles[0].tile_id, "c");
  EXPECT_EQ(tiles[1].tile_id, "a");
  EXPECT_EQ(tiles[2].tile_id, "b");
  EXPECT_EQ(tiles[2].domain, library::Domain::kIhc);
  EXPECT_EQ(tiles[0].image, ds.x[2].image);
  EXPECT_FALSE(tiles[0].annotation);
  EXPECT_FALSE(tiles[0].grid_pos);
  EXPECT_EQ(tiles[1].grid_pos, (GridPos{0, 1}));
  EXPECT_EQ(*tiles[2].annotation, ds.x[1].cell_mask);
  EXPECT_THROW(load_tile_dataset(dir, dir / "manifest.csv", 32), SizeMismatch);
  std::filesystem::remove_all(dir);
}

void expect_manifest_error(const std::filesystem::path& dir, const std::string& body, const std::string& needle) {
  {
    std::ofstream os(dir / "bad.csv");
    os << "tile_id,domain,image_path,mask_path,row,col\n" << body;
  }
  try {
    load_tile_dataset(dir, dir / "bad.csv");
    ADD_FAILURE() << "accepted: " << body;
  } catch (const ManifestError& e) {
    EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
  }
}

TEST(Dataset, ReportsOffendingEntries) {
  const auto dir = fresh_dir("bad_manifest");
  write_png(dir / "t.png", RgbImage(8, 8, 3, 200));
  write_mask_png(dir / "m.png", BinaryMask(8, 6));
  expect_manifest_error(dir, "a,he,t.png,,,\nb,he,t.png\n", "line 3");
  expect_manifest_error(dir, "a,skin,t.png,,,\n", "bad domain");
  expect_manifest_error(dir, "a,he,t.png,,1,\n", "line 2");
  expect_manifest_error(dir, "a,he,t.png,,x,1\n", "bad row");
  expect_manifest_error(dir, "a,he,t.png,,,\na,he,t.png,,,\n", "duplicate");
  {
    std::ofstream os(dir / "m.csv");
    os << "tile_id,domain,image_path,mask_path,row,col\nodd,he,t.png,m.png,,\n";
  }
  try {
    load_tile_dataset(dir, dir / "m.csv");
    ADD_FAILURE();
  } catch (const SizeMismatch& e) {
    EXPECT_NE(std::string(e.what()).find("odd"), std::string::npos);
  }
  {
    std::ofstream os(dir / "h.csv");
    os << "id,domain\n";
  }
  EXPECT_THROW(load_tile_dataset(dir, dir / "h.csv"), ManifestError);
  EXPECT_THROW(load_tile_dataset(dir, dir / "none.csv"), IoError);
  std::filesystem::remove_all(dir);
}

TEST(Dataset, LargeSyntheticManifestRoundTrips) {
  const auto dir = fresh_dir("round_trip");
  synthetic::SyntheticDomainSpec spec;
  spec.canvas = 16;
  spec.cell_radius_min = 2;
  spec.cell_radius_max = 3;
  spec.dot_radius_min = 1;
  spec.dot_radius_max = 1.2;
  spec.box_size = 8;
  const auto ds = synthetic::make_synthetic_dataset(spec, 250);
  std::vector<TileRecord> tiles;
  for (const auto* domain : {&ds.x, &ds.y})
    for (const auto& t : *domain) {
      TileRecord r{t.id, t.domain, t.image, std::nullopt, std::nullopt};
      if (tiles.size() % 3 == 0) r.annotation = t.cell_mask;
      if (tiles.size() % 2 == 0) r.grid_pos = GridPos{static_cast<int>(tiles.size()) / 20, static_cast<int>(tiles.size()) % 20};
      tiles.push_back(std::move(r));
    }
  ASSERT_EQ(tiles.size(), 500u);
  write_tile_dataset(dir, dir / "manifest.csv", tiles);
  EXPECT_EQ(load_tile_dataset(dir, dir / "manifest.csv", 16), tiles);
  std::filesystem::remove_all(dir);
}

TEST(DabMask, DabFreeTileIsEmpty) {
  synthetic::SyntheticDomainSpec spec;
  const auto t = synthetic::render_tile(spec, library::Domain::kIhc, {}, {{20, 20, 2}, {40, 44, 2}}, 3);
  EXPECT_TRUE(extract_dab_mask(t.image).empty());
  EXPECT_TRUE(extract_dab_mask(RgbImage(32, 32, 3, 255)).empty());
}

TEST(DabMask, PureDabDiscMatchesRasterizedDisc) {
  const Circle disc{30, 34, 12};
  const auto want = synthetic::rasterize_discs({disc}, 64, 64);
  const auto img = paint(64, [&](int x, int y) -> std::array<double, 3> {
    return {0, 0, want.at(y, x) ? 0.8 : 0.0};
  });
  const auto got = extract_dab_mask(img);
  // Pixels may differ only within 2 px of the disc boundary.
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      if (got.at(y, x) != want.at(y, x)) {
        EXPECT_LE(std::abs(std::hypot(x - disc.cx, y - disc.cy) - disc.radius), 2.0) << x << "," << y;
      }
}

TEST(DabMask, IgnoresHematoxylinOutsideTheDisc) {
  const auto disc = synthetic::rasterize_discs({{30, 34, 12}}, 64, 64);
  const auto dots = synthetic::rasterize_discs({{5, 5, 3}, {58, 10, 4}, {55, 55, 5}}, 64, 64);
  auto render = [&](bool with_dots) {
    return paint(64, [&](int x, int y) -> std::array<double, 3> {
      const double h = with_dots && dots.at(y, x) ? 0.9 : 0.02;
      return {h, 0, disc.at(y, x) ? 0.8 : 0.0};
    });
  };
  EXPECT_EQ(extract_dab_mask(render(true)), extract_dab_mask(render(false)));
}

TEST(DabMask, HematoxylinHolesAreFilled) {
  synthetic::SyntheticDomainSpec spec;
  spec.noise = 0;
  const std::vector<Circle> cells{{30, 30, 7}};
  const auto t = synthetic::render_tile(spec, library::Domain::kIhc, cells, {}, 1);
  const auto m = extract_dab_mask(t.image);
  EXPECT_TRUE(m.at(30, 30));
  EXPECT_GT(dice(m, t.cell_mask), 0.9);
}

TEST(Dice, Examples) {
  BinaryMask a(4, 4), b(4, 4);
  EXPECT_EQ(dice(a, b), 1.0);
  for (int x = 0; x < 4; ++x) a.set(0, x);
  EXPECT_EQ(dice(a, a), 1.0);
  EXPECT_EQ(dice(a, b), 0.0);
  for (int x = 0; x < 4; ++x) b.set(1, x);
  EXPECT_EQ(dice(a, b), 0.0);
  BinaryMask c(4, 4);
  c.set(0, 0);
  c.set(0, 1);
  c.set(1, 0);
  c.set(1, 1);
  EXPECT_EQ(dice(a, c), 0.5);
  EXPECT_THROW(dice(a, BinaryMask(4, 5)), ShapeMismatch);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    const auto p = random_mask(9, 7, 0.3, rng), g = random_mask(9, 7, 0.5, rng);
    const double d = dice(p, g);
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 1.0);
    EXPECT_EQ(d, dice(g, p));
  }
}

TEST(BalancedAccuracy, Examples) {
  BinaryMask gt(2, 4);
  for (int x = 0; x < 4; ++x) gt.set(0, x);
  EXPECT_EQ(balanced_accuracy(gt, gt), 1.0);
  EXPECT_EQ(balanced_accuracy(BinaryMask(2, 4, true), gt), 0.5);
  // One class absent: recall of the present class.
  BinaryMask pred(2, 4);
  pred.set(0, 0);
  EXPECT_EQ(balanced_accuracy(pred, BinaryMask(2, 4)), 7.0 / 8.0);
  EXPECT_EQ(balanced_accuracy(pred, BinaryMask(2, 4, true)), 1.0 / 8.0);
  EXPECT_THROW(balanced_accuracy(pred, BinaryMask(3, 4)), ShapeMismatch);
}

TEST(BalancedAccuracy, MatchesConfusionCountsAndComplementSymmetry) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 100; ++i) {
    const auto p = random_mask(11, 13, 0.4, rng), g = random_mask(11, 13, 0.3, rng);
    double tp = 0, fp = 0, tn = 0, fn = 0;
    for (int y = 0; y < 11; ++y)
      for (int x = 0; x < 13; ++x) {
        if (g.at(y, x)) (p.at(y, x) ? tp : fn) += 1;
        else (p.at(y, x) ? fp : tn) += 1;
      }
    const double want = (tp + fn == 0 || tn + fp == 0) ? -1 : 0.5 * (tp / (tp + fn) + tn / (tn + fp));
    if (want >= 0) {
      EXPECT_NEAR(balanced_accuracy(p, g), want, 1e-12);
    }
    EXPECT_NEAR(balanced_accuracy(p, g), balanced_accuracy(p.complement(), g.complement()), 1e-12);
  }
}

TEST(MeanStd, UsesPopulationStd) {
  const auto s = mean_std({1.0, 0.0});
  EXPECT_EQ(s.mean, 0.5);
  EXPECT_EQ(s.std, 0.5);
  EXPECT_THROW(mean_std({}), InvalidArgument);
}

std::vector<TileRecord> ihc_tiles_with_own_masks(int n) {
  synthetic::SyntheticDomainSpec spec;
  spec.seed = 4;
  const auto ds = synthetic::make_synthetic_dataset(spec, n);
  std::vector<TileRecord> tiles;
  for (const auto& t : ds.y) tiles.push_back({t.id, t.domain, t.image, extract_dab_mask(t.image), std::nullopt});
  return tiles;
}

TEST(Evaluate, IdentityOnSelfAnnotatedTilesScoresOne) {
  const auto tiles = ihc_tiles_with_own_masks(6);
  const auto m = evaluate(kIdentity, tiles);
  EXPECT_EQ(m.dice_stats.mean, 1.0);
  EXPECT_EQ(m.bac_stats.mean, 1.0);
  EXPECT_EQ(m.dice_stats.std, 0.0);
  EXPECT_EQ(m.tile_ids.size(), 6u);
}

TEST(Evaluate, TwoTilesScoringOneAndZero) {
  auto tiles = ihc_tiles_with_own_masks(2);
  ASSERT_FALSE(tiles[1].annotation->empty());
  tiles[1].annotation = tiles[1].annotation->complement();
  const auto m = evaluate(kIdentity, tiles);
  EXPECT_EQ(m.dice[0], 1.0);
  EXPECT_EQ(m.dice[1], 0.0);
  EXPECT_EQ(m.dice_stats.mean, 0.5);
  EXPECT_EQ(m.dice_stats.std, 0.5);
}

TEST(Evaluate, OrderInvariantAndRequiresAnnotations) {
  auto tiles = ihc_tiles_with_own_masks(5);
  const TileTranslator darken = [](const RgbImage& img) {
    RgbImage out = img;
    for (auto& v : out.data) v = static_cast<std::uint8_t>(v * 0.9);
    return out;
  };
  const auto a = evaluate(darken, tiles);
  std::reverse(tiles.begin(), tiles.end());
  const auto b = evaluate(darken, tiles);
  EXPECT_NEAR(a.dice_stats.mean, b.dice_stats.mean, 1e-12);
  EXPECT_NEAR(a.dice_stats.std, b.dice_stats.std, 1e-12);
  EXPECT_NEAR(a.bac_stats.mean, b.bac_stats.mean, 1e-12);
  tiles[2].annotation.reset();
  EXPECT_THROW(evaluate(kIdentity, tiles), MissingAnnotation);
}

TEST(Evaluate, WritesMetricsAndSummaryRow) {
  const auto dir = fresh_dir("metrics");
  const auto m = evaluate(kIdentity, ihc_tiles_with_own_masks(2));
  write_metrics_csv(dir / "metrics.csv", m);
  std::ifstream is(dir / "metrics.csv");
  std::string header, row;
  std::getline(is, header);
  std::getline(is, row);
  EXPECT_EQ(header, "tile_id,dice,bac");
  EXPECT_EQ(row, m.tile_ids[0] + ",1.000000,1.000000");
  EXPECT_EQ(summary_row("identity", m), "identity  DICE 1.000±0.000  BAC 1.000±0.000");
  std::filesystem::remove_all(dir);
}

std::vector<TileRecord> grid_tiles(int rows, int cols, std::uint64_t seed) {
  synthetic::SyntheticDomainSpec spec;
  spec.seed = seed;
  const auto ds = synthetic::make_synthetic_dataset(spec, rows * cols);
  std::vector<TileRecord> tiles;
  for (int i = 0; i < rows * cols; ++i)
    tiles.push_back({ds.y[i].id, ds.y[i].domain, ds.y[i].image, std::nullopt, GridPos{i / cols, i % cols}});
  return tiles;
}

TEST(Stitch, SingleTileIsItsTranslation) {
  const auto tiles = grid_tiles(1, 1, 2);
  const TileTranslator invert = [](const RgbImage& img) {
    RgbImage out = img;
    for (auto& v : out.data) v = static_cast<std::uint8_t>(255 - v);
    return out;
  };
  EXPECT_EQ(stitch_slide(tiles, invert), invert(tiles[0].image));
}

TEST(Stitch, IdentityGivesPixelExactMosaic) {
  auto tiles = grid_tiles(2, 3, 3);
  std::shuffle(tiles.begin(), tiles.end(), std::mt19937_64(1));
  const auto out = stitch_slide(tiles, kIdentity);
  ASSERT_EQ(out.height, 128);
  ASSERT_EQ(out.width, 192);
  for (const auto& t : tiles)
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x)
        for (int c = 0; c < 3; ++c)
          ASSERT_EQ(out.at(t.grid_pos->row * 64 + y, t.grid_pos->col * 64 + x, c), t.image.at(y, x, c));
}

TEST(Stitch, DabMaskOfMosaicIsUnionOfTileMasks) {
  auto tiles = grid_tiles(4, 4, 5);
  const auto out = stitch_slide(tiles, kIdentity);
  const auto whole = extract_dab_mask(out);
  BinaryMask placed(256, 256);
  for (const auto& t : tiles) {
    const auto m = extract_dab_mask(t.image);
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x)
        if (m.at(y, x)) placed.set(t.grid_pos->row * 64 + y, t.grid_pos->col * 64 + x);
  }
  EXPECT_GT(dice(whole, placed), 0.97);
}

TEST(Stitch, ReportsGapsAndBadGrids) {
  auto tiles = grid_tiles(2, 2, 6);
  tiles.erase(tiles.begin() + 1);
  try {
    stitch_slide(tiles, kIdentity);
    FAIL();
  } catch (const GridGap& e) {
    EXPECT_NE(std::string(e.what()).find("row 0, col 1"), std::string::npos) << e.what();
  }
  tiles = grid_tiles(1, 2, 7);
  tiles[1].grid_pos = tiles[0].grid_pos;
  EXPECT_THROW(stitch_slide(tiles, kIdentity), InvalidArgument);
  tiles = grid_tiles(1, 2, 7);
  tiles[1].image = RgbImage(32, 32, 3);
  EXPECT_THROW(stitch_slide(tiles, kIdentity), SizeMismatch);
}

}  // namespace
}  // namespace stainforge::evaldata
