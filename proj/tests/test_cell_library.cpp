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
#include <functional>
#include <random>
#include <sstream>

#include "stainforge/cell_library.hpp"
#include "stainforge/synthetic.hpp"

namespace stainforge::library {
namespace {

using imgproc::BinaryMask;
using imgproc::RgbImage;
using synthetic::Circle;

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("sf_lib_" + name);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Paints stain concentrations (h, e, dab) per pixel and converts to RGB.
RgbImage paint(int n, const std::function<std::array<double, 3>(int, int)>& f) {
  imgproc::StainImage st{imgproc::RealImage(n, n, 3), imgproc::StainBasis::hed()};
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const auto c = f(x, y);
      for (int k = 0; k < 3; ++k) st.concentrations.at(y, x, k) = c[k];
    }
  return imgproc::optical_density_to_rgb(imgproc::compose_hed(st));
}

bool near_box(const CellBox& b, double x, double y, double tol) {
  return std::hypot(b.cx - x, b.cy - y) <= tol;
}

std::size_t count_label(const std::vector<CellBox>& boxes, CellLabel l) {
  return std::count_if(boxes.begin(), boxes.end(), [&](const CellBox& b) { return b.label == l; });
}

TEST(CellBox, MakeBoxShiftsInwardKeepingSize) {
  const auto b = make_box(3.2, 60.7, 16, CellLabel::kCancer, 64, 64);
  EXPECT_EQ(b.size, 16);
  EXPECT_EQ(b.x0(), 0);
  EXPECT_EQ(b.y0(), 48);
  const auto c = make_box(30.4, 31.6, 16, CellLabel::kNormal, 64, 64);
  EXPECT_EQ(c.cx, 30);
  EXPECT_EQ(c.cy, 32);
  EXPECT_THROW(make_box(5, 5, 80, CellLabel::kNormal, 64, 64), InvalidArgument);
  const auto spec = to_box_spec(c, 3);
  EXPECT_EQ(spec, (nn::BoxSpec{3, 22, 24, 38, 40}));
}

TEST(HeLibrary, BlankTileYieldsNothing) {
  RgbImage white(128, 128, 3, 255);
  EXPECT_TRUE(build_he_library(white, BinaryMask(128, 128, true), PipelineConfig{}).empty());
}

TEST(HeLibrary, RejectsMismatchedAnnotation) {
  RgbImage white(64, 64, 3, 255);
  EXPECT_THROW(build_he_library(white, BinaryMask(64, 32), PipelineConfig{}), ShapeMismatch);
}

synthetic::SyntheticDomainSpec full_scale_spec() {
  synthetic::SyntheticDomainSpec s;
  s.canvas = 256;
  s.box_size = 48;
  // Noise-free: full-scale thresholds leave little margin over disc rims.
  s.noise = 0;
  return s;
}

TEST(HeLibrary, LabelsClusteredSmallNucleiNormalAndLargeOnesCancer) {
  const std::vector<Circle> large{{60, 70, 15}, {180, 60, 14}, {120, 180, 15}};
  const std::vector<Circle> small{{200, 170, 2.5}, {212, 176, 2.5}, {222, 186, 2.5},
                                  {208, 192, 2.5}, {196, 200, 2.5}, {218, 204, 2.5}};
  const auto tile = synthetic::render_tile(full_scale_spec(), Domain::kHe, large, small, 7);
  // Annotation: the large nuclei plus a margin.
  std::vector<Circle> grown;
  for (auto c : large) grown.push_back({c.cx, c.cy, c.radius + 6});
  const auto annotation = synthetic::rasterize_discs(grown, 256, 256);
  const auto boxes = build_he_library(tile.image, annotation, PipelineConfig{});
  ASSERT_EQ(count_label(boxes, CellLabel::kCancer), 3u);
  ASSERT_EQ(count_label(boxes, CellLabel::kNormal), 6u);
  for (const auto& c : large) {
    const auto want = make_box(c.cx, c.cy, 48, CellLabel::kCancer, 256, 256);
    EXPECT_TRUE(std::any_of(boxes.begin(), boxes.end(), [&](const CellBox& b) {
      return b.label == CellLabel::kCancer && near_box(b, want.cx, want.cy, 3);
    })) << c.cx << "," << c.cy;
  }
  for (const auto& c : small) {
    const auto want = make_box(c.cx, c.cy, 48, CellLabel::kNormal, 256, 256);
    EXPECT_TRUE(std::any_of(boxes.begin(), boxes.end(), [&](const CellBox& b) {
      return b.label == CellLabel::kNormal && near_box(b, want.cx, want.cy, 3);
    })) << c.cx << "," << c.cy;
  }
}

TEST(HeLibrary, CliqueInsideAnnotationIsCutFromRefinedMask) {
  // A tight clique of small dark nuclei looks like one large blob at the
  // cancer scales; its hull must be removed before that pass runs.
  const std::vector<Circle> clique{{120, 120, 2.5}, {128, 116, 2.5}, {134, 124, 2.5},
                                   {126, 130, 2.5}, {116, 128, 2.5}, {124, 123, 2.5}};
  const std::vector<Circle> large{{60, 60, 15}};
  const auto tile = synthetic::render_tile(full_scale_spec(), Domain::kHe, large, clique, 9);
  const BinaryMask annotation(256, 256, true);
  HeTrace trace;
  const auto boxes = build_he_library(tile.image, annotation, PipelineConfig{}, &trace);
  EXPECT_FALSE(trace.refined.at(123, 125));
  EXPECT_TRUE(trace.refined.at(60, 60));
  for (const auto& b : boxes) {
    if (b.label == CellLabel::kCancer) {
      EXPECT_GT(std::hypot(b.cx - 125, b.cy - 123), 20) << b.cx;
    }
  }
  EXPECT_EQ(count_label(boxes, CellLabel::kCancer), 1u);
  // Without refinement the clique would have been called cancer.
  const auto hema = imgproc::deconvolve_hed(imgproc::rgb_to_optical_density(tile.image))
                        .channel(imgproc::Stain::kHematoxylin, true);
  const auto unrefined = imgproc::detect_blobs(hema, PipelineConfig{}.cancer, &annotation);
  EXPECT_TRUE(std::any_of(unrefined.begin(), unrefined.end(), [](const imgproc::Blob& b) {
    return std::hypot(b.cx - 125, b.cy - 123) < 8;
  }));
}

TEST(IhcLibrary, DabFreeTileHasNoCancer) {
  const auto tile = synthetic::render_tile(full_scale_spec(), Domain::kIhc, {},
                                           {{40, 40, 3}, {200, 90, 3}}, 3);
  const auto boxes = build_ihc_library(tile.image, PipelineConfig{});
  EXPECT_EQ(count_label(boxes, CellLabel::kCancer), 0u);
  EXPECT_EQ(count_label(boxes, CellLabel::kNormal), 2u);
}

TEST(IhcLibrary, HolesInDabPatchAreCancerAndOutsideDotsNormal) {
  const std::vector<Circle> holes{{70, 70, 12}, {130, 75, 12}, {75, 135, 12}, {135, 140, 12}};
  const std::vector<Circle> dots{{215, 30, 3}, {230, 120, 3}, {30, 225, 3}, {120, 230, 3}, {225, 225, 3}};
  const auto hole_mask = synthetic::rasterize_discs(holes, 256, 256);
  const auto dot_mask = synthetic::rasterize_discs(dots, 256, 256);
  const auto tile = paint(256, [&](int x, int y) -> std::array<double, 3> {
    const bool patch = x >= 40 && x < 170 && y >= 40 && y < 170;
    if (patch && hole_mask.at(y, x)) return {0.55, 0, 0};
    if (patch) return {0.05, 0, 0.7};
    if (dot_mask.at(y, x)) return {0.8, 0, 0};
    return {0.03, 0, 0};
  });
  IhcTrace trace;
  const auto boxes = build_ihc_library(tile, PipelineConfig{}, &trace);
  EXPECT_EQ(count_label(boxes, CellLabel::kCancer), 4u);
  EXPECT_EQ(count_label(boxes, CellLabel::kNormal), 5u);
  for (const auto& h : holes)
    EXPECT_TRUE(std::any_of(trace.cancer.begin(), trace.cancer.end(), [&](const imgproc::Blob& b) {
      return std::hypot(b.cx - h.cx, b.cy - h.cy) <= 3;
    }));
  // Normal detections never sit inside the DAB region.
  for (const auto& b : trace.normal) EXPECT_FALSE(trace.region.contains(b.cx, b.cy));
}

TEST(IhcLibrary, SaturatedDabTileHasNoBoxes) {
  const auto tile = paint(128, [](int, int) -> std::array<double, 3> { return {0, 0, 1.2}; });
  EXPECT_TRUE(build_ihc_library(tile, PipelineConfig{}).empty());
}

TEST(DeskPipeline, RecoversSyntheticGroundTruth) {
  synthetic::SyntheticDomainSpec spec;
  spec.seed = 11;
  const auto ds = synthetic::make_synthetic_dataset(spec, 40);
  const auto cfg = PipelineConfig::desk_scale();
  std::size_t planted = 0, found = 0;
  for (const auto& t : ds.y) {
    const auto boxes = build_ihc_library(t.image, cfg);
    for (const auto& truth : ds.library.boxes(t.id)) {
      ++planted;
      found += std::any_of(boxes.begin(), boxes.end(), [&](const CellBox& b) {
        return b.label == truth.label && near_box(b, truth.cx, truth.cy, 3);
      });
    }
  }
  for (const auto& t : ds.x) {
    HeTrace trace;
    const auto boxes = build_he_library(t.image, t.cell_mask, cfg, &trace);
    for (const auto& b : trace.cancer) EXPECT_TRUE(trace.refined.contains(b.cx, b.cy));
    for (const auto& truth : ds.library.boxes(t.id)) {
      ++planted;
      found += std::any_of(boxes.begin(), boxes.end(), [&](const CellBox& b) {
        return b.label == truth.label && near_box(b, truth.cx, truth.cy, 3);
      });
    }
  }
  EXPECT_GE(double(found) / planted, 0.9) << found << "/" << planted;
}

CellLibrary sample_library() {
  CellLibrary lib;
  lib.meta = {64, "ihc", "00ff"};
  std::mt19937_64 rng(2);
  const char* ids[] = {"tile_b", "tile_a", "tile_c"};
  const int counts[] = {5, 7, 5};
  for (int t = 0; t < 3; ++t) {
    TileEntry e{t == 1 ? Domain::kHe : Domain::kIhc, {}};
    for (int i = 0; i < counts[t]; ++i)
      e.boxes.push_back(make_box(double(rng() % 64), double(rng() % 64), 16,
                                 i % 3 ? CellLabel::kNormal : CellLabel::kCancer, 64, 64));
    lib.entries[ids[t]] = e;
  }
  return lib;
}

TEST(LibraryFile, EmptyLibraryIsHeaderOnly) {
  const auto p = temp_file("empty.csv");
  write_library(p, CellLibrary{});
  EXPECT_EQ(slurp(p), "tile_id,domain,cx,cy,size,label\n");
  EXPECT_EQ(read_library(p), CellLibrary{});
  std::filesystem::remove(p);
}

TEST(LibraryFile, RoundTripIsIdentityAndRewriteIsByteIdentical) {
  const auto p = temp_file("rt.csv"), q = temp_file("rt2.csv");
  auto lib = sample_library();
  ASSERT_EQ(lib.box_count(), 17u);
  write_library(p, lib);
  const auto back = read_library(p);
  lib.canonicalize();
  EXPECT_EQ(back, lib);
  write_library(q, back);
  EXPECT_EQ(slurp(p), slurp(q));
  std::filesystem::remove(p);
  std::filesystem::remove(q);
}

TEST(LibraryFile, RecordsAreCanonicallyOrdered) {
  const auto p = temp_file("order.csv");
  write_library(p, sample_library());
  std::ifstream is(p);
  std::string line;
  std::getline(is, line);
  std::getline(is, line);
  std::vector<std::tuple<std::string, int, int>> keys;
  while (std::getline(is, line)) {
    std::stringstream ss(line);
    std::string id, dom, cx, cy;
    std::getline(ss, id, ',');
    std::getline(ss, dom, ',');
    std::getline(ss, cx, ',');
    std::getline(ss, cy, ',');
    keys.emplace_back(id, std::stoi(cy), std::stoi(cx));
  }
  EXPECT_TRUE(std::is_sorted(keys.begin(), keys.end()));
  std::filesystem::remove(p);
}

void expect_format_error_at(const std::string& text, std::size_t line) {
  const auto p = temp_file("bad.csv");
  {
    std::ofstream os(p, std::ios::binary);
    os << text;
  }
  try {
    read_library(p);
    ADD_FAILURE() << "no error for:\n" << text;
  } catch (const FormatError& e) {
    EXPECT_EQ(e.line(), line) << e.what();
  }
  std::filesystem::remove(p);
}

TEST(LibraryFile, MalformedRecordsNameTheirLine) {
  const std::string h = "tile_id,domain,cx,cy,size,label\n";
  expect_format_error_at(h + "t,ihc,10,10,16,cancer\nt,ihc,12\n", 3);
  expect_format_error_at(h + "t,ihc,10,10,16,cancer\nt,ihc,12,14,16,norm", 3);
  expect_format_error_at(h + "t,ihc,10,10,16,cancer\nt,ihc,12,14,16,normal", 3);
  expect_format_error_at(h + "t,ihc,1x,10,16,cancer\n", 2);
  expect_format_error_at(h + "t,ihc,10,10,16,cancer\nt,he,10,10,16,cancer\n", 3);
  expect_format_error_at(h + "t,ihc,2,10,16,cancer\n", 2);
  expect_format_error_at("tile,domain\n", 1);
  EXPECT_THROW(read_library(temp_file("missing.csv")), IoError);
}

TEST(SampleBoxes, EmptyEntryIsSkipped) {
  EXPECT_FALSE(sample_boxes({}, 8, 1).has_value());
}

TEST(SampleBoxes, BalancedWhenBothLabelsPresent) {
  const std::vector<CellBox> entry{{10, 10, 16, CellLabel::kCancer}, {40, 40, 16, CellLabel::kNormal}};
  const auto b = sample_boxes(entry, 8, 3);
  ASSERT_TRUE(b);
  ASSERT_EQ(b->boxes.size(), 8u);
  EXPECT_EQ(count_label(b->boxes, CellLabel::kCancer), 4u);
  EXPECT_EQ(std::count(b->boxes.begin(), b->boxes.end(), entry[0]), 4);
  EXPECT_EQ(std::count(b->boxes.begin(), b->boxes.end(), entry[1]), 4);
  const auto odd = sample_boxes(entry, 7, 3);
  EXPECT_EQ(count_label(odd->boxes, CellLabel::kCancer), 4u);
  EXPECT_EQ(count_label(odd->boxes, CellLabel::kNormal), 3u);
}

TEST(SampleBoxes, DeterministicGivenSeed) {
  std::vector<CellBox> entry;
  for (int i = 0; i < 6; ++i) entry.push_back({10 + i, 20, 16, i % 2 ? CellLabel::kCancer : CellLabel::kNormal});
  EXPECT_EQ(sample_boxes(entry, 8, 77)->boxes, sample_boxes(entry, 8, 77)->boxes);
}

TEST(SampleBoxes, SingleLabelDrawsUniformlyWithReplacement) {
  std::vector<CellBox> entry;
  for (int i = 0; i < 10; ++i) entry.push_back({10 + 3 * i, 30, 16, CellLabel::kCancer});
  std::vector<double> counts(10, 0);
  const int seeds = 10000, k = 8;
  for (int s = 0; s < seeds; ++s) {
    const auto b = sample_boxes(entry, k, s);
    ASSERT_EQ(b->boxes.size(), std::size_t(k));
    for (const auto& box : b->boxes) counts[(box.cx - 10) / 3] += 1;
  }
  const double expected = double(seeds) * k / 10;
  double chi2 = 0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  // 9 degrees of freedom, p = 0.001.
  EXPECT_LT(chi2, 27.88);
}

TEST(PipelineConfigFile, RoundTripsAndHashTracksContent) {
  const auto p = temp_file("pipeline.ini");
  const auto desk = PipelineConfig::desk_scale();
  save_pipeline_config(p, desk);
  const auto back = load_pipeline_config(p);
  EXPECT_EQ(back.hash(), desk.hash());
  EXPECT_EQ(back.cancer.sigmas, desk.cancer.sigmas);
  EXPECT_EQ(back.box_size, 16);
  EXPECT_NE(desk.hash(), PipelineConfig{}.hash());
  {
    std::ofstream os(p);
    os << "[boxes]\nsize = 32\n[he_cancer]\nsigmas = 6, 7\n";
  }
  const auto partial = load_pipeline_config(p);
  EXPECT_EQ(partial.box_size, 32);
  EXPECT_EQ(partial.cancer.sigmas, (std::vector<double>{6, 7}));
  EXPECT_EQ(partial.healthy.sigmas, PipelineConfig{}.healthy.sigmas);
  {
    std::ofstream os(p);
    os << "[he_cancer]\nsigmas = 6, x\n";
  }
  EXPECT_THROW(load_pipeline_config(p), ConfigError);
  {
    std::ofstream os(p);
    os << "[boxes]\nsize = 0\n";
  }
  EXPECT_THROW(load_pipeline_config(p), ConfigError);
  std::filesystem::remove(p);
}

}  // namespace
}  // namespace stainforge::library
