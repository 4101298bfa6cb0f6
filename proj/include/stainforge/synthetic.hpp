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

// Two synthetic stain domains with known geometry.
//
// Domain X (H&E analog): large uniform pale purple cells and small dark blue
// dots on a faint eosin background.
// Domain Y (IHC analog): DAB-brown cells whose hematoxylin nucleus leaves a
// hole in the DAB, the same blue dots, near-white background.
// Cells are the cancer analog, dots the normal analog.

#include <cstdint>
#include <string>
#include <vector>

#include "stainforge/cell_library.hpp"
#include "stainforge/imgproc.hpp"

namespace stainforge::synthetic {

/// Concentrations of (hematoxylin, eosin, DAB) in optical-density units.
struct StainMix {
  double h = 0;
  double e = 0;
  double dab = 0;
  friend bool operator==(const StainMix&, const StainMix&) = default;
};

struct Palette {
  StainMix background;
  StainMix cell;
  StainMix nucleus;
  StainMix dot;
  friend bool operator==(const Palette&, const Palette&) = default;
};

struct SyntheticDomainSpec {
  int canvas = 64;
  double cell_radius_min = 5.0;
  double cell_radius_max = 7.0;
  /// Nucleus radius as a fraction of the cell radius.
  double nucleus_fraction = 0.4;
  double dot_radius_min = 1.5;
  double dot_radius_max = 2.2;
  int cells_min = 1;
  int cells_max = 3;
  int dots_min = 2;
  int dots_max = 5;
  /// Per-pixel Gaussian noise on each stain's optical density.
  double noise = 0.02;
  int box_size = 16;
  Palette x_palette{{0.0, 0.08, 0.0}, {0.3, 0.35, 0.0}, {0.3, 0.35, 0.0}, {0.8, 0.1, 0.0}};
  Palette y_palette{{0.03, 0.0, 0.0}, {0.05, 0.0, 0.7}, {0.55, 0.0, 0.0}, {0.8, 0.0, 0.0}};
  std::uint64_t seed = 1;

  void validate() const;
};

struct Circle {
  int cx = 0;
  int cy = 0;
  double radius = 0;
};

struct SyntheticTile {
  std::string id;
  library::Domain domain = library::Domain::kHe;
  imgproc::RgbImage image;
  /// Pixels whose centers lie inside a cell disc.
  imgproc::BinaryMask cell_mask;
  std::vector<Circle> cells;
  std::vector<Circle> dots;
};

struct SyntheticDataset {
  std::vector<SyntheticTile> x;
  std::vector<SyntheticTile> y;
  /// Exact boxes: cancer at every cell center, normal at every dot center.
  library::CellLibrary library;
};

/// Pixels whose centers satisfy (x - cx)^2 + (y - cy)^2 <= r^2.
imgproc::BinaryMask rasterize_discs(const std::vector<Circle>& circles, int height, int width);

/// n_tiles per domain, independently laid out. Ids are "<prefix>x0000" and
/// "<prefix>y0000" onward.
SyntheticDataset make_synthetic_dataset(const SyntheticDomainSpec& spec, int n_tiles,
                                        const std::string& id_prefix = "");

/// One tile with a prescribed layout.
SyntheticTile render_tile(const SyntheticDomainSpec& spec, library::Domain domain,
                          std::vector<Circle> cells, std::vector<Circle> dots,
                          std::uint64_t noise_seed, std::string id = "");

}  // namespace stainforge::synthetic
