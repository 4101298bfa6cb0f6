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

#include "stainforge/synthetic.hpp"

#include <cmath>
#include <random>

#include "stainforge/errors.hpp"

namespace stainforge::synthetic {

using library::CellLabel;
using library::Domain;

void SyntheticDomainSpec::validate() const {
  if (canvas < 8) throw InvalidArgument("canvas must be >= 8");
  if (!(cell_radius_min > 0) || cell_radius_max < cell_radius_min)
    throw InvalidArgument("cell radius range must be positive and ordered");
  if (!(dot_radius_min > 0) || dot_radius_max < dot_radius_min)
    throw InvalidArgument("dot radius range must be positive and ordered");
  if (!(nucleus_fraction > 0 && nucleus_fraction < 1))
    throw InvalidArgument("nucleus_fraction must be in (0, 1)");
  if (cells_min < 0 || cells_max < cells_min || dots_min < 0 || dots_max < dots_min)
    throw InvalidArgument("object count ranges must be non-negative and ordered");
  if (noise < 0) throw InvalidArgument("noise must be >= 0");
  if (box_size < 1 || box_size > canvas) throw InvalidArgument("box_size must fit the canvas");
  if (x_palette == y_palette) throw InvalidArgument("domain palettes must differ");
  if (2 * cell_radius_max + 2 > canvas) throw InvalidArgument("cells do not fit the canvas");
}

imgproc::BinaryMask rasterize_discs(const std::vector<Circle>& circles, int height, int width) {
  imgproc::BinaryMask m(height, width);
  for (const auto& c : circles) {
    const int r = static_cast<int>(std::ceil(c.radius));
    for (int y = std::max(0, c.cy - r); y <= std::min(height - 1, c.cy + r); ++y)
      for (int x = std::max(0, c.cx - r); x <= std::min(width - 1, c.cx + r); ++x) {
        const double dx = x - c.cx, dy = y - c.cy;
        if (dx * dx + dy * dy <= c.radius * c.radius) m.set(y, x);
      }
  }
  return m;
}

SyntheticTile render_tile(const SyntheticDomainSpec& spec, Domain domain, std::vector<Circle> cells,
                          std::vector<Circle> dots, std::uint64_t noise_seed, std::string id) {
  const int n = spec.canvas;
  const Palette& pal = domain == Domain::kHe ? spec.x_palette : spec.y_palette;
  std::vector<Circle> nuclei;
  for (const auto& c : cells) nuclei.push_back({c.cx, c.cy, c.radius * spec.nucleus_fraction});
  const auto cell_mask = rasterize_discs(cells, n, n);
  const auto nucleus_mask = rasterize_discs(nuclei, n, n);
  const auto dot_mask = rasterize_discs(dots, n, n);

  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> noise(0.0, spec.noise);
  const auto basis = imgproc::StainBasis::hed();
  imgproc::StainImage st{imgproc::RealImage(n, n, 3), basis};
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      StainMix m = pal.background;
      if (dot_mask.at(y, x)) m = pal.dot;
      if (cell_mask.at(y, x)) m = nucleus_mask.at(y, x) ? pal.nucleus : pal.cell;
      st.concentrations.at(y, x, 0) = m.h + noise(rng);
      st.concentrations.at(y, x, 1) = m.e + noise(rng);
      st.concentrations.at(y, x, 2) = m.dab + noise(rng);
    }

  SyntheticTile t;
  t.id = std::move(id);
  t.domain = domain;
  t.image = imgproc::optical_density_to_rgb(imgproc::compose_hed(st));
  t.cell_mask = cell_mask;
  t.cells = std::move(cells);
  t.dots = std::move(dots);
  return t;
}

namespace {

struct Layout {
  std::vector<Circle> cells;
  std::vector<Circle> dots;
};

Layout sample_layout(const SyntheticDomainSpec& s, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n_cells(s.cells_min, s.cells_max);
  std::uniform_int_distribution<int> n_dots(s.dots_min, s.dots_max);
  std::uniform_real_distribution<double> cell_r(s.cell_radius_min, s.cell_radius_max);
  std::uniform_real_distribution<double> dot_r(s.dot_radius_min, s.dot_radius_max);
  Layout l;
  auto clear_of = [&](int cx, int cy, double r) {
    for (const auto& o : l.cells)
      if (std::hypot(cx - o.cx, cy - o.cy) < r + o.radius + 2) return false;
    for (const auto& o : l.dots)
      if (std::hypot(cx - o.cx, cy - o.cy) < r + o.radius + 2) return false;
    return true;
  };
  auto place = [&](double r, std::vector<Circle>& out) {
    const int margin = static_cast<int>(std::ceil(r)) + 1;
    std::uniform_int_distribution<int> pos(margin, s.canvas - 1 - margin);
    // Rejection sampling; a crowded canvas simply ends up with fewer objects.
    for (int attempt = 0; attempt < 200; ++attempt) {
      const int cx = pos(rng), cy = pos(rng);
      if (clear_of(cx, cy, r)) {
        out.push_back({cx, cy, r});
        return;
      }
    }
  };
  const int nc = n_cells(rng), nd = n_dots(rng);
  for (int i = 0; i < nc; ++i) place(cell_r(rng), l.cells);
  for (int i = 0; i < nd; ++i) place(dot_r(rng), l.dots);
  return l;
}

}  // namespace

SyntheticDataset make_synthetic_dataset(const SyntheticDomainSpec& spec, int n_tiles,
                                        const std::string& id_prefix) {
  spec.validate();
  if (n_tiles < 1) throw InvalidArgument("n_tiles must be >= 1");
  SyntheticDataset ds;
  ds.library.meta.tile_size = spec.canvas;
  ds.library.meta.source_domain = "synthetic";
  std::mt19937_64 rng(spec.seed);
  for (Domain d : {Domain::kHe, Domain::kIhc}) {
    auto& tiles = d == Domain::kHe ? ds.x : ds.y;
    for (int i = 0; i < n_tiles; ++i) {
      char id[32];
      std::snprintf(id, sizeof id, "%s%04d", d == Domain::kHe ? "x" : "y", i);
      auto layout = sample_layout(spec, rng);
      tiles.push_back(render_tile(spec, d, layout.cells, layout.dots, rng(), id_prefix + id));
      const auto& t = tiles.back();
      library::TileEntry entry{d, {}};
      for (const auto& c : t.cells)
        entry.boxes.push_back(library::make_box(c.cx, c.cy, spec.box_size, CellLabel::kCancer,
                                                spec.canvas, spec.canvas));
      for (const auto& c : t.dots)
        entry.boxes.push_back(library::make_box(c.cx, c.cy, spec.box_size, CellLabel::kNormal,
                                                spec.canvas, spec.canvas));
      ds.library.entries[t.id] = std::move(entry);
    }
  }
  ds.library.canonicalize();
  return ds;
}

}  // namespace stainforge::synthetic
