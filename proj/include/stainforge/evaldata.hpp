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

// Tile datasets on disk, DAB-mask extraction, overlap metrics and slide
// stitching.

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "stainforge/cell_library.hpp"
#include "stainforge/imgproc.hpp"

namespace stainforge::evaldata {

/// 8-bit RGB; grayscale, palette, alpha and 16-bit inputs are converted.
/// Throws IoError.
imgproc::RgbImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const imgproc::RgbImage& img);
/// Nonzero pixels (of any channel) are foreground.
imgproc::BinaryMask read_mask_png(const std::filesystem::path& path);
/// Foreground 255, background 0, single channel.
void write_mask_png(const std::filesystem::path& path, const imgproc::BinaryMask& mask);

struct GridPos {
  int row = 0;
  int col = 0;
  friend bool operator==(const GridPos&, const GridPos&) = default;
};

struct TileRecord {
  std::string tile_id;
  library::Domain domain = library::Domain::kHe;
  imgproc::RgbImage image;
  std::optional<imgproc::BinaryMask> annotation;
  std::optional<GridPos> grid_pos;
  friend bool operator==(const TileRecord&, const TileRecord&) = default;
};

/// Manifest CSV `tile_id,domain,image_path,mask_path,row,col`; mask_path,
/// row and col may be empty (row and col together). Paths are relative to
/// `root` unless absolute. Records come back in manifest order. When
/// `tile_size` is set every image must be that size.
/// Throws IoError, ManifestError (naming the line) or SizeMismatch (naming
/// the tile).
std::vector<TileRecord> load_tile_dataset(const std::filesystem::path& root,
                                          const std::filesystem::path& manifest,
                                          std::optional<int> tile_size = std::nullopt);

/// Writes images/<id>.png, masks/<id>.png and the manifest under `root`.
void write_tile_dataset(const std::filesystem::path& root, const std::filesystem::path& manifest,
                        const std::vector<TileRecord>& tiles);

/// DAB density (clipped at 0) thresholded by Otsu, never below
/// `min_density`, with enclosed holes filled. A degenerate histogram gives
/// an empty mask.
imgproc::BinaryMask extract_dab_mask(const imgproc::RgbImage& ihc_tile, double min_density = 0.15);

/// 2|A and B| / (|A| + |B|); 1 when both are empty. Throws ShapeMismatch.
double dice(const imgproc::BinaryMask& pred, const imgproc::BinaryMask& gt);
/// (TPR + TNR) / 2; the recall of the present class when gt has only one.
/// Throws ShapeMismatch.
double balanced_accuracy(const imgproc::BinaryMask& pred, const imgproc::BinaryMask& gt);

struct MeanStd {
  double mean = 0;
  /// Population standard deviation.
  double std = 0;
};

/// Throws InvalidArgument on an empty list.
MeanStd mean_std(const std::vector<double>& values);

struct MetricsSummary {
  std::vector<std::string> tile_ids;
  std::vector<double> dice;
  std::vector<double> bac;
  MeanStd dice_stats;
  MeanStd bac_stats;
};

using TileTranslator = std::function<imgproc::RgbImage(const imgproc::RgbImage&)>;

/// Translates each annotated tile, extracts its DAB mask and scores it against
/// the annotation. Tiles run in parallel; results keep input order.
/// Throws MissingAnnotation.
MetricsSummary evaluate(const TileTranslator& translate, const std::vector<TileRecord>& tiles,
                        double min_density = 0.15);

/// `tile_id,dice,bac` per tile.
void write_metrics_csv(const std::filesystem::path& path, const MetricsSummary& m);
/// One table row: `<label>  DICE <mean>±<std>  BAC <mean>±<std>` (3 decimals).
std::string summary_row(const std::string& label, const MetricsSummary& m);

/// Translates every tile and places it at (row * H, col * W). Positions must
/// fill a rectangle from (0, 0). Throws GridGap naming the first missing
/// cell, SizeMismatch for unequal tiles, InvalidArgument for duplicates or
/// tiles without a position.
imgproc::RgbImage stitch_slide(const std::vector<TileRecord>& tiles, const TileTranslator& translate);

}  // namespace stainforge::evaldata
