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

// Cell bounding-box libraries: extraction from H&E and IHC tiles, the CSV
// file format, and balanced per-tile box sampling.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stainforge/imgproc.hpp"
#include "stainforge/nn/kernels.hpp"

namespace stainforge::library {

/// X is the H&E (source) domain, Y the IHC (target) domain.
enum class Domain { kHe, kIhc };
enum class CellLabel { kCancer, kNormal };

std::string to_string(Domain d);
std::string to_string(CellLabel l);
Domain parse_domain(const std::string& s);
CellLabel parse_label(const std::string& s);

/// Square box covering pixels [cx - size/2, cx - size/2 + size) on each axis.
struct CellBox {
  int cx = 0;
  int cy = 0;
  int size = 48;
  CellLabel label = CellLabel::kNormal;

  int x0() const { return cx - size / 2; }
  int y0() const { return cy - size / 2; }
  friend bool operator==(const CellBox&, const CellBox&) = default;
};

/// Box of `size` centered on the nearest pixel to (x, y), shifted inward so it
/// lies fully inside a height x width tile. Throws InvalidArgument when the
/// box cannot fit.
CellBox make_box(double x, double y, int size, CellLabel label, int height, int width);

/// Continuous RoIAlign box in image pixel units.
nn::BoxSpec to_box_spec(const CellBox& b, int batch_index);

struct TileEntry {
  Domain domain = Domain::kHe;
  std::vector<CellBox> boxes;
  friend bool operator==(const TileEntry&, const TileEntry&) = default;
};

struct LibraryMeta {
  int tile_size = 0;
  std::string source_domain;
  std::string config_hash;
  bool empty() const { return tile_size == 0 && source_domain.empty() && config_hash.empty(); }
  friend bool operator==(const LibraryMeta&, const LibraryMeta&) = default;
};

struct CellLibrary {
  std::map<std::string, TileEntry> entries;
  LibraryMeta meta;

  std::size_t box_count() const;
  /// Boxes of a tile, empty when the tile is unknown.
  std::span<const CellBox> boxes(const std::string& tile_id) const;
  /// Sorts every entry's boxes into file order, (cy, cx, size, label).
  void canonicalize();
  friend bool operator==(const CellLibrary&, const CellLibrary&) = default;
};

struct PipelineConfig {
  imgproc::BlobDetectionConfig healthy{{1, 2}, 0.1, 0};
  imgproc::BlobDetectionConfig cancer{{10, 11, 12}, 0.1, 0};
  imgproc::BlobDetectionConfig ihc_cancer{{7, 8, 9, 10}, 0.1, 0};
  imgproc::BlobDetectionConfig ihc_normal{{1, 2, 3}, 0.1, 0};
  double cluster_threshold = 25;
  int box_size = 48;
  /// DAB optical density below this is never part of a DAB region, whatever
  /// Otsu says; keeps DAB-free tiles from thresholding their own noise.
  double dab_min_density = 0.15;

  /// 64 x 64 tiles with 16 px boxes; scales shrunk to match.
  static PipelineConfig desk_scale();
  void validate() const;
  /// FNV-1a over the canonical ini text.
  std::string hash() const;
};

/// `key = value` ini with one section per pipeline stage.
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
void save_pipeline_config(const std::filesystem::path& path, const PipelineConfig& cfg);
std::string pipeline_config_text(const PipelineConfig& cfg);

/// Intermediate products of the H&E pipeline, exposed for inspection.
struct HeTrace {
  std::vector<imgproc::Blob> first_pass;
  std::vector<std::vector<std::size_t>> clusters;
  imgproc::BinaryMask refined;
  std::vector<imgproc::Blob> cancer;
};

std::vector<CellBox> build_he_library(const imgproc::RgbImage& tile,
                                      const imgproc::BinaryMask& annotation,
                                      const PipelineConfig& cfg, HeTrace* trace = nullptr);

struct IhcTrace {
  /// DAB optical density, negatives clipped.
  imgproc::RealImage dab;
  imgproc::BinaryMask dab_mask;
  /// dab_mask with enclosed holes filled: the cancer region.
  imgproc::BinaryMask region;
  std::vector<imgproc::Blob> cancer;
  std::vector<imgproc::Blob> normal;
};

std::vector<CellBox> build_ihc_library(const imgproc::RgbImage& tile, const PipelineConfig& cfg,
                                       IhcTrace* trace = nullptr);

/// Binarized DAB: Otsu on clipped DAB density, floored by `min_density`.
imgproc::BinaryMask dab_mask(const imgproc::RealImage& dab, double min_density);

/// Header `tile_id,domain,cx,cy,size,label`, preceded by one `#meta` line when
/// the library carries metadata. Throws IoError.
void write_library(const std::filesystem::path& path, const CellLibrary& lib);
/// Throws IoError, or FormatError naming the first malformed line.
CellLibrary read_library(const std::filesystem::path& path);

struct RoiBatch {
  std::vector<CellBox> boxes;
};

/// Nothing for an empty entry. Otherwise k boxes drawn with replacement:
/// ceil(k/2) cancer and floor(k/2) normal when both labels exist, else all k
/// from the label present. Cancer boxes come first.
std::optional<RoiBatch> sample_boxes(std::span<const CellBox> entry, int k, std::uint64_t seed);

}  // namespace stainforge::library
