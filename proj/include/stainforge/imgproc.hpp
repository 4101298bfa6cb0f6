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

// Pixel-level kernels shared by the library builder and the evaluator.
//
// Coordinate convention: pixel (row y, column x) has its center at the real
// point (x, y). Blob centers and hull vertices live in the same frame.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "stainforge/errors.hpp"

namespace stainforge::imgproc {

/// Dense H x W x C image stored row-major with interleaved channels.
template <typename T>
struct Image {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<T> data;

  Image() = default;
  Image(int h, int w, int c, T fill = T{})
      : height(h), width(w), channels(c),
        data(static_cast<std::size_t>(h) * w * c, fill) {
    if (h < 1 || w < 1 || c < 1) throw InvalidArgument("image dims must be >= 1");
  }

  std::size_t index(int y, int x, int c = 0) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  T& at(int y, int x, int c = 0) { return data[index(y, x, c)]; }
  const T& at(int y, int x, int c = 0) const { return data[index(y, x, c)]; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
  bool same_shape(int h, int w) const { return height == h && width == w; }

  friend bool operator==(const Image&, const Image&) = default;
};

using RgbImage = Image<std::uint8_t>;
using RealImage = Image<double>;

/// Boolean raster with the same geometry as its source image.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int h, int w, bool fill = false)
      : height_(h), width_(w), bits_(static_cast<std::size_t>(h) * w, fill ? 1 : 0) {
    if (h < 1 || w < 1) throw InvalidArgument("mask dims must be >= 1");
  }

  int height() const { return height_; }
  int width() const { return width_; }
  bool at(int y, int x) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  void set(int y, int x, bool v = true) {
    bits_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0;
  }
  bool contains(double x, double y) const;
  std::size_t count() const;
  bool empty() const { return count() == 0; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }
  std::vector<std::uint8_t>& bits() { return bits_; }

  BinaryMask complement() const;
  BinaryMask& operator|=(const BinaryMask& o);
  /// Clears every pixel set in `o` (this AND NOT o).
  BinaryMask& subtract(const BinaryMask& o);

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> bits_;
};

enum class Stain : int { kHematoxylin = 0, kEosin = 1, kDab = 2 };

/// Three stain absorbance vectors, one per row, each of unit length.
struct StainBasis {
  std::array<std::array<double, 3>, 3> rows{};

  /// Ruifrok-Johnston hematoxylin / eosin / DAB vectors, renormalized.
  static StainBasis hed();
  /// Returns a copy with every row scaled to unit length.
  StainBasis normalized() const;
  double determinant() const;
};

struct StainImage {
  RealImage concentrations;  // H x W x 3 in basis-row order
  StainBasis basis;

  int height() const { return concentrations.height; }
  int width() const { return concentrations.width; }
  /// Single-channel copy of one stain; negative values clipped when asked.
  RealImage channel(Stain s, bool clip_negative = false) const;
};

struct Blob {
  double cx = 0;
  double cy = 0;
  double sigma = 0;
  double response = 0;
};

struct BlobDetectionConfig {
  std::vector<double> sigmas;
  double response_threshold = 0.1;
  /// Non-positive selects the sigma of the stronger detection.
  double min_separation = 0.0;

  void validate() const;
};

struct Point {
  double x = 0;
  double y = 0;
};

struct OtsuResult {
  double threshold = 0;
  /// All input values equal; `threshold` is that value.
  bool degenerate = false;
};

/// Beer-Lambert optical density -log10((v + 1) / 256), per channel.
RealImage rgb_to_optical_density(const RgbImage& img);
/// Inverse of rgb_to_optical_density, rounded and clamped to [0, 255].
RgbImage optical_density_to_rgb(const RealImage& od);

/// Solves od = basis^T c per pixel. Throws SingularBasis if |det| < 1e-8.
StainImage deconvolve_hed(const RealImage& od, const StainBasis& basis = StainBasis::hed());
RealImage compose_hed(const StainImage& stain);

/// Otsu threshold of a single-channel image over an n_bins histogram.
OtsuResult otsu_threshold(const RealImage& channel, int n_bins = 256);
OtsuResult otsu_threshold(std::span<const double> values, int n_bins = 256);

/// Pixels strictly above `threshold`.
BinaryMask threshold_mask(const RealImage& channel, double threshold);

/// Scale-normalized, sign-flipped Laplacian of Gaussian (bright blobs > 0).
RealImage log_response(const RealImage& channel, double sigma);

std::vector<Blob> detect_blobs(const RealImage& channel, const BlobDetectionConfig& cfg,
                               const BinaryMask* mask = nullptr);

/// Connected components of the graph linking points at distance <= threshold.
/// Each component lists point indices ascending; components are ordered by
/// their smallest index.
std::vector<std::vector<std::size_t>> cluster_points(std::span<const Point> points,
                                                     double dist_threshold);

/// Counter-clockwise hull without collinear vertices (y axis pointing down
/// makes it clockwise on screen).
std::vector<Point> convex_hull(std::span<const Point> points);

/// Pixels whose centers lie in or on the hull. Fewer than three non-collinear
/// points rasterize the point or segment and dilate it by one pixel.
BinaryMask convex_hull_mask(std::span<const Point> points, int height, int width);

/// Sets background pixels not 4-connected to the image border.
BinaryMask fill_holes(const BinaryMask& mask);

}  // namespace stainforge::imgproc
