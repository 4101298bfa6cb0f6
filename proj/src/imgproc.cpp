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

#include "stainforge/imgproc.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <unordered_map>

#include "stainforge/parallel.hpp"

namespace stainforge::imgproc {

// ---------------------------------------------------------------------------
// BinaryMask

bool BinaryMask::contains(double x, double y) const {
  const int xi = static_cast<int>(std::lround(x));
  const int yi = static_cast<int>(std::lround(y));
  if (xi < 0 || yi < 0 || xi >= width_ || yi >= height_) return false;
  return at(yi, xi);
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

BinaryMask BinaryMask::complement() const {
  BinaryMask out = *this;
  for (auto& b : out.bits_) b = b ? 0 : 1;
  return out;
}

BinaryMask& BinaryMask::operator|=(const BinaryMask& o) {
  if (o.height_ != height_ || o.width_ != width_) throw ShapeMismatch("mask union shape");
  for (std::size_t i = 0; i < bits_.size(); ++i) bits_[i] = (bits_[i] || o.bits_[i]) ? 1 : 0;
  return *this;
}

BinaryMask& BinaryMask::subtract(const BinaryMask& o) {
  if (o.height_ != height_ || o.width_ != width_) throw ShapeMismatch("mask subtract shape");
  for (std::size_t i = 0; i < bits_.size(); ++i)
    if (o.bits_[i]) bits_[i] = 0;
  return *this;
}

// ---------------------------------------------------------------------------
// Stain algebra

StainBasis StainBasis::hed() {
  StainBasis b;
  b.rows = {{{0.65, 0.70, 0.29}, {0.07, 0.99, 0.11}, {0.27, 0.57, 0.78}}};
  return b.normalized();
}

StainBasis StainBasis::normalized() const {
  StainBasis out = *this;
  for (auto& r : out.rows) {
    const double n = std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
    if (n == 0) throw SingularBasis("stain vector has zero length");
    for (auto& v : r) v /= n;
  }
  return out;
}

double StainBasis::determinant() const {
  const auto& m = rows;
  return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
         m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
         m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

RealImage StainImage::channel(Stain s, bool clip_negative) const {
  RealImage out(height(), width(), 1);
  const int c = static_cast<int>(s);
  for (std::size_t i = 0; i < out.pixel_count(); ++i) {
    const double v = concentrations.data[i * 3 + c];
    out.data[i] = clip_negative ? std::max(0.0, v) : v;
  }
  return out;
}

RealImage rgb_to_optical_density(const RgbImage& img) {
  // 256-entry table keeps the per-pixel work to a lookup.
  std::array<double, 256> table{};
  for (int v = 0; v < 256; ++v) table[v] = -std::log10((v + 1.0) / 256.0);
  RealImage od(img.height, img.width, img.channels);
  for (std::size_t i = 0; i < img.data.size(); ++i) od.data[i] = table[img.data[i]];
  return od;
}

RgbImage optical_density_to_rgb(const RealImage& od) {
  RgbImage img(od.height, od.width, od.channels);
  for (std::size_t i = 0; i < od.data.size(); ++i) {
    const double v = 256.0 * std::pow(10.0, -od.data[i]) - 1.0;
    img.data[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
  }
  return img;
}

StainImage deconvolve_hed(const RealImage& od, const StainBasis& basis) {
  if (od.channels != 3) throw ShapeMismatch("optical density image must have 3 channels");
  const double det = basis.determinant();
  if (std::abs(det) < 1e-8) throw SingularBasis("stain basis determinant below 1e-8");

  // od = M^T c  =>  c = (M^T)^{-1} od. Inverse via the adjugate of A = M^T.
  const auto& m = basis.rows;
  double a[3][3];
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) a[r][c] = m[c][r];
  double inv[3][3];
  inv[0][0] = (a[1][1] * a[2][2] - a[1][2] * a[2][1]) / det;
  inv[0][1] = (a[0][2] * a[2][1] - a[0][1] * a[2][2]) / det;
  inv[0][2] = (a[0][1] * a[1][2] - a[0][2] * a[1][1]) / det;
  inv[1][0] = (a[1][2] * a[2][0] - a[1][0] * a[2][2]) / det;
  inv[1][1] = (a[0][0] * a[2][2] - a[0][2] * a[2][0]) / det;
  inv[1][2] = (a[0][2] * a[1][0] - a[0][0] * a[1][2]) / det;
  inv[2][0] = (a[1][0] * a[2][1] - a[1][1] * a[2][0]) / det;
  inv[2][1] = (a[0][1] * a[2][0] - a[0][0] * a[2][1]) / det;
  inv[2][2] = (a[0][0] * a[1][1] - a[0][1] * a[1][0]) / det;
  // det(M^T) == det(M), so dividing by `det` above is exact.

  StainImage out{RealImage(od.height, od.width, 3), basis};
  const std::size_t n = od.pixel_count();
  for (std::size_t p = 0; p < n; ++p) {
    const double* o = &od.data[p * 3];
    double* c = &out.concentrations.data[p * 3];
    for (int r = 0; r < 3; ++r) c[r] = inv[r][0] * o[0] + inv[r][1] * o[1] + inv[r][2] * o[2];
  }
  return out;
}

RealImage compose_hed(const StainImage& stain) {
  const auto& m = stain.basis.rows;
  RealImage od(stain.height(), stain.width(), 3);
  const std::size_t n = od.pixel_count();
  for (std::size_t p = 0; p < n; ++p) {
    const double* c = &stain.concentrations.data[p * 3];
    double* o = &od.data[p * 3];
    for (int ch = 0; ch < 3; ++ch) o[ch] = m[0][ch] * c[0] + m[1][ch] * c[1] + m[2][ch] * c[2];
  }
  return od;
}

// ---------------------------------------------------------------------------
// Otsu

OtsuResult otsu_threshold(std::span<const double> values, int n_bins) {
  if (n_bins < 2) throw InvalidArgument("otsu needs at least 2 bins");
  if (values.empty()) throw InvalidArgument("otsu on empty input");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (double v : values) {
    if (!std::isfinite(v)) throw InvalidArgument("otsu input must be finite");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (lo == hi) return {lo, true};

  // A value on a bin edge belongs to the lower bin, so "v > edge" is the
  // foreground rule for every candidate edge.
  const double width = (hi - lo) / n_bins;
  std::vector<double> counts(n_bins, 0.0);
  for (double v : values) {
    int b = static_cast<int>(std::ceil((v - lo) / width)) - 1;
    counts[std::clamp(b, 0, n_bins - 1)] += 1.0;
  }

  const double total = static_cast<double>(values.size());
  double sum_all = 0;
  for (int i = 0; i < n_bins; ++i) sum_all += counts[i] * (lo + (i + 0.5) * width);

  double w0 = 0, sum0 = 0;
  double best = -1;
  int best_bin = 0;
  for (int i = 0; i < n_bins - 1; ++i) {
    w0 += counts[i];
    sum0 += counts[i] * (lo + (i + 0.5) * width);
    const double w1 = total - w0;
    if (w0 == 0 || w1 == 0) continue;
    const double mu0 = sum0 / w0;
    const double mu1 = (sum_all - sum0) / w1;
    const double between = (w0 / total) * (w1 / total) * (mu0 - mu1) * (mu0 - mu1);
    if (between > best) {
      best = between;
      best_bin = i;
    }
  }
  return {lo + (best_bin + 1) * width, false};
}

OtsuResult otsu_threshold(const RealImage& channel, int n_bins) {
  if (channel.channels != 1) throw ShapeMismatch("otsu expects a single channel");
  return otsu_threshold(std::span<const double>(channel.data), n_bins);
}

BinaryMask threshold_mask(const RealImage& channel, double threshold) {
  if (channel.channels != 1) throw ShapeMismatch("threshold expects a single channel");
  BinaryMask m(channel.height, channel.width);
  for (std::size_t i = 0; i < channel.data.size(); ++i) m.bits()[i] = channel.data[i] > threshold;
  return m;
}

// ---------------------------------------------------------------------------
// Laplacian of Gaussian

namespace {

// Symmetric (edge-repeating) reflection, valid for any offset.
inline int reflect_index(int i, int n) {
  const int period = 2 * n;
  int m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - 1 - m;
}

// Separable correlation along rows then columns with reflect padding.
RealImage separable_filter(const RealImage& src, const std::vector<double>& kx,
                           const std::vector<double>& ky) {
  const int h = src.height, w = src.width;
  const int rx = static_cast<int>(kx.size() / 2);
  const int ry = static_cast<int>(ky.size() / 2);
  RealImage tmp(h, w, 1), out(h, w, 1);
  parallel_for(h, [&](std::int64_t y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int k = -rx; k <= rx; ++k)
        acc += kx[k + rx] * src.data[static_cast<std::size_t>(y) * w + reflect_index(x + k, w)];
      tmp.data[static_cast<std::size_t>(y) * w + x] = acc;
    }
  });
  parallel_for(h, [&](std::int64_t y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int k = -ry; k <= ry; ++k)
        acc += ky[k + ry] * tmp.data[static_cast<std::size_t>(reflect_index(static_cast<int>(y) + k, h)) * w + x];
      out.data[static_cast<std::size_t>(y) * w + x] = acc;
    }
  });
  return out;
}

}  // namespace

RealImage log_response(const RealImage& channel, double sigma) {
  if (channel.channels != 1) throw ShapeMismatch("LoG expects a single channel");
  if (!(sigma > 0)) throw InvalidArgument("LoG sigma must be positive");
  const int radius = static_cast<int>(std::ceil(4.0 * sigma));
  const int len = 2 * radius + 1;
  std::vector<double> g(len), g2(len);
  const double s2 = sigma * sigma;
  double gsum = 0;
  for (int i = 0; i < len; ++i) {
    const double x = i - radius;
    g[i] = std::exp(-x * x / (2 * s2));
    gsum += g[i];
  }
  for (auto& v : g) v /= gsum;
  double g2mean = 0;
  for (int i = 0; i < len; ++i) {
    const double x = i - radius;
    g2[i] = g[i] * (x * x - s2) / (s2 * s2);
    g2mean += g2[i];
  }
  // Zero-sum second derivative so flat regions respond with exactly ~0.
  g2mean /= len;
  for (auto& v : g2) v -= g2mean;

  RealImage dxx = separable_filter(channel, g2, g);
  RealImage dyy = separable_filter(channel, g, g2);
  for (std::size_t i = 0; i < dxx.data.size(); ++i) dxx.data[i] = -s2 * (dxx.data[i] + dyy.data[i]);
  return dxx;
}

void BlobDetectionConfig::validate() const {
  if (sigmas.empty()) throw InvalidArgument("blob config needs at least one sigma");
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    if (!(sigmas[i] > 0)) throw InvalidArgument("blob sigmas must be positive");
    if (i > 0 && !(sigmas[i] > sigmas[i - 1]))
      throw InvalidArgument("blob sigmas must be strictly increasing");
  }
  if (!(response_threshold > 0)) throw InvalidArgument("blob response threshold must be positive");
}

std::vector<Blob> detect_blobs(const RealImage& channel, const BlobDetectionConfig& cfg,
                               const BinaryMask* mask) {
  cfg.validate();
  if (channel.channels != 1) throw ShapeMismatch("blob detection expects a single channel");
  const int h = channel.height, w = channel.width;
  if (mask && (mask->height() != h || mask->width() != w))
    throw ShapeMismatch("blob mask shape differs from channel");

  const int ns = static_cast<int>(cfg.sigmas.size());
  std::vector<RealImage> stack;
  stack.reserve(ns);
  for (double s : cfg.sigmas) stack.push_back(log_response(channel, s));

  struct Candidate {
    Blob blob;
    std::int64_t order;
  };
  std::vector<Candidate> cands;
  for (int s = 0; s < ns; ++s) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double r = stack[s].at(y, x);
        if (r < cfg.response_threshold) continue;
        if (mask && !mask->at(y, x)) continue;
        bool is_max = true;
        for (int ds = -1; ds <= 1 && is_max; ++ds) {
          const int ss = s + ds;
          if (ss < 0 || ss >= ns) continue;
          for (int dy = -1; dy <= 1 && is_max; ++dy) {
            const int yy = y + dy;
            if (yy < 0 || yy >= h) continue;
            for (int dx = -1; dx <= 1; ++dx) {
              const int xx = x + dx;
              if (xx < 0 || xx >= w || (ds == 0 && dy == 0 && dx == 0)) continue;
              const double rn = stack[ss].at(yy, xx);
              // Plateaus resolve to the lowest (scale, y, x) index.
              const bool lower = std::tie(ss, yy, xx) < std::tie(s, y, x);
              if (lower ? !(r > rn) : !(r >= rn)) {
                is_max = false;
                break;
              }
            }
          }
        }
        if (!is_max) continue;

        auto refine = [](double a, double b, double c) {
          const double den = a - 2 * b + c;
          if (den >= 0) return 0.0;
          return std::clamp(0.5 * (a - c) / den, -0.5, 0.5);
        };
        const auto& img = stack[s];
        double cx = x, cy = y;
        if (x > 0 && x < w - 1) cx += refine(img.at(y, x - 1), r, img.at(y, x + 1));
        if (y > 0 && y < h - 1) cy += refine(img.at(y - 1, x), r, img.at(y + 1, x));
        cx = std::clamp(cx, 0.0, static_cast<double>(w - 1));
        cy = std::clamp(cy, 0.0, static_cast<double>(h - 1));
        cands.push_back({{cx, cy, cfg.sigmas[s], r},
                         (static_cast<std::int64_t>(s) * h + y) * w + x});
      }
    }
  }

  std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.blob.response != b.blob.response) return a.blob.response > b.blob.response;
    return a.order < b.order;
  });
  std::vector<Blob> kept;
  for (const auto& c : cands) {
    bool clash = false;
    for (const auto& k : kept) {
      const double sep = cfg.min_separation > 0 ? cfg.min_separation : k.sigma;
      if (std::hypot(c.blob.cx - k.cx, c.blob.cy - k.cy) < sep) {
        clash = true;
        break;
      }
    }
    if (!clash) kept.push_back(c.blob);
  }
  std::sort(kept.begin(), kept.end(), [](const Blob& a, const Blob& b) {
    return std::tie(a.cy, a.cx, a.sigma) < std::tie(b.cy, b.cx, b.sigma);
  });
  return kept;
}

// ---------------------------------------------------------------------------
// Clustering

namespace {

struct DisjointSet {
  std::vector<std::size_t> parent;
  explicit DisjointSet(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t i) {
    while (parent[i] != i) {
      parent[i] = parent[parent[i]];
      i = parent[i];
    }
    return i;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent[b] = a;
  }
};

}  // namespace

std::vector<std::vector<std::size_t>> cluster_points(std::span<const Point> points,
                                                     double dist_threshold) {
  if (!(dist_threshold > 0)) throw InvalidArgument("cluster threshold must be positive");
  const std::size_t n = points.size();
  DisjointSet ds(n);

  // Bucket by threshold-sized cells; neighbors can only be in adjacent cells.
  auto key = [](std::int64_t cx, std::int64_t cy) {
    return (static_cast<std::uint64_t>(cx) << 32) ^ static_cast<std::uint32_t>(cy);
  };
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> grid;
  std::vector<std::pair<std::int64_t, std::int64_t>> cell(n);
  for (std::size_t i = 0; i < n; ++i) {
    cell[i] = {static_cast<std::int64_t>(std::floor(points[i].x / dist_threshold)),
               static_cast<std::int64_t>(std::floor(points[i].y / dist_threshold))};
    grid[key(cell[i].first, cell[i].second)].push_back(i);
  }
  const double t2 = dist_threshold * dist_threshold;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::int64_t dy = -1; dy <= 1; ++dy) {
      for (std::int64_t dx = -1; dx <= 1; ++dx) {
        auto it = grid.find(key(cell[i].first + dx, cell[i].second + dy));
        if (it == grid.end()) continue;
        for (std::size_t j : it->second) {
          if (j <= i) continue;
          const double ex = points[i].x - points[j].x, ey = points[i].y - points[j].y;
          if (ex * ex + ey * ey <= t2) ds.unite(i, j);
        }
      }
    }
  }

  std::vector<std::vector<std::size_t>> out;
  std::vector<std::ptrdiff_t> slot(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = ds.find(i);
    if (slot[r] < 0) {
      slot[r] = static_cast<std::ptrdiff_t>(out.size());
      out.emplace_back();
    }
    out[slot[r]].push_back(i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Hulls

namespace {

inline double cross(const Point& o, const Point& a, const Point& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

void rasterize_segment_dilated(const Point& a, const Point& b, BinaryMask& m) {
  const double len = std::hypot(b.x - a.x, b.y - a.y);
  const int steps = std::max(1, static_cast<int>(std::ceil(len * 4)));
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    const int px = static_cast<int>(std::lround(a.x + t * (b.x - a.x)));
    const int py = static_cast<int>(std::lround(a.y + t * (b.y - a.y)));
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int x = px + dx, y = py + dy;
        if (x >= 0 && y >= 0 && x < m.width() && y < m.height()) m.set(y, x);
      }
  }
}

}  // namespace

std::vector<Point> convex_hull(std::span<const Point> points) {
  std::vector<Point> p(points.begin(), points.end());
  std::sort(p.begin(), p.end(), [](const Point& a, const Point& b) {
    return std::tie(a.x, a.y) < std::tie(b.x, b.y);
  });
  p.erase(std::unique(p.begin(), p.end(),
                      [](const Point& a, const Point& b) { return a.x == b.x && a.y == b.y; }),
          p.end());
  if (p.size() < 3) return p;

  std::vector<Point> hull(2 * p.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p[i]) <= 0) --k;
    hull[k++] = p[i];
  }
  for (std::size_t i = p.size() - 1, t = k + 1; i > 0; --i) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], p[i - 1]) <= 0) --k;
    hull[k++] = p[i - 1];
  }
  hull.resize(k - 1);
  return hull;
}

BinaryMask convex_hull_mask(std::span<const Point> points, int height, int width) {
  BinaryMask m(height, width);
  if (points.empty()) return m;
  const auto hull = convex_hull(points);
  if (hull.size() < 3) {
    // Collinear or tiny input: the extreme points span the segment.
    const auto [lo, hi] = std::minmax_element(points.begin(), points.end(),
                                              [](const Point& a, const Point& b) {
                                                return std::tie(a.x, a.y) < std::tie(b.x, b.y);
                                              });
    rasterize_segment_dilated(*lo, *hi, m);
    return m;
  }

  double minx = hull[0].x, maxx = minx, miny = hull[0].y, maxy = miny;
  for (const auto& v : hull) {
    minx = std::min(minx, v.x);
    maxx = std::max(maxx, v.x);
    miny = std::min(miny, v.y);
    maxy = std::max(maxy, v.y);
  }
  const int x0 = std::max(0, static_cast<int>(std::ceil(minx)));
  const int x1 = std::min(width - 1, static_cast<int>(std::floor(maxx)));
  const int y0 = std::max(0, static_cast<int>(std::ceil(miny)));
  const int y1 = std::min(height - 1, static_cast<int>(std::floor(maxy)));
  constexpr double kEps = 1e-9;
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const Point q{static_cast<double>(x), static_cast<double>(y)};
      bool inside = true;
      for (std::size_t i = 0; i < hull.size(); ++i) {
        if (cross(hull[i], hull[(i + 1) % hull.size()], q) < -kEps) {
          inside = false;
          break;
        }
      }
      if (inside) m.set(y, x);
    }
  }
  return m;
}

BinaryMask fill_holes(const BinaryMask& mask) {
  const int h = mask.height(), w = mask.width();
  BinaryMask reached(h, w);
  std::deque<std::pair<int, int>> queue;
  auto push = [&](int y, int x) {
    if (y < 0 || x < 0 || y >= h || x >= w) return;
    if (mask.at(y, x) || reached.at(y, x)) return;
    reached.set(y, x);
    queue.emplace_back(y, x);
  };
  for (int x = 0; x < w; ++x) {
    push(0, x);
    push(h - 1, x);
  }
  for (int y = 0; y < h; ++y) {
    push(y, 0);
    push(y, w - 1);
  }
  while (!queue.empty()) {
    auto [y, x] = queue.front();
    queue.pop_front();
    push(y - 1, x);
    push(y + 1, x);
    push(y, x - 1);
    push(y, x + 1);
  }
  return reached.complement();
}

}  // namespace stainforge::imgproc
