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

#define EIGEN_DONT_PARALLELIZE
#include "stainforge/nn/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "stainforge/parallel.hpp"

namespace stainforge::nn {

int conv_out_dim(int in, int kernel, ConvGeometry g) {
  if (g.stride < 1) throw InvalidArgument("stride must be >= 1");
  const int span = in + 2 * g.pad - kernel;
  if (span < 0) throw ShapeMismatch("kernel larger than padded input");
  return span / g.stride + 1;
}

int conv_transpose_out_dim(int in, int kernel, ConvGeometry g) {
  if (g.stride < 1) throw InvalidArgument("stride must be >= 1");
  const int out = (in - 1) * g.stride - 2 * g.pad + kernel;
  if (out < 1) throw ShapeMismatch("transposed convolution output is empty");
  return out;
}

Shape conv2d_out_shape(const Shape& x, const Shape& w, ConvGeometry g) {
  if (x.c != w.c)
    throw ShapeMismatch("conv2d: input channels " + std::to_string(x.c) + " vs weight " + w.str());
  if (w.h != w.w) throw ShapeMismatch("conv2d: kernel must be square");
  return {x.n, w.n, conv_out_dim(x.h, w.h, g), conv_out_dim(x.w, w.w, g)};
}

Shape conv_transpose2d_out_shape(const Shape& x, const Shape& w, ConvGeometry g) {
  if (x.c != w.n)
    throw ShapeMismatch("conv_transpose2d: input channels " + std::to_string(x.c) +
                        " vs weight " + w.str());
  if (w.h != w.w) throw ShapeMismatch("conv_transpose2d: kernel must be square");
  return {x.n, w.c, conv_transpose_out_dim(x.h, w.h, g), conv_transpose_out_dim(x.w, w.w, g)};
}

void validate_boxes(std::span<const BoxSpec> boxes, int batch) {
  for (const auto& b : boxes) {
    if (!(std::isfinite(b.x0) && std::isfinite(b.y0) && std::isfinite(b.x1) && std::isfinite(b.y1)))
      throw InvalidBox("box coordinates must be finite");
    if (!(b.x1 > b.x0) || !(b.y1 > b.y0)) throw InvalidBox("box must have positive extent");
    if (b.batch_index < 0 || b.batch_index >= batch)
      throw InvalidBox("box batch index " + std::to_string(b.batch_index) + " outside batch of " +
                       std::to_string(batch));
  }
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// Output columns [lo, hi) whose input column ox * stride - pad + kj lies in [0, w).
struct ValidRange {
  int lo;
  int hi;
};

ValidRange valid_columns(int w, int wo, int kj, ConvGeometry g) {
  const int off = kj - g.pad;
  const int lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
  const int hi = w - 1 - off < 0 ? 0 : std::min(wo, (w - 1 - off) / g.stride + 1);
  return {std::min(lo, hi), hi};
}

// cols[(c*k + ki)*k + kj][oy*wo + ox] = img[c][oy*s - p + ki][ox*s - p + kj]
template <typename T>
void im2col(const T* img, int channels, int h, int w, int k, ConvGeometry g, int ho, int wo,
            T* cols) {
  const std::size_t out_plane = static_cast<std::size_t>(ho) * wo;
  for (int c = 0; c < channels; ++c) {
    const T* src = img + static_cast<std::size_t>(c) * h * w;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* dst = cols + (static_cast<std::size_t>(c) * k * k + ki * k + kj) * out_plane;
        const auto [lo, hi] = valid_columns(w, wo, kj, g);
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          T* row = dst + static_cast<std::size_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(row, row + wo, T{0});
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(iy) * w + (kj - g.pad);
          std::fill(row, row + lo, T{0});
          if (g.stride == 1) {
            std::copy(srow + lo, srow + hi, row + lo);
          } else {
            for (int ox = lo; ox < hi; ++ox) row[ox] = srow[ox * g.stride];
          }
          std::fill(row + hi, row + wo, T{0});
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates columns back into the (zeroed) image.
template <typename T>
void col2im(const T* cols, int channels, int h, int w, int k, ConvGeometry g, int ho, int wo,
            T* img) {
  const std::size_t out_plane = static_cast<std::size_t>(ho) * wo;
  for (int c = 0; c < channels; ++c) {
    T* dst = img + static_cast<std::size_t>(c) * h * w;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* src = cols + (static_cast<std::size_t>(c) * k * k + ki * k + kj) * out_plane;
        const auto [lo, hi] = valid_columns(w, wo, kj, g);
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= h) continue;
          T* drow = dst + static_cast<std::size_t>(iy) * w + (kj - g.pad);
          const T* row = src + static_cast<std::size_t>(oy) * wo;
          for (int ox = lo; ox < hi; ++ox) drow[ox * g.stride] += row[ox];
        }
      }
    }
  }
}

// Per-thread scratch reused across calls; contents are unspecified.
template <typename T>
T* scratch(std::size_t n) {
  thread_local std::vector<T> buf;
  if (buf.size() < n) buf.resize(n);
  return buf.data();
}

template <typename T>
void add_bias(const Tensor<T>* bias, int channels, std::size_t plane, T* y) {
  if (!bias) return;
  for (int c = 0; c < channels; ++c) {
    const T b = (*bias)[c];
    T* p = y + static_cast<std::size_t>(c) * plane;
    for (std::size_t i = 0; i < plane; ++i) p[i] += b;
  }
}

// Sums per-sample partial buffers in sample order into `out`.
template <typename T>
void reduce_partials(const std::vector<std::vector<T>>& partials, Tensor<T>& out) {
  out.fill(T{0});
  for (const auto& p : partials)
    for (std::size_t i = 0; i < p.size(); ++i) out[i] += p[i];
}

template <typename T>
void check_bias(const Tensor<T>* bias, int channels) {
  if (bias && static_cast<int>(bias->numel()) != channels)
    throw ShapeMismatch("bias length does not match output channels");
}

}  // namespace

namespace kernels {

template <typename T>
void conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                    ConvGeometry g, Tensor<T>& y) {
  const Shape ys = conv2d_out_shape(x.shape(), w.shape(), g);
  check_bias(bias, ys.c);
  if (y.shape() != ys) y = Tensor<T>(ys);
  const Shape xs = x.shape();
  const int k = w.shape().h;
  const int ckk = xs.c * k * k;
  const std::size_t out_plane = ys.plane();
  ConstMatMap<T> wm(w.data(), ys.c, ckk);
  parallel_for(xs.n, [&](std::int64_t n) {
    T* const cols = scratch<T>(static_cast<std::size_t>(ckk) * out_plane);
    im2col(x.data() + x.offset(static_cast<int>(n), 0, 0, 0), xs.c, xs.h, xs.w, k, g, ys.h, ys.w,
           cols);
    MatMap<T> ym(y.data() + y.offset(static_cast<int>(n), 0, 0, 0), ys.c, out_plane);
    ym.noalias() = wm * ConstMatMap<T>(cols, ckk, out_plane);
    add_bias(bias, ys.c, out_plane, ym.data());
  });
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                     ConvGeometry g, Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db) {
  const Shape xs = x.shape();
  const Shape ys = conv2d_out_shape(xs, w.shape(), g);
  if (dy.shape() != ys) throw ShapeMismatch("conv2d backward: upstream gradient " + dy.shape().str());
  const int k = w.shape().h;
  const int ckk = xs.c * k * k;
  const std::size_t out_plane = ys.plane();
  ConstMatMap<T> wm(w.data(), ys.c, ckk);
  if (dx && dx->shape() != xs) *dx = Tensor<T>(xs);
  std::vector<std::vector<T>> dw_part(dw ? xs.n : 0);
  std::vector<std::vector<T>> db_part(db ? xs.n : 0);

  parallel_for(xs.n, [&](std::int64_t n) {
    const int ni = static_cast<int>(n);
    ConstMatMap<T> dym(dy.data() + dy.offset(ni, 0, 0, 0), ys.c, out_plane);
    T* const cols = scratch<T>(static_cast<std::size_t>(ckk) * out_plane);
    if (dx) {
      MatMap<T>(cols, ckk, out_plane).noalias() = wm.transpose() * dym;
      T* dst = dx->data() + dx->offset(ni, 0, 0, 0);
      std::fill(dst, dst + static_cast<std::size_t>(xs.c) * xs.h * xs.w, T{0});
      col2im(cols, xs.c, xs.h, xs.w, k, g, ys.h, ys.w, dst);
    }
    if (dw) {
      im2col(x.data() + x.offset(ni, 0, 0, 0), xs.c, xs.h, xs.w, k, g, ys.h, ys.w, cols);
      dw_part[n].assign(static_cast<std::size_t>(ys.c) * ckk, T{0});
      MatMap<T>(dw_part[n].data(), ys.c, ckk).noalias() =
          dym * ConstMatMap<T>(cols, ckk, out_plane).transpose();
    }
    if (db) {
      db_part[n].assign(ys.c, T{0});
      // Fixed summation order; Eigen's sum() peels by pointer alignment.
      for (int c = 0; c < ys.c; ++c) {
        double acc = 0;
        const T* row = dym.data() + static_cast<std::size_t>(c) * out_plane;
        for (std::size_t i = 0; i < out_plane; ++i) acc += row[i];
        db_part[n][c] = static_cast<T>(acc);
      }
    }
  });
  if (dw) {
    if (dw->shape() != w.shape()) *dw = Tensor<T>(w.shape());
    reduce_partials(dw_part, *dw);
  }
  if (db) {
    if (static_cast<int>(db->numel()) != ys.c) *db = Tensor<T>({1, ys.c, 1, 1});
    reduce_partials(db_part, *db);
  }
}

template <typename T>
void conv_transpose2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                              ConvGeometry g, Tensor<T>& y) {
  const Shape ys = conv_transpose2d_out_shape(x.shape(), w.shape(), g);
  check_bias(bias, ys.c);
  if (y.shape() != ys) y = Tensor<T>(ys);
  const Shape xs = x.shape();
  const int k = w.shape().h;
  const int okk = ys.c * k * k;
  const std::size_t in_plane = xs.plane();
  ConstMatMap<T> wm(w.data(), xs.c, okk);
  parallel_for(xs.n, [&](std::int64_t n) {
    const int ni = static_cast<int>(n);
    T* const cols = scratch<T>(static_cast<std::size_t>(okk) * in_plane);
    MatMap<T>(cols, okk, in_plane).noalias() =
        wm.transpose() * ConstMatMap<T>(x.data() + x.offset(ni, 0, 0, 0), xs.c, in_plane);
    T* dst = y.data() + y.offset(ni, 0, 0, 0);
    std::fill(dst, dst + static_cast<std::size_t>(ys.c) * ys.plane(), T{0});
    col2im(cols, ys.c, ys.h, ys.w, k, g, xs.h, xs.w, dst);
    add_bias(bias, ys.c, ys.plane(), dst);
  });
}

template <typename T>
void conv_transpose2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                               ConvGeometry g, Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db) {
  const Shape xs = x.shape();
  const Shape ys = conv_transpose2d_out_shape(xs, w.shape(), g);
  if (dy.shape() != ys)
    throw ShapeMismatch("conv_transpose2d backward: upstream gradient " + dy.shape().str());
  const int k = w.shape().h;
  const int okk = ys.c * k * k;
  const std::size_t in_plane = xs.plane();
  ConstMatMap<T> wm(w.data(), xs.c, okk);
  if (dx && dx->shape() != xs) *dx = Tensor<T>(xs);
  std::vector<std::vector<T>> dw_part(dw ? xs.n : 0);
  std::vector<std::vector<T>> db_part(db ? xs.n : 0);

  parallel_for(xs.n, [&](std::int64_t n) {
    const int ni = static_cast<int>(n);
    T* const cols = scratch<T>(static_cast<std::size_t>(okk) * in_plane);
    im2col(dy.data() + dy.offset(ni, 0, 0, 0), ys.c, ys.h, ys.w, k, g, xs.h, xs.w, cols);
    ConstMatMap<T> cm(cols, okk, in_plane);
    if (dx) {
      MatMap<T>(dx->data() + dx->offset(ni, 0, 0, 0), xs.c, in_plane).noalias() = wm * cm;
    }
    if (dw) {
      dw_part[n].assign(static_cast<std::size_t>(xs.c) * okk, T{0});
      MatMap<T>(dw_part[n].data(), xs.c, okk).noalias() =
          ConstMatMap<T>(x.data() + x.offset(ni, 0, 0, 0), xs.c, in_plane) * cm.transpose();
    }
    if (db) {
      db_part[n].assign(ys.c, T{0});
      const T* src = dy.data() + dy.offset(ni, 0, 0, 0);
      for (int c = 0; c < ys.c; ++c) {
        T acc{0};
        const T* p = src + static_cast<std::size_t>(c) * ys.plane();
        for (std::size_t i = 0; i < ys.plane(); ++i) acc += p[i];
        db_part[n][c] = acc;
      }
    }
  });
  if (dw) {
    if (dw->shape() != w.shape()) *dw = Tensor<T>(w.shape());
    reduce_partials(dw_part, *dw);
  }
  if (db) {
    if (static_cast<int>(db->numel()) != ys.c) *db = Tensor<T>({1, ys.c, 1, 1});
    reduce_partials(db_part, *db);
  }
}

template <typename T>
void instance_norm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                           double eps, Tensor<T>& y, std::vector<double>& mean,
                           std::vector<double>& invstd) {
  const Shape s = x.shape();
  if (static_cast<int>(gamma.numel()) != s.c || static_cast<int>(beta.numel()) != s.c)
    throw ShapeMismatch("instance_norm: affine length must equal channels");
  if (y.shape() != s) y = Tensor<T>(s);
  const std::size_t plane = s.plane();
  mean.assign(static_cast<std::size_t>(s.n) * s.c, 0.0);
  invstd.assign(mean.size(), 0.0);
  parallel_for(static_cast<std::int64_t>(s.n) * s.c, [&](std::int64_t nc) {
    const int c = static_cast<int>(nc % s.c);
    const T* src = x.data() + nc * plane;
    T* dst = y.data() + nc * plane;
    double sum = 0, sq = 0;
    for (std::size_t i = 0; i < plane; ++i) sum += src[i];
    const double mu = sum / plane;
    for (std::size_t i = 0; i < plane; ++i) {
      const double d = src[i] - mu;
      sq += d * d;
    }
    const double is = 1.0 / std::sqrt(sq / plane + eps);
    mean[nc] = mu;
    invstd[nc] = is;
    const double ga = gamma[c], be = beta[c];
    for (std::size_t i = 0; i < plane; ++i) dst[i] = static_cast<T>((src[i] - mu) * is * ga + be);
  });
}

template <typename T>
void instance_norm_backward(const Tensor<T>& x, const Tensor<T>& gamma,
                            const std::vector<double>& mean, const std::vector<double>& invstd,
                            const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>* dgamma,
                            Tensor<T>* dbeta) {
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  if (dx && dx->shape() != s) *dx = Tensor<T>(s);
  std::vector<double> sum_dy(static_cast<std::size_t>(s.n) * s.c);
  std::vector<double> sum_dy_xhat(sum_dy.size());
  parallel_for(static_cast<std::int64_t>(s.n) * s.c, [&](std::int64_t nc) {
    const int c = static_cast<int>(nc % s.c);
    const T* xs = x.data() + nc * plane;
    const T* g = dy.data() + nc * plane;
    const double mu = mean[nc], is = invstd[nc];
    double a = 0, b = 0;
    for (std::size_t i = 0; i < plane; ++i) {
      a += g[i];
      b += g[i] * (xs[i] - mu) * is;
    }
    sum_dy[nc] = a;
    sum_dy_xhat[nc] = b;
    if (dx) {
      T* out = dx->data() + nc * plane;
      const double scale = gamma[c] * is / plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double xhat = (xs[i] - mu) * is;
        out[i] = static_cast<T>(scale * (plane * static_cast<double>(g[i]) - a - xhat * b));
      }
    }
  });
  if (dgamma || dbeta) {
    std::vector<double> ga(s.c, 0.0), be(s.c, 0.0);
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        ga[c] += sum_dy_xhat[static_cast<std::size_t>(n) * s.c + c];
        be[c] += sum_dy[static_cast<std::size_t>(n) * s.c + c];
      }
    if (dgamma) {
      if (static_cast<int>(dgamma->numel()) != s.c) *dgamma = Tensor<T>({1, s.c, 1, 1});
      for (int c = 0; c < s.c; ++c) (*dgamma)[c] = static_cast<T>(ga[c]);
    }
    if (dbeta) {
      if (static_cast<int>(dbeta->numel()) != s.c) *dbeta = Tensor<T>({1, s.c, 1, 1});
      for (int c = 0; c < s.c; ++c) (*dbeta)[c] = static_cast<T>(be[c]);
    }
  }
}

namespace {

struct Tap {
  std::size_t offset;  // within one feature plane
  double weight;
};

// For one box: bin -> list of bilinear taps, weights already averaged.
std::vector<std::vector<Tap>> roi_taps(const BoxSpec& b, const RoiAlignParams& p, int h, int w) {
  const int out = p.out_size;
  const int sp = p.samples_per_bin;
  const double x0 = b.x0 * p.spatial_scale, y0 = b.y0 * p.spatial_scale;
  const double bin_w = (b.x1 - b.x0) * p.spatial_scale / out;
  const double bin_h = (b.y1 - b.y0) * p.spatial_scale / out;
  const double norm = 1.0 / (sp * sp);
  std::vector<std::vector<Tap>> taps(static_cast<std::size_t>(out) * out);
  for (int i = 0; i < out; ++i) {
    for (int j = 0; j < out; ++j) {
      auto& bin = taps[static_cast<std::size_t>(i) * out + j];
      for (int a = 0; a < sp; ++a) {
        // Feature cell centers sit at index + 0.5 in continuous coordinates.
        const double yy = y0 + (i + (a + 0.5) / sp) * bin_h - 0.5;
        const int ylo = static_cast<int>(std::floor(yy));
        const double ly = yy - ylo;
        for (int bb = 0; bb < sp; ++bb) {
          const double xx = x0 + (j + (bb + 0.5) / sp) * bin_w - 0.5;
          const int xlo = static_cast<int>(std::floor(xx));
          const double lx = xx - xlo;
          const int ys[2] = {ylo, ylo + 1};
          const double wy[2] = {1 - ly, ly};
          const int xs[2] = {xlo, xlo + 1};
          const double wx[2] = {1 - lx, lx};
          for (int u = 0; u < 2; ++u) {
            if (ys[u] < 0 || ys[u] >= h) continue;
            for (int v = 0; v < 2; ++v) {
              if (xs[v] < 0 || xs[v] >= w) continue;
              const double wt = wy[u] * wx[v] * norm;
              if (wt == 0) continue;
              bin.push_back({static_cast<std::size_t>(ys[u]) * w + xs[v], wt});
            }
          }
        }
      }
    }
  }
  return taps;
}

}  // namespace

template <typename T>
void roi_align_forward(const Tensor<T>& features, std::span<const BoxSpec> boxes,
                       const RoiAlignParams& p, Tensor<T>& out) {
  const Shape fs = features.shape();
  validate_boxes(boxes, fs.n);
  const int k = static_cast<int>(boxes.size());
  const Shape os{k, fs.c, p.out_size, p.out_size};
  if (out.shape() != os) out = Tensor<T>(os);
  if (k == 0) return;
  std::vector<std::vector<std::vector<Tap>>> taps(k);
  for (int b = 0; b < k; ++b) taps[b] = roi_taps(boxes[b], p, fs.h, fs.w);
  const std::size_t bins = static_cast<std::size_t>(p.out_size) * p.out_size;
  parallel_for(static_cast<std::int64_t>(k) * fs.c, [&](std::int64_t kc) {
    const int b = static_cast<int>(kc / fs.c), c = static_cast<int>(kc % fs.c);
    const T* plane = features.data() + features.offset(boxes[b].batch_index, c, 0, 0);
    T* dst = out.data() + out.offset(b, c, 0, 0);
    for (std::size_t bin = 0; bin < bins; ++bin) {
      double acc = 0;
      for (const auto& t : taps[b][bin]) acc += t.weight * plane[t.offset];
      dst[bin] = static_cast<T>(acc);
    }
  });
}

template <typename T>
void roi_align_backward(std::span<const BoxSpec> boxes, const RoiAlignParams& p,
                        const Tensor<T>& dout, Tensor<T>& dfeatures) {
  const Shape fs = dfeatures.shape();
  validate_boxes(boxes, fs.n);
  const int k = static_cast<int>(boxes.size());
  if (k == 0) return;
  std::vector<std::vector<std::vector<Tap>>> taps(k);
  for (int b = 0; b < k; ++b) taps[b] = roi_taps(boxes[b], p, fs.h, fs.w);
  const std::size_t bins = static_cast<std::size_t>(p.out_size) * p.out_size;
  // Channels are independent; boxes within a channel are applied in order.
  parallel_for(fs.c, [&](std::int64_t c) {
    for (int b = 0; b < k; ++b) {
      T* plane = dfeatures.data() + dfeatures.offset(boxes[b].batch_index, static_cast<int>(c), 0, 0);
      const T* src = dout.data() + dout.offset(b, static_cast<int>(c), 0, 0);
      for (std::size_t bin = 0; bin < bins; ++bin)
        for (const auto& t : taps[b][bin]) plane[t.offset] += static_cast<T>(t.weight * src[bin]);
    }
  });
}

namespace {
inline int reflect101(int i, int n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * (n - 1) - i;
  return i;
}
}  // namespace

template <typename T>
void reflect_pad_forward(const Tensor<T>& x, int pad, Tensor<T>& y) {
  const Shape s = x.shape();
  if (pad < 0 || pad >= s.h || pad >= s.w) throw ShapeMismatch("reflect pad must be < spatial dims");
  const Shape os{s.n, s.c, s.h + 2 * pad, s.w + 2 * pad};
  if (y.shape() != os) y = Tensor<T>(os);
  parallel_for(static_cast<std::int64_t>(s.n) * s.c, [&](std::int64_t nc) {
    const T* src = x.data() + nc * s.plane();
    T* dst = y.data() + nc * os.plane();
    for (int oy = 0; oy < os.h; ++oy) {
      const int iy = reflect101(oy - pad, s.h);
      for (int ox = 0; ox < os.w; ++ox)
        dst[static_cast<std::size_t>(oy) * os.w + ox] =
            src[static_cast<std::size_t>(iy) * s.w + reflect101(ox - pad, s.w)];
    }
  });
}

template <typename T>
void reflect_pad_backward(const Tensor<T>& dy, int pad, Tensor<T>& dx) {
  const Shape os = dy.shape();
  const Shape s{os.n, os.c, os.h - 2 * pad, os.w - 2 * pad};
  if (dx.shape() != s) dx = Tensor<T>(s);
  parallel_for(static_cast<std::int64_t>(s.n) * s.c, [&](std::int64_t nc) {
    const T* src = dy.data() + nc * os.plane();
    T* dst = dx.data() + nc * s.plane();
    std::fill(dst, dst + s.plane(), T{0});
    for (int oy = 0; oy < os.h; ++oy) {
      const int iy = reflect101(oy - pad, s.h);
      for (int ox = 0; ox < os.w; ++ox)
        dst[static_cast<std::size_t>(iy) * s.w + reflect101(ox - pad, s.w)] +=
            src[static_cast<std::size_t>(oy) * os.w + ox];
    }
  });
}

#define STAINFORGE_INSTANTIATE(T)                                                               \
  template void conv2d_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*,         \
                                  ConvGeometry, Tensor<T>&);                                    \
  template void conv2d_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                                   ConvGeometry, Tensor<T>*, Tensor<T>*, Tensor<T>*);           \
  template void conv_transpose2d_forward<T>(const Tensor<T>&, const Tensor<T>&,                 \
                                            const Tensor<T>*, ConvGeometry, Tensor<T>&);        \
  template void conv_transpose2d_backward<T>(const Tensor<T>&, const Tensor<T>&,                \
                                             const Tensor<T>&, ConvGeometry, Tensor<T>*,        \
                                             Tensor<T>*, Tensor<T>*);                           \
  template void instance_norm_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                         double, Tensor<T>&, std::vector<double>&,              \
                                         std::vector<double>&);                                 \
  template void instance_norm_backward<T>(const Tensor<T>&, const Tensor<T>&,                   \
                                          const std::vector<double>&,                           \
                                          const std::vector<double>&, const Tensor<T>&,         \
                                          Tensor<T>*, Tensor<T>*, Tensor<T>*);                  \
  template void roi_align_forward<T>(const Tensor<T>&, std::span<const BoxSpec>,                \
                                     const RoiAlignParams&, Tensor<T>&);                        \
  template void roi_align_backward<T>(std::span<const BoxSpec>, const RoiAlignParams&,          \
                                      const Tensor<T>&, Tensor<T>&);                            \
  template void reflect_pad_forward<T>(const Tensor<T>&, int, Tensor<T>&);                      \
  template void reflect_pad_backward<T>(const Tensor<T>&, int, Tensor<T>&);

STAINFORGE_INSTANTIATE(float)
STAINFORGE_INSTANTIATE(double)
#undef STAINFORGE_INSTANTIATE

}  // namespace kernels
}  // namespace stainforge::nn
