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

// Serial nested-loop kernels. Deliberately naive: these are the oracles.

#include <cmath>

#include "stainforge/nn/kernels.hpp"

namespace stainforge::nn::ref {

template <typename T>
void conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                    ConvGeometry g, Tensor<T>& y) {
  const Shape ys = conv2d_out_shape(x.shape(), w.shape(), g);
  y = Tensor<T>(ys);
  const Shape xs = x.shape();
  const int k = w.shape().h;
  for (int n = 0; n < ys.n; ++n)
    for (int co = 0; co < ys.c; ++co)
      for (int oy = 0; oy < ys.h; ++oy)
        for (int ox = 0; ox < ys.w; ++ox) {
          double acc = bias ? static_cast<double>((*bias)[co]) : 0.0;
          for (int ci = 0; ci < xs.c; ++ci)
            for (int ki = 0; ki < k; ++ki)
              for (int kj = 0; kj < k; ++kj) {
                const int iy = oy * g.stride - g.pad + ki;
                const int ix = ox * g.stride - g.pad + kj;
                if (iy < 0 || ix < 0 || iy >= xs.h || ix >= xs.w) continue;
                acc += static_cast<double>(x.at(n, ci, iy, ix)) * w.at(co, ci, ki, kj);
              }
          y.at(n, co, oy, ox) = static_cast<T>(acc);
        }
}

template <typename T>
void conv_transpose2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                              ConvGeometry g, Tensor<T>& y) {
  const Shape ys = conv_transpose2d_out_shape(x.shape(), w.shape(), g);
  const Shape xs = x.shape();
  const int k = w.shape().h;
  std::vector<double> acc(ys.numel(), 0.0);
  auto idx = [&](int n, int c, int yy, int xx) {
    return ((static_cast<std::size_t>(n) * ys.c + c) * ys.h + yy) * ys.w + xx;
  };
  for (int n = 0; n < xs.n; ++n)
    for (int ci = 0; ci < xs.c; ++ci)
      for (int iy = 0; iy < xs.h; ++iy)
        for (int ix = 0; ix < xs.w; ++ix) {
          const double v = x.at(n, ci, iy, ix);
          for (int co = 0; co < ys.c; ++co)
            for (int ki = 0; ki < k; ++ki)
              for (int kj = 0; kj < k; ++kj) {
                const int oy = iy * g.stride - g.pad + ki;
                const int ox = ix * g.stride - g.pad + kj;
                if (oy < 0 || ox < 0 || oy >= ys.h || ox >= ys.w) continue;
                acc[idx(n, co, oy, ox)] += v * w.at(ci, co, ki, kj);
              }
        }
  y = Tensor<T>(ys);
  for (int n = 0; n < ys.n; ++n)
    for (int c = 0; c < ys.c; ++c)
      for (int yy = 0; yy < ys.h; ++yy)
        for (int xx = 0; xx < ys.w; ++xx)
          y.at(n, c, yy, xx) =
              static_cast<T>(acc[idx(n, c, yy, xx)] + (bias ? static_cast<double>((*bias)[c]) : 0.0));
}

template <typename T>
void instance_norm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                           double eps, Tensor<T>& y) {
  const Shape s = x.shape();
  y = Tensor<T>(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      double mean = 0;
      for (int i = 0; i < s.h; ++i)
        for (int j = 0; j < s.w; ++j) mean += x.at(n, c, i, j);
      mean /= s.h * s.w;
      double var = 0;
      for (int i = 0; i < s.h; ++i)
        for (int j = 0; j < s.w; ++j) {
          const double d = x.at(n, c, i, j) - mean;
          var += d * d;
        }
      var /= s.h * s.w;
      for (int i = 0; i < s.h; ++i)
        for (int j = 0; j < s.w; ++j)
          y.at(n, c, i, j) = static_cast<T>((x.at(n, c, i, j) - mean) / std::sqrt(var + eps) *
                                                gamma[c] +
                                            beta[c]);
    }
}

namespace {

template <typename T>
double bilinear_zero(const Tensor<T>& f, int n, int c, double y, double x) {
  const Shape s = f.shape();
  const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
  double v = 0;
  for (int yy = y0; yy <= y0 + 1; ++yy)
    for (int xx = x0; xx <= x0 + 1; ++xx) {
      if (yy < 0 || xx < 0 || yy >= s.h || xx >= s.w) continue;
      v += (1.0 - std::abs(y - yy)) * (1.0 - std::abs(x - xx)) * f.at(n, c, yy, xx);
    }
  return v;
}

}  // namespace

template <typename T>
void roi_align_forward(const Tensor<T>& features, std::span<const BoxSpec> boxes,
                       const RoiAlignParams& p, Tensor<T>& out) {
  validate_boxes(boxes, features.shape().n);
  const int k = static_cast<int>(boxes.size());
  out = Tensor<T>({k, features.shape().c, p.out_size, p.out_size});
  for (int b = 0; b < k; ++b) {
    const auto& box = boxes[b];
    const double x0 = box.x0 * p.spatial_scale, y0 = box.y0 * p.spatial_scale;
    const double bw = (box.x1 - box.x0) * p.spatial_scale / p.out_size;
    const double bh = (box.y1 - box.y0) * p.spatial_scale / p.out_size;
    for (int c = 0; c < features.shape().c; ++c)
      for (int i = 0; i < p.out_size; ++i)
        for (int j = 0; j < p.out_size; ++j) {
          double sum = 0;
          for (int a = 0; a < p.samples_per_bin; ++a)
            for (int e = 0; e < p.samples_per_bin; ++e) {
              const double sy = y0 + i * bh + (a + 0.5) * bh / p.samples_per_bin;
              const double sx = x0 + j * bw + (e + 0.5) * bw / p.samples_per_bin;
              sum += bilinear_zero(features, box.batch_index, c, sy - 0.5, sx - 0.5);
            }
          out.at(b, c, i, j) = static_cast<T>(sum / (p.samples_per_bin * p.samples_per_bin));
        }
  }
}

#define STAINFORGE_INSTANTIATE(T)                                                               \
  template void conv2d_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*,         \
                                  ConvGeometry, Tensor<T>&);                                    \
  template void conv_transpose2d_forward<T>(const Tensor<T>&, const Tensor<T>&,                 \
                                            const Tensor<T>*, ConvGeometry, Tensor<T>&);        \
  template void instance_norm_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                         double, Tensor<T>&);                                   \
  template void roi_align_forward<T>(const Tensor<T>&, std::span<const BoxSpec>,                \
                                     const RoiAlignParams&, Tensor<T>&);

STAINFORGE_INSTANTIATE(float)
STAINFORGE_INSTANTIATE(double)
#undef STAINFORGE_INSTANTIATE

}  // namespace stainforge::nn::ref
