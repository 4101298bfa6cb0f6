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

// Compute kernels behind the differentiable ops.
//
// Two families share one signature style:
//   * stainforge::nn::kernels: im2col + GEMM, OpenMP-parallel over the batch
//     (or over channels where the batch is not the natural split).
//   * stainforge::nn::ref: plain nested loops, single-threaded. Kept as the
//     oracle for tests and as the baseline in bench/.
//
// Per-sample partial sums (weight and affine gradients) are reduced in sample
// order, so results do not depend on the thread count.

#include <span>
#include <vector>

#include "stainforge/nn/tensor.hpp"

namespace stainforge::nn {

struct ConvGeometry {
  int stride = 1;
  int pad = 0;
};

/// Region to pool, in input-image pixel units. Pixel i spans [i, i + 1).
struct BoxSpec {
  int batch_index = 0;
  double x0 = 0;
  double y0 = 0;
  double x1 = 0;
  double y1 = 0;
  friend bool operator==(const BoxSpec&, const BoxSpec&) = default;
};

struct RoiAlignParams {
  int out_size = 3;
  double spatial_scale = 1.0 / 16.0;
  int samples_per_bin = 2;
};

int conv_out_dim(int in, int kernel, ConvGeometry g);
int conv_transpose_out_dim(int in, int kernel, ConvGeometry g);
Shape conv2d_out_shape(const Shape& x, const Shape& w, ConvGeometry g);
/// Weight layout for the transposed convolution is (C_in, C_out, k, k).
Shape conv_transpose2d_out_shape(const Shape& x, const Shape& w, ConvGeometry g);
void validate_boxes(std::span<const BoxSpec> boxes, int batch);

namespace kernels {

template <typename T>
void conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                    ConvGeometry g, Tensor<T>& y);
/// Any of dx / dw / db may be null. dw and db are overwritten, dx too.
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                     ConvGeometry g, Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db);

template <typename T>
void conv_transpose2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                              ConvGeometry g, Tensor<T>& y);
template <typename T>
void conv_transpose2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                               ConvGeometry g, Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db);

/// mean / invstd are sized N*C and filled for the backward pass.
template <typename T>
void instance_norm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                           double eps, Tensor<T>& y, std::vector<double>& mean,
                           std::vector<double>& invstd);
template <typename T>
void instance_norm_backward(const Tensor<T>& x, const Tensor<T>& gamma,
                            const std::vector<double>& mean, const std::vector<double>& invstd,
                            const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>* dgamma,
                            Tensor<T>* dbeta);

template <typename T>
void roi_align_forward(const Tensor<T>& features, std::span<const BoxSpec> boxes,
                       const RoiAlignParams& p, Tensor<T>& out);
/// Accumulates into dfeatures (caller zeroes it).
template <typename T>
void roi_align_backward(std::span<const BoxSpec> boxes, const RoiAlignParams& p,
                        const Tensor<T>& dout, Tensor<T>& dfeatures);

/// Mirror padding without repeating the edge sample; pad < H and pad < W.
template <typename T>
void reflect_pad_forward(const Tensor<T>& x, int pad, Tensor<T>& y);
template <typename T>
void reflect_pad_backward(const Tensor<T>& dy, int pad, Tensor<T>& dx);

}  // namespace kernels

namespace ref {

template <typename T>
void conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                    ConvGeometry g, Tensor<T>& y);
/// Scatter formulation: every input pixel spreads its kernel footprint.
template <typename T>
void conv_transpose2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                              ConvGeometry g, Tensor<T>& y);
/// Two-pass mean then variance.
template <typename T>
void instance_norm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                           double eps, Tensor<T>& y);
template <typename T>
void roi_align_forward(const Tensor<T>& features, std::span<const BoxSpec> boxes,
                       const RoiAlignParams& p, Tensor<T>& out);

}  // namespace ref

}  // namespace stainforge::nn
