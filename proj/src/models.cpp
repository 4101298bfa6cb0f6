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

#include "stainforge/models.hpp"

#include <random>

#include "stainforge/nn/ops.hpp"

namespace stainforge::models {

using nn::ConvGeometry;
using nn::Shape;
using nn::Tensor;
using nn::Var;

namespace {
constexpr double kInitStd = 0.02;
constexpr double kLeakySlope = 0.2;
}  // namespace

void GeneratorConfig::validate() const {
  if (base_channels < 4) throw InvalidArgument("generator base_channels must be >= 4");
  if (n_res_blocks < 0) throw InvalidArgument("generator n_res_blocks must be >= 0");
  if (!allow_any_depth && n_res_blocks != 6 && n_res_blocks != 9)
    throw InvalidArgument("generator n_res_blocks must be 6 or 9 (set allow_any_depth to override)");
  if (in_channels < 1 || out_channels < 1) throw InvalidArgument("generator channel counts");
}

template <typename T>
typename Generator<T>::Conv Generator<T>::make_conv(const std::string& name, int cin, int cout,
                                                    int k, ConvGeometry g, bool bias,
                                                    bool transposed, std::mt19937_64& rng) {
  Conv c;
  const Shape ws = transposed ? Shape{cin, cout, k, k} : Shape{cout, cin, k, k};
  c.weight = this->add_parameter(name + ".weight", Tensor<T>::randn(ws, kInitStd, rng));
  if (bias) c.bias = this->add_parameter(name + ".bias", Tensor<T>({1, cout, 1, 1}));
  c.geometry = g;
  return c;
}

template <typename T>
typename Generator<T>::Norm Generator<T>::make_norm(const std::string& name, int channels) {
  Norm n;
  n.gamma = this->add_parameter(name + ".gamma", Tensor<T>({1, channels, 1, 1}, T{1}));
  n.beta = this->add_parameter(name + ".beta", Tensor<T>({1, channels, 1, 1}));
  return n;
}

template <typename T>
Generator<T>::Generator(const GeneratorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const int c3 = cfg.base_channels, c2 = c3 / 2, c1 = c3 / 4;
  stem_ = make_conv("stem", cfg.in_channels, c1, 7, {1, 0}, false, false, rng);
  stem_norm_ = make_norm("stem.norm", c1);
  down1_ = make_conv("down1", c1, c2, 3, {2, 1}, false, false, rng);
  down1_norm_ = make_norm("down1.norm", c2);
  down2_ = make_conv("down2", c2, c3, 3, {2, 1}, false, false, rng);
  down2_norm_ = make_norm("down2.norm", c3);
  for (int i = 0; i < cfg.n_res_blocks; ++i) {
    const std::string p = "res" + std::to_string(i);
    ResBlock b;
    b.conv1 = make_conv(p + ".conv1", c3, c3, 3, {1, 0}, false, false, rng);
    b.norm1 = make_norm(p + ".norm1", c3);
    b.conv2 = make_conv(p + ".conv2", c3, c3, 3, {1, 0}, false, false, rng);
    b.norm2 = make_norm(p + ".norm2", c3);
    blocks_.push_back(std::move(b));
  }
  up1_ = make_conv("up1", c3, c2, 4, {2, 1}, false, true, rng);
  up1_norm_ = make_norm("up1.norm", c2);
  up2_ = make_conv("up2", c2, c1, 4, {2, 1}, false, true, rng);
  up2_norm_ = make_norm("up2.norm", c1);
  head_ = make_conv("head", c1, cfg.out_channels, 7, {1, 0}, true, false, rng);
}

template <typename T>
Var<T> Generator<T>::forward(const Var<T>& x) const {
  const Shape s = x.shape();
  if (s.c != cfg_.in_channels) throw ShapeMismatch("generator input channels " + s.str());
  if (s.h % 4 != 0 || s.w % 4 != 0)
    throw ShapeMismatch("generator input side must be divisible by 4, got " + s.str());

  auto conv = [](const Var<T>& in, const Conv& c) {
    return nn::conv2d(in, c.weight, c.bias, c.geometry);
  };
  auto norm_relu = [](const Var<T>& in, const Norm& n) {
    return nn::relu(nn::instance_norm(in, n.gamma, n.beta));
  };

  Var<T> h = norm_relu(conv(nn::reflect_pad(x, 3), stem_), stem_norm_);
  h = norm_relu(conv(h, down1_), down1_norm_);
  h = norm_relu(conv(h, down2_), down2_norm_);
  for (const auto& b : blocks_) {
    Var<T> r = norm_relu(conv(nn::reflect_pad(h, 1), b.conv1), b.norm1);
    r = nn::instance_norm(conv(nn::reflect_pad(r, 1), b.conv2), b.norm2.gamma, b.norm2.beta);
    h = nn::add(h, r);
  }
  h = norm_relu(nn::conv_transpose2d(h, up1_.weight, up1_.bias, up1_.geometry), up1_norm_);
  h = norm_relu(nn::conv_transpose2d(h, up2_.weight, up2_.bias, up2_.geometry), up2_norm_);
  return nn::tanh(conv(nn::reflect_pad(h, 3), head_));
}

PatchVariant parse_patch_variant(const std::string& s) {
  if (s == "grid8" || s == "8") return PatchVariant::kGrid8;
  if (s == "grid16" || s == "16") return PatchVariant::kGrid16;
  if (s == "grid32" || s == "32") return PatchVariant::kGrid32;
  throw ConfigError("unknown patch variant '" + s + "' (expected grid8, grid16 or grid32)");
}

std::string to_string(PatchVariant v) {
  switch (v) {
    case PatchVariant::kGrid8: return "grid8";
    case PatchVariant::kGrid16: return "grid16";
    case PatchVariant::kGrid32: return "grid32";
  }
  return "grid8";
}

template <typename T>
PatchDiscriminator<T>::PatchDiscriminator(const PatchDiscriminatorConfig& cfg, std::uint64_t seed)
    : cfg_(cfg) {
  if (cfg.base_channels < 1) throw InvalidArgument("discriminator base_channels must be >= 1");
  std::mt19937_64 rng(seed);
  const int b = cfg.base_channels;
  const int widths[5] = {b, 2 * b, 4 * b, 8 * b, 8 * b};
  const int stride1_layers = cfg.variant == PatchVariant::kGrid8    ? 0
                             : cfg.variant == PatchVariant::kGrid16 ? 1
                                                                    : 2;
  int cin = 3;
  for (int i = 0; i < 5; ++i) {
    Layer l;
    const bool stride1 = i < stride1_layers;
    const int k = stride1 ? 3 : 4;
    l.geometry = {stride1 ? 1 : 2, 1};
    l.normalized = i > 0;
    const std::string p = "conv" + std::to_string(i);
    l.weight = this->add_parameter(p + ".weight",
                                   Tensor<T>::randn({widths[i], cin, k, k}, kInitStd, rng));
    if (l.normalized) {
      l.gamma = this->add_parameter(p + ".norm.gamma", Tensor<T>({1, widths[i], 1, 1}, T{1}));
      l.beta = this->add_parameter(p + ".norm.beta", Tensor<T>({1, widths[i], 1, 1}));
    } else {
      l.bias = this->add_parameter(p + ".bias", Tensor<T>({1, widths[i], 1, 1}));
    }
    layers_.push_back(std::move(l));
    cin = widths[i];
  }
  out_weight_ = this->add_parameter("out.weight", Tensor<T>::randn({1, cin, 3, 3}, kInitStd, rng));
  out_bias_ = this->add_parameter("out.bias", Tensor<T>({1, 1, 1, 1}));
}

template <typename T>
Var<T> PatchDiscriminator<T>::forward(const Var<T>& x) const {
  if (x.shape().c != 3) throw ShapeMismatch("patch discriminator expects 3 channels, got " + x.shape().str());
  Var<T> h = x;
  for (const auto& l : layers_) {
    h = nn::conv2d(h, l.weight, l.bias, l.geometry);
    if (l.normalized) h = nn::instance_norm(h, l.gamma, l.beta);
    h = nn::leaky_relu(h, kLeakySlope);
  }
  return nn::conv2d(h, out_weight_, out_bias_, {1, 1});
}

template <typename T>
RoiDiscriminator<T>::RoiDiscriminator(const RoiDiscriminatorConfig& cfg, std::uint64_t seed)
    : cfg_(cfg) {
  if (cfg.base_channels < 1) throw InvalidArgument("roi discriminator base_channels must be >= 1");
  if (cfg.pool_size < 1) throw InvalidArgument("roi pool size must be >= 1");
  std::mt19937_64 rng(seed);
  const int b = cfg.base_channels;
  const int widths[4] = {b, 2 * b, 4 * b, 8 * b};
  int cin = 3;
  for (int i = 0; i < 4; ++i) {
    Layer l;
    l.normalized = cfg.normalize && i > 0;
    const std::string p = "f" + std::to_string(i);
    l.weight = this->add_parameter(p + ".weight",
                                   Tensor<T>::randn({widths[i], cin, 4, 4}, kInitStd, rng));
    if (l.normalized) {
      l.gamma = this->add_parameter(p + ".norm.gamma", Tensor<T>({1, widths[i], 1, 1}, T{1}));
      l.beta = this->add_parameter(p + ".norm.beta", Tensor<T>({1, widths[i], 1, 1}));
    } else {
      l.bias = this->add_parameter(p + ".bias", Tensor<T>({1, widths[i], 1, 1}));
    }
    layers_.push_back(std::move(l));
    cin = widths[i];
  }
  d_weight_ = this->add_parameter(
      "d.weight", Tensor<T>::randn({1, cin, cfg.pool_size, cfg.pool_size}, kInitStd, rng));
  d_bias_ = this->add_parameter("d.bias", Tensor<T>({1, 1, 1, 1}));
}

template <typename T>
Var<T> RoiDiscriminator<T>::features(const Var<T>& x) const {
  if (x.shape().c != 3) throw ShapeMismatch("roi discriminator expects 3 channels, got " + x.shape().str());
  Var<T> h = x;
  for (const auto& l : layers_) {
    h = nn::conv2d(h, l.weight, l.bias, {2, 1});
    if (l.normalized) h = nn::instance_norm(h, l.gamma, l.beta);
    h = nn::leaky_relu(h, kLeakySlope);
  }
  return h;
}

template <typename T>
Var<T> RoiDiscriminator<T>::forward(const Var<T>& x, std::span<const nn::BoxSpec> boxes) const {
  nn::validate_boxes(boxes, x.shape().n);
  const nn::RoiAlignParams p{cfg_.pool_size, cfg_.spatial_scale, cfg_.samples_per_bin};
  Var<T> pooled = nn::roi_align(features(x), boxes, p);
  return nn::conv2d(pooled, d_weight_, d_bias_, {1, 0});
}

template class Generator<float>;
template class Generator<double>;
template class PatchDiscriminator<float>;
template class PatchDiscriminator<double>;
template class RoiDiscriminator<float>;
template class RoiDiscriminator<double>;

void export_parameters(const nn::Module<float>& m, const std::string& prefix, nn::Checkpoint& ckpt) {
  for (const auto& p : m.parameters()) ckpt.blocks.emplace_back(prefix + p.name, p.var.value());
}

void import_parameters(nn::Module<float>& m, const std::string& prefix, const nn::Checkpoint& ckpt) {
  for (auto& p : m.parameters()) {
    const auto* t = ckpt.find(prefix + p.name);
    if (!t) throw IoError("checkpoint lacks block " + prefix + p.name);
    if (t->shape() != p.var.value().shape())
      throw IoError("checkpoint block " + prefix + p.name + " has shape " + t->shape().str() +
                    ", expected " + p.var.value().shape().str());
    p.var.mutable_value() = *t;
  }
}

}  // namespace stainforge::models
