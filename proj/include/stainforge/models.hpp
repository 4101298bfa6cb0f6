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

// Network definitions: residual generator, PatchGAN discriminators and the
// region (RoIAlign) discriminator.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "stainforge/nn/checkpoint.hpp"
#include "stainforge/nn/kernels.hpp"
#include "stainforge/nn/module.hpp"

namespace stainforge::models {

struct GeneratorConfig {
  int n_res_blocks = 6;
  /// Width of the residual trunk; the stem runs at /4 and /2 of it.
  int base_channels = 64;
  int in_channels = 3;
  int out_channels = 3;
  /// Permits block counts other than 6 or 9 (desk-scale runs, tests).
  bool allow_any_depth = false;

  void validate() const;
};

/// reflect-pad 7x7 conv -> two stride-2 convs -> residual blocks -> two
/// stride-2 transposed convs -> reflect-pad 7x7 conv -> tanh.
template <typename T>
class Generator : public nn::Module<T> {
 public:
  Generator(const GeneratorConfig& cfg, std::uint64_t seed);

  /// x: (N, 3, H, W) with H and W divisible by 4. Output has the same shape.
  nn::Var<T> forward(const nn::Var<T>& x) const;
  const GeneratorConfig& config() const { return cfg_; }

 private:
  struct Conv {
    nn::Var<T> weight;
    nn::Var<T> bias;  // undefined when followed by a norm
    nn::ConvGeometry geometry;
  };
  struct Norm {
    nn::Var<T> gamma;
    nn::Var<T> beta;
  };
  struct ResBlock {
    Conv conv1, conv2;
    Norm norm1, norm2;
  };

  Conv make_conv(const std::string& name, int cin, int cout, int k, nn::ConvGeometry g,
                 bool bias, bool transposed, std::mt19937_64& rng);
  Norm make_norm(const std::string& name, int channels);

  GeneratorConfig cfg_;
  Conv stem_, down1_, down2_, up1_, up2_, head_;
  Norm stem_norm_, down1_norm_, down2_norm_, up1_norm_, up2_norm_;
  std::vector<ResBlock> blocks_;
};

enum class PatchVariant { kGrid8, kGrid16, kGrid32 };

PatchVariant parse_patch_variant(const std::string& s);
std::string to_string(PatchVariant v);

struct PatchDiscriminatorConfig {
  PatchVariant variant = PatchVariant::kGrid8;
  /// First-layer width; the plan is b, 2b, 4b, 8b, 8b.
  int base_channels = 64;
};

/// Five feature convolutions plus a 3x3 output conv. Stride-2 layers use 4x4
/// kernels; layers switched to stride 1 use 3x3 kernels so they keep size.
template <typename T>
class PatchDiscriminator : public nn::Module<T> {
 public:
  PatchDiscriminator(const PatchDiscriminatorConfig& cfg, std::uint64_t seed);

  /// (N, 1, h, w) grid of scores.
  nn::Var<T> forward(const nn::Var<T>& x) const;
  const PatchDiscriminatorConfig& config() const { return cfg_; }

 private:
  struct Layer {
    nn::Var<T> weight, bias, gamma, beta;
    nn::ConvGeometry geometry;
    bool normalized = false;
  };
  PatchDiscriminatorConfig cfg_;
  std::vector<Layer> layers_;
  nn::Var<T> out_weight_, out_bias_;
};

struct RoiDiscriminatorConfig {
  int base_channels = 64;
  /// RoIAlign output side; the final layer is a valid conv of the same size,
  /// so pool_size = 1 turns it into a linear layer.
  int pool_size = 3;
  double spatial_scale = 1.0 / 16.0;
  int samples_per_bin = 2;
  /// Instance norm after f's layers 2-4. With it off every score depends only
  /// on pixels inside the receptive field of its pooled support.
  bool normalize = true;
};

/// f: four stride-2 convs; rho: RoIAlign; d: one score per box.
template <typename T>
class RoiDiscriminator : public nn::Module<T> {
 public:
  RoiDiscriminator(const RoiDiscriminatorConfig& cfg, std::uint64_t seed);

  /// Feature map at 1/16 resolution.
  nn::Var<T> features(const nn::Var<T>& x) const;
  /// (K, 1, 1, 1) scores in box order. Box coordinates are image pixels.
  nn::Var<T> forward(const nn::Var<T>& x, std::span<const nn::BoxSpec> boxes) const;
  const RoiDiscriminatorConfig& config() const { return cfg_; }

 private:
  struct Layer {
    nn::Var<T> weight, bias, gamma, beta;
    bool normalized = false;
  };
  RoiDiscriminatorConfig cfg_;
  std::vector<Layer> layers_;
  nn::Var<T> d_weight_, d_bias_;
};

/// Copies parameters into checkpoint blocks named prefix + parameter name.
void export_parameters(const nn::Module<float>& m, const std::string& prefix, nn::Checkpoint& ckpt);
/// Loads parameters; throws IoError on a missing block or shape mismatch.
void import_parameters(nn::Module<float>& m, const std::string& prefix, const nn::Checkpoint& ckpt);

}  // namespace stainforge::models
