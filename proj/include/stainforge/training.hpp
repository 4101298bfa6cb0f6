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

// Translation objective and training loop: least-squares adversarial terms
// for both generators, cycle and identity L1 terms, and region adversarial
// terms scored at library boxes.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "stainforge/cell_library.hpp"
#include "stainforge/imgproc.hpp"
#include "stainforge/models.hpp"
#include "stainforge/nn/adam.hpp"
#include "stainforge/nn/ops.hpp"

namespace stainforge {

/// A training step produced NaN or Inf; the message names step and phase.
class NonFiniteLoss : public NonFiniteError {
 public:
  using NonFiniteError::NonFiniteError;
};

}  // namespace stainforge

namespace stainforge::training {

enum class DiscriminatorMode { kPatchOnly, kRoiOnly, kPatchPlusRoi };

std::string to_string(DiscriminatorMode m);
DiscriminatorMode parse_discriminator_mode(const std::string& s);
inline bool uses_patch(DiscriminatorMode m) { return m != DiscriminatorMode::kRoiOnly; }
inline bool uses_roi(DiscriminatorMode m) { return m != DiscriminatorMode::kPatchOnly; }

struct LossWeights {
  double lambda_cyc = 10;
  double lambda_id = 5;
  void validate() const;
};

/// Network shapes and tile geometry used together.
struct ModelProfile {
  int tile_size = 256;
  int box_size = 48;
  models::GeneratorConfig generator;
  models::PatchDiscriminatorConfig patch;
  models::RoiDiscriminatorConfig roi;

  /// 64 x 64 tiles, 16 channels, 2 residual blocks, 16 px boxes.
  static ModelProfile desk();
  void validate() const;
};

struct RunConfig {
  int epochs = 20;
  int batch_size = 8;
  /// Boxes sampled per tile for the region terms.
  int k = 8;
  nn::AdamConfig adam;
  /// Only "constant" is implemented.
  std::string lr_schedule = "constant";
  LossWeights weights;
  DiscriminatorMode mode = DiscriminatorMode::kPatchPlusRoi;
  std::uint64_t seed = 0;
  bool desk_scale = false;
  ModelProfile profile;
  /// Stops after this many steps in total; 0 means run every epoch.
  std::int64_t max_steps = 0;

  /// Applies the desk profile (and sets desk_scale).
  void use_desk_profile();
  void validate() const;
};

/// One line of `key = value` text per field under [run], [weights], [adam],
/// [generator], [patch], [roi] sections.
std::string run_config_text(const RunConfig& cfg);
void save_run_config(const std::filesystem::path& path, const RunConfig& cfg);
/// Missing keys keep their defaults; `desk_scale = true` applies the desk
/// profile before the remaining keys are read. Throws ConfigError.
RunConfig load_run_config(const std::filesystem::path& path);
/// Every dotted key accepted by set_run_config_value, in text order.
std::vector<std::string> run_config_keys();
/// Sets one dotted key (e.g. "run.batch_size") from text. Throws ConfigError.
void set_run_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

struct LossRecord {
  std::int64_t step = 0;
  double gan_xy = 0;
  double gan_yx = 0;
  double cyc = 0;
  double id = 0;
  double roi_x = 0;
  double roi_y = 0;
  double d_x = 0;
  double d_y = 0;
  double d_roi_x = 0;
  double d_roi_y = 0;
  /// Generator objective as optimized.
  double g_total = 0;
  friend bool operator==(const LossRecord&, const LossRecord&) = default;
};

/// g_total recomputed from the other fields under the given weights and mode.
double recompose_generator_loss(const LossRecord& r, const LossWeights& w, DiscriminatorMode mode);

/// 1/2 mean((real - 1)^2) + 1/2 mean(fake^2). An empty side contributes 0.
template <typename T>
nn::Var<T> lsgan_discriminator_loss(const nn::Var<T>& real_scores, const nn::Var<T>& fake_scores);
/// 1/2 mean((fake - 1)^2).
template <typename T>
nn::Var<T> lsgan_generator_loss(const nn::Var<T>& fake_scores);
/// mean|x - x_rec| + mean|y - y_rec|. Throws ShapeMismatch.
template <typename T>
nn::Var<T> cycle_loss(const nn::Var<T>& x, const nn::Var<T>& x_rec, const nn::Var<T>& y,
                      const nn::Var<T>& y_rec);

template <typename T>
using Translator = std::function<nn::Var<T>(const nn::Var<T>&)>;

/// mean|g_xy(y) - y| + mean|g_yx(x) - x|. Throws ShapeMismatch.
template <typename T>
nn::Var<T> identity_loss(const Translator<T>& g_xy, const Translator<T>& g_yx, const nn::Var<T>& x,
                         const nn::Var<T>& y);

template <typename T>
using RoiScorer = std::function<nn::Var<T>(const nn::Var<T>&, std::span<const nn::BoxSpec>)>;

/// Boxes sampled for every sample of a batch; samples without boxes are
/// excluded from the region terms.
struct BatchBoxes {
  std::vector<nn::BoxSpec> boxes;
  /// Number of batch samples that contributed boxes.
  int eligible = 0;
};

/// Region adversarial terms for one domain's discriminator.
template <typename T>
struct RoiTerms {
  /// 1/2 mean((D(real, B_real) - 1)^2) + 1/2 mean(D(fake, B_fake)^2)
  nn::Var<T> d_side;
  /// 1/2 mean((D(fake, B_fake) - 1)^2)
  nn::Var<T> g_side;
};

/// `fake` is the translation of the tiles that own `fake_boxes`; those boxes
/// are applied to it unchanged. Every term over an empty box set is 0.
template <typename T>
RoiTerms<T> roi_adversarial_losses(const RoiScorer<T>& d_roi, const nn::Var<T>& real,
                                   const BatchBoxes& real_boxes, const nn::Var<T>& fake,
                                   const BatchBoxes& fake_boxes);

/// Both generators, the four discriminators and their optimizers.
struct TranslationModel {
  TranslationModel(const RunConfig& cfg);

  models::Generator<float> g_xy;
  models::Generator<float> g_yx;
  models::PatchDiscriminator<float> d_x;
  models::PatchDiscriminator<float> d_y;
  models::RoiDiscriminator<float> d_roi_x;
  models::RoiDiscriminator<float> d_roi_y;
  nn::Adam<float> opt_g;
  nn::Adam<float> opt_d_x;
  nn::Adam<float> opt_d_y;
  nn::Adam<float> opt_d_roi_x;
  nn::Adam<float> opt_d_roi_y;

  std::uint64_t generator_fingerprint() const;
  std::uint64_t discriminator_fingerprint() const;
};

/// Parameters and optimizer moments of every network, plus `meta`.
nn::Checkpoint make_checkpoint(const TranslationModel& m,
                               const std::map<std::string, std::string>& meta);
/// Throws IoError when blocks are missing or mis-shaped.
void restore_checkpoint(TranslationModel& m, const nn::Checkpoint& ckpt);
/// Loads only G_XY from a training checkpoint.
void load_generator(models::Generator<float>& g, const nn::Checkpoint& ckpt,
                    const std::string& prefix = "g_xy.");

/// (1, 3, H, W) with v / 127.5 - 1.
nn::Tensor<float> to_tensor(const imgproc::RgbImage& img);
/// Batch of equally sized images.
nn::Tensor<float> to_tensor(const std::vector<const imgproc::RgbImage*>& imgs);
/// Sample n of a batch back to 8-bit, rounding (v + 1) * 127.5.
imgproc::RgbImage to_image(const nn::Tensor<float>& t, int n = 0);
/// Runs g without recording a graph.
imgproc::RgbImage translate(const models::Generator<float>& g, const imgproc::RgbImage& img);

struct TrainingTile {
  std::string id;
  imgproc::RgbImage image;
};

struct StepBatch {
  nn::Tensor<float> x;
  nn::Tensor<float> y;
  BatchBoxes boxes_x;
  BatchBoxes boxes_y;
};

/// Stacks the tiles and samples k boxes per tile from the library.
StepBatch make_step_batch(const std::vector<const TrainingTile*>& xs,
                          const std::vector<const TrainingTile*>& ys,
                          const library::CellLibrary& lib, int k, std::uint64_t seed);

/// One alternating update: generators on the full objective, then each
/// discriminator on its own term against the pre-update translations.
/// Throws NonFiniteLoss.
LossRecord train_step(TranslationModel& m, const StepBatch& batch, const RunConfig& cfg,
                      std::int64_t step);

/// ceil(max(n_x, n_y) / batch_size).
std::int64_t steps_per_epoch(std::size_t n_x, std::size_t n_y, int batch_size);

/// Called after every step; return false to stop early.
using StepCallback = std::function<bool(const LossRecord&)>;

struct TrainOptions {
  /// Checkpoints, loss log and config snapshot go here; empty keeps
  /// everything in memory.
  std::filesystem::path out_dir;
  /// Continue from the newest epoch checkpoint in out_dir.
  bool resume = false;
  StepCallback on_step = {};
};

/// Columns of the loss log, in order.
const std::vector<std::string>& loss_log_columns();

/// Runs cfg.epochs epochs (fewer under max_steps). Every epoch samples both
/// domains independently in a fresh shuffled order. Throws IoError.
std::vector<LossRecord> train(TranslationModel& m, const std::vector<TrainingTile>& xs,
                              const std::vector<TrainingTile>& ys, const library::CellLibrary& lib,
                              const RunConfig& cfg, const TrainOptions& opts = {});

}  // namespace stainforge::training
