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

#include "stainforge/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include <boost/lexical_cast.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "stainforge/errors.hpp"

namespace stainforge::training {

using nn::Tensor;
using nn::Var;

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix(splitmix(a) ^ b); }

template <typename T>
Var<T> zero_scalar() {
  return Var<T>(Tensor<T>({1, 1, 1, 1}));
}

}  // namespace

std::string to_string(DiscriminatorMode m) {
  switch (m) {
    case DiscriminatorMode::kPatchOnly:
      return "patch_only";
    case DiscriminatorMode::kRoiOnly:
      return "roi_only";
    case DiscriminatorMode::kPatchPlusRoi:
      return "patch_plus_roi";
  }
  return "?";
}

DiscriminatorMode parse_discriminator_mode(const std::string& s) {
  for (auto m : {DiscriminatorMode::kPatchOnly, DiscriminatorMode::kRoiOnly,
                 DiscriminatorMode::kPatchPlusRoi})
    if (s == to_string(m)) return m;
  throw InvalidArgument("unknown discriminator mode '" + s +
                        "' (expected patch_only, roi_only or patch_plus_roi)");
}

void LossWeights::validate() const {
  if (!(lambda_cyc >= 0) || !(lambda_id >= 0)) throw InvalidArgument("loss weights must be >= 0");
}

ModelProfile ModelProfile::desk() {
  ModelProfile p;
  p.tile_size = 64;
  p.box_size = 16;
  p.generator.n_res_blocks = 2;
  p.generator.base_channels = 16;
  p.generator.allow_any_depth = true;
  p.patch.base_channels = 16;
  p.roi.base_channels = 16;
  return p;
}

void ModelProfile::validate() const {
  generator.validate();
  if (tile_size < 16 || tile_size % 4) throw InvalidArgument("tile_size must be >= 16 and divisible by 4");
  if (box_size < 1 || box_size > tile_size) throw InvalidArgument("box_size must fit the tile");
  if (patch.base_channels < 1 || roi.base_channels < 1)
    throw InvalidArgument("discriminator base_channels must be >= 1");
  if (roi.pool_size < 1 || roi.samples_per_bin < 1 || !(roi.spatial_scale > 0))
    throw InvalidArgument("roi pooling parameters must be positive");
}

void RunConfig::use_desk_profile() {
  desk_scale = true;
  profile = ModelProfile::desk();
}

void RunConfig::validate() const {
  if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (k < 1) throw InvalidArgument("k must be >= 1");
  if (max_steps < 0) throw InvalidArgument("max_steps must be >= 0");
  if (!(adam.lr > 0) || !(adam.beta0 >= 0 && adam.beta0 < 1) || !(adam.beta1 >= 0 && adam.beta1 < 1) ||
      !(adam.eps > 0))
    throw InvalidArgument("adam constants out of range");
  if (lr_schedule != "constant") throw InvalidArgument("lr_schedule must be constant");
  weights.validate();
  profile.validate();
}

// ---------------------------------------------------------------- config file

namespace {

template <typename V>
V parse_value(const std::string& key, const std::string& text) {
  try {
    return boost::lexical_cast<V>(text);
  } catch (const boost::bad_lexical_cast&) {
    throw ConfigError("bad value '" + text + "' for " + key);
  }
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("bad boolean '" + text + "' for " + key);
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Field {
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string& key, const std::string&)> set;
};

template <typename V>
Field int_field(const char* key, V RunConfig::*member) {
  return {key, [member](const RunConfig& c) { return std::to_string(c.*member); },
          [member](RunConfig& c, const std::string& k, const std::string& v) {
            c.*member = parse_value<V>(k, v);
          }};
}

template <typename Get, typename Set>
Field field(const char* key, Get get, Set set) {
  return {key, get, set};
}

#define SF_DOUBLE(key, expr)                                                                      \
  field(                                                                                          \
      key, [](const RunConfig& c) { return format_double(c.expr); },                              \
      [](RunConfig& c, const std::string& k, const std::string& v) { c.expr = parse_value<double>(k, v); })
#define SF_INT(key, expr)                                                                         \
  field(                                                                                          \
      key, [](const RunConfig& c) { return std::to_string(c.expr); },                             \
      [](RunConfig& c, const std::string& k, const std::string& v) { c.expr = parse_value<int>(k, v); })
#define SF_BOOL(key, expr)                                                                        \
  field(                                                                                          \
      key, [](const RunConfig& c) { return std::string(c.expr ? "true" : "false"); },             \
      [](RunConfig& c, const std::string& k, const std::string& v) { c.expr = parse_bool(k, v); })

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      SF_BOOL("run.desk_scale", desk_scale),
      SF_INT("run.epochs", epochs),
      SF_INT("run.batch_size", batch_size),
      SF_INT("run.k", k),
      field(
          "run.mode", [](const RunConfig& c) { return to_string(c.mode); },
          [](RunConfig& c, const std::string& k, const std::string& v) {
            try {
              c.mode = parse_discriminator_mode(v);
            } catch (const InvalidArgument& e) {
              throw ConfigError(k + ": " + e.what());
            }
          }),
      int_field("run.seed", &RunConfig::seed),
      int_field("run.max_steps", &RunConfig::max_steps),
      SF_DOUBLE("weights.lambda_cyc", weights.lambda_cyc),
      SF_DOUBLE("weights.lambda_id", weights.lambda_id),
      SF_DOUBLE("adam.lr", adam.lr),
      SF_DOUBLE("adam.beta0", adam.beta0),
      SF_DOUBLE("adam.beta1", adam.beta1),
      SF_DOUBLE("adam.eps", adam.eps),
      field(
          "adam.lr_schedule", [](const RunConfig& c) { return c.lr_schedule; },
          [](RunConfig& c, const std::string& k, const std::string& v) {
            if (v != "constant") throw ConfigError(k + ": unsupported schedule '" + v + "'");
            c.lr_schedule = v;
          }),
      SF_INT("model.tile_size", profile.tile_size),
      SF_INT("model.box_size", profile.box_size),
      SF_INT("generator.n_res_blocks", profile.generator.n_res_blocks),
      SF_INT("generator.base_channels", profile.generator.base_channels),
      SF_BOOL("generator.allow_any_depth", profile.generator.allow_any_depth),
      field(
          "patch.variant", [](const RunConfig& c) { return models::to_string(c.profile.patch.variant); },
          [](RunConfig& c, const std::string& k, const std::string& v) {
            try {
              c.profile.patch.variant = models::parse_patch_variant(v);
            } catch (const InvalidArgument& e) {
              throw ConfigError(k + ": " + e.what());
            }
          }),
      SF_INT("patch.base_channels", profile.patch.base_channels),
      SF_INT("roi.base_channels", profile.roi.base_channels),
      SF_INT("roi.pool_size", profile.roi.pool_size),
      SF_DOUBLE("roi.spatial_scale", profile.roi.spatial_scale),
      SF_INT("roi.samples_per_bin", profile.roi.samples_per_bin),
      SF_BOOL("roi.normalize", profile.roi.normalize),
  };
  return table;
}

#undef SF_DOUBLE
#undef SF_INT
#undef SF_BOOL

}  // namespace

std::string run_config_text(const RunConfig& cfg) {
  std::ostringstream os;
  std::string section;
  for (const auto& f : fields()) {
    const std::string key = f.key;
    const auto dot = key.find('.');
    const std::string s = key.substr(0, dot);
    if (s != section) {
      if (!section.empty()) os << '\n';
      os << '[' << s << "]\n";
      section = s;
    }
    os << key.substr(dot + 1) << " = " << f.get(cfg) << '\n';
  }
  return os.str();
}

void save_run_config(const std::filesystem::path& path, const RunConfig& cfg) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << run_config_text(cfg);
  if (!os) throw IoError("write failed for " + path.string());
}

std::vector<std::string> run_config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.emplace_back(f.key);
  return keys;
}

void set_run_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : fields())
    if (key == f.key) {
      f.set(cfg, key, value);
      if (key == "run.desk_scale" && cfg.desk_scale) cfg.use_desk_profile();
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

RunConfig load_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("config not found: " + path.string());
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(e.what());
  }
  std::map<std::string, bool> known;
  for (const auto& f : fields()) known[f.key] = true;
  for (const auto& [section, body] : tree) {
    for (const auto& [name, _] : body)
      if (!known.count(section + "." + name))
        throw ConfigError("unknown config key '" + section + "." + name + "' in " + path.string());
    if (body.empty()) throw ConfigError("unknown config key '" + section + "' in " + path.string());
  }
  RunConfig cfg;
  // desk_scale comes first in the table, so explicit keys override the profile.
  for (const auto& f : fields())
    if (auto v = tree.get_optional<std::string>(f.key)) set_run_config_value(cfg, f.key, *v);
  try {
    cfg.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string(e.what()) + " in " + path.string());
  }
  return cfg;
}

double recompose_generator_loss(const LossRecord& r, const LossWeights& w, DiscriminatorMode mode) {
  double total = w.lambda_cyc * r.cyc + w.lambda_id * r.id;
  if (uses_patch(mode)) total += r.gan_xy + r.gan_yx;
  if (uses_roi(mode)) total += r.roi_x + r.roi_y;
  return total;
}

// ---------------------------------------------------------------- losses

template <typename T>
Var<T> lsgan_discriminator_loss(const Var<T>& real_scores, const Var<T>& fake_scores) {
  std::vector<std::pair<double, Var<T>>> terms;
  if (real_scores.defined() && real_scores.value().numel())
    terms.emplace_back(0.5, nn::mean_squared_to(real_scores, 1.0));
  if (fake_scores.defined() && fake_scores.value().numel())
    terms.emplace_back(0.5, nn::mean_squared_to(fake_scores, 0.0));
  return nn::weighted_sum(terms);
}

template <typename T>
Var<T> lsgan_generator_loss(const Var<T>& fake_scores) {
  if (!fake_scores.defined() || !fake_scores.value().numel()) return zero_scalar<T>();
  return nn::weighted_sum<T>({{0.5, nn::mean_squared_to(fake_scores, 1.0)}});
}

template <typename T>
Var<T> cycle_loss(const Var<T>& x, const Var<T>& x_rec, const Var<T>& y, const Var<T>& y_rec) {
  if (x.shape() != x_rec.shape() || y.shape() != y_rec.shape())
    throw ShapeMismatch("cycle loss: " + x.shape().str() + " vs " + x_rec.shape().str() + ", " +
                        y.shape().str() + " vs " + y_rec.shape().str());
  return nn::weighted_sum<T>({{1.0, nn::mean_abs_diff(x, x_rec)}, {1.0, nn::mean_abs_diff(y, y_rec)}});
}

template <typename T>
Var<T> identity_loss(const Translator<T>& g_xy, const Translator<T>& g_yx, const Var<T>& x,
                     const Var<T>& y) {
  const Var<T> gy = g_xy(y), gx = g_yx(x);
  if (gy.shape() != y.shape() || gx.shape() != x.shape())
    throw ShapeMismatch("identity loss: translator changed shape " + y.shape().str() + " -> " +
                        gy.shape().str() + " or " + x.shape().str() + " -> " + gx.shape().str());
  return nn::weighted_sum<T>({{1.0, nn::mean_abs_diff(gy, y)}, {1.0, nn::mean_abs_diff(gx, x)}});
}

template <typename T>
RoiTerms<T> roi_adversarial_losses(const RoiScorer<T>& d_roi, const Var<T>& real,
                                   const BatchBoxes& real_boxes, const Var<T>& fake,
                                   const BatchBoxes& fake_boxes) {
  Var<T> real_scores, fake_scores;
  if (!real_boxes.boxes.empty()) real_scores = d_roi(real, real_boxes.boxes);
  if (!fake_boxes.boxes.empty()) fake_scores = d_roi(fake, fake_boxes.boxes);
  return {lsgan_discriminator_loss(real_scores, fake_scores), lsgan_generator_loss(fake_scores)};
}

#define STAINFORGE_INSTANTIATE(T)                                                                  \
  template Var<T> lsgan_discriminator_loss<T>(const Var<T>&, const Var<T>&);                       \
  template Var<T> lsgan_generator_loss<T>(const Var<T>&);                                          \
  template Var<T> cycle_loss<T>(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&);       \
  template Var<T> identity_loss<T>(const Translator<T>&, const Translator<T>&, const Var<T>&,      \
                                   const Var<T>&);                                                 \
  template RoiTerms<T> roi_adversarial_losses<T>(const RoiScorer<T>&, const Var<T>&,               \
                                                 const BatchBoxes&, const Var<T>&, const BatchBoxes&);
STAINFORGE_INSTANTIATE(float)
STAINFORGE_INSTANTIATE(double)
#undef STAINFORGE_INSTANTIATE

// ---------------------------------------------------------------- model

namespace {

nn::ParameterList<float> concat(const nn::ParameterList<float>& a, const nn::ParameterList<float>& b) {
  nn::ParameterList<float> out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

}  // namespace

TranslationModel::TranslationModel(const RunConfig& cfg)
    : g_xy(cfg.profile.generator, mix(cfg.seed, 1)),
      g_yx(cfg.profile.generator, mix(cfg.seed, 2)),
      d_x(cfg.profile.patch, mix(cfg.seed, 3)),
      d_y(cfg.profile.patch, mix(cfg.seed, 4)),
      d_roi_x(cfg.profile.roi, mix(cfg.seed, 5)),
      d_roi_y(cfg.profile.roi, mix(cfg.seed, 6)),
      opt_g(concat(g_xy.parameters(), g_yx.parameters()), cfg.adam),
      opt_d_x(d_x.parameters(), cfg.adam),
      opt_d_y(d_y.parameters(), cfg.adam),
      opt_d_roi_x(d_roi_x.parameters(), cfg.adam),
      opt_d_roi_y(d_roi_y.parameters(), cfg.adam) {}

std::uint64_t TranslationModel::generator_fingerprint() const {
  return mix(g_xy.fingerprint(), g_yx.fingerprint());
}

std::uint64_t TranslationModel::discriminator_fingerprint() const {
  std::uint64_t h = 0;
  for (auto f : {d_x.fingerprint(), d_y.fingerprint(), d_roi_x.fingerprint(), d_roi_y.fingerprint()})
    h = mix(h, f);
  return h;
}

namespace {

struct NamedOptimizer {
  const char* name;
  nn::Adam<float>* opt;
};

std::vector<NamedOptimizer> optimizers(TranslationModel& m) {
  return {{"g", &m.opt_g},
          {"d_x", &m.opt_d_x},
          {"d_y", &m.opt_d_y},
          {"d_roi_x", &m.opt_d_roi_x},
          {"d_roi_y", &m.opt_d_roi_y}};
}

struct NamedModule {
  const char* prefix;
  nn::Module<float>* module;
};

std::vector<NamedModule> modules(TranslationModel& m) {
  return {{"g_xy.", &m.g_xy}, {"g_yx.", &m.g_yx},       {"d_x.", &m.d_x},
          {"d_y.", &m.d_y},   {"d_roi_x.", &m.d_roi_x}, {"d_roi_y.", &m.d_roi_y}};
}

constexpr const char* kModelTag = "stainforge.translation";

}  // namespace

nn::Checkpoint make_checkpoint(const TranslationModel& model,
                               const std::map<std::string, std::string>& meta) {
  auto& m = const_cast<TranslationModel&>(model);
  nn::Checkpoint ckpt;
  ckpt.model_tag = kModelTag;
  ckpt.meta = meta;
  for (const auto& nm : modules(m)) models::export_parameters(*nm.module, nm.prefix, ckpt);
  for (const auto& no : optimizers(m)) {
    const std::string p = std::string("adam.") + no.name + ".";
    ckpt.meta[p + "steps"] = std::to_string(no.opt->step_count());
    for (std::size_t i = 0; i < no.opt->first_moments().size(); ++i) {
      ckpt.blocks.emplace_back(p + "m." + std::to_string(i), no.opt->first_moments()[i]);
      ckpt.blocks.emplace_back(p + "v." + std::to_string(i), no.opt->second_moments()[i]);
    }
  }
  return ckpt;
}

void restore_checkpoint(TranslationModel& m, const nn::Checkpoint& ckpt) {
  if (ckpt.model_tag != kModelTag) throw IoError("checkpoint tag '" + ckpt.model_tag + "' is not a translation model");
  for (const auto& nm : modules(m)) models::import_parameters(*nm.module, nm.prefix, ckpt);
  for (const auto& no : optimizers(m)) {
    const std::string p = std::string("adam.") + no.name + ".";
    auto it = ckpt.meta.find(p + "steps");
    if (it == ckpt.meta.end()) throw IoError("checkpoint lacks " + p + "steps");
    no.opt->set_step_count(std::stoll(it->second));
    auto load = [&](std::vector<Tensor<float>>& dst, const std::string& kind) {
      for (std::size_t i = 0; i < dst.size(); ++i) {
        const std::string name = p + kind + "." + std::to_string(i);
        const auto* t = ckpt.find(name);
        if (!t || t->shape() != dst[i].shape()) throw IoError("checkpoint block " + name + " missing or mis-shaped");
        dst[i] = *t;
      }
    };
    load(no.opt->first_moments(), "m");
    load(no.opt->second_moments(), "v");
  }
}

void load_generator(models::Generator<float>& g, const nn::Checkpoint& ckpt, const std::string& prefix) {
  models::import_parameters(g, prefix, ckpt);
}

// ---------------------------------------------------------------- tensors

nn::Tensor<float> to_tensor(const std::vector<const imgproc::RgbImage*>& imgs) {
  if (imgs.empty()) throw InvalidArgument("empty image batch");
  const int h = imgs[0]->height, w = imgs[0]->width;
  Tensor<float> t({static_cast<int>(imgs.size()), 3, h, w});
  for (std::size_t n = 0; n < imgs.size(); ++n) {
    const auto& img = *imgs[n];
    if (img.height != h || img.width != w || img.channels != 3)
      throw ShapeMismatch("batch images must share one 3-channel size");
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          t.at(static_cast<int>(n), c, y, x) = static_cast<float>(img.at(y, x, c) / 127.5 - 1.0);
  }
  return t;
}

nn::Tensor<float> to_tensor(const imgproc::RgbImage& img) { return to_tensor(std::vector{&img}); }

imgproc::RgbImage to_image(const nn::Tensor<float>& t, int n) {
  const auto& s = t.shape();
  if (s.c != 3 || n < 0 || n >= s.n) throw ShapeMismatch("to_image needs a 3-channel sample, got " + s.str());
  imgproc::RgbImage img(s.h, s.w, 3);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        const double v = std::round((t.at(n, c, y, x) + 1.0) * 127.5);
        img.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
  return img;
}

imgproc::RgbImage translate(const models::Generator<float>& g, const imgproc::RgbImage& img) {
  nn::NoGradGuard guard;
  return to_image(g.forward(Var<float>(to_tensor(img))).value());
}

// ---------------------------------------------------------------- steps

StepBatch make_step_batch(const std::vector<const TrainingTile*>& xs,
                          const std::vector<const TrainingTile*>& ys,
                          const library::CellLibrary& lib, int k, std::uint64_t seed) {
  StepBatch b;
  auto stack = [](const std::vector<const TrainingTile*>& tiles) {
    std::vector<const imgproc::RgbImage*> imgs;
    for (const auto* t : tiles) imgs.push_back(&t->image);
    return to_tensor(imgs);
  };
  b.x = stack(xs);
  b.y = stack(ys);
  auto sample = [&](const std::vector<const TrainingTile*>& tiles, BatchBoxes& out, std::uint64_t salt) {
    for (std::size_t i = 0; i < tiles.size(); ++i) {
      const auto drawn = library::sample_boxes(lib.boxes(tiles[i]->id), k, mix(mix(seed, salt), i));
      if (!drawn) continue;
      ++out.eligible;
      for (const auto& box : drawn->boxes) out.boxes.push_back(library::to_box_spec(box, static_cast<int>(i)));
    }
  };
  sample(xs, b.boxes_x, 1);
  sample(ys, b.boxes_y, 2);
  return b;
}

namespace {

void set_discriminators_trainable(TranslationModel& m, bool on) {
  m.d_x.set_requires_grad(on);
  m.d_y.set_requires_grad(on);
  m.d_roi_x.set_requires_grad(on);
  m.d_roi_y.set_requires_grad(on);
}

RoiScorer<float> scorer(const models::RoiDiscriminator<float>& d) {
  return [&d](const Var<float>& x, std::span<const nn::BoxSpec> boxes) { return d.forward(x, boxes); };
}

void check_record(const LossRecord& r) {
  for (double v : {r.gan_xy, r.gan_yx, r.cyc, r.id, r.roi_x, r.roi_y, r.d_x, r.d_y, r.d_roi_x,
                   r.d_roi_y, r.g_total})
    if (!std::isfinite(v)) throw NonFiniteLoss("step " + std::to_string(r.step) + ": non-finite loss record");
}

}  // namespace

LossRecord train_step(TranslationModel& m, const StepBatch& batch, const RunConfig& cfg,
                      std::int64_t step) {
  const bool patch = uses_patch(cfg.mode), roi = uses_roi(cfg.mode);
  const Var<float> x(batch.x), y(batch.y);
  LossRecord r;
  r.step = step;
  const char* phase = "generator";
  try {
    // Generators, with every discriminator frozen.
    const auto d_before = m.discriminator_fingerprint();
    set_discriminators_trainable(m, false);
    const Var<float> fake_y = m.g_xy.forward(x);
    const Var<float> fake_x = m.g_yx.forward(y);
    const Var<float> cyc = cycle_loss(x, m.g_yx.forward(fake_y), y, m.g_xy.forward(fake_x));
    const Var<float> id = identity_loss<float>([&](const Var<float>& v) { return m.g_xy.forward(v); },
                                               [&](const Var<float>& v) { return m.g_yx.forward(v); }, x, y);
    std::vector<std::pair<double, Var<float>>> terms{{cfg.weights.lambda_cyc, cyc}, {cfg.weights.lambda_id, id}};
    r.cyc = cyc.item();
    r.id = id.item();
    if (patch) {
      const auto gan_xy = lsgan_generator_loss(m.d_y.forward(fake_y));
      const auto gan_yx = lsgan_generator_loss(m.d_x.forward(fake_x));
      terms.emplace_back(1.0, gan_xy);
      terms.emplace_back(1.0, gan_yx);
      r.gan_xy = gan_xy.item();
      r.gan_yx = gan_yx.item();
    }
    if (roi) {
      // Translations keep geometry, so each source tile's boxes score its translation.
      Var<float> roi_x = zero_scalar<float>(), roi_y = zero_scalar<float>();
      if (!batch.boxes_y.boxes.empty())
        roi_x = lsgan_generator_loss(m.d_roi_x.forward(fake_x, batch.boxes_y.boxes));
      if (!batch.boxes_x.boxes.empty())
        roi_y = lsgan_generator_loss(m.d_roi_y.forward(fake_y, batch.boxes_x.boxes));
      terms.emplace_back(1.0, roi_x);
      terms.emplace_back(1.0, roi_y);
      r.roi_x = roi_x.item();
      r.roi_y = roi_y.item();
    }
    const Var<float> total = nn::weighted_sum(terms);
    r.g_total = total.item();
    nn::backward(total);
    m.opt_g.step();
    set_discriminators_trainable(m, true);
    if (m.discriminator_fingerprint() != d_before)
      throw std::logic_error("generator update changed discriminator parameters");

    // Discriminators, against the translations made before the update.
    phase = "discriminator";
    const auto g_before = m.generator_fingerprint();
    const Var<float> fx = fake_x.detach(), fy = fake_y.detach();
    auto update = [](nn::Adam<float>& opt, const Var<float>& loss) {
      if (loss.requires_grad()) {
        nn::backward(loss);
        opt.step();
      }
      return static_cast<double>(loss.item());
    };
    if (patch) {
      r.d_x = update(m.opt_d_x, lsgan_discriminator_loss(m.d_x.forward(x), m.d_x.forward(fx)));
      r.d_y = update(m.opt_d_y, lsgan_discriminator_loss(m.d_y.forward(y), m.d_y.forward(fy)));
    }
    if (roi) {
      r.d_roi_x = update(m.opt_d_roi_x,
                         roi_adversarial_losses(scorer(m.d_roi_x), x, batch.boxes_x, fx, batch.boxes_y).d_side);
      r.d_roi_y = update(m.opt_d_roi_y,
                         roi_adversarial_losses(scorer(m.d_roi_y), y, batch.boxes_y, fy, batch.boxes_x).d_side);
    }
    if (m.generator_fingerprint() != g_before)
      throw std::logic_error("discriminator update changed generator parameters");
  } catch (const NonFiniteLoss&) {
    set_discriminators_trainable(m, true);
    throw;
  } catch (const NonFiniteError& e) {
    set_discriminators_trainable(m, true);
    throw NonFiniteLoss("step " + std::to_string(step) + ", " + phase + " phase: " + e.what());
  }
  check_record(r);
  return r;
}

std::int64_t steps_per_epoch(std::size_t n_x, std::size_t n_y, int batch_size) {
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  const auto n = static_cast<std::int64_t>(std::max(n_x, n_y));
  return (n + batch_size - 1) / batch_size;
}

// ---------------------------------------------------------------- loop

const std::vector<std::string>& loss_log_columns() {
  static const std::vector<std::string> cols = {"step",  "epoch", "gan_xy",  "gan_yx",  "cyc",
                                                "id",    "roi_x", "roi_y",   "d_x",     "d_y",
                                                "d_roi_x", "d_roi_y", "g_total"};
  return cols;
}

namespace {

std::string log_row(const LossRecord& r, int epoch) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%lld,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                static_cast<long long>(r.step), epoch, r.gan_xy, r.gan_yx, r.cyc, r.id, r.roi_x, r.roi_y,
                r.d_x, r.d_y, r.d_roi_x, r.d_roi_y, r.g_total);
  return buf;
}

std::string log_header() {
  std::string h;
  for (const auto& c : loss_log_columns()) h += (h.empty() ? "" : ",") + c;
  return h + "\n";
}

std::filesystem::path epoch_path(const std::filesystem::path& dir, int epoch) {
  return dir / ("epoch_" + std::to_string(epoch) + ".ckpt");
}

/// Keeps the header and rows with step < `keep_steps`.
void truncate_log(const std::filesystem::path& log, std::int64_t keep_steps) {
  std::ifstream is(log);
  if (!is) throw IoError("cannot read loss log " + log.string());
  std::string line, out;
  std::getline(is, line);
  out = line + "\n";
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (std::stoll(line.substr(0, line.find(','))) < keep_steps) out += line + "\n";
  }
  is.close();
  std::ofstream os(log, std::ios::binary | std::ios::trunc);
  os << out;
  if (!os) throw IoError("cannot rewrite loss log " + log.string());
}

}  // namespace

std::vector<LossRecord> train(TranslationModel& m, const std::vector<TrainingTile>& xs,
                              const std::vector<TrainingTile>& ys, const library::CellLibrary& lib,
                              const RunConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  if (xs.empty() || ys.empty()) throw InvalidArgument("training needs tiles from both domains");
  const bool persist = !opts.out_dir.empty();
  const auto log_path = opts.out_dir / "losses.csv";
  int first_epoch = 1;
  std::int64_t step = 0;

  if (persist) {
    std::error_code ec;
    std::filesystem::create_directories(opts.out_dir, ec);
    if (ec) throw IoError("cannot create " + opts.out_dir.string() + ": " + ec.message());
    if (opts.resume) {
      int last = 0;
      while (std::filesystem::exists(epoch_path(opts.out_dir, last + 1))) ++last;
      if (last > 0) {
        const auto ckpt = nn::read_checkpoint(epoch_path(opts.out_dir, last));
        restore_checkpoint(m, ckpt);
        step = std::stoll(ckpt.meta.at("step"));
        first_epoch = last + 1;
        truncate_log(log_path, step);
      }
    }
    save_run_config(opts.out_dir / "run_config.ini", cfg);
    if (first_epoch == 1) {
      std::ofstream os(log_path, std::ios::binary | std::ios::trunc);
      os << log_header();
      if (!os) throw IoError("cannot write " + log_path.string());
    }
  }

  std::ofstream log;
  if (persist) {
    log.open(log_path, std::ios::binary | std::ios::app);
    if (!log) throw IoError("cannot append to " + log_path.string());
  }
  const std::int64_t per_epoch = steps_per_epoch(xs.size(), ys.size(), cfg.batch_size);
  std::vector<LossRecord> records;
  bool stop = false;
  for (int epoch = first_epoch; epoch <= cfg.epochs && !stop; ++epoch) {
    std::mt19937_64 rng(mix(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> px(xs.size()), py(ys.size());
    std::iota(px.begin(), px.end(), 0);
    std::iota(py.begin(), py.end(), 0);
    std::shuffle(px.begin(), px.end(), rng);
    std::shuffle(py.begin(), py.end(), rng);
    for (std::int64_t s = 0; s < per_epoch; ++s) {
      if (cfg.max_steps > 0 && step >= cfg.max_steps) {
        stop = true;
        break;
      }
      std::vector<const TrainingTile*> bx, by;
      for (int i = 0; i < cfg.batch_size; ++i) {
        const auto j = static_cast<std::size_t>(s * cfg.batch_size + i);
        bx.push_back(&xs[px[j % px.size()]]);
        by.push_back(&ys[py[j % py.size()]]);
      }
      const auto batch = make_step_batch(bx, by, lib, cfg.k, mix(cfg.seed, static_cast<std::uint64_t>(step)));
      const auto r = train_step(m, batch, cfg, step);
      records.push_back(r);
      ++step;
      if (persist) {
        log << log_row(r, epoch);
        log.flush();
        if (!log) throw IoError("write failed for " + log_path.string());
      }
      if (opts.on_step && !opts.on_step(r)) {
        stop = true;
        break;
      }
    }
    if (persist) {
      const bool complete = !stop;
      const auto path = complete ? epoch_path(opts.out_dir, epoch) : opts.out_dir / "last.ckpt";
      nn::write_checkpoint(path, make_checkpoint(m, {{"epoch", std::to_string(epoch)},
                                                     {"step", std::to_string(step)},
                                                     {"complete", complete ? "1" : "0"}}));
    }
  }
  return records;
}

}  // namespace stainforge::training
