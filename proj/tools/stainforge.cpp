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

// Command-line entry point: build-library, train, translate, evaluate,
// stitch and selftest.
//
// Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.

#include <CLI11.hpp>

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "stainforge/cell_library.hpp"
#include "stainforge/errors.hpp"
#include "stainforge/evaldata.hpp"
#include "stainforge/nn/checkpoint.hpp"
#include "stainforge/parallel.hpp"
#include "stainforge/selftest.hpp"
#include "stainforge/synthetic.hpp"
#include "stainforge/training.hpp"

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace sf = stainforge;
namespace ev = stainforge::evaldata;
namespace lib = stainforge::library;
namespace tr = stainforge::training;

namespace {

constexpr int kValidationExit = 1;
constexpr int kRuntimeExit = 2;

/// Section of a resolved-config snapshot describing the invocation; ignored
/// when the snapshot is passed back through --config.
constexpr const char* kInvocationSection = "invocation";

std::string env_name(const std::string& dotted_key) {
  std::string name = "STAINFORGE_";
  for (char c : dotted_key) name += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return name;
}

pt::ptree parse_ini(const std::string& text) {
  pt::ptree tree;
  std::istringstream is(text);
  pt::read_ini(is, tree);
  return tree;
}

std::string ini_text(const pt::ptree& tree) {
  std::ostringstream os;
  pt::write_ini(os, tree);
  return os.str();
}

/// Layers a config file, STAINFORGE_* variables and `--set key=value` flags,
/// in that order, over `base_text`. Only keys present in the base are allowed.
std::string resolve_config(const std::string& base_text, const std::optional<fs::path>& file,
                           const std::vector<std::string>& sets) {
  pt::ptree tree = parse_ini(base_text);
  auto put = [&](const std::string& key, const std::string& value, const std::string& origin) {
    if (!tree.get_optional<std::string>(key)) throw sf::ConfigError("unknown config key '" + key + "' in " + origin);
    tree.put(key, value);
  };
  if (file) {
    if (!fs::exists(*file)) throw sf::IoError("config not found: " + file->string());
    pt::ptree user;
    try {
      pt::read_ini(file->string(), user);
    } catch (const pt::ini_parser_error& e) {
      throw sf::ConfigError(e.what());
    }
    for (const auto& [section, body] : user) {
      if (section == kInvocationSection) continue;
      if (body.empty()) throw sf::ConfigError("unknown config key '" + section + "' in " + file->string());
      for (const auto& [name, value] : body) put(section + "." + name, value.data(), file->string());
    }
  }
  for (const auto& [section, body] : parse_ini(base_text))
    for (const auto& [name, _] : body) {
      const std::string key = section + "." + name;
      if (const char* v = std::getenv(env_name(key).c_str())) put(key, v, env_name(key));
    }
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw sf::ConfigError("--set expects key=value, got '" + s + "'");
    put(s.substr(0, eq), s.substr(eq + 1), "--set");
  }
  return ini_text(tree);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw sf::IoError("cannot write " + path.string());
  os << text;
  if (!os) throw sf::IoError("write failed for " + path.string());
}

/// `[invocation]` section listing the resolved command and its inputs.
std::string invocation_text(const std::string& command, const std::vector<std::pair<std::string, std::string>>& args) {
  std::string text = std::string("[") + kInvocationSection + "]\ncommand = " + command + "\n";
  for (const auto& [k, v] : args) text += k + " = " + v + "\n";
  return text + "\n";
}

fs::path snapshot_beside(const fs::path& output) {
  return output.parent_path() / (output.filename().string() + ".config.ini");
}

// ------------------------------------------------------------------ configs

struct ConfigFlags {
  std::optional<fs::path> file;
  std::vector<std::string> sets;
  bool desk_scale = false;
};

tr::RunConfig resolve_run_config(const ConfigFlags& flags, std::string* resolved_text) {
  tr::RunConfig base;
  std::string text = resolve_config(tr::run_config_text(base), flags.file, flags.sets);
  bool desk = flags.desk_scale;
  if (!desk) {
    const auto v = parse_ini(text).get<std::string>("run.desk_scale");
    desk = v == "true" || v == "1";
  }
  if (desk) {
    // Re-layer over the desk profile so unset keys take desk values.
    base.use_desk_profile();
    auto sets = flags.sets;
    sets.insert(sets.begin(), "run.desk_scale=true");
    text = resolve_config(tr::run_config_text(base), flags.file, sets);
  }
  tr::RunConfig cfg;
  const auto tree = parse_ini(text);
  for (const auto& key : tr::run_config_keys()) tr::set_run_config_value(cfg, key, tree.get<std::string>(key));
  try {
    cfg.validate();
  } catch (const sf::InvalidArgument& e) {
    throw sf::ConfigError(e.what());
  }
  if (resolved_text) *resolved_text = tr::run_config_text(cfg);
  return cfg;
}

lib::PipelineConfig resolve_pipeline_config(const ConfigFlags& flags) {
  const auto base = flags.desk_scale ? lib::PipelineConfig::desk_scale() : lib::PipelineConfig{};
  const std::string text = resolve_config(lib::pipeline_config_text(base), flags.file, flags.sets);
  const fs::path tmp = fs::temp_directory_path() / ("stainforge_pipeline_" + std::to_string(::getpid()) + ".ini");
  write_text(tmp, text);
  lib::PipelineConfig cfg;
  try {
    cfg = lib::load_pipeline_config(tmp);
  } catch (...) {
    fs::remove(tmp);
    throw;
  }
  fs::remove(tmp);
  cfg.validate();
  return cfg;
}

void add_config_flags(CLI::App* cmd, ConfigFlags& flags) {
  cmd->add_option("--config", flags.file, "key = value config file");
  cmd->add_option("--set", flags.sets, "Override one key, e.g. run.epochs=3");
  cmd->add_flag("--desk-scale", flags.desk_scale, "Use the 64x64 desk profile")->envname("STAINFORGE_DESK_SCALE");
}

// -------------------------------------------------------------------- data

/// Synthetic domains sized for the profile's tiles and boxes.
sf::synthetic::SyntheticDomainSpec synthetic_spec(const tr::ModelProfile& profile, std::uint64_t seed) {
  sf::synthetic::SyntheticDomainSpec spec;
  const double f = profile.tile_size / static_cast<double>(spec.canvas);
  spec.canvas = profile.tile_size;
  spec.cell_radius_min *= f;
  spec.cell_radius_max *= f;
  spec.dot_radius_min *= f;
  spec.dot_radius_max *= f;
  spec.box_size = profile.box_size;
  spec.seed = seed;
  spec.validate();
  return spec;
}

std::string stem_id(const fs::path& p) { return p.stem().string(); }

std::vector<fs::path> png_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw sf::IoError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (e.is_regular_file() && ext == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw sf::InvalidArgument("no PNG tiles in " + dir.string());
  return files;
}

/// Tiles from a manifest, or every PNG of a folder (ids are file stems;
/// masks, when given, share the file name).
std::vector<ev::TileRecord> load_tiles(const std::optional<fs::path>& manifest, const std::optional<fs::path>& dir,
                                       const std::optional<fs::path>& masks, lib::Domain domain,
                                       std::optional<int> tile_size) {
  if (manifest) return ev::load_tile_dataset(manifest->parent_path(), *manifest, tile_size);
  if (!dir) throw sf::InvalidArgument("give --in or --manifest");
  std::vector<ev::TileRecord> tiles;
  for (const auto& f : png_files(*dir)) {
    ev::TileRecord t{stem_id(f), domain, ev::read_png(f), std::nullopt, std::nullopt};
    if (tile_size && !t.image.same_shape(*tile_size, *tile_size))
      throw sf::SizeMismatch("tile " + t.tile_id + " is not " + std::to_string(*tile_size) + " px");
    if (masks) {
      t.annotation = ev::read_mask_png(*masks / f.filename());
      if (t.annotation->height() != t.image.height || t.annotation->width() != t.image.width)
        throw sf::SizeMismatch("mask of tile " + t.tile_id + " does not match its image");
    }
    tiles.push_back(std::move(t));
  }
  return tiles;
}

std::vector<ev::TileRecord> of_domain(std::vector<ev::TileRecord> tiles, lib::Domain d) {
  std::erase_if(tiles, [d](const ev::TileRecord& t) { return t.domain != d; });
  return tiles;
}

/// The run config stored beside a checkpoint by `train`.
std::optional<fs::path> config_beside(const fs::path& checkpoint) {
  for (const char* name : {"resolved_config.ini", "run_config.ini"}) {
    const auto p = checkpoint.parent_path() / name;
    if (fs::exists(p)) return p;
  }
  return std::nullopt;
}

struct LoadedGenerator {
  tr::RunConfig cfg;
  std::string config_text;
  std::unique_ptr<sf::models::Generator<float>> g;

  ev::TileTranslator translator() const {
    return [g = g.get()](const sf::imgproc::RgbImage& img) { return tr::translate(*g, img); };
  }
};

LoadedGenerator load_translator(const fs::path& checkpoint, ConfigFlags flags) {
  if (!flags.file) flags.file = config_beside(checkpoint);
  LoadedGenerator out;
  out.cfg = resolve_run_config(flags, &out.config_text);
  out.g = std::make_unique<sf::models::Generator<float>>(out.cfg.profile.generator, 0);
  tr::load_generator(*out.g, sf::nn::read_checkpoint(checkpoint));
  return out;
}

// ----------------------------------------------------------------- commands

struct BuildLibraryArgs {
  std::string domain;
  std::optional<fs::path> in, masks, manifest;
  fs::path out;
  ConfigFlags config;
};

int build_library(const BuildLibraryArgs& a) {
  const auto domain = lib::parse_domain(a.domain);
  const auto cfg = resolve_pipeline_config(a.config);
  auto tiles = of_domain(load_tiles(a.manifest, a.in, a.masks, domain, std::nullopt), domain);
  if (tiles.empty()) throw sf::InvalidArgument("no " + a.domain + " tiles to process");
  std::vector<std::vector<lib::CellBox>> boxes(tiles.size());
  sf::parallel_for(static_cast<std::int64_t>(tiles.size()), [&](std::int64_t i) {
    const auto& t = tiles[i];
    if (domain == lib::Domain::kIhc) {
      boxes[i] = lib::build_ihc_library(t.image, cfg);
    } else {
      if (!t.annotation) throw sf::MissingAnnotation("H&E tile " + t.tile_id + " has no annotation mask");
      boxes[i] = lib::build_he_library(t.image, *t.annotation, cfg);
    }
  });
  lib::CellLibrary out;
  out.meta = {tiles.front().image.height, lib::to_string(domain), cfg.hash()};
  std::size_t cancer = 0;
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    for (const auto& b : boxes[i]) cancer += b.label == lib::CellLabel::kCancer;
    out.entries[tiles[i].tile_id] = {domain, std::move(boxes[i])};
  }
  out.canonicalize();
  lib::write_library(a.out, out);
  write_text(snapshot_beside(a.out),
             invocation_text("build-library", {{"domain", a.domain},
                                               {"in", a.in ? a.in->string() : ""},
                                               {"masks", a.masks ? a.masks->string() : ""},
                                               {"manifest", a.manifest ? a.manifest->string() : ""}}) +
                 lib::pipeline_config_text(cfg));
  std::printf("%zu tiles, %zu boxes (%zu cancer, %zu normal) -> %s\n", tiles.size(), out.box_count(), cancer,
              out.box_count() - cancer, a.out.string().c_str());
  return 0;
}

struct TrainArgs {
  fs::path out;
  bool synthetic = false;
  int synthetic_tiles = 200;
  std::uint64_t synthetic_seed = 1;
  std::optional<fs::path> manifest, library;
  bool resume = false;
  int log_every = 50;
  ConfigFlags config;
};

std::vector<tr::TrainingTile> training_tiles(const std::vector<ev::TileRecord>& records, lib::Domain d) {
  std::vector<tr::TrainingTile> out;
  for (const auto& r : records)
    if (r.domain == d) out.push_back({r.tile_id, r.image});
  return out;
}

int train(const TrainArgs& a) {
  std::string cfg_text;
  const auto cfg = resolve_run_config(a.config, &cfg_text);
  std::vector<tr::TrainingTile> xs, ys;
  lib::CellLibrary library;
  if (a.synthetic) {
    if (a.synthetic_tiles < 1) throw sf::InvalidArgument("--synthetic-tiles must be >= 1");
    const auto ds = sf::synthetic::make_synthetic_dataset(synthetic_spec(cfg.profile, a.synthetic_seed), a.synthetic_tiles);
    for (const auto& t : ds.x) xs.push_back({t.id, t.image});
    for (const auto& t : ds.y) ys.push_back({t.id, t.image});
    library = ds.library;
  } else {
    if (!a.manifest || !a.library) throw sf::InvalidArgument("give --synthetic, or --manifest and --library");
    const auto records = ev::load_tile_dataset(a.manifest->parent_path(), *a.manifest, cfg.profile.tile_size);
    xs = training_tiles(records, lib::Domain::kHe);
    ys = training_tiles(records, lib::Domain::kIhc);
    library = lib::read_library(*a.library);
  }
  fs::create_directories(a.out);
  write_text(a.out / "resolved_config.ini",
             invocation_text("train", {{"synthetic", a.synthetic ? "true" : "false"},
                                       {"synthetic_tiles", std::to_string(a.synthetic_tiles)},
                                       {"synthetic_seed", std::to_string(a.synthetic_seed)},
                                       {"manifest", a.manifest ? a.manifest->string() : ""},
                                       {"library", a.library ? a.library->string() : ""}}) +
                 cfg_text);
  tr::TranslationModel model(cfg);
  const auto per_epoch = tr::steps_per_epoch(xs.size(), ys.size(), cfg.batch_size);
  std::printf("training %zu x %zu tiles, %lld steps per epoch, mode %s\n", xs.size(), ys.size(),
              static_cast<long long>(per_epoch), tr::to_string(cfg.mode).c_str());
  tr::TrainOptions opts{a.out, a.resume, [&](const tr::LossRecord& r) {
                          if (a.log_every > 0 && (r.step + 1) % a.log_every == 0)
                            std::printf("step %lld  g_total %.4f  cyc %.4f  d_x %.4f  d_y %.4f\n",
                                        static_cast<long long>(r.step + 1), r.g_total, r.cyc, r.d_x, r.d_y);
                          return true;
                        }};
  const auto log = tr::train(model, xs, ys, library, cfg, opts);
  std::printf("%zu steps -> %s\n", log.size(), a.out.string().c_str());
  return 0;
}

struct TranslateArgs {
  fs::path checkpoint, out;
  std::optional<fs::path> in, manifest;
  ConfigFlags config;
};

int translate(const TranslateArgs& a) {
  const auto gen = load_translator(a.checkpoint, a.config);
  const auto tiles = of_domain(load_tiles(a.manifest, a.in, std::nullopt, lib::Domain::kHe, std::nullopt), lib::Domain::kHe);
  fs::create_directories(a.out);
  const auto t = gen.translator();
  sf::parallel_for(static_cast<std::int64_t>(tiles.size()),
                   [&](std::int64_t i) { ev::write_png(a.out / (tiles[i].tile_id + ".png"), t(tiles[i].image)); });
  write_text(a.out / "resolved_config.ini",
             invocation_text("translate", {{"checkpoint", a.checkpoint.string()},
                                           {"in", a.in ? a.in->string() : ""},
                                           {"manifest", a.manifest ? a.manifest->string() : ""}}) +
                 gen.config_text);
  std::printf("%zu tiles -> %s\n", tiles.size(), a.out.string().c_str());
  return 0;
}

struct EvaluateArgs {
  std::optional<fs::path> checkpoint, manifest;
  bool synthetic = false;
  int synthetic_tiles = 50;
  std::uint64_t synthetic_seed = 2;
  fs::path out;
  std::string label = "model";
  double min_density = 0.15;
  ConfigFlags config;
};

int evaluate(const EvaluateArgs& a) {
  LoadedGenerator gen;
  ev::TileTranslator t = [](const sf::imgproc::RgbImage& img) { return img; };
  if (a.checkpoint) {
    gen = load_translator(*a.checkpoint, a.config);
    t = gen.translator();
  } else {
    gen.cfg = resolve_run_config(a.config, &gen.config_text);
  }
  std::vector<ev::TileRecord> tiles;
  if (a.synthetic) {
    if (a.synthetic_tiles < 1) throw sf::InvalidArgument("--synthetic-tiles must be >= 1");
    const auto ds = sf::synthetic::make_synthetic_dataset(synthetic_spec(gen.cfg.profile, a.synthetic_seed), a.synthetic_tiles);
    for (const auto& s : ds.x) tiles.push_back({s.id, s.domain, s.image, s.cell_mask, std::nullopt});
  } else {
    if (!a.manifest) throw sf::InvalidArgument("give --synthetic or --manifest");
    tiles = of_domain(ev::load_tile_dataset(a.manifest->parent_path(), *a.manifest), lib::Domain::kHe);
  }
  if (tiles.empty()) throw sf::InvalidArgument("no H&E tiles to evaluate");
  const auto m = ev::evaluate(t, tiles, a.min_density);
  fs::create_directories(a.out);
  ev::write_metrics_csv(a.out / "metrics.csv", m);
  write_text(a.out / "resolved_config.ini",
             invocation_text("evaluate", {{"checkpoint", a.checkpoint ? a.checkpoint->string() : "identity"},
                                          {"manifest", a.manifest ? a.manifest->string() : ""},
                                          {"synthetic", a.synthetic ? "true" : "false"},
                                          {"synthetic_tiles", std::to_string(a.synthetic_tiles)},
                                          {"synthetic_seed", std::to_string(a.synthetic_seed)},
                                          {"min_density", std::to_string(a.min_density)}}) +
                 gen.config_text);
  std::printf("%s\n", ev::summary_row(a.label, m).c_str());
  return 0;
}

struct StitchArgs {
  fs::path checkpoint, manifest, out;
  ConfigFlags config;
};

int stitch(const StitchArgs& a) {
  const auto gen = load_translator(a.checkpoint, a.config);
  const auto tiles = of_domain(ev::load_tile_dataset(a.manifest.parent_path(), a.manifest), lib::Domain::kHe);
  const auto slide = ev::stitch_slide(tiles, gen.translator());
  ev::write_png(a.out, slide);
  write_text(snapshot_beside(a.out), invocation_text("stitch", {{"checkpoint", a.checkpoint.string()},
                                                                {"manifest", a.manifest.string()}}) +
                                         gen.config_text);
  std::printf("%zu tiles -> %s (%d x %d)\n", tiles.size(), a.out.string().c_str(), slide.width, slide.height);
  return 0;
}

int selftest(int cases, std::uint64_t seed) {
  auto results = sf::selftest::run_kernel_oracles(cases, seed);
  const auto grads = sf::selftest::run_gradient_suite(seed);
  results.insert(results.end(), grads.begin(), grads.end());
  bool all = true;
  std::printf("%-40s %7s %12s %12s  %s\n", "check", "cases", "error", "tolerance", "result");
  for (const auto& r : results) {
    all = all && r.pass;
    std::printf("%-40s %7zu %12.3e %12.3e  %s\n", r.name.c_str(), r.cases, r.error, r.tolerance,
                r.pass ? "PASS" : "FAIL");
  }
  std::printf("%zu checks, %s\n", results.size(), all ? "all passed" : "FAILURES");
  return all ? 0 : kRuntimeExit;
}

template <typename F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const sf::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kValidationExit;
  } catch (const sf::ManifestError& e) {
    std::fprintf(stderr, "manifest error: %s\n", e.what());
    return kValidationExit;
  } catch (const sf::FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return kValidationExit;
  } catch (const sf::InvalidArgument& e) {
    std::fprintf(stderr, "invalid argument: %s\n", e.what());
    return kValidationExit;
  } catch (const sf::SizeMismatch& e) {
    std::fprintf(stderr, "size mismatch: %s\n", e.what());
    return kValidationExit;
  } catch (const sf::GridGap& e) {
    std::fprintf(stderr, "grid gap: %s\n", e.what());
    return kValidationExit;
  } catch (const sf::MissingAnnotation& e) {
    std::fprintf(stderr, "missing annotation: %s\n", e.what());
    return kValidationExit;
  } catch (const sf::UnsupportedVersion& e) {
    std::fprintf(stderr, "unsupported checkpoint: %s\n", e.what());
    return kValidationExit;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntimeExit;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stain translation toolkit"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (1 is bit-deterministic; 0 keeps the default)")
      ->envname("STAINFORGE_THREADS")
      ->check(CLI::NonNegativeNumber);

  BuildLibraryArgs bl;
  auto* bl_cmd = app.add_subcommand("build-library", "Detect cell boxes on H&E or IHC tiles");
  bl_cmd->add_option("--domain", bl.domain, "he or ihc")->required()->check(CLI::IsMember({"he", "ihc"}));
  bl_cmd->add_option("--in", bl.in, "Folder of PNG tiles")->check(CLI::ExistingDirectory);
  bl_cmd->add_option("--masks", bl.masks, "Folder of annotation masks named like the tiles (H&E)")
      ->check(CLI::ExistingDirectory);
  bl_cmd->add_option("--manifest", bl.manifest, "Tile manifest CSV")->check(CLI::ExistingFile);
  bl_cmd->add_option("--out", bl.out, "Library CSV")->required();
  add_config_flags(bl_cmd, bl.config);

  TrainArgs ta;
  auto* ta_cmd = app.add_subcommand("train", "Train both generators and discriminators");
  ta_cmd->add_option("--out", ta.out, "Output directory")->required();
  ta_cmd->add_flag("--synthetic", ta.synthetic, "Train on generated synthetic domains");
  ta_cmd->add_option("--synthetic-tiles", ta.synthetic_tiles, "Synthetic tiles per domain");
  ta_cmd->add_option("--synthetic-seed", ta.synthetic_seed, "Synthetic data seed");
  ta_cmd->add_option("--manifest", ta.manifest, "Tile manifest CSV")->check(CLI::ExistingFile);
  ta_cmd->add_option("--library", ta.library, "Cell library CSV")->check(CLI::ExistingFile);
  ta_cmd->add_flag("--resume", ta.resume, "Continue from the newest epoch checkpoint in --out");
  ta_cmd->add_option("--log-every", ta.log_every, "Print losses every N steps (0 disables)");
  add_config_flags(ta_cmd, ta.config);

  TranslateArgs tl;
  auto* tl_cmd = app.add_subcommand("translate", "Translate H&E tiles to IHC with G_XY");
  tl_cmd->add_option("--checkpoint", tl.checkpoint, "Training checkpoint")->required()->check(CLI::ExistingFile);
  tl_cmd->add_option("--in", tl.in, "Folder of PNG tiles")->check(CLI::ExistingDirectory);
  tl_cmd->add_option("--manifest", tl.manifest, "Tile manifest CSV")->check(CLI::ExistingFile);
  tl_cmd->add_option("--out", tl.out, "Output folder")->required();
  add_config_flags(tl_cmd, tl.config);

  EvaluateArgs ea;
  auto* ea_cmd = app.add_subcommand("evaluate", "Score DAB masks of translated tiles against annotations");
  ea_cmd->add_option("--checkpoint", ea.checkpoint, "Training checkpoint (omit to score untranslated tiles)")
      ->check(CLI::ExistingFile);
  ea_cmd->add_option("--manifest", ea.manifest, "Tile manifest CSV")->check(CLI::ExistingFile);
  ea_cmd->add_flag("--synthetic", ea.synthetic, "Evaluate on a generated synthetic test split");
  ea_cmd->add_option("--synthetic-tiles", ea.synthetic_tiles, "Synthetic test tiles");
  ea_cmd->add_option("--synthetic-seed", ea.synthetic_seed, "Synthetic data seed");
  ea_cmd->add_option("--min-density", ea.min_density, "DAB density floor for mask extraction");
  ea_cmd->add_option("--label", ea.label, "Row label of the summary");
  ea_cmd->add_option("--out", ea.out, "Output folder")->required();
  add_config_flags(ea_cmd, ea.config);

  StitchArgs sa;
  auto* sa_cmd = app.add_subcommand("stitch", "Translate a gridded slide tile by tile and reassemble it");
  sa_cmd->add_option("--checkpoint", sa.checkpoint, "Training checkpoint")->required()->check(CLI::ExistingFile);
  sa_cmd->add_option("--manifest", sa.manifest, "Tile manifest CSV with grid positions")
      ->required()
      ->check(CLI::ExistingFile);
  sa_cmd->add_option("--out", sa.out, "Output PNG")->required();
  add_config_flags(sa_cmd, sa.config);

  int st_cases = 100;
  std::uint64_t st_seed = 1;
  auto* st_cmd = app.add_subcommand("selftest", "Kernel oracles and gradient checks");
  st_cmd->add_option("--cases", st_cases, "Random cases per kernel")->check(CLI::PositiveNumber);
  st_cmd->add_option("--seed", st_seed, "Case seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kValidationExit;
  }
  if (threads > 0) sf::set_thread_count(threads);

  return guarded([&] {
    if (*bl_cmd) return build_library(bl);
    if (*ta_cmd) return train(ta);
    if (*tl_cmd) return translate(tl);
    if (*ea_cmd) return evaluate(ea);
    if (*sa_cmd) return stitch(sa);
    return selftest(st_cases, st_seed);
  });
}
