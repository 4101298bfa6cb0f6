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

#include "stainforge/cell_library.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "stainforge/errors.hpp"

namespace stainforge::library {

using imgproc::BinaryMask;
using imgproc::Blob;
using imgproc::Point;
using imgproc::RealImage;
using imgproc::RgbImage;
using imgproc::Stain;

std::string to_string(Domain d) { return d == Domain::kHe ? "he" : "ihc"; }
std::string to_string(CellLabel l) { return l == CellLabel::kCancer ? "cancer" : "normal"; }

Domain parse_domain(const std::string& s) {
  if (s == "he" || s == "x" || s == "X") return Domain::kHe;
  if (s == "ihc" || s == "y" || s == "Y") return Domain::kIhc;
  throw InvalidArgument("unknown domain '" + s + "' (expected he or ihc)");
}

CellLabel parse_label(const std::string& s) {
  if (s == "cancer") return CellLabel::kCancer;
  if (s == "normal") return CellLabel::kNormal;
  throw InvalidArgument("unknown label '" + s + "' (expected cancer or normal)");
}

CellBox make_box(double x, double y, int size, CellLabel label, int height, int width) {
  if (size < 1) throw InvalidArgument("box size must be >= 1");
  if (size > height || size > width)
    throw InvalidArgument("box size " + std::to_string(size) + " exceeds tile " +
                          std::to_string(height) + "x" + std::to_string(width));
  const int half = size / 2;
  const int x0 = std::clamp(static_cast<int>(std::lround(x)) - half, 0, width - size);
  const int y0 = std::clamp(static_cast<int>(std::lround(y)) - half, 0, height - size);
  return {x0 + half, y0 + half, size, label};
}

nn::BoxSpec to_box_spec(const CellBox& b, int batch_index) {
  return {batch_index, double(b.x0()), double(b.y0()), double(b.x0() + b.size),
          double(b.y0() + b.size)};
}

std::size_t CellLibrary::box_count() const {
  std::size_t n = 0;
  for (const auto& [_, e] : entries) n += e.boxes.size();
  return n;
}

std::span<const CellBox> CellLibrary::boxes(const std::string& tile_id) const {
  const auto it = entries.find(tile_id);
  if (it == entries.end()) return {};
  return it->second.boxes;
}

namespace {

bool box_less(const CellBox& a, const CellBox& b) {
  return std::tie(a.cy, a.cx, a.size, a.label) < std::tie(b.cy, b.cx, b.size, b.label);
}

}  // namespace

void CellLibrary::canonicalize() {
  for (auto& [_, e] : entries) std::sort(e.boxes.begin(), e.boxes.end(), box_less);
}

PipelineConfig PipelineConfig::desk_scale() {
  PipelineConfig c;
  c.healthy = {{1.0, 1.5}, 0.25, 0};
  c.cancer = {{3.0, 4.0, 5.0}, 0.1, 0};
  c.ihc_cancer = {{1.5, 2.0}, 0.1, 0};
  c.ihc_normal = {{1.0, 1.5}, 0.25, 0};
  c.cluster_threshold = 8;
  c.box_size = 16;
  return c;
}

void PipelineConfig::validate() const {
  for (const auto* s : {&healthy, &cancer, &ihc_cancer, &ihc_normal}) s->validate();
  if (!(cluster_threshold > 0)) throw ConfigError("cluster_threshold must be > 0");
  if (box_size < 1) throw ConfigError("box_size must be >= 1");
  if (!(dab_min_density >= 0)) throw ConfigError("dab_min_density must be >= 0");
}

namespace {

std::string join(const std::vector<double>& v) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

std::vector<double> split_reals(const std::string& s, const std::string& key) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad number '" + item + "' in " + key);
    }
  }
  return out;
}

const char* const kStageNames[4] = {"he_first_pass", "he_cancer", "ihc_cancer", "ihc_normal"};

std::array<imgproc::BlobDetectionConfig*, 4> stages(PipelineConfig& c) {
  return {&c.healthy, &c.cancer, &c.ihc_cancer, &c.ihc_normal};
}

}  // namespace

std::string pipeline_config_text(const PipelineConfig& cfg) {
  std::ostringstream os;
  os.precision(17);
  auto copy = cfg;
  const auto s = stages(copy);
  for (int i = 0; i < 4; ++i) {
    os << "[" << kStageNames[i] << "]\n"
       << "sigmas = " << join(s[i]->sigmas) << "\n"
       << "response_threshold = " << s[i]->response_threshold << "\n"
       << "min_separation = " << s[i]->min_separation << "\n\n";
  }
  os << "[clustering]\nthreshold = " << cfg.cluster_threshold << "\n\n"
     << "[boxes]\nsize = " << cfg.box_size << "\n\n"
     << "[dab]\nmin_density = " << cfg.dab_min_density << "\n";
  return os.str();
}

std::string PipelineConfig::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : pipeline_config_text(*this)) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("cannot parse pipeline config: ") + e.what());
  }
  PipelineConfig cfg;
  try {
    const auto s = stages(cfg);
    for (int i = 0; i < 4; ++i) {
      const std::string sec = kStageNames[i];
      if (auto v = tree.get_optional<std::string>(sec + ".sigmas"))
        s[i]->sigmas = split_reals(*v, sec + ".sigmas");
      s[i]->response_threshold =
          tree.get<double>(sec + ".response_threshold", s[i]->response_threshold);
      s[i]->min_separation = tree.get<double>(sec + ".min_separation", s[i]->min_separation);
    }
    cfg.cluster_threshold = tree.get<double>("clustering.threshold", cfg.cluster_threshold);
    cfg.box_size = tree.get<int>("boxes.size", cfg.box_size);
    cfg.dab_min_density = tree.get<double>("dab.min_density", cfg.dab_min_density);
  } catch (const pt::ptree_bad_data& e) {
    throw ConfigError(std::string("bad value in pipeline config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

void save_pipeline_config(const std::filesystem::path& path, const PipelineConfig& cfg) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write pipeline config: " + path.string());
  os << pipeline_config_text(cfg);
  if (!os) throw IoError("failed writing pipeline config: " + path.string());
}

namespace {

imgproc::StainImage stains_of(const RgbImage& tile) {
  if (tile.channels != 3) throw ShapeMismatch("tile must have 3 channels");
  return imgproc::deconvolve_hed(imgproc::rgb_to_optical_density(tile));
}

std::vector<Point> centers(const std::vector<Blob>& blobs, std::span<const std::size_t> idx) {
  std::vector<Point> pts;
  for (auto i : idx) pts.push_back({blobs[i].cx, blobs[i].cy});
  return pts;
}

void sort_boxes(std::vector<CellBox>& boxes) { std::sort(boxes.begin(), boxes.end(), box_less); }

}  // namespace

std::vector<CellBox> build_he_library(const RgbImage& tile, const BinaryMask& annotation,
                                      const PipelineConfig& cfg, HeTrace* trace) {
  cfg.validate();
  if (annotation.height() != tile.height || annotation.width() != tile.width)
    throw ShapeMismatch("annotation " + std::to_string(annotation.height()) + "x" +
                        std::to_string(annotation.width()) + " does not match tile " +
                        std::to_string(tile.height) + "x" + std::to_string(tile.width));
  const auto hema = stains_of(tile).channel(Stain::kHematoxylin, true);

  HeTrace local;
  HeTrace& t = trace ? *trace : local;
  t.first_pass = imgproc::detect_blobs(hema, cfg.healthy);
  std::vector<Point> pts;
  for (const auto& b : t.first_pass) pts.push_back({b.cx, b.cy});
  t.clusters = imgproc::cluster_points(pts, cfg.cluster_threshold);

  t.refined = annotation;
  for (const auto& c : t.clusters)
    t.refined.subtract(imgproc::convex_hull_mask(centers(t.first_pass, c), tile.height, tile.width));

  t.cancer = imgproc::detect_blobs(hema, cfg.cancer, &t.refined);

  std::vector<CellBox> boxes;
  for (const auto& b : t.cancer)
    boxes.push_back(make_box(b.cx, b.cy, cfg.box_size, CellLabel::kCancer, tile.height, tile.width));
  for (const auto& b : t.first_pass)
    if (!t.refined.contains(b.cx, b.cy))
      boxes.push_back(make_box(b.cx, b.cy, cfg.box_size, CellLabel::kNormal, tile.height, tile.width));
  sort_boxes(boxes);
  return boxes;
}

BinaryMask dab_mask(const RealImage& dab, double min_density) {
  const auto otsu = imgproc::otsu_threshold(dab);
  const double t = otsu.degenerate ? min_density : std::max(otsu.threshold, min_density);
  return imgproc::threshold_mask(dab, t);
}

std::vector<CellBox> build_ihc_library(const RgbImage& tile, const PipelineConfig& cfg,
                                       IhcTrace* trace) {
  cfg.validate();
  const auto st = stains_of(tile);
  IhcTrace local;
  IhcTrace& t = trace ? *trace : local;
  t.dab = st.channel(Stain::kDab, true);
  t.dab_mask = dab_mask(t.dab, cfg.dab_min_density);
  t.region = imgproc::fill_holes(t.dab_mask);

  // Nuclei show up as bright holes in the inverted binary DAB.
  RealImage inverted(tile.height, tile.width, 1);
  for (int y = 0; y < tile.height; ++y)
    for (int x = 0; x < tile.width; ++x) inverted.at(y, x) = t.dab_mask.at(y, x) ? 0.0 : 1.0;
  t.cancer = imgproc::detect_blobs(inverted, cfg.ihc_cancer, &t.region);

  const auto outside = t.region.complement();
  t.normal = imgproc::detect_blobs(st.channel(Stain::kHematoxylin, true), cfg.ihc_normal, &outside);

  std::vector<CellBox> boxes;
  for (const auto& b : t.cancer)
    boxes.push_back(make_box(b.cx, b.cy, cfg.box_size, CellLabel::kCancer, tile.height, tile.width));
  for (const auto& b : t.normal)
    boxes.push_back(make_box(b.cx, b.cy, cfg.box_size, CellLabel::kNormal, tile.height, tile.width));
  sort_boxes(boxes);
  return boxes;
}

namespace {

constexpr const char* kHeader = "tile_id,domain,cx,cy,size,label";

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

int parse_int(const std::string& s, const std::string& what, std::size_t line) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw FormatError("bad " + what + " '" + s + "'", line);
}

}  // namespace

void write_library(const std::filesystem::path& path, const CellLibrary& lib) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open library for writing: " + path.string());
  if (!lib.meta.empty())
    os << "#meta,tile_size=" << lib.meta.tile_size << ",source_domain=" << lib.meta.source_domain
       << ",config_hash=" << lib.meta.config_hash << "\n";
  os << kHeader << "\n";
  for (const auto& [id, entry] : lib.entries) {
    if (id.empty() || id.find_first_of(",\n\r") != std::string::npos)
      throw InvalidArgument("tile id '" + id + "' cannot be written to CSV");
    auto boxes = entry.boxes;
    sort_boxes(boxes);
    for (const auto& b : boxes)
      os << id << "," << to_string(entry.domain) << "," << b.cx << "," << b.cy << "," << b.size
         << "," << to_string(b.label) << "\n";
  }
  os.flush();
  if (!os) throw IoError("failed writing library: " + path.string());
}

CellLibrary read_library(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open library: " + path.string());
  CellLibrary lib;
  std::string line;
  std::size_t n = 0;
  bool header_seen = false;
  while (std::getline(is, line)) {
    ++n;
    const bool terminated = !is.eof();
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!header_seen) {
      if (line.rfind("#meta", 0) == 0 && n == 1) {
        for (const auto& kv : split_csv(line.substr(std::min<std::size_t>(line.size(), 6)))) {
          const auto eq = kv.find('=');
          if (eq == std::string::npos) throw FormatError("bad meta field '" + kv + "'", n);
          const auto key = kv.substr(0, eq), val = kv.substr(eq + 1);
          if (key == "tile_size") lib.meta.tile_size = parse_int(val, "tile_size", n);
          else if (key == "source_domain") lib.meta.source_domain = val;
          else if (key == "config_hash") lib.meta.config_hash = val;
          else throw FormatError("unknown meta key '" + key + "'", n);
        }
        continue;
      }
      if (line != kHeader) throw FormatError("expected header '" + std::string(kHeader) + "'", n);
      header_seen = true;
      continue;
    }
    if (line.empty() && !terminated) break;
    const auto f = split_csv(line);
    if (f.size() != 6)
      throw FormatError("expected 6 fields, found " + std::to_string(f.size()), n);
    if (f[0].empty()) throw FormatError("empty tile_id", n);
    Domain d;
    CellBox b;
    try {
      d = parse_domain(f[1]);
      b.label = parse_label(f[5]);
    } catch (const InvalidArgument& e) {
      throw FormatError(e.what(), n);
    }
    b.cx = parse_int(f[2], "cx", n);
    b.cy = parse_int(f[3], "cy", n);
    b.size = parse_int(f[4], "size", n);
    if (b.size < 1) throw FormatError("box size must be >= 1", n);
    if (b.x0() < 0 || b.y0() < 0) throw FormatError("box extends past the tile origin", n);
    if (lib.meta.tile_size > 0 &&
        (b.x0() + b.size > lib.meta.tile_size || b.y0() + b.size > lib.meta.tile_size))
      throw FormatError("box extends past the tile edge", n);
    if (!terminated) throw FormatError("record not terminated by a newline (truncated file?)", n);
    auto [it, fresh] = lib.entries.try_emplace(f[0], TileEntry{d, {}});
    if (!fresh && it->second.domain != d)
      throw FormatError("tile '" + f[0] + "' listed under two domains", n);
    it->second.boxes.push_back(b);
  }
  if (!header_seen) throw FormatError("missing header", n + 1);
  lib.canonicalize();
  return lib;
}

std::optional<RoiBatch> sample_boxes(std::span<const CellBox> entry, int k, std::uint64_t seed) {
  if (k < 1) throw InvalidArgument("k must be >= 1");
  if (entry.empty()) return std::nullopt;
  std::vector<const CellBox*> cancer, normal;
  for (const auto& b : entry) (b.label == CellLabel::kCancer ? cancer : normal).push_back(&b);
  int n_cancer = k, n_normal = 0;
  if (cancer.empty()) {
    n_cancer = 0;
    n_normal = k;
  } else if (!normal.empty()) {
    n_cancer = (k + 1) / 2;
    n_normal = k / 2;
  }
  std::mt19937_64 rng(seed);
  RoiBatch batch;
  auto draw = [&](const std::vector<const CellBox*>& pool, int count) {
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    for (int i = 0; i < count; ++i) batch.boxes.push_back(*pool[pick(rng)]);
  };
  draw(cancer, n_cancer);
  draw(normal, n_normal);
  return batch;
}

}  // namespace stainforge::library
