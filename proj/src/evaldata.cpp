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

#include "stainforge/evaldata.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "stainforge/errors.hpp"
#include "stainforge/parallel.hpp"

namespace stainforge::evaldata {

using imgproc::BinaryMask;
using imgproc::RgbImage;

namespace {

// Decodes any PNG into 8-bit pixels of the requested simplified-API format.
std::vector<std::uint8_t> decode_png(const std::filesystem::path& path, png_uint_32 format, int& h,
                                     int& w) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw IoError("cannot read PNG " + path.string() + ": " + image.message);
  image.format = format;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  h = static_cast<int>(image.height);
  w = static_cast<int>(image.width);
  return buf;
}

void encode_png(const std::filesystem::path& path, png_uint_32 format, int h, int w,
                const std::uint8_t* data) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.format = format;
  image.height = static_cast<png_uint_32>(h);
  image.width = static_cast<png_uint_32>(w);
  if (!png_image_write_to_file(&image, path.c_str(), 0, data, 0, nullptr))
    throw IoError("cannot write PNG " + path.string() + ": " + image.message);
}

}  // namespace

RgbImage read_png(const std::filesystem::path& path) {
  int h = 0, w = 0;
  auto buf = decode_png(path, PNG_FORMAT_RGB, h, w);
  RgbImage img(h, w, 3);
  img.data = std::move(buf);
  return img;
}

void write_png(const std::filesystem::path& path, const RgbImage& img) {
  if (img.channels != 3) throw InvalidArgument("write_png expects 3 channels");
  encode_png(path, PNG_FORMAT_RGB, img.height, img.width, img.data.data());
}

BinaryMask read_mask_png(const std::filesystem::path& path) {
  int h = 0, w = 0;
  const auto buf = decode_png(path, PNG_FORMAT_RGB, h, w);
  BinaryMask m(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = (static_cast<std::size_t>(y) * w + x) * 3;
      if (buf[i] || buf[i + 1] || buf[i + 2]) m.set(y, x);
    }
  return m;
}

void write_mask_png(const std::filesystem::path& path, const BinaryMask& mask) {
  std::vector<std::uint8_t> buf(mask.bits().size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = mask.bits()[i] ? 255 : 0;
  encode_png(path, PNG_FORMAT_GRAY, mask.height(), mask.width(), buf.data());
}

// ---------------------------------------------------------------- manifest

namespace {

constexpr const char* kManifestHeader = "tile_id,domain,image_path,mask_path,row,col";

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

int parse_index(const std::string& s, const std::string& what, std::size_t line) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty() || v < 0)
    throw ManifestError("manifest line " + std::to_string(line) + ": bad " + what + " '" + s + "'");
  return v;
}

}  // namespace

std::vector<TileRecord> load_tile_dataset(const std::filesystem::path& root,
                                          const std::filesystem::path& manifest,
                                          std::optional<int> tile_size) {
  std::ifstream is(manifest);
  if (!is) throw IoError("cannot read manifest " + manifest.string());
  std::string line;
  if (!std::getline(is, line) || (line.erase(line.find_last_not_of('\r') + 1), line != kManifestHeader))
    throw ManifestError("manifest line 1: expected header '" + std::string(kManifestHeader) + "'");
  std::vector<TileRecord> out;
  std::map<std::string, std::size_t> seen;
  std::size_t line_no = 1;
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : root / path;
  };
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv(line);
    const std::string where = "manifest line " + std::to_string(line_no);
    if (f.size() != 6) throw ManifestError(where + ": expected 6 fields, got " + std::to_string(f.size()));
    TileRecord r;
    r.tile_id = f[0];
    if (r.tile_id.empty()) throw ManifestError(where + ": empty tile_id");
    if (!seen.emplace(r.tile_id, line_no).second)
      throw ManifestError(where + ": duplicate tile_id '" + r.tile_id + "'");
    try {
      r.domain = library::parse_domain(f[1]);
    } catch (const Error&) {
      throw ManifestError(where + ": bad domain '" + f[1] + "'");
    }
    if (f[2].empty()) throw ManifestError(where + ": empty image_path");
    if (f[4].empty() != f[5].empty()) throw ManifestError(where + ": row and col must be given together");
    if (!f[4].empty()) r.grid_pos = GridPos{parse_index(f[4], "row", line_no), parse_index(f[5], "col", line_no)};
    r.image = read_png(resolve(f[2]));
    if (tile_size && (r.image.height != *tile_size || r.image.width != *tile_size))
      throw SizeMismatch("tile '" + r.tile_id + "' is " + std::to_string(r.image.height) + "x" +
                         std::to_string(r.image.width) + ", expected " + std::to_string(*tile_size));
    if (!f[3].empty()) {
      r.annotation = read_mask_png(resolve(f[3]));
      if (r.annotation->height() != r.image.height || r.annotation->width() != r.image.width)
        throw SizeMismatch("mask of tile '" + r.tile_id + "' is " + std::to_string(r.annotation->height()) +
                           "x" + std::to_string(r.annotation->width()) + ", image is " +
                           std::to_string(r.image.height) + "x" + std::to_string(r.image.width));
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_tile_dataset(const std::filesystem::path& root, const std::filesystem::path& manifest,
                        const std::vector<TileRecord>& tiles) {
  std::error_code ec;
  std::filesystem::create_directories(root / "images", ec);
  std::filesystem::create_directories(root / "masks", ec);
  if (ec) throw IoError("cannot create dataset directories under " + root.string());
  std::ofstream os(manifest, std::ios::binary);
  if (!os) throw IoError("cannot write manifest " + manifest.string());
  os << kManifestHeader << '\n';
  for (const auto& t : tiles) {
    const std::string image = "images/" + t.tile_id + ".png";
    write_png(root / image, t.image);
    std::string mask;
    if (t.annotation) {
      mask = "masks/" + t.tile_id + ".png";
      write_mask_png(root / mask, *t.annotation);
    }
    os << t.tile_id << ',' << library::to_string(t.domain) << ',' << image << ',' << mask << ',';
    if (t.grid_pos) os << t.grid_pos->row << ',' << t.grid_pos->col;
    else os << ',';
    os << '\n';
  }
  if (!os) throw IoError("write failed for " + manifest.string());
}

// ---------------------------------------------------------------- metrics

BinaryMask extract_dab_mask(const RgbImage& ihc_tile, double min_density) {
  const auto dab = imgproc::deconvolve_hed(imgproc::rgb_to_optical_density(ihc_tile))
                       .channel(imgproc::Stain::kDab, true);
  const auto otsu = imgproc::otsu_threshold(dab);
  if (otsu.degenerate) return BinaryMask(ihc_tile.height, ihc_tile.width);
  return imgproc::fill_holes(imgproc::threshold_mask(dab, std::max(otsu.threshold, min_density)));
}

namespace {

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

Confusion confusion(const BinaryMask& pred, const BinaryMask& gt, const char* who) {
  if (pred.height() != gt.height() || pred.width() != gt.width())
    throw ShapeMismatch(std::string(who) + ": mask shapes differ");
  Confusion c;
  const auto& p = pred.bits();
  const auto& g = gt.bits();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (g[i]) (p[i] ? c.tp : c.fn)++;
    else (p[i] ? c.fp : c.tn)++;
  }
  return c;
}

}  // namespace

double dice(const BinaryMask& pred, const BinaryMask& gt) {
  const auto c = confusion(pred, gt, "dice");
  const std::size_t denom = 2 * c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : 2.0 * c.tp / denom;
}

double balanced_accuracy(const BinaryMask& pred, const BinaryMask& gt) {
  const auto c = confusion(pred, gt, "balanced_accuracy");
  const std::size_t pos = c.tp + c.fn, neg = c.tn + c.fp;
  if (pos == 0) return static_cast<double>(c.tn) / neg;
  if (neg == 0) return static_cast<double>(c.tp) / pos;
  return 0.5 * (static_cast<double>(c.tp) / pos + static_cast<double>(c.tn) / neg);
}

MeanStd mean_std(const std::vector<double>& values) {
  if (values.empty()) throw InvalidArgument("mean_std of an empty list");
  double sum = 0;
  for (double v : values) sum += v;
  const double mean = sum / values.size();
  double ss = 0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / values.size())};
}

MetricsSummary evaluate(const TileTranslator& translate, const std::vector<TileRecord>& tiles,
                        double min_density) {
  if (tiles.empty()) throw InvalidArgument("evaluate needs at least one tile");
  for (const auto& t : tiles)
    if (!t.annotation) throw MissingAnnotation("tile '" + t.tile_id + "' has no annotation");
  MetricsSummary m;
  m.dice.resize(tiles.size());
  m.bac.resize(tiles.size());
  parallel_for(static_cast<std::int64_t>(tiles.size()), [&](std::int64_t i) {
    const auto& t = tiles[i];
    const auto pred = extract_dab_mask(translate(t.image), min_density);
    m.dice[i] = dice(pred, *t.annotation);
    m.bac[i] = balanced_accuracy(pred, *t.annotation);
  });
  for (const auto& t : tiles) m.tile_ids.push_back(t.tile_id);
  m.dice_stats = mean_std(m.dice);
  m.bac_stats = mean_std(m.bac);
  return m;
}

void write_metrics_csv(const std::filesystem::path& path, const MetricsSummary& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << "tile_id,dice,bac\n";
  char buf[64];
  for (std::size_t i = 0; i < m.tile_ids.size(); ++i) {
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f\n", m.dice[i], m.bac[i]);
    os << m.tile_ids[i] << buf;
  }
  if (!os) throw IoError("write failed for " + path.string());
}

std::string summary_row(const std::string& label, const MetricsSummary& m) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "  DICE %.3f±%.3f  BAC %.3f±%.3f", m.dice_stats.mean, m.dice_stats.std,
                m.bac_stats.mean, m.bac_stats.std);
  return label + buf;
}

// ---------------------------------------------------------------- stitching

RgbImage stitch_slide(const std::vector<TileRecord>& tiles, const TileTranslator& translate) {
  if (tiles.empty()) throw InvalidArgument("stitch_slide needs at least one tile");
  int rows = 0, cols = 0;
  std::map<std::pair<int, int>, std::size_t> at;
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const auto& t = tiles[i];
    if (!t.grid_pos) throw InvalidArgument("tile '" + t.tile_id + "' has no grid position");
    if (t.image.height != tiles[0].image.height || t.image.width != tiles[0].image.width)
      throw SizeMismatch("tile '" + t.tile_id + "' differs in size from '" + tiles[0].tile_id + "'");
    if (!at.emplace(std::pair{t.grid_pos->row, t.grid_pos->col}, i).second)
      throw InvalidArgument("two tiles at row " + std::to_string(t.grid_pos->row) + ", col " +
                            std::to_string(t.grid_pos->col));
    rows = std::max(rows, t.grid_pos->row + 1);
    cols = std::max(cols, t.grid_pos->col + 1);
  }
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      if (!at.count({r, c}))
        throw GridGap("no tile at row " + std::to_string(r) + ", col " + std::to_string(c));
  const int th = tiles[0].image.height, tw = tiles[0].image.width;
  RgbImage out(rows * th, cols * tw, 3);
  parallel_for(static_cast<std::int64_t>(tiles.size()), [&](std::int64_t i) {
    const auto& t = tiles[i];
    const RgbImage img = translate(t.image);
    if (img.height != th || img.width != tw || img.channels != 3)
      throw SizeMismatch("translator changed the size of tile '" + t.tile_id + "'");
    const int oy = t.grid_pos->row * th, ox = t.grid_pos->col * tw;
    for (int y = 0; y < th; ++y)
      std::copy_n(&img.at(y, 0, 0), static_cast<std::size_t>(tw) * 3, &out.at(oy + y, ox, 0));
  });
  return out;
}

}  // namespace stainforge::evaldata
