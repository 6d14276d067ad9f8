// Copyright 2026 The pam50 Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "pam50/tiling.h"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <regex>
#include <sstream>

#include "pam50/csv.h"
#include "pam50/errors.h"

namespace pam50::tiling {
namespace {

constexpr std::string_view kManifestHeader =
    "slide_id,patch_id,grid_row,grid_col,origin_x,origin_y,tissue_fraction,"
    "laplacian_var,qc_status";

struct AxisTap {
  int lo;
  int hi;
  float w_hi;  // weight of `hi`; `lo` gets 1 - w_hi
};

std::vector<AxisTap> BilinearTaps(int in, int out) {
  std::vector<AxisTap> taps(out);
  const double scale = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int lo = static_cast<int>(std::floor(src));
    const int hi = std::min(lo + 1, in - 1);
    taps[i] = {lo, hi, static_cast<float>(src - lo)};
  }
  return taps;
}

/// Resized values, interleaved RGB, in the 0..255 range.
std::vector<float> ResizeToFloat(const RgbImage& image, int out_w, int out_h) {
  const auto xt = BilinearTaps(image.width, out_w);
  const auto yt = BilinearTaps(image.height, out_h);
  std::vector<float> out(static_cast<size_t>(out_w) * out_h * 3);
  for (int y = 0; y < out_h; ++y) {
    const uint8_t* row0 = image.at(0, yt[y].lo);
    const uint8_t* row1 = image.at(0, yt[y].hi);
    const float wy = yt[y].w_hi;
    for (int x = 0; x < out_w; ++x) {
      const int x0 = xt[x].lo * 3;
      const int x1 = xt[x].hi * 3;
      const float wx = xt[x].w_hi;
      for (int c = 0; c < 3; ++c) {
        const float top = row0[x0 + c] + wx * (row0[x1 + c] - row0[x0 + c]);
        const float bot = row1[x0 + c] + wx * (row1[x1 + c] - row1[x0 + c]);
        out[(static_cast<size_t>(y) * out_w + x) * 3 + c] = top + wy * (bot - top);
      }
    }
  }
  return out;
}

bool OnBorderRing(const PatchRecord& r, int rows, int cols) {
  return r.grid_row == 0 || r.grid_col == 0 || r.grid_row == rows - 1 ||
         r.grid_col == cols - 1;
}

}  // namespace

std::string_view QcStatusName(QcStatus status) {
  switch (status) {
    case QcStatus::kUnset: return "unset";
    case QcStatus::kPass: return "pass";
    case QcStatus::kFailBackground: return "fail_background";
    case QcStatus::kFailBlur: return "fail_blur";
    case QcStatus::kFailBorder: return "fail_border";
  }
  return "unset";
}

QcStatus ParseQcStatus(std::string_view name) {
  for (QcStatus s : {QcStatus::kUnset, QcStatus::kPass, QcStatus::kFailBackground,
                     QcStatus::kFailBlur, QcStatus::kFailBorder}) {
    if (QcStatusName(s) == name) return s;
  }
  throw Error(ErrorCode::kInput, "unknown qc_status '" + std::string(name) + "'");
}

std::vector<PatchRecord> ComputeGrid(int64_t width, int64_t height) {
  std::vector<PatchRecord> grid;
  if (width < 0 || height < 0) return grid;
  const int64_t cols = width / kPatchSize;
  const int64_t rows = height / kPatchSize;
  grid.reserve(static_cast<size_t>(rows * cols));
  int64_t id = 0;
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t c = 0; c < cols; ++c) {
      PatchRecord rec;
      rec.patch_id = id++;
      rec.grid_row = static_cast<int>(r);
      rec.grid_col = static_cast<int>(c);
      rec.origin_x = c * kPatchSize;
      rec.origin_y = r * kPatchSize;
      grid.push_back(std::move(rec));
    }
  }
  return grid;
}

GrayImage ToGrayscale(const RgbImage& patch) {
  GrayImage gray(patch.width, patch.height);
  const size_t n = patch.pixel_count();
  const uint8_t* p = patch.pixels.data();
  for (size_t i = 0; i < n; ++i, p += 3) {
    gray.values[i] = kGrayWeights[0] * p[0] + kGrayWeights[1] * p[1] +
                     kGrayWeights[2] * p[2];
  }
  return gray;
}

double TissueFraction(const GrayImage& gray) {
  if (gray.values.empty()) return 0.0;
  size_t count = 0;
  for (double v : gray.values) count += v < kTissueGrayThreshold ? 1 : 0;
  return static_cast<double>(count) / static_cast<double>(gray.values.size());
}

double LaplacianVariance(const GrayImage& gray) {
  const int w = gray.width;
  const int h = gray.height;
  if (w < 3 || h < 3) return 0.0;
  auto response = [&](int x, int y) {
    return gray.at(x, y - 1) + gray.at(x - 1, y) + gray.at(x + 1, y) +
           gray.at(x, y + 1) - 4.0 * gray.at(x, y);
  };
  const double n = static_cast<double>(w - 2) * (h - 2);
  double sum = 0.0;
  for (int y = 1; y < h - 1; ++y)
    for (int x = 1; x < w - 1; ++x) sum += response(x, y);
  const double mean = sum / n;
  double ss = 0.0;
  for (int y = 1; y < h - 1; ++y) {
    for (int x = 1; x < w - 1; ++x) {
      const double d = response(x, y) - mean;
      ss += d * d;
    }
  }
  return ss / n;
}

QcStatus QcFilter(double tissue_fraction, double laplacian_var,
                  const QcThresholds& thresholds) {
  if (!(tissue_fraction >= thresholds.m_min)) return QcStatus::kFailBackground;
  if (!(laplacian_var >= thresholds.varl_min)) return QcStatus::kFailBlur;
  return QcStatus::kPass;
}

RgbImage ResizeBilinear(const RgbImage& image, int out_width, int out_height) {
  const auto values = ResizeToFloat(image, out_width, out_height);
  RgbImage out(out_width, out_height);
  for (size_t i = 0; i < values.size(); ++i) {
    out.pixels[i] = static_cast<uint8_t>(std::clamp(std::lround(values[i]), 0L, 255L));
  }
  return out;
}

PreparedPatch PreparePatch(const RgbImage& patch, int64_t patch_id) {
  const auto values = ResizeToFloat(patch, kPreparedSize, kPreparedSize);
  PreparedPatch out;
  out.patch_id = patch_id;
  out.tensor.resize(kPreparedLength);
  constexpr size_t plane = static_cast<size_t>(kPreparedSize) * kPreparedSize;
  for (size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) {
      const float unit = values[i * 3 + c] / 255.0f;
      out.tensor[c * plane + i] = (unit - kImageNetMean[c]) / kImageNetStd[c];
    }
  }
  return out;
}

TileResult ScoreSlide(const SlideRaster& slide, const TileOptions& options) {
  TileResult result;
  result.manifest = ComputeGrid(slide.image.width, slide.image.height);
  const int cols = slide.image.width / kPatchSize;
  const int rows = slide.image.height / kPatchSize;

  std::vector<size_t> passing;
  for (size_t i = 0; i < result.manifest.size(); ++i) {
    PatchRecord& rec = result.manifest[i];
    rec.slide_id = slide.slide_id;
    const RgbImage patch =
        slide.image.Crop(static_cast<int>(rec.origin_x),
                         static_cast<int>(rec.origin_y), kPatchSize, kPatchSize);
    const GrayImage gray = ToGrayscale(patch);
    rec.tissue_fraction = TissueFraction(gray);
    rec.laplacian_var = LaplacianVariance(gray);
    if (options.border_filter && OnBorderRing(rec, rows, cols)) {
      rec.qc_status = QcStatus::kFailBorder;
    } else {
      rec.qc_status = QcFilter(rec.tissue_fraction, rec.laplacian_var, options.qc);
    }
    if (rec.qc_status == QcStatus::kPass) passing.push_back(i);
  }
  if (passing.empty()) {
    throw Error(ErrorCode::kEmptySlide,
                "slide '" + slide.slide_id + "' has no patch passing QC (" +
                    std::to_string(result.manifest.size()) + " grid positions)");
  }

  if (options.stain_normalize) {
    const size_t n_sample =
        std::min(passing.size(), static_cast<size_t>(std::max(1, options.stain_sample_patches)));
    const int stride = std::max(1, options.stain_sample_stride);
    std::vector<uint8_t> sample;
    for (size_t s = 0; s < n_sample; ++s) {
      const PatchRecord& rec = result.manifest[passing[s * passing.size() / n_sample]];
      for (int y = 0; y < kPatchSize; y += stride) {
        const uint8_t* row = slide.image.at(static_cast<int>(rec.origin_x),
                                            static_cast<int>(rec.origin_y) + y);
        for (int x = 0; x < kPatchSize; x += stride) {
          sample.insert(sample.end(), row + 3 * x, row + 3 * x + 3);
        }
      }
    }
    try {
      result.source_profile = stain::MacenkoFit(sample, options.macenko);
      // Surface degenerate stains here rather than when patches are prepared.
      stain::StainNormalizer check(*result.source_profile, options.reference);
    } catch (const Error& e) {
      result.source_profile.reset();
      result.stain_warning = e.what();
    }
  }

  return result;
}

void PreparePassing(const SlideRaster& slide, const std::vector<PatchRecord>& manifest,
                    const std::optional<stain::StainProfile>& source,
                    const stain::StainProfile& reference, const PreparedSink& sink) {
  std::optional<stain::StainNormalizer> normalizer;
  if (source) normalizer.emplace(*source, reference);
  for (const PatchRecord& rec : manifest) {
    if (rec.qc_status != QcStatus::kPass) continue;
    if (rec.origin_x + kPatchSize > slide.image.width ||
        rec.origin_y + kPatchSize > slide.image.height) {
      throw Error(ErrorCode::kInput, "manifest patch " + std::to_string(rec.patch_id) +
                                         " lies outside slide '" + slide.slide_id + "'");
    }
    RgbImage patch =
        slide.image.Crop(static_cast<int>(rec.origin_x),
                         static_cast<int>(rec.origin_y), kPatchSize, kPatchSize);
    if (normalizer) normalizer->Apply(patch.pixels);
    sink(PreparePatch(patch, rec.patch_id));
  }
}

TileResult TileSlide(const SlideRaster& slide, const TileOptions& options,
                     const PreparedSink& sink) {
  TileResult result = ScoreSlide(slide, options);
  PreparePassing(slide, result.manifest, result.source_profile, options.reference, sink);
  return result;
}

TileResult TileSlide(const SlideRaster& slide, const TileOptions& options,
                     std::vector<PreparedPatch>* prepared) {
  return TileSlide(slide, options, [prepared](PreparedPatch&& p) {
    if (prepared != nullptr) prepared->push_back(std::move(p));
  });
}

SlideRaster LoadTileDirectory(const std::filesystem::path& dir,
                              const std::string& slide_id) {
  static const std::regex kTileName(R"(r(\d+)_c(\d+)\.(png|ppm))");
  std::map<std::pair<int, int>, std::filesystem::path> tiles;
  int max_row = -1;
  int max_col = -1;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (!entry.is_regular_file() || !std::regex_match(name, m, kTileName)) continue;
    const int r = std::stoi(m[1].str());
    const int c = std::stoi(m[2].str());
    tiles[{r, c}] = entry.path();
    max_row = std::max(max_row, r);
    max_col = std::max(max_col, c);
  }
  if (tiles.empty()) {
    throw Error(ErrorCode::kIo, "no r<row>_c<col> tiles in " + dir.string());
  }
  SlideRaster slide;
  slide.slide_id = slide_id;
  slide.image = RgbImage((max_col + 1) * kPatchSize, (max_row + 1) * kPatchSize, 255);
  for (const auto& [rc, path] : tiles) {
    const RgbImage tile = ReadImage(path);
    if (tile.width != kPatchSize || tile.height != kPatchSize) {
      throw Error(ErrorCode::kInput, path.string() + " is not 512x512");
    }
    slide.image.Paste(tile, rc.second * kPatchSize, rc.first * kPatchSize);
  }
  return slide;
}

SlideRaster LoadSlide(const std::filesystem::path& path,
                      const std::string& slide_id) {
  if (std::filesystem::is_directory(path)) return LoadTileDirectory(path, slide_id);
  return SlideRaster{slide_id, ReadImage(path)};
}

void WriteManifest(std::ostream& out, const std::vector<PatchRecord>& manifest) {
  out << kManifestHeader << '\n';
  char buf[64];
  for (const auto& r : manifest) {
    out << r.slide_id << ',' << r.patch_id << ',' << r.grid_row << ','
        << r.grid_col << ',' << r.origin_x << ',' << r.origin_y << ',';
    std::snprintf(buf, sizeof(buf), "%.6f", r.tissue_fraction);
    out << buf << ',';
    std::snprintf(buf, sizeof(buf), "%.6f", r.laplacian_var);
    out << buf << ',' << QcStatusName(r.qc_status) << '\n';
  }
}

std::vector<PatchRecord> ReadManifest(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || csv::TrimEol(line) != kManifestHeader) {
    throw Error(ErrorCode::kInput, "manifest: unexpected header");
  }
  std::vector<PatchRecord> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = csv::TrimEol(line);
    if (line.empty()) continue;
    const auto f = csv::Split(line);
    if (f.size() != 9) {
      throw Error(ErrorCode::kInput,
                  "manifest line " + std::to_string(line_no) + ": expected 9 fields");
    }
    PatchRecord r;
    r.slide_id = f[0];
    r.patch_id = csv::ParseInt(f[1], line_no);
    r.grid_row = static_cast<int>(csv::ParseInt(f[2], line_no));
    r.grid_col = static_cast<int>(csv::ParseInt(f[3], line_no));
    r.origin_x = csv::ParseInt(f[4], line_no);
    r.origin_y = csv::ParseInt(f[5], line_no);
    r.tissue_fraction = csv::ParseDouble(f[6], line_no);
    r.laplacian_var = csv::ParseDouble(f[7], line_no);
    r.qc_status = ParseQcStatus(f[8]);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace pam50::tiling
