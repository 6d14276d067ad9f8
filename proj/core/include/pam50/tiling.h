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

/// @file tiling.h
/// @brief Slide tiling, patch quality control and tensor preparation.
///
/// A slide of size W x H is cut into the floor(W/512) * floor(H/512)
/// non-overlapping 512x512 patches that fit entirely inside the image, in
/// row-major order. Each patch is scored with
///
///  - the tissue fraction M: share of grayscale pixels strictly below 200,
///    with gray = 0.2989 R + 0.5870 G + 0.1140 B kept in real arithmetic;
///  - the Laplacian variance Var_L: population variance of the 4-neighbour
///    Laplacian over the valid interior (the one-pixel border is dropped).
///
/// A patch passes QC iff M >= m_min and Var_L >= varl_min. Passing patches
/// are optionally stain normalized, bilinearly resized to 224x224, scaled
/// to [0, 1] and standardized with the ImageNet channel statistics.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pam50/image.h"
#include "pam50/stain.h"

namespace pam50::tiling {

inline constexpr int kPatchSize = 512;
inline constexpr int kPreparedSize = 224;
inline constexpr int kPreparedChannels = 3;
inline constexpr size_t kPreparedLength =
    static_cast<size_t>(kPreparedChannels) * kPreparedSize * kPreparedSize;

inline constexpr double kGrayWeights[3] = {0.2989, 0.5870, 0.1140};
inline constexpr double kTissueGrayThreshold = 200.0;
inline constexpr float kImageNetMean[3] = {0.485f, 0.456f, 0.406f};
inline constexpr float kImageNetStd[3] = {0.229f, 0.224f, 0.225f};

enum class QcStatus { kUnset, kPass, kFailBackground, kFailBlur, kFailBorder };

std::string_view QcStatusName(QcStatus status);
QcStatus ParseQcStatus(std::string_view name);

struct PatchRecord {
  std::string slide_id;
  int64_t patch_id = 0;
  int grid_row = 0;
  int grid_col = 0;
  int64_t origin_x = 0;
  int64_t origin_y = 0;
  double tissue_fraction = 0.0;
  double laplacian_var = 0.0;
  QcStatus qc_status = QcStatus::kUnset;

  bool operator==(const PatchRecord&) const = default;
};

/// Channel-first 3x224x224 tensor of a QC-passing patch.
struct PreparedPatch {
  int64_t patch_id = 0;
  std::vector<float> tensor;  // kPreparedLength values

  float at(int channel, int y, int x) const {
    return tensor[(static_cast<size_t>(channel) * kPreparedSize + y) *
                      kPreparedSize +
                  x];
  }
};

struct QcThresholds {
  double m_min = 0.2;
  double varl_min = 100.0;
};

/// Grid stubs with QC fields unset; slide_id is left empty.
std::vector<PatchRecord> ComputeGrid(int64_t width, int64_t height);

GrayImage ToGrayscale(const RgbImage& patch);

/// Fraction of pixels with value < 200.
double TissueFraction(const GrayImage& gray);

/// Population variance of the 4-neighbour Laplacian over the valid interior.
/// Images smaller than 3x3 have no interior and yield 0.
double LaplacianVariance(const GrayImage& gray);

/// Background is checked first, then blur.
QcStatus QcFilter(double tissue_fraction, double laplacian_var,
                  const QcThresholds& thresholds = {});

/// Bilinear resize with half-pixel centres (no anti-aliasing), i.e. source
/// coordinate (dst + 0.5) * in / out - 0.5 clamped to the image.
RgbImage ResizeBilinear(const RgbImage& image, int out_width, int out_height);

/// Resize to 224x224 then ImageNet-normalize. Works on any input size.
PreparedPatch PreparePatch(const RgbImage& patch, int64_t patch_id = 0);

struct TileOptions {
  QcThresholds qc;
  /// Fail every patch on the outermost ring of the grid.
  bool border_filter = false;
  bool stain_normalize = false;
  stain::StainProfile reference = stain::ReferenceProfile();
  stain::MacenkoParams macenko;
  /// Patches sampled (evenly over the passing set) to fit the slide profile.
  int stain_sample_patches = 50;
  /// Pixel stride inside each sampled patch when collecting fit pixels.
  int stain_sample_stride = 4;
};

struct TileResult {
  std::vector<PatchRecord> manifest;
  /// Fitted source profile, when stain normalization ran.
  std::optional<stain::StainProfile> source_profile;
  /// Set when normalization was requested but the fit failed; the patches
  /// were then prepared without normalization.
  std::string stain_warning;
};

using PreparedSink = std::function<void(PreparedPatch&&)>;

/// QC-scores every grid position and, when requested, fits the slide stain
/// profile from the passing patches. Prepares nothing.
/// Throws `Error(kEmptySlide)` when no patch passes.
TileResult ScoreSlide(const SlideRaster& slide, const TileOptions& options);

/// Prepares the passing patches of `manifest` in order, normalizing them from
/// `source` to `reference` when a source profile is given.
void PreparePassing(const SlideRaster& slide, const std::vector<PatchRecord>& manifest,
                    const std::optional<stain::StainProfile>& source,
                    const stain::StainProfile& reference, const PreparedSink& sink);

/// Tiles a slide: scores every grid position, then prepares passing patches
/// (in patch_id order) and hands each to `sink`.
/// Throws `Error(kEmptySlide)` when no patch passes.
TileResult TileSlide(const SlideRaster& slide, const TileOptions& options,
                     const PreparedSink& sink);

/// Convenience overload that collects the prepared tensors.
TileResult TileSlide(const SlideRaster& slide, const TileOptions& options,
                     std::vector<PreparedPatch>* prepared);

/// Assembles a raster from a directory of 512x512 tiles named
/// `r<row>_c<col>.<png|ppm>`. Missing grid positions are white.
SlideRaster LoadTileDirectory(const std::filesystem::path& dir,
                              const std::string& slide_id);

/// Loads a slide from an image file or a tile directory.
SlideRaster LoadSlide(const std::filesystem::path& path,
                      const std::string& slide_id);

/// CSV with header
/// `slide_id,patch_id,grid_row,grid_col,origin_x,origin_y,tissue_fraction,laplacian_var,qc_status`.
void WriteManifest(std::ostream& out, const std::vector<PatchRecord>& manifest);
std::vector<PatchRecord> ReadManifest(std::istream& in);

}  // namespace pam50::tiling
