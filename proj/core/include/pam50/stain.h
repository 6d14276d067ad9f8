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

/// @file stain.h
/// @brief Macenko H&E stain estimation and normalization.
///
/// Pixels are mapped to optical density (OD) with
///
///     OD = -log10((I + 1) / 256)
///
/// so that white (255) has zero absorbance and stains mix linearly. A
/// `StainProfile` holds the two unit OD directions of hematoxylin and eosin
/// and the 99th-percentile concentration of each; `MacenkoFit` estimates it
/// from tissue pixels and `MacenkoApply` re-renders an image under another
/// profile.

#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "pam50/image.h"

namespace pam50::stain {

struct StainProfile {
  /// Column 0 = hematoxylin, column 1 = eosin. Rows are R, G, B.
  std::array<std::array<double, 2>, 3> stain_matrix{};
  std::array<double, 2> max_concentrations{};

  std::array<double, 3> column(int c) const {
    return {stain_matrix[0][c], stain_matrix[1][c], stain_matrix[2][c]};
  }

  bool operator==(const StainProfile&) const = default;
};

/// Built-in normalization target shared by every slide.
StainProfile ReferenceProfile();

struct MacenkoParams {
  double beta = 0.15;            ///< OD magnitude floor for tissue pixels.
  double alpha = 1.0;            ///< Angle percentile (and 100 - alpha).
  double max_percentile = 99.0;  ///< Percentile for max concentrations.
  int min_tissue_pixels = 100;
};

double RgbToOd(double value);
double OdToRgb(double od);

/// OD of the integer intensities 0..255.
const std::array<double, 256>& OdTable();

/// Fits a profile to `pixels` (interleaved RGB).
/// Throws `Error(kNoTissue)` when fewer than `min_tissue_pixels` pixels have
/// OD magnitude above `beta`.
StainProfile MacenkoFit(std::span<const uint8_t> pixels,
                        const MacenkoParams& params = {});

inline StainProfile MacenkoFit(const RgbImage& image,
                               const MacenkoParams& params = {}) {
  return MacenkoFit(std::span<const uint8_t>(image.pixels), params);
}

/// Precomputed mapping from source to reference stain space. Construct once
/// per slide and apply to many patches.
class StainNormalizer {
 public:
  /// Throws `Error(kDegenerateStains)` if the source columns are closer than
  /// one degree.
  StainNormalizer(const StainProfile& source, const StainProfile& reference);

  /// Normalizes `pixels` (interleaved RGB) in place.
  void Apply(std::span<uint8_t> pixels) const;

 private:
  std::array<std::array<double, 3>, 2> pinv_{};  // (S^T S)^-1 S^T
  std::array<double, 2> scale_{};
  std::array<std::array<double, 2>, 3> target_{};
};

RgbImage MacenkoApply(const RgbImage& image, const StainProfile& source,
                      const StainProfile& reference);

/// Angle in degrees between the two stain columns.
double StainAngleDegrees(const StainProfile& profile);

/// Renders concentrations (`c_h`, `c_e` per pixel) through `stain_matrix`
/// using the Beer-Lambert law. Used to synthesize H&E-like images.
void RenderConcentrations(const std::array<std::array<double, 2>, 3>& stain_matrix,
                          std::span<const float> c_h, std::span<const float> c_e,
                          std::span<uint8_t> out);

std::string ProfileToJson(const StainProfile& profile);
StainProfile ProfileFromJson(const std::string& text);

}  // namespace pam50::stain
