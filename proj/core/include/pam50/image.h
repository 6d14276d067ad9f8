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

/// @file image.h
/// @brief 8-bit RGB rasters and a small PNG / PPM codec.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace pam50 {

/// Interleaved 8-bit RGB, row-major.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;

  RgbImage() = default;
  RgbImage(int w, int h, uint8_t fill = 0)
      : width(w),
        height(h),
        pixels(static_cast<size_t>(w) * static_cast<size_t>(h) * 3, fill) {}

  size_t pixel_count() const {
    return static_cast<size_t>(width) * static_cast<size_t>(height);
  }

  uint8_t* at(int x, int y) {
    return pixels.data() + (static_cast<size_t>(y) * width + x) * 3;
  }
  const uint8_t* at(int x, int y) const {
    return pixels.data() + (static_cast<size_t>(y) * width + x) * 3;
  }

  /// Copies the `w`x`h` region whose top-left corner is (x, y).
  /// The region must lie inside the image.
  RgbImage Crop(int x, int y, int w, int h) const;

  /// Writes `src` with its top-left corner at (x, y). Must fit.
  void Paste(const RgbImage& src, int x, int y);

  bool operator==(const RgbImage&) const = default;
};

/// Single-channel real-valued image, row-major.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  GrayImage() = default;
  GrayImage(int w, int h, double fill = 0.0)
      : width(w),
        height(h),
        values(static_cast<size_t>(w) * static_cast<size_t>(h), fill) {}

  double& at(int x, int y) { return values[static_cast<size_t>(y) * width + x]; }
  double at(int x, int y) const {
    return values[static_cast<size_t>(y) * width + x];
  }
};

/// A slide raster: the unit of input to tiling.
struct SlideRaster {
  std::string slide_id;
  RgbImage image;
};

/// Reads a PNG (8-bit, any colour type; alpha dropped, grey expanded) or a
/// binary PPM (P6, maxval 255). Dispatches on file signature, not extension.
/// Throws `Error(kIo)` on unreadable or unsupported input.
RgbImage ReadImage(const std::filesystem::path& path);

/// Writes PNG when the extension is `.png`, otherwise binary PPM.
void WriteImage(const RgbImage& image, const std::filesystem::path& path,
                int png_compression_level = 6);

}  // namespace pam50
