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

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "oracles.h"
#include "pam50/errors.h"
#include "pam50/image.h"
#include "pam50/rng.h"
#include "pam50/tiling.h"

namespace pam50::tiling {
namespace {

RgbImage NoiseImage(int w, int h, int lo, int hi, uint64_t seed) {
  Rng rng(seed);
  RgbImage img(w, h);
  for (auto& v : img.pixels) v = static_cast<uint8_t>(lo + rng.UniformInt(hi - lo + 1));
  return img;
}

GrayImage RandomGray(int w, int h, uint64_t seed) {
  Rng rng(seed);
  GrayImage g(w, h);
  for (double& v : g.values) v = rng.Uniform(0.0, 255.0);
  return g;
}

int CountDarkPixels(const RgbImage& img) {
  int n = 0;
  for (size_t i = 0; i < img.pixel_count(); ++i) {
    const uint8_t* p = img.pixels.data() + 3 * i;
    if (0.2989 * p[0] + 0.5870 * p[1] + 0.1140 * p[2] < 200.0) ++n;
  }
  return n;
}

TEST(Grid, CountsFullyContainedPatches) {
  EXPECT_EQ(ComputeGrid(1024, 2048).size(), 8u);
  EXPECT_TRUE(ComputeGrid(511, 512).empty());
  const auto one = ComputeGrid(512, 512);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].origin_x, 0);
  EXPECT_EQ(one[0].origin_y, 0);
  EXPECT_TRUE(ComputeGrid(0, 0).empty());
}

TEST(Grid, RowMajorOriginsMatchEnumeration) {
  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    const int64_t w = static_cast<int64_t>(rng.UniformInt(4000));
    const int64_t h = static_cast<int64_t>(rng.UniformInt(4000));
    const auto grid = ComputeGrid(w, h);
    size_t k = 0;
    for (int64_t y = 0; y + 512 <= h; y += 512) {
      for (int64_t x = 0; x + 512 <= w; x += 512, ++k) {
        ASSERT_LT(k, grid.size());
        EXPECT_EQ(grid[k].patch_id, static_cast<int64_t>(k));
        EXPECT_EQ(grid[k].origin_x, x);
        EXPECT_EQ(grid[k].origin_y, y);
        EXPECT_EQ(grid[k].origin_x, 512 * grid[k].grid_col);
        EXPECT_EQ(grid[k].origin_y, 512 * grid[k].grid_row);
      }
    }
    EXPECT_EQ(grid.size(), k);
  }
}

TEST(Grayscale, WeightedLuminance) {
  EXPECT_NEAR(ToGrayscale(RgbImage(4, 4, 255)).at(1, 1), 254.9745, 1e-9);
  EXPECT_EQ(ToGrayscale(RgbImage(4, 4, 0)).at(2, 3), 0.0);
  RgbImage red(2, 2, 0);
  red.at(1, 0)[0] = 255;
  EXPECT_NEAR(ToGrayscale(red).at(1, 0), 76.2195, 1e-9);
}

TEST(TissueFraction, ExtremesAndHalf) {
  EXPECT_EQ(TissueFraction(ToGrayscale(RgbImage(512, 512, 255))), 0.0);
  EXPECT_EQ(TissueFraction(ToGrayscale(RgbImage(512, 512, 0))), 1.0);
  RgbImage half(512, 512, 255);
  for (int y = 0; y < 256; ++y) {
    for (int x = 0; x < 512; ++x) half.at(x, y)[0] = half.at(x, y)[1] = half.at(x, y)[2] = 0;
  }
  EXPECT_EQ(TissueFraction(ToGrayscale(half)), 0.5);
}

TEST(TissueFraction, StrictThresholdAt200) {
  GrayImage g(2, 1);
  g.values = {200.0, 199.999};
  EXPECT_EQ(TissueFraction(g), 0.5);
}

TEST(TissueFraction, MatchesPixelCount) {
  const RgbImage img = NoiseImage(512, 512, 120, 255, 8);
  EXPECT_DOUBLE_EQ(TissueFraction(ToGrayscale(img)), CountDarkPixels(img) / (512.0 * 512.0));
}

TEST(TissueFraction, NonincreasingUnderBrightening) {
  Rng rng(12);
  for (int t = 0; t < 20; ++t) {
    GrayImage g = RandomGray(64, 64, 100 + t);
    double before = TissueFraction(g);
    for (double& v : g.values) v = std::min(255.0, v + rng.Uniform(0.0, 40.0));
    EXPECT_LE(TissueFraction(g), before);
  }
}

TEST(LaplacianVariance, ConstantIsZero) {
  EXPECT_EQ(LaplacianVariance(GrayImage(512, 512, 77.5)), 0.0);
}

TEST(LaplacianVariance, ImpulseMatchesReferenceConvolution) {
  GrayImage g(512, 512, 0.0);
  g.at(200, 300) = 1.0;
  const double v = LaplacianVariance(g);
  EXPECT_GT(v, 0.0);
  EXPECT_NEAR(v, testing::ReferenceLaplacianVariance(g), 1e-15);
}

TEST(LaplacianVariance, CheckerboardMatchesReferenceConvolution) {
  GrayImage g(512, 512);
  for (int y = 0; y < 512; ++y) {
    for (int x = 0; x < 512; ++x) g.at(x, y) = (x + y) % 2 ? 255.0 : 0.0;
  }
  const double ref = testing::ReferenceLaplacianVariance(g);
  EXPECT_GT(ref, 1e5);
  EXPECT_NEAR(LaplacianVariance(g), ref, 1e-9 * ref);
}

TEST(LaplacianVariance, RandomImagesMatchReference) {
  for (int t = 0; t < 5; ++t) {
    const GrayImage g = RandomGray(37 + t, 23 + 2 * t, 50 + t);
    const double ref = testing::ReferenceLaplacianVariance(g);
    EXPECT_NEAR(LaplacianVariance(g), ref, 1e-9 * ref);
  }
}

TEST(LaplacianVariance, ShiftInvariantAndQuadraticInScale) {
  Rng rng(4);
  for (int t = 0; t < 10; ++t) {
    const GrayImage g = RandomGray(64, 48, 900 + t);
    const double base = LaplacianVariance(g);
    const double shift = rng.Uniform(-100.0, 100.0);
    const double scale = rng.Uniform(0.1, 4.0);
    GrayImage shifted = g, scaled = g;
    for (double& v : shifted.values) v += shift;
    for (double& v : scaled.values) v *= scale;
    EXPECT_NEAR(LaplacianVariance(shifted), base, 1e-9 * base);
    EXPECT_NEAR(LaplacianVariance(scaled), scale * scale * base, 1e-9 * scale * scale * base);
  }
}

TEST(QcFilter, ThresholdsAndOrder) {
  EXPECT_EQ(QcFilter(0.19, 500.0), QcStatus::kFailBackground);
  EXPECT_EQ(QcFilter(0.5, 99.0), QcStatus::kFailBlur);
  EXPECT_EQ(QcFilter(0.2, 100.0), QcStatus::kPass);
  // Background is reported first when both tests fail.
  EXPECT_EQ(QcFilter(0.1, 10.0), QcStatus::kFailBackground);
  EXPECT_EQ(QcFilter(0.3, 50.0, {0.25, 40.0}), QcStatus::kPass);
}

TEST(QcStatus, NamesRoundTrip) {
  for (QcStatus s : {QcStatus::kPass, QcStatus::kFailBackground, QcStatus::kFailBlur,
                     QcStatus::kFailBorder}) {
    EXPECT_EQ(ParseQcStatus(QcStatusName(s)), s);
  }
  EXPECT_EQ(QcStatusName(QcStatus::kFailBackground), "fail_background");
}

TEST(PreparePatch, ImageNetAffineOnUniformPatches) {
  const double mean[3] = {0.485, 0.456, 0.406};
  const double stdev[3] = {0.229, 0.224, 0.225};
  for (int v : {0, 37, 123, 124, 200, 255}) {
    const PreparedPatch p = PreparePatch(RgbImage(512, 512, static_cast<uint8_t>(v)), 5);
    ASSERT_EQ(p.tensor.size(), kPreparedLength);
    EXPECT_EQ(p.patch_id, 5);
    for (int c = 0; c < 3; ++c) {
      const double expected = (v / 255.0 - mean[c]) / stdev[c];
      EXPECT_NEAR(p.at(c, 0, 0), expected, 1e-5);
      EXPECT_NEAR(p.at(c, 223, 117), expected, 1e-5);
    }
  }
  // Red at full scale, blue at zero.
  EXPECT_NEAR(PreparePatch(RgbImage(512, 512, 255)).at(0, 10, 10), 2.2489, 1e-4);
  EXPECT_NEAR(PreparePatch(RgbImage(512, 512, 0)).at(2, 10, 10), -1.8044, 1e-4);
  // The red channel crosses zero exactly at 0.485 of full scale.
  EXPECT_LT(PreparePatch(RgbImage(512, 512, 123)).at(0, 0, 0), 0.0f);
  EXPECT_GT(PreparePatch(RgbImage(512, 512, 124)).at(0, 0, 0), 0.0f);
}

TEST(PreparePatch, BilinearResizeOfHorizontalRamp) {
  RgbImage ramp(512, 512);
  for (int y = 0; y < 512; ++y) {
    for (int x = 0; x < 512; ++x) ramp.at(x, y)[0] = ramp.at(x, y)[1] = ramp.at(x, y)[2] = x / 2;
  }
  const RgbImage small = ResizeBilinear(ramp, 224, 224);
  EXPECT_EQ(small.width, 224);
  for (int x = 1; x < 224; ++x) EXPECT_GE(small.at(x, 100)[0], small.at(x - 1, 100)[0]);
  EXPECT_EQ(small.at(50, 0)[0], small.at(50, 223)[0]);
}

TEST(TileSlide, OnlyTissueSidePasses) {
  SlideRaster slide{"half", RgbImage(1024, 512, 255)};
  slide.image.Paste(NoiseImage(512, 512, 40, 160, 1), 0, 0);
  std::vector<PreparedPatch> prepared;
  TileOptions options;
  const auto result = TileSlide(slide, options, &prepared);
  ASSERT_EQ(result.manifest.size(), 2u);
  EXPECT_EQ(result.manifest[0].qc_status, QcStatus::kPass);
  EXPECT_EQ(result.manifest[1].qc_status, QcStatus::kFailBackground);
  EXPECT_DOUBLE_EQ(result.manifest[0].tissue_fraction,
                   CountDarkPixels(slide.image.Crop(0, 0, 512, 512)) / 262144.0);
  ASSERT_EQ(prepared.size(), 1u);
  EXPECT_EQ(prepared[0].patch_id, 0);
}

TEST(TileSlide, AllWhiteSlideIsEmpty) {
  const SlideRaster slide{"white", RgbImage(1024, 1024, 255)};
  try {
    ScoreSlide(slide, TileOptions{});
    FAIL() << "expected an empty-slide error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptySlide);
  }
}

TEST(TileSlide, BorderFilterFailsOuterRing) {
  const SlideRaster slide{"s", NoiseImage(1536, 1536, 40, 160, 2)};
  TileOptions options;
  options.border_filter = true;
  const auto result = ScoreSlide(slide, options);
  for (const auto& r : result.manifest) {
    EXPECT_EQ(r.qc_status, r.patch_id == 4 ? QcStatus::kPass : QcStatus::kFailBorder);
  }
}

TEST(TileSlide, ManifestIsDeterministicAndRoundTrips) {
  SlideRaster slide{"det", RgbImage(1536, 1024, 255)};
  slide.image.Paste(NoiseImage(1024, 512, 30, 180, 9), 512, 512);
  TileOptions options;
  options.stain_normalize = true;
  std::ostringstream a, b;
  const auto first = ScoreSlide(slide, options);
  WriteManifest(a, first.manifest);
  WriteManifest(b, ScoreSlide(slide, options).manifest);
  EXPECT_EQ(a.str(), b.str());
  const std::string header =
      "slide_id,patch_id,grid_row,grid_col,origin_x,origin_y,tissue_fraction,"
      "laplacian_var,qc_status\n";
  EXPECT_EQ(a.str().substr(0, header.size()), header);
  EXPECT_NE(a.str().find("det,4,1,1,512,512,1.000000,"), std::string::npos);
  std::istringstream in(a.str());
  const auto back = ReadManifest(in);
  ASSERT_EQ(back.size(), first.manifest.size());
  for (size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].patch_id, first.manifest[i].patch_id);
    EXPECT_EQ(back[i].qc_status, first.manifest[i].qc_status);
    EXPECT_NEAR(back[i].tissue_fraction, first.manifest[i].tissue_fraction, 5e-7);
  }
}

TEST(TileSlide, PreparedPatchesAreFiniteAndOnlyForPasses) {
  const SlideRaster slide{"s", NoiseImage(1024, 1024, 20, 190, 6)};
  TileOptions options;
  options.stain_normalize = true;
  std::vector<PreparedPatch> prepared;
  const auto result = TileSlide(slide, options, &prepared);
  size_t passes = 0;
  for (const auto& r : result.manifest) passes += r.qc_status == QcStatus::kPass;
  EXPECT_EQ(prepared.size(), passes);
  for (const auto& p : prepared) {
    for (float v : p.tensor) ASSERT_TRUE(std::isfinite(v));
  }
}

TEST(LoadSlide, AssemblesTileDirectory) {
  const auto dir = testing::FreshTempDir("tile_dir");
  const RgbImage a = NoiseImage(512, 512, 0, 255, 1);
  const RgbImage b = NoiseImage(512, 512, 0, 255, 2);
  WriteImage(a, dir / "r0_c0.png");
  WriteImage(b, dir / "r0_c1.ppm");
  const SlideRaster slide = LoadSlide(dir, "tiles");
  ASSERT_EQ(slide.image.width, 1024);
  ASSERT_EQ(slide.image.height, 512);
  EXPECT_EQ(slide.image.Crop(0, 0, 512, 512), a);
  EXPECT_EQ(slide.image.Crop(512, 0, 512, 512), b);
  std::filesystem::remove_all(dir);
}

TEST(LoadSlide, UnreadableImageIsAnError) {
  const auto dir = testing::FreshTempDir("bad_image");
  {
    std::ofstream(dir / "x.png") << "not an image";
  }
  EXPECT_THROW(LoadSlide(dir / "x.png", "x"), Error);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace pam50::tiling
