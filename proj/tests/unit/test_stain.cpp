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
#include <functional>
#include <numeric>

#include "oracles.h"
#include "pam50/errors.h"
#include "pam50/rng.h"
#include "pam50/stain.h"

namespace pam50::stain {
namespace {

using testing::AngleDegrees;

ErrorCode CodeOf(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::kInput;
}

StainProfile RotatedProfile() {
  StainProfile p;
  const std::array<double, 3> h = {0.65, 0.70, 0.29};
  const std::array<double, 3> e = {0.07, 0.99, 0.11};
  const double nh = std::hypot(h[0], h[1], h[2]);
  const double ne = std::hypot(e[0], e[1], e[2]);
  for (int r = 0; r < 3; ++r) {
    p.stain_matrix[r][0] = h[r] / nh;
    p.stain_matrix[r][1] = e[r] / ne;
  }
  p.max_concentrations = {1.4, 0.9};
  return p;
}

TEST(OpticalDensity, WhiteAndBlack) {
  EXPECT_EQ(RgbToOd(255.0), 0.0);
  EXPECT_NEAR(RgbToOd(0.0), 2.4082, 1e-4);
  EXPECT_NEAR(RgbToOd(0.0), std::log10(256.0), 1e-12);
}

TEST(OpticalDensity, RoundTripsEveryIntensity) {
  for (int v = 0; v < 256; ++v) {
    EXPECT_NEAR(OdToRgb(RgbToOd(v)), v, 1e-9);
    EXPECT_DOUBLE_EQ(OdTable()[v], RgbToOd(v));
  }
}

TEST(OpticalDensity, DecreasingInIntensity) {
  for (int v = 1; v < 256; ++v) EXPECT_LT(OdTable()[v], OdTable()[v - 1]);
}

TEST(ReferenceProfile, PublishedValuesAndOrdering) {
  const StainProfile p = ReferenceProfile();
  const double h[3] = {0.5626, 0.7201, 0.4062};
  const double e[3] = {0.2159, 0.8012, 0.5581};
  for (int r = 0; r < 3; ++r) {
    // Published to four decimals; the stored columns are exactly unit length.
    EXPECT_NEAR(p.stain_matrix[r][0], h[r], 5e-5);
    EXPECT_NEAR(p.stain_matrix[r][1], e[r], 5e-5);
  }
  for (int c = 0; c < 2; ++c) {
    EXPECT_NEAR(std::hypot(p.column(c)[0], p.column(c)[1], p.column(c)[2]), 1.0, 1e-12);
  }
  EXPECT_DOUBLE_EQ(p.max_concentrations[0], 1.9705);
  EXPECT_DOUBLE_EQ(p.max_concentrations[1], 1.0308);
  // Hematoxylin absorbs more red than eosin.
  EXPECT_GT(p.stain_matrix[0][0], p.stain_matrix[0][1]);
  EXPECT_GT(StainAngleDegrees(p), 1.0);
}

TEST(MacenkoFit, WhiteImageHasNoTissue) {
  EXPECT_EQ(CodeOf([] { MacenkoFit(RgbImage(64, 64, 255)); }), ErrorCode::kNoTissue);
}

TEST(MacenkoFit, TooFewTissuePixels) {
  RgbImage img(64, 64, 255);
  for (int x = 0; x < 50; ++x) img.at(x, 0)[0] = img.at(x, 0)[1] = 60;
  EXPECT_EQ(CodeOf([&] { MacenkoFit(img); }), ErrorCode::kNoTissue);
}

TEST(MacenkoFit, RecoversSynthesizedStainDirections) {
  for (const StainProfile& truth : {ReferenceProfile(), RotatedProfile()}) {
    for (uint64_t seed : {1u, 2u, 3u}) {
      const StainProfile fit = MacenkoFit(testing::BeerLambertImage(truth, 256, 256, seed));
      EXPECT_LT(AngleDegrees(fit.column(0), truth.column(0)), 2.0);
      EXPECT_LT(AngleDegrees(fit.column(1), truth.column(1)), 2.0);
      for (int c = 0; c < 2; ++c) {
        EXPECT_NEAR(std::hypot(fit.column(c)[0], fit.column(c)[1], fit.column(c)[2]), 1.0, 1e-9);
        EXPECT_GT(fit.max_concentrations[c], 0.0);
      }
    }
  }
}

TEST(MacenkoFit, SinglePureStainCollapsesOntoIt) {
  const StainProfile ref = ReferenceProfile();
  Rng rng(5);
  const size_t n = 128 * 128;
  std::vector<float> ch(n), ce(n, 0.0f);
  for (float& c : ch) c = static_cast<float>(rng.Uniform(0.3, 1.5));
  RgbImage img(128, 128);
  RenderConcentrations(ref.stain_matrix, ch, ce, img.pixels);
  try {
    const StainProfile fit = MacenkoFit(img);
    EXPECT_LT(AngleDegrees(fit.column(0), ref.column(0)), 2.0);
    EXPECT_LT(AngleDegrees(fit.column(1), ref.column(0)), 2.0);
  } catch (const Error& e) {
    // Collapsing onto a single direction may also be reported as degenerate.
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateStains);
  }
}

TEST(MacenkoFit, InvariantToPixelOrder) {
  const RgbImage img = testing::BeerLambertImage(RotatedProfile(), 128, 128, 4);
  RgbImage shuffled = img;
  std::vector<size_t> order(img.pixel_count());
  std::iota(order.begin(), order.end(), 0);
  Rng(9).Shuffle(order.begin(), order.end());
  for (size_t i = 0; i < order.size(); ++i) {
    std::copy_n(img.pixels.begin() + 3 * order[i], 3, shuffled.pixels.begin() + 3 * i);
  }
  const StainProfile a = MacenkoFit(img);
  const StainProfile b = MacenkoFit(shuffled);
  for (int c = 0; c < 2; ++c) {
    EXPECT_LT(AngleDegrees(a.column(c), b.column(c)), 1e-6);
    EXPECT_NEAR(a.max_concentrations[c], b.max_concentrations[c], 1e-9);
  }
}

TEST(MacenkoApply, IdentityWhenSourceIsReference) {
  const StainProfile ref = ReferenceProfile();
  const RgbImage img = testing::BeerLambertImage(ref, 256, 256, 11);
  EXPECT_LE(testing::MeanAbsDiff(MacenkoApply(img, ref, ref), img), 2.0);
}

TEST(MacenkoApply, SecondPassIsNearlyIdempotent) {
  const StainProfile ref = ReferenceProfile();
  const RgbImage img = testing::BeerLambertImage(RotatedProfile(), 256, 256, 12);
  const RgbImage once = MacenkoApply(img, MacenkoFit(img), ref);
  const RgbImage twice = MacenkoApply(once, MacenkoFit(once), ref);
  EXPECT_LE(testing::MeanAbsDiff(once, twice), 2.0);
}

TEST(MacenkoApply, MapsSourceStainsOntoReference) {
  const StainProfile ref = ReferenceProfile();
  const RgbImage img = testing::BeerLambertImage(RotatedProfile(), 256, 256, 13);
  const StainProfile refit = MacenkoFit(MacenkoApply(img, MacenkoFit(img), ref));
  EXPECT_LT(AngleDegrees(refit.column(0), ref.column(0)), 2.0);
  EXPECT_LT(AngleDegrees(refit.column(1), ref.column(1)), 2.0);
}

TEST(MacenkoApply, WhiteStaysWhite) {
  RgbImage img = testing::BeerLambertImage(RotatedProfile(), 64, 64, 14);
  for (int x = 0; x < 64; ++x) img.at(x, 10)[0] = img.at(x, 10)[1] = img.at(x, 10)[2] = 255;
  const RgbImage out = MacenkoApply(img, RotatedProfile(), ReferenceProfile());
  for (int x = 0; x < 64; ++x) {
    for (int c = 0; c < 3; ++c) EXPECT_GE(out.at(x, 10)[c], 253);
  }
}

TEST(MacenkoApply, DegenerateSourceIsRejected) {
  StainProfile source = ReferenceProfile();
  const double t = 0.5 * M_PI / 180.0;  // half a degree apart
  const auto h = source.column(0);
  // Rotate the hematoxylin column slightly towards an orthogonal direction.
  const std::array<double, 3> o = {h[1], -h[0], 0.0};
  const double no = std::hypot(o[0], o[1]);
  for (int r = 0; r < 3; ++r) {
    source.stain_matrix[r][1] = std::cos(t) * h[r] + std::sin(t) * o[r] / no;
  }
  EXPECT_LT(StainAngleDegrees(source), 1.0);
  EXPECT_EQ(CodeOf([&] { StainNormalizer(source, ReferenceProfile()); }),
            ErrorCode::kDegenerateStains);
}

TEST(ProfileJson, RoundTrips) {
  const StainProfile p = RotatedProfile();
  EXPECT_EQ(ProfileFromJson(ProfileToJson(p)), p);
}

}  // namespace
}  // namespace pam50::stain
