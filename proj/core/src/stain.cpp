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

#include "pam50/stain.h"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <nlohmann/json.hpp>

#include "pam50/errors.h"
#include "pam50/stats.h"

namespace pam50::stain {
namespace {

constexpr double kMinStainAngleDeg = 1.0;

using Vec3 = Eigen::Vector3d;

Vec3 Column(const StainProfile& p, int c) {
  return Vec3(p.stain_matrix[0][c], p.stain_matrix[1][c], p.stain_matrix[2][c]);
}

void SetColumn(StainProfile& p, int c, const Vec3& v) {
  for (int r = 0; r < 3; ++r) p.stain_matrix[r][c] = v[r];
}

/// Byte value of `od`, i.e. round(256 * 10^-od - 1) clamped to [0, 255].
///
/// Byte b is reached exactly when od <= t_b = -log10((b + 0.5) / 256). The
/// thresholds are at least 1.7e-3 apart, so a uniform grid of 5e-4 wide cells
/// holds at most two of them (with a small overlap guarding the cell index
/// rounding) and the conversion reduces to a lookup plus two comparisons.
class ByteTable {
 public:
  ByteTable() {
    std::array<double, 256> t{};
    for (int b = 1; b <= 255; ++b) t[b] = -std::log10((b + 0.5) / 256.0);
    for (int i = 0; i < kCells; ++i) {
      const double lo = i * kStep - kSlack;
      const double hi = (i + 1) * kStep + kSlack;
      Cell& cell = cells_[i];
      int found = 0;
      for (int b = 1; b <= 255; ++b) {
        if (t[b] > hi) {
          ++cell.base;
        } else if (t[b] >= lo) {
          cell.threshold[found++] = t[b];
        }
      }
    }
  }

  uint8_t operator()(double od) const {
    if (!(od == od)) return 0;
    const double pos = std::clamp(od / kStep, 0.0, kCells - 1.0);
    const Cell& cell = cells_[static_cast<int>(pos)];
    return static_cast<uint8_t>(cell.base + (od <= cell.threshold[0]) +
                                (od <= cell.threshold[1]));
  }

 private:
  static constexpr double kStep = 5e-4;
  static constexpr double kSlack = 1e-9;
  // The largest threshold is -log10(1.5 / 256) < 2.24.
  static constexpr int kCells = 4500;
  struct Cell {
    int base = 0;
    double threshold[2] = {-HUGE_VAL, -HUGE_VAL};
  };
  std::array<Cell, kCells> cells_;
};

uint8_t ToByte(double od) {
  static const ByteTable table;
  return table(od);
}

/// Clamp negative entries (noise) to zero and rescale to unit length.
Vec3 NonnegativeUnit(Vec3 v) {
  v = v.cwiseMax(0.0);
  const double n = v.norm();
  return n > 0 ? Vec3(v / n) : Vec3(1.0, 1.0, 1.0).normalized();
}

/// Least-squares pseudo-inverse of a 3x2 matrix: (S^T S)^-1 S^T.
std::array<std::array<double, 3>, 2> PseudoInverse(const StainProfile& p) {
  Eigen::Matrix<double, 3, 2> s;
  s.col(0) = Column(p, 0);
  s.col(1) = Column(p, 1);
  const Eigen::Matrix2d gram = s.transpose() * s;
  const Eigen::Matrix<double, 2, 3> pinv = gram.inverse() * s.transpose();
  std::array<std::array<double, 3>, 2> out{};
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) out[i][j] = pinv(i, j);
  return out;
}

}  // namespace

StainProfile ReferenceProfile() {
  StainProfile p;
  p.stain_matrix = {{{0.5626, 0.2159}, {0.7201, 0.8012}, {0.4062, 0.5581}}};
  // The published vectors are rounded to four places; renormalize so the
  // unit-column invariant holds exactly.
  SetColumn(p, 0, Column(p, 0).normalized());
  SetColumn(p, 1, Column(p, 1).normalized());
  p.max_concentrations = {1.9705, 1.0308};
  return p;
}

double RgbToOd(double value) { return -std::log10((value + 1.0) / 256.0); }

double OdToRgb(double od) { return 256.0 * std::pow(10.0, -od) - 1.0; }

const std::array<double, 256>& OdTable() {
  static const std::array<double, 256> table = [] {
    std::array<double, 256> t{};
    for (int i = 0; i < 256; ++i) t[i] = RgbToOd(i);
    return t;
  }();
  return table;
}

double StainAngleDegrees(const StainProfile& profile) {
  const Vec3 a = Column(profile, 0).normalized();
  const Vec3 b = Column(profile, 1).normalized();
  const double c = std::clamp(a.dot(b), -1.0, 1.0);
  return std::acos(c) * 180.0 / M_PI;
}

StainProfile MacenkoFit(std::span<const uint8_t> pixels,
                        const MacenkoParams& params) {
  const auto& od_table = OdTable();
  const size_t n = pixels.size() / 3;

  std::vector<Vec3> tissue;
  tissue.reserve(n / 2);
  for (size_t i = 0; i < n; ++i) {
    const Vec3 od(od_table[pixels[3 * i]], od_table[pixels[3 * i + 1]],
                  od_table[pixels[3 * i + 2]]);
    if (od.norm() > params.beta) tissue.push_back(od);
  }
  if (tissue.size() < static_cast<size_t>(params.min_tissue_pixels)) {
    throw Error(ErrorCode::kNoTissue,
                "only " + std::to_string(tissue.size()) +
                    " pixels exceed the OD threshold " +
                    std::to_string(params.beta));
  }

  Vec3 mean = Vec3::Zero();
  for (const auto& v : tissue) mean += v;
  mean /= static_cast<double>(tissue.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& v : tissue) {
    const Vec3 d = v - mean;
    cov.noalias() += d * d.transpose();
  }
  cov /= static_cast<double>(tissue.size() - 1);

  // Eigenvalues come back ascending; the plane is spanned by the last two.
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
  Vec3 e1 = eig.eigenvectors().col(2);
  Vec3 e2 = eig.eigenvectors().col(1);
  if (e1.sum() < 0) e1 = -e1;
  if (e2[0] < 0) e2 = -e2;

  std::vector<double> angles(tissue.size());
  for (size_t i = 0; i < tissue.size(); ++i) {
    angles[i] = std::atan2(tissue[i].dot(e2), tissue[i].dot(e1));
  }
  const double lo = Percentile(angles, params.alpha);
  const double hi = Percentile(angles, 100.0 - params.alpha);

  Vec3 v_lo = NonnegativeUnit(e1 * std::cos(lo) + e2 * std::sin(lo));
  Vec3 v_hi = NonnegativeUnit(e1 * std::cos(hi) + e2 * std::sin(hi));
  // Hematoxylin absorbs more red light than eosin.
  if (v_hi[0] > v_lo[0]) std::swap(v_lo, v_hi);

  StainProfile profile;
  SetColumn(profile, 0, v_lo);
  SetColumn(profile, 1, v_hi);

  // Concentrations by nonnegative projection over every pixel of the sample.
  std::array<std::vector<double>, 2> conc;
  conc[0].reserve(n);
  conc[1].reserve(n);
  const bool degenerate = StainAngleDegrees(profile) < kMinStainAngleDeg;
  const auto pinv = degenerate ? decltype(PseudoInverse(profile)){}
                               : PseudoInverse(profile);
  for (size_t i = 0; i < n; ++i) {
    const double r = od_table[pixels[3 * i]];
    const double g = od_table[pixels[3 * i + 1]];
    const double b = od_table[pixels[3 * i + 2]];
    for (int k = 0; k < 2; ++k) {
      double c;
      if (degenerate) {
        // Both directions describe the same stain; project on each alone.
        c = r * profile.stain_matrix[0][k] + g * profile.stain_matrix[1][k] +
            b * profile.stain_matrix[2][k];
      } else {
        c = pinv[k][0] * r + pinv[k][1] * g + pinv[k][2] * b;
      }
      conc[k].push_back(std::max(c, 0.0));
    }
  }
  for (int k = 0; k < 2; ++k) {
    profile.max_concentrations[k] =
        std::max(Percentile(conc[k], params.max_percentile), 1e-6);
  }
  return profile;
}

StainNormalizer::StainNormalizer(const StainProfile& source,
                                 const StainProfile& reference) {
  if (StainAngleDegrees(source) < kMinStainAngleDeg) {
    throw Error(ErrorCode::kDegenerateStains,
                "source stain columns are " +
                    std::to_string(StainAngleDegrees(source)) +
                    " degrees apart");
  }
  pinv_ = PseudoInverse(source);
  for (int k = 0; k < 2; ++k) {
    scale_[k] = reference.max_concentrations[k] / source.max_concentrations[k];
  }
  target_ = reference.stain_matrix;
}

void StainNormalizer::Apply(std::span<uint8_t> pixels) const {
  const auto& od_table = OdTable();
  const size_t n = pixels.size() / 3;
  for (size_t i = 0; i < n; ++i) {
    uint8_t* px = pixels.data() + 3 * i;
    const double r = od_table[px[0]];
    const double g = od_table[px[1]];
    const double b = od_table[px[2]];
    const double ch =
        std::max(pinv_[0][0] * r + pinv_[0][1] * g + pinv_[0][2] * b, 0.0) *
        scale_[0];
    const double ce =
        std::max(pinv_[1][0] * r + pinv_[1][1] * g + pinv_[1][2] * b, 0.0) *
        scale_[1];
    for (int c = 0; c < 3; ++c) {
      px[c] = ToByte(target_[c][0] * ch + target_[c][1] * ce);
    }
  }
}

RgbImage MacenkoApply(const RgbImage& image, const StainProfile& source,
                      const StainProfile& reference) {
  RgbImage out = image;
  StainNormalizer(source, reference).Apply(out.pixels);
  return out;
}

void RenderConcentrations(const std::array<std::array<double, 2>, 3>& stain_matrix,
                          std::span<const float> c_h, std::span<const float> c_e,
                          std::span<uint8_t> out) {
  const size_t n = std::min(c_h.size(), c_e.size());
  for (size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) {
      out[3 * i + c] =
          ToByte(stain_matrix[c][0] * c_h[i] + stain_matrix[c][1] * c_e[i]);
    }
  }
}

std::string ProfileToJson(const StainProfile& profile) {
  nlohmann::json j;
  j["stain_matrix"] = profile.stain_matrix;
  j["max_concentrations"] = profile.max_concentrations;
  return j.dump();
}

StainProfile ProfileFromJson(const std::string& text) {
  StainProfile p;
  try {
    const auto j = nlohmann::json::parse(text);
    p.stain_matrix =
        j.at("stain_matrix").get<std::array<std::array<double, 2>, 3>>();
    p.max_concentrations =
        j.at("max_concentrations").get<std::array<double, 2>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInput, std::string("stain profile: ") + e.what());
  }
  for (double c : p.max_concentrations) {
    if (!(c > 0)) {
      throw Error(ErrorCode::kInput,
                  "stain profile: max concentrations must be positive");
    }
  }
  for (int c = 0; c < 2; ++c) {
    const Vec3 col = Column(p, c);
    if (!(col.norm() > 0) || col.minCoeff() < 0) {
      throw Error(ErrorCode::kInput,
                  "stain profile: columns must be nonnegative and nonzero");
    }
    SetColumn(p, c, col.normalized());
  }
  return p;
}

}  // namespace pam50::stain
