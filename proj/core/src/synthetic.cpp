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

#include "pam50/synthetic.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

#include "pam50/errors.h"
#include "pam50/rng.h"
#include "pam50/stain.h"
#include "pam50/tiling.h"

namespace pam50::pipeline {
namespace {

constexpr int kP = tiling::kPatchSize;
constexpr double kPi = 3.14159265358979323846;

/// Beer-Lambert optical density to byte, tabulated at 1/1024 OD steps.
class OdRenderer {
 public:
  OdRenderer() {
    for (int i = 0; i < kSize; ++i) {
      const double v = 256.0 * std::pow(10.0, -static_cast<double>(i) / kScale) - 1.0;
      table_[i] = static_cast<uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  }
  uint8_t operator()(double od) const {
    const long i = std::lround(od * kScale);
    return table_[std::clamp(i, 0L, static_cast<long>(kSize - 1))];
  }

 private:
  static constexpr int kSize = 4096;
  static constexpr double kScale = 1024.0;
  std::array<uint8_t, kSize> table_{};
};

const OdRenderer& Renderer() {
  static const OdRenderer r;
  return r;
}

/// Cheap stateless per-pixel noise in [-1, 1).
inline double HashNoise(uint64_t key, uint64_t i) {
  return static_cast<double>(Mix64(key ^ (i * 0x9e3779b97f4a7c15ULL)) >> 11) * 0x1.0p-52 -
         1.0;
}

struct SlideStyle {
  std::array<std::array<double, 2>, 3> stains{};
  double base_h = 0, base_e = 0;
  double blob_cell = 0;   // pixels per lattice cell of the blob field
  double blob_amp = 0;
  double blob_e_ratio = 0;
  double grain = 0;
};

SlideStyle DrawStyle(const SyntheticSpec& spec, Rng& rng) {
  SlideStyle s;
  const auto ref = stain::ReferenceProfile();
  for (int k = 0; k < 2; ++k) {
    std::array<double, 3> v{};
    double norm = 0;
    for (int c = 0; c < 3; ++c) {
      v[c] = std::max(0.02, ref.stain_matrix[c][k] + rng.Normal(0.0, 0.04));
      norm += v[c] * v[c];
    }
    norm = std::sqrt(norm);
    for (int c = 0; c < 3; ++c) s.stains[c][k] = v[c] / norm;
  }
  s.base_h = rng.Uniform(0.30, 0.55);
  s.base_e = rng.Uniform(0.25, 0.50);
  s.blob_cell = rng.Uniform(24.0, 128.0);
  s.blob_amp = rng.Uniform(0.10, 0.30) * spec.noise_level;
  s.blob_e_ratio = rng.Uniform(-1.0, 1.0);
  s.grain = 0.06 * std::max(spec.noise_level, 0.25);
  return s;
}

/// Smooth random field on [-1, 1]: a coarse lattice of uniform values,
/// bilinearly interpolated to kP x kP.
std::vector<float> BlobField(double cell, Rng& rng) {
  const int lattice = static_cast<int>(std::ceil(kP / cell)) + 2;
  std::vector<double> grid(static_cast<size_t>(lattice) * lattice);
  for (double& g : grid) g = rng.Uniform(-1.0, 1.0);
  std::vector<float> field(static_cast<size_t>(kP) * kP);
  for (int y = 0; y < kP; ++y) {
    const double gy = y / cell;
    const int y0 = static_cast<int>(gy);
    const double fy = gy - y0;
    for (int x = 0; x < kP; ++x) {
      const double gx = x / cell;
      const int x0 = static_cast<int>(gx);
      const double fx = gx - x0;
      const double* r0 = grid.data() + static_cast<size_t>(y0) * lattice;
      const double* r1 = r0 + lattice;
      const double top = r0[x0] * (1 - fx) + r0[x0 + 1] * fx;
      const double bot = r1[x0] * (1 - fx) + r1[x0 + 1] * fx;
      field[static_cast<size_t>(y) * kP + x] = static_cast<float>(top * (1 - fy) + bot * fy);
    }
  }
  return field;
}

void RenderPatch(RgbImage& image, int ox, int oy, const SlideStyle& style,
                 const std::vector<float>& ch, const std::vector<float>& ce) {
  const OdRenderer& render = Renderer();
  for (int y = 0; y < kP; ++y) {
    uint8_t* row = image.at(ox, oy + y);
    for (int x = 0; x < kP; ++x) {
      const size_t i = static_cast<size_t>(y) * kP + x;
      const double h = std::max(0.0f, ch[i]);
      const double e = std::max(0.0f, ce[i]);
      for (int c = 0; c < 3; ++c) {
        row[3 * x + c] = render(style.stains[c][0] * h + style.stains[c][1] * e);
      }
    }
  }
}

}  // namespace

std::vector<SlideInfo> SyntheticCorpus(const SyntheticSpec& spec) {
  const int n = spec.slides_per_class * spec.classes;
  std::vector<SlideInfo> slides(n);
  Rng rng(DeriveSeed(spec.seed, "synth_patients"));
  int patient = 0;
  for (int i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "syn_%03d", i);
    slides[i].slide_id = id;
    slides[i].label = i % spec.classes;
    slides[i].path = std::string(id) + ".png";
  }
  // Optionally pair a slide with the next slide of the same class.
  std::vector<bool> assigned(n, false);
  for (int i = 0; i < n; ++i) {
    if (assigned[i]) continue;
    char pid[32];
    std::snprintf(pid, sizeof(pid), "pat_%03d", patient++);
    slides[i].patient_id = pid;
    assigned[i] = true;
    const int j = i + spec.classes;
    if (j < n && !assigned[j] && rng.Bernoulli(spec.two_slide_patients)) {
      slides[j].patient_id = pid;
      assigned[j] = true;
    }
  }
  return slides;
}

SyntheticSlide GenerateSyntheticSlide(const SyntheticSpec& spec, int index) {
  const auto corpus = SyntheticCorpus(spec);
  if (index < 0 || index >= static_cast<int>(corpus.size())) {
    throw Error(ErrorCode::kParameter, "synthetic slide index out of range");
  }
  SyntheticSlide out;
  out.info = corpus[index];
  Rng rng(DeriveSeed(spec.seed, "synth", static_cast<uint64_t>(index)));
  const SlideStyle style = DrawStyle(spec, rng);

  const int n = spec.grid_rows * spec.grid_cols;
  int n_inf = static_cast<int>(std::lround(spec.informative_fraction * n));
  if (spec.informative_fraction > 0) n_inf = std::max(1, n_inf);
  const int n_bg = std::min(n - n_inf, static_cast<int>(std::lround(spec.background_fraction * n)));
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  rng.Shuffle(order.begin(), order.end());
  out.kinds.assign(n, PatchKind::kTissue);
  for (int k = 0; k < n_inf; ++k) out.kinds[order[k]] = PatchKind::kInformative;
  for (int k = 0; k < n_bg; ++k) out.kinds[order[n_inf + k]] = PatchKind::kBackground;

  out.raster.slide_id = out.info.slide_id;
  out.raster.image = RgbImage(spec.grid_cols * kP, spec.grid_rows * kP, 255);
  std::vector<float> ch(static_cast<size_t>(kP) * kP), ce(ch.size());
  const double angle = out.info.label * kPi / spec.classes;
  const double dir_x = std::cos(angle), dir_y = std::sin(angle);

  for (int p = 0; p < n; ++p) {
    const int ox = (p % spec.grid_cols) * kP;
    const int oy = (p / spec.grid_cols) * kP;
    const uint64_t grain_key = rng.NextU64();
    switch (out.kinds[p]) {
      case PatchKind::kBackground:
        for (size_t i = 0; i < ch.size(); ++i) {
          ch[i] = static_cast<float>(0.02 + 0.01 * HashNoise(grain_key, 2 * i));
          ce[i] = static_cast<float>(0.02 + 0.01 * HashNoise(grain_key, 2 * i + 1));
        }
        break;
      case PatchKind::kTissue: {
        const auto field = BlobField(style.blob_cell, rng);
        for (size_t i = 0; i < ch.size(); ++i) {
          const double b = style.blob_amp * field[i];
          ch[i] = static_cast<float>(style.base_h + b +
                                     style.grain * HashNoise(grain_key, 2 * i));
          ce[i] = static_cast<float>(style.base_e + style.blob_e_ratio * b +
                                     style.grain * HashNoise(grain_key, 2 * i + 1));
        }
        break;
      }
      case PatchKind::kInformative: {
        const double period = rng.Uniform(18.0, 30.0);
        const double phase = rng.Uniform(0.0, 2 * kPi);
        const double amp = 0.9 * spec.signal_strength;
        for (int y = 0; y < kP; ++y) {
          for (int x = 0; x < kP; ++x) {
            const size_t i = static_cast<size_t>(y) * kP + x;
            const double t = (x * dir_x + y * dir_y) * 2 * kPi / period + phase;
            // Sharpened stripes: crisp edges keep the patch in focus even
            // without any tissue texture or grain.
            const double s = 0.5 + 0.5 * std::tanh(8.0 * std::sin(t));
            ch[i] = static_cast<float>(0.5 * style.base_h + amp * s +
                                       style.grain * HashNoise(grain_key, 2 * i));
            ce[i] = static_cast<float>(0.8 * style.base_e +
                                       style.grain * HashNoise(grain_key, 2 * i + 1));
          }
        }
        break;
      }
    }
    RenderPatch(out.raster.image, ox, oy, style, ch, ce);
  }
  return out;
}

void WriteSyntheticCorpus(const SyntheticSpec& spec, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto corpus = SyntheticCorpus(spec);
  for (int i = 0; i < static_cast<int>(corpus.size()); ++i) {
    const SyntheticSlide slide = GenerateSyntheticSlide(spec, i);
    WriteImage(slide.raster.image, dir / slide.info.path, 1);
  }
  WriteLabels(dir / "labels.csv", corpus);
}

}  // namespace pam50::pipeline
