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

/// @file synthetic.h
/// @brief Seeded synthetic H&E slides for offline end-to-end runs.
///
/// Slides are rendered in stain-concentration space and converted to RGB
/// with the Beer-Lambert law through a per-slide jittered H&E stain matrix.
/// Each grid position is one of
///
///  - background: near-white glass that fails the tissue test;
///  - tissue: class-agnostic blob texture whose scale, contrast and stain
///    balance are drawn per slide, plus pixel grain;
///  - informative: oriented hematoxylin stripes whose angle encodes the
///    class (class k at k * 180 / classes degrees).
///
/// Everything is a function of (spec.seed, slide index).

#pragma once

#include <filesystem>
#include <vector>

#include "pam50/config.h"
#include "pam50/image.h"
#include "pam50/slides.h"

namespace pam50::pipeline {

enum class PatchKind : uint8_t { kBackground, kTissue, kInformative };

struct SyntheticSlide {
  SlideInfo info;
  SlideRaster raster;
  /// Kind of each grid position, row-major (same order as patch ids).
  std::vector<PatchKind> kinds;
};

/// Metadata of every slide in the corpus, in slide-index order. Slide ids
/// are `syn_<index>`; classes are interleaved.
std::vector<SlideInfo> SyntheticCorpus(const SyntheticSpec& spec);

/// Renders slide `index` of the corpus.
SyntheticSlide GenerateSyntheticSlide(const SyntheticSpec& spec, int index);

/// Writes `<slide_id>.png` for every slide and `labels.csv` into `dir`.
void WriteSyntheticCorpus(const SyntheticSpec& spec, const std::filesystem::path& dir);

}  // namespace pam50::pipeline
