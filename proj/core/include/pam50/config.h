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

/// @file config.h
/// @brief Pipeline configuration: JSON file format, defaults and hashing.
///
/// The file is a JSON object with the sections `paths`, `qc`, `stain`,
/// `train`, `mc`, `filter`, `ga`, `split`, `synthetic` and the top-level keys
/// `seed` (required) and `num_classes`. Any omitted key takes its default;
/// unknown keys are rejected so typos do not pass silently.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "pam50/nsga2.h"
#include "pam50/tiling.h"
#include "pam50/train.h"
#include "pam50/uncertainty.h"

namespace pam50::pipeline {

/// Parameters of the synthetic slide corpus.
struct SyntheticSpec {
  int slides_per_class = 12;
  int classes = 4;
  int grid_rows = 10;
  int grid_cols = 15;
  /// Share of grid positions carrying the class texture.
  double informative_fraction = 0.1;
  /// Share of grid positions left as blank background.
  double background_fraction = 0.1;
  /// Hematoxylin amplitude of the class texture.
  double signal_strength = 1.0;
  /// Scale of the class-agnostic tissue texture.
  double noise_level = 1.0;
  /// Share of patients that contribute two slides.
  double two_slide_patients = 0.0;
  uint64_t seed = 0;
};

struct PipelineConfig {
  // paths
  std::string slides_dir = "slides";
  std::string work_dir = "work";
  /// `slide_id,patient_id,label[,path]`; empty means `<slides_dir>/labels.csv`.
  std::string labels = "";
  // qc
  tiling::QcThresholds qc;
  bool border_filter = false;
  // stain
  bool stain_normalize = true;
  /// JSON stain profile; empty means the built-in reference.
  std::string stain_reference = "";
  // train
  head::TrainConfig train;
  // mc
  int mc_passes = head::kDefaultMcPasses;
  // filter
  head::FilterPolicy filter;
  // ga
  select::GAConfig ga;
  int k_min = select::kDefaultKMin;
  // split
  double train_fraction = 0.8;
  double val_fraction = 0.2;
  // synthetic corpus for `synth` and `ablate`
  SyntheticSpec synthetic;
  int ablation_seeds = 3;

  uint64_t seed = 0;
  int num_classes = 4;
  int embed_dim = 512;

  std::filesystem::path labels_path() const;
  /// Throws `Error(kConfig)` on inconsistent values.
  void Validate() const;
};

/// Parses a config document. Syntax errors report the line and column;
/// unknown keys, wrong types and a missing seed raise `Error(kConfig)`.
PipelineConfig ParseConfig(const std::string& text, const std::string& source = "config");
PipelineConfig LoadConfig(const std::filesystem::path& path);

/// Canonical JSON of every setting (what `init-config` writes).
std::string ConfigToJson(const PipelineConfig& config);

/// FNV-1a of the canonical JSON.
uint64_t ConfigHash(const PipelineConfig& config);

/// 16 lowercase hex digits.
std::string HexHash(uint64_t hash);

}  // namespace pam50::pipeline
