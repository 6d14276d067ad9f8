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

/// @file stages.h
/// @brief File-based pipeline stages behind the `pam50` command line tool.
///
/// Each stage reads only the artifacts of earlier stages (plus the slide
/// images for tiling and embedding) and writes its own artifacts under
/// `<work_dir>/<stage>/`, finishing with a `stage.json` stamp that records the
/// seed and a hash of every configuration value the stage depends on. A stage
/// whose stamp matches the current configuration is skipped unless forced;
/// a stage whose upstream stamp is missing or stale fails with a dependency
/// error naming the command to run.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "pam50/config.h"

namespace pam50::pipeline {

enum class Stage {
  kTile,
  kEmbed,
  kTrain,
  kUncertainty,
  kSelect,
  kTrainFinal,
  kPredict,
  kEvaluate,
  kAblate,
};

/// Stages in execution order (`kAblate` last).
const std::vector<Stage>& AllStages();

/// Directory name under the work dir (`tile`, `embed`, ..., `train_final`).
std::string_view StageName(Stage stage);

/// The command that produces the stage (`embed-toy`, `train --final`, ...).
std::string_view StageCommand(Stage stage);

/// Hash over the configuration values that determine the stage's outputs,
/// chained through its upstream stages. Paths are excluded so that a work
/// directory can be moved.
uint64_t StageHash(const PipelineConfig& config, Stage stage);

std::filesystem::path StageDir(const PipelineConfig& config, Stage stage);

struct StageOptions {
  bool force = false;
  /// Worker threads for per-slide work; 0 means hardware concurrency.
  unsigned threads = 0;
  /// Progress messages (wall times, skipped stages, warnings).
  std::function<void(const std::string&)> log;
};

/// Runs one stage. Returns false when it was skipped as up to date.
/// Throws `Error(kDependency)` when an upstream stage is missing or stale.
bool RunStage(Stage stage, const PipelineConfig& config, const StageOptions& options);

/// Runs every stage in order.
void RunAll(const PipelineConfig& config, const StageOptions& options);

/// Writes the synthetic corpus described by `config.synthetic` into
/// `config.slides_dir` (images plus `labels.csv`).
void WriteSynthetic(const PipelineConfig& config, const StageOptions& options);

/// Runs the multi-seed synthetic ablation and writes
/// `<work_dir>/ablate_synthetic/ablation.json`. Returns the JSON text.
std::string RunSyntheticAblationStage(const PipelineConfig& config,
                                      const StageOptions& options);

}  // namespace pam50::pipeline
