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

/// @file pipeline.h
/// @brief In-memory orchestration of the slide classification pipeline.
///
/// Order of operations (one consistent reading of "select patches offline,
/// then train" given that uncertainty needs a trained head):
///
///  1. tile, QC, stain-normalize and embed every slide;
///  2. split patients into train / validation (stratified by class);
///  3. train a provisional head on all QC-passing patches;
///  4. score MC-dropout uncertainty of every patch with the provisional head;
///  5. filter by uncertainty and run NSGA-II per slide;
///  6. train the final head on the selected patches only;
///  7. predict each slide from its selected patches.
///
/// The all-patches baseline is the provisional head applied to every
/// QC-passing patch of a slide.

#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pam50/config.h"
#include "pam50/embedding.h"
#include "pam50/evaluate.h"
#include "pam50/nsga2.h"
#include "pam50/slides.h"
#include "pam50/stain.h"
#include "pam50/tiling.h"
#include "pam50/train.h"
#include "pam50/uncertainty.h"

namespace pam50::pipeline {

/// Runs fn(i) for i in [0, n) on up to `threads` workers (0 = hardware
/// concurrency). Results must be written to per-index slots; the first
/// exception is rethrown after all workers stop.
void ParallelFor(size_t n, const std::function<void(size_t)>& fn, unsigned threads = 0);

/// Tiling options from the config; loads the reference stain profile file
/// when one is configured.
tiling::TileOptions MakeTileOptions(const PipelineConfig& config);

struct SlideEmbeddings {
  SlideInfo info;
  std::vector<tiling::PatchRecord> manifest;
  std::optional<stain::StainProfile> source_profile;
  std::string stain_warning;
  embed::EmbeddingStore store;
};

SlideEmbeddings TileAndEmbed(const SlideRaster& slide, const SlideInfo& info,
                             const tiling::TileOptions& options,
                             const embed::ToyEmbedder& embedder);

/// Sorted patch ids.
using PatchSubset = std::vector<int64_t>;

/// Stacks embeddings of the given slides (optionally restricted to a subset
/// per slide id) with each slide's label on every row.
head::Dataset<float> BuildDataset(const std::vector<const SlideEmbeddings*>& slides,
                                  const std::map<std::string, PatchSubset>* subsets = nullptr);

/// The config's head training settings with a seed derived for `stage`.
head::TrainConfig MakeTrainConfig(const PipelineConfig& config, const std::string& stage);

/// MC-dropout reports for every patch of a slide.
std::vector<head::UncertaintyReport> ScoreUncertainty(const head::HeadParams<float>& params,
                                                      const SlideEmbeddings& slide,
                                                      const PipelineConfig& config);

struct SlideSelection {
  PatchSubset filtered;
  /// True when the configured filter kept nothing and every patch was kept.
  bool filter_fallback = false;
  select::SelectionRecord record;
};

/// Uncertainty filter followed by NSGA-II. When fewer than k_min patches
/// survive the filter the floor drops to the survivor count; a single
/// survivor is selected directly.
SlideSelection SelectForSlide(const SlideEmbeddings& slide,
                              const std::vector<head::UncertaintyReport>& reports,
                              const PipelineConfig& config);

/// Eval-mode probabilities of the slide's patches (all, or `subset`),
/// averaged into a slide prediction.
eval::SlidePrediction PredictSlide(const head::HeadParams<float>& params,
                                   const SlideEmbeddings& slide,
                                   const PatchSubset* subset = nullptr);

/// Metrics (with AUC when computable) of predictions against slide labels.
eval::MetricsReport ScorePredictions(const std::vector<eval::SlidePrediction>& predictions,
                                     const std::vector<int>& truth, int classes);

/// Patient-level split of `slides` with the configured validation share.
/// Throws `Error(kInput)` when either side would be empty.
Split SplitSlides(const std::vector<SlideInfo>& slides, const PipelineConfig& config);

/// Trains a head on the training side of `split` with early stopping on the
/// validation side. `stage` names the random stream (`train_provisional`,
/// `train_final`); `subsets` restricts each slide to its selected patches.
head::TrainResult<float> TrainSplitHead(const std::vector<const SlideEmbeddings*>& slides,
                                        const Split& split, const PipelineConfig& config,
                                        const std::string& stage,
                                        const std::map<std::string, PatchSubset>* subsets =
                                            nullptr);

struct StudyResult {
  Split split;
  head::TrainResult<float> provisional;
  head::TrainResult<float> final_head;
  std::map<std::string, SlideSelection> selections;
  std::vector<eval::SlidePrediction> full_predictions;      // validation slides
  std::vector<eval::SlidePrediction> baseline_predictions;  // validation slides
  std::vector<int> truth;
  eval::MetricsReport full;
  eval::MetricsReport baseline;
};

/// Steps 2-7 on already embedded slides; metrics are over validation slides.
StudyResult RunStudy(const std::vector<SlideEmbeddings>& slides, const PipelineConfig& config);

struct AblationRun {
  uint64_t seed = 0;
  uint64_t synthetic_seed = 0;
  int n_val_slides = 0;
  eval::MetricsReport full;
  eval::MetricsReport baseline;
  double seconds = 0.0;
};

struct AblationSummary {
  std::vector<AblationRun> runs;
  double median_full_f1 = 0.0;
  double median_baseline_f1 = 0.0;
  double median_delta_f1 = 0.0;
};

/// Generates the synthetic corpus for `n_seeds` consecutive seeds
/// (config.seed + k, config.synthetic.seed + k), embeds it slide by slide and
/// runs the study. `log` receives progress lines.
AblationSummary RunSyntheticAblation(const PipelineConfig& config, int n_seeds,
                                     const std::function<void(const std::string&)>& log = {});

/// `{"runs": [...], "median_full_macro_f1", "median_baseline_macro_f1",
/// "median_delta_macro_f1"}`; per-run wall time is left out so reruns are
/// byte-identical.
std::string AblationToJson(const AblationSummary& summary);

double Median(std::vector<double> values);

}  // namespace pam50::pipeline
