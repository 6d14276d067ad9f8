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

#include "pam50/stages.h"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

#include "pam50/csv.h"
#include "pam50/errors.h"
#include "pam50/pipeline.h"
#include "pam50/rng.h"
#include "pam50/synthetic.h"

namespace pam50::pipeline {
namespace {

namespace fs = std::filesystem;
using OrderedJson = nlohmann::ordered_json;

constexpr const char* kStampFile = "stage.json";
constexpr const char* kSlidesFile = "slides.csv";
constexpr const char* kToyModel = "toy-projection-v1";

std::string ReadText(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes through a temporary file so a crash never leaves a torn artifact.
void WriteText(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + tmp.string());
    out << text;
    if (!out) throw Error(ErrorCode::kIo, "write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string Format17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/// Configuration sections each stage adds to its upstream hash.
std::vector<std::string> StageSections(Stage stage) {
  switch (stage) {
    case Stage::kTile: return {"seed", "num_classes", "qc", "stain"};
    case Stage::kEmbed: return {"embed_dim"};
    case Stage::kTrain: return {"train", "split"};
    case Stage::kUncertainty: return {"mc"};
    case Stage::kSelect: return {"filter", "ga"};
    case Stage::kTrainFinal:
    case Stage::kPredict:
    case Stage::kEvaluate:
    case Stage::kAblate: return {};
  }
  return {};
}

std::vector<Stage> Upstream(Stage stage) {
  switch (stage) {
    case Stage::kTile: return {};
    case Stage::kEmbed: return {Stage::kTile};
    case Stage::kTrain: return {Stage::kEmbed};
    case Stage::kUncertainty: return {Stage::kTrain, Stage::kEmbed};
    case Stage::kSelect: return {Stage::kUncertainty, Stage::kEmbed};
    case Stage::kTrainFinal: return {Stage::kSelect, Stage::kTrain, Stage::kEmbed};
    case Stage::kPredict:
      return {Stage::kTrainFinal, Stage::kSelect, Stage::kTrain, Stage::kEmbed};
    case Stage::kEvaluate: return {Stage::kPredict};
    case Stage::kAblate: return {Stage::kEvaluate};
  }
  return {};
}

std::string StampText(const PipelineConfig& config, Stage stage) {
  OrderedJson j;
  j["stage"] = StageName(stage);
  j["seed"] = config.seed;
  j["config_hash"] = HexHash(StageHash(config, stage));
  return j.dump(2) + "\n";
}

bool IsCurrent(const PipelineConfig& config, Stage stage) {
  const fs::path stamp = StageDir(config, stage) / kStampFile;
  return fs::exists(stamp) && ReadText(stamp) == StampText(config, stage);
}

void RequireUpstream(const PipelineConfig& config, Stage stage) {
  for (Stage up : Upstream(stage)) {
    const fs::path stamp = StageDir(config, up) / kStampFile;
    const std::string command = "pam50 " + std::string(StageCommand(up));
    if (!fs::exists(stamp)) {
      throw Error(ErrorCode::kDependency, "stage '" + std::string(StageName(stage)) +
                                              "' needs stage '" +
                                              std::string(StageName(up)) +
                                              "', which has not run; run `" + command + "`");
    }
    if (ReadText(stamp) != StampText(config, up)) {
      throw Error(ErrorCode::kDependency,
                  "stage '" + std::string(StageName(up)) +
                      "' was produced with a different configuration; rerun `" + command + "`");
    }
  }
}

// ---------------------------------------------------------------------------
// Shared readers for upstream artifacts.

std::vector<SlideInfo> ReadSlideList(const PipelineConfig& config) {
  return ReadLabels(StageDir(config, Stage::kTile) / kSlidesFile, config.num_classes);
}

fs::path StorePath(const PipelineConfig& config, const std::string& slide_id) {
  return StageDir(config, Stage::kEmbed) / (slide_id + ".pemb");
}

std::vector<SlideEmbeddings> LoadEmbeddings(const PipelineConfig& config,
                                            const StageOptions& options) {
  const auto infos = ReadSlideList(config);
  std::vector<SlideEmbeddings> slides(infos.size());
  ParallelFor(
      infos.size(),
      [&](size_t i) {
        slides[i].info = infos[i];
        slides[i].store = embed::ReadStore(StorePath(config, infos[i].slide_id));
        slides[i].store.slide_id = infos[i].slide_id;
        if (static_cast<int>(slides[i].store.dim) != config.embed_dim) {
          throw Error(ErrorCode::kSizeMismatch,
                      "embedding store for '" + infos[i].slide_id + "' has dim " +
                          std::to_string(slides[i].store.dim));
        }
      },
      options.threads);
  return slides;
}

std::vector<const SlideEmbeddings*> Pointers(const std::vector<SlideEmbeddings>& slides) {
  std::vector<const SlideEmbeddings*> out;
  for (const auto& s : slides) out.push_back(&s);
  return out;
}

Split ReadSplit(const PipelineConfig& config) {
  return SplitFromJson(ReadText(StageDir(config, Stage::kTrain) / "split.json"));
}

std::map<std::string, PatchSubset> ReadSelections(const PipelineConfig& config,
                                                  const std::vector<SlideEmbeddings>& slides) {
  std::map<std::string, PatchSubset> subsets;
  for (const auto& s : slides) {
    const auto record = select::SelectionFromJson(ReadText(
        StageDir(config, Stage::kSelect) / (s.info.slide_id + ".json")));
    subsets[s.info.slide_id] = record.selected_patch_ids;
  }
  return subsets;
}

void WriteUncertaintyCsv(const fs::path& path,
                         const std::vector<head::UncertaintyReport>& reports, int classes) {
  std::string text = "patch_id,u";
  for (int c = 0; c < classes; ++c) text += ",var_" + std::to_string(c);
  text += '\n';
  for (const auto& r : reports) {
    text += std::to_string(r.patch_id) + ',' + Format17(r.u);
    for (double v : r.class_variances) text += ',' + Format17(v);
    text += '\n';
  }
  WriteText(path, text);
}

std::vector<head::UncertaintyReport> ReadUncertaintyCsv(const fs::path& path, int classes,
                                                        int passes) {
  std::istringstream in(ReadText(path));
  std::string line;
  std::getline(in, line);
  std::vector<head::UncertaintyReport> reports;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = csv::TrimEol(line);
    if (line.empty()) continue;
    const auto fields = csv::Split(line);
    if (static_cast<int>(fields.size()) != 2 + classes) {
      throw Error(ErrorCode::kInput, path.string() + " line " + std::to_string(line_no) +
                                         ": expected " + std::to_string(2 + classes) +
                                         " fields");
    }
    head::UncertaintyReport r;
    r.patch_id = csv::ParseInt(fields[0], line_no);
    r.u = csv::ParseDouble(fields[1], line_no);
    for (int c = 0; c < classes; ++c) {
      r.class_variances.push_back(csv::ParseDouble(fields[2 + c], line_no));
    }
    r.passes = passes;
    reports.push_back(std::move(r));
  }
  return reports;
}

std::string PredictionsCsv(const std::vector<eval::SlidePrediction>& predictions,
                           const std::vector<int>& truth, int classes) {
  std::string text = "slide_id,true_class,predicted_class,n_patches";
  for (int c = 0; c < classes; ++c) text += ",prob_" + std::to_string(c);
  text += '\n';
  for (size_t i = 0; i < predictions.size(); ++i) {
    const auto& p = predictions[i];
    text += p.slide_id + ',' + std::to_string(truth[i]) + ',' +
            std::to_string(p.predicted_class) + ',' + std::to_string(p.n_patches_used);
    for (double v : p.mean_probs) text += ',' + Format17(v);
    text += '\n';
  }
  return text;
}

void ReadPredictionsCsv(const fs::path& path, int classes,
                        std::vector<eval::SlidePrediction>* predictions,
                        std::vector<int>* truth) {
  std::istringstream in(ReadText(path));
  std::string line;
  std::getline(in, line);
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = csv::TrimEol(line);
    if (line.empty()) continue;
    const auto fields = csv::Split(line);
    if (static_cast<int>(fields.size()) != 4 + classes) {
      throw Error(ErrorCode::kInput, path.string() + " line " + std::to_string(line_no) +
                                         ": expected " + std::to_string(4 + classes) +
                                         " fields");
    }
    eval::SlidePrediction p;
    p.slide_id = fields[0];
    truth->push_back(static_cast<int>(csv::ParseInt(fields[1], line_no)));
    p.predicted_class = static_cast<int>(csv::ParseInt(fields[2], line_no));
    p.n_patches_used = static_cast<int>(csv::ParseInt(fields[3], line_no));
    for (int c = 0; c < classes; ++c) {
      p.mean_probs.push_back(csv::ParseDouble(fields[4 + c], line_no));
    }
    predictions->push_back(std::move(p));
  }
}

void WriteHistoryFile(const fs::path& path, const std::vector<head::EpochRecord>& history) {
  std::ostringstream out;
  head::WriteHistory(out, history);
  WriteText(path, out.str());
}

// ---------------------------------------------------------------------------
// Stage bodies. Each writes into `dir`, which the caller has emptied.

void DoTile(const PipelineConfig& config, const StageOptions& options, const fs::path& dir) {
  const fs::path labels = config.labels_path();
  auto infos = ReadLabels(labels, config.num_classes);
  for (auto& info : infos) {
    fs::path p = info.path;
    if (p.is_relative()) p = labels.parent_path() / p;
    info.path = fs::absolute(p).lexically_normal().string();
  }
  const tiling::TileOptions tile_options = MakeTileOptions(config);
  std::vector<std::string> warnings(infos.size());
  ParallelFor(
      infos.size(),
      [&](size_t i) {
        const auto& info = infos[i];
        const SlideRaster slide = tiling::LoadSlide(info.path, info.slide_id);
        const tiling::TileResult result = tiling::ScoreSlide(slide, tile_options);
        std::ostringstream manifest;
        tiling::WriteManifest(manifest, result.manifest);
        WriteText(dir / (info.slide_id + ".manifest.csv"), manifest.str());
        if (result.source_profile) {
          WriteText(dir / (info.slide_id + ".profile.json"),
                    stain::ProfileToJson(*result.source_profile) + "\n");
        }
        warnings[i] = result.stain_warning;
      },
      options.threads);
  for (size_t i = 0; i < infos.size(); ++i) {
    if (!warnings[i].empty() && options.log) {
      options.log("warning: " + infos[i].slide_id + ": " + warnings[i]);
    }
  }
  WriteLabels(dir / kSlidesFile, infos);
}

void DoEmbed(const PipelineConfig& config, const StageOptions& options, const fs::path& dir) {
  const auto infos = ReadSlideList(config);
  const fs::path tile_dir = StageDir(config, Stage::kTile);
  const stain::StainProfile reference = MakeTileOptions(config).reference;
  const embed::ToyEmbedder embedder(config.seed, config.embed_dim);
  ParallelFor(
      infos.size(),
      [&](size_t i) {
        const auto& info = infos[i];
        std::istringstream manifest_text(
            ReadText(tile_dir / (info.slide_id + ".manifest.csv")));
        const auto manifest = tiling::ReadManifest(manifest_text);
        std::optional<stain::StainProfile> profile;
        const fs::path profile_path = tile_dir / (info.slide_id + ".profile.json");
        if (fs::exists(profile_path)) profile = stain::ProfileFromJson(ReadText(profile_path));
        const SlideRaster slide = tiling::LoadSlide(info.path, info.slide_id);
        embed::EmbeddingStore store;
        store.slide_id = info.slide_id;
        store.dim = static_cast<uint32_t>(config.embed_dim);
        tiling::PreparePassing(slide, manifest, profile, reference,
                               [&](tiling::PreparedPatch&& p) {
                                 const auto v = embedder.Embed(p);
                                 store.patch_ids.push_back(static_cast<uint64_t>(p.patch_id));
                                 store.vectors.insert(store.vectors.end(), v.begin(), v.end());
                               });
        const embed::StoreMetadata meta{info.slide_id, "toy", kToyModel};
        embed::WriteStore(store, dir / (info.slide_id + ".pemb"), &meta);
      },
      options.threads);
}

void DoTrain(const PipelineConfig& config, const StageOptions& options, const fs::path& dir) {
  const auto slides = LoadEmbeddings(config, options);
  std::vector<SlideInfo> infos;
  for (const auto& s : slides) infos.push_back(s.info);
  const Split split = SplitSlides(infos, config);
  const auto result = TrainSplitHead(Pointers(slides), split, config, "train_provisional");
  head::WriteHead(result.params, dir / "head.phed");
  WriteHistoryFile(dir / "history.csv", result.history);
  WriteText(dir / "split.json", SplitToJson(split));
  if (options.log) {
    options.log("provisional head: best epoch " + std::to_string(result.best_epoch) + " of " +
                std::to_string(result.history.size()));
  }
}

void DoUncertainty(const PipelineConfig& config, const StageOptions& options,
                   const fs::path& dir) {
  const auto slides = LoadEmbeddings(config, options);
  const auto params = head::ReadHead(StageDir(config, Stage::kTrain) / "head.phed");
  ParallelFor(
      slides.size(),
      [&](size_t i) {
        WriteUncertaintyCsv(dir / (slides[i].info.slide_id + ".csv"),
                            ScoreUncertainty(params, slides[i], config), config.num_classes);
      },
      options.threads);
}

void DoSelect(const PipelineConfig& config, const StageOptions& options, const fs::path& dir) {
  const auto slides = LoadEmbeddings(config, options);
  const fs::path u_dir = StageDir(config, Stage::kUncertainty);
  std::vector<bool> fallback(slides.size(), false);
  ParallelFor(
      slides.size(),
      [&](size_t i) {
        const auto reports = ReadUncertaintyCsv(u_dir / (slides[i].info.slide_id + ".csv"),
                                                config.num_classes, config.mc_passes);
        const SlideSelection sel = SelectForSlide(slides[i], reports, config);
        fallback[i] = sel.filter_fallback;
        WriteText(dir / (slides[i].info.slide_id + ".json"),
                  select::SelectionToJson(sel.record));
      },
      options.threads);
  for (size_t i = 0; i < slides.size(); ++i) {
    if (fallback[i] && options.log) {
      options.log("warning: " + slides[i].info.slide_id +
                  ": uncertainty filter kept no patch; used all patches instead");
    }
  }
}

void DoTrainFinal(const PipelineConfig& config, const StageOptions& options,
                  const fs::path& dir) {
  const auto slides = LoadEmbeddings(config, options);
  const Split split = ReadSplit(config);
  const auto subsets = ReadSelections(config, slides);
  const auto result = TrainSplitHead(Pointers(slides), split, config, "train_final", &subsets);
  head::WriteHead(result.params, dir / "head.phed");
  WriteHistoryFile(dir / "history.csv", result.history);
  if (options.log) {
    options.log("final head: best epoch " + std::to_string(result.best_epoch) + " of " +
                std::to_string(result.history.size()));
  }
}

void DoPredict(const PipelineConfig& config, const StageOptions& options, const fs::path& dir) {
  const auto slides = LoadEmbeddings(config, options);
  const Split split = ReadSplit(config);
  const auto subsets = ReadSelections(config, slides);
  const auto final_head = head::ReadHead(StageDir(config, Stage::kTrainFinal) / "head.phed");
  const auto provisional = head::ReadHead(StageDir(config, Stage::kTrain) / "head.phed");
  std::map<std::string, const SlideEmbeddings*> by_id;
  for (const auto& s : slides) by_id[s.info.slide_id] = &s;
  std::vector<eval::SlidePrediction> full, baseline;
  std::vector<int> truth;
  for (const auto& id : split.val_slides) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw Error(ErrorCode::kInput, "split names unknown slide " + id);
    full.push_back(PredictSlide(final_head, *it->second, &subsets.at(id)));
    baseline.push_back(PredictSlide(provisional, *it->second));
    truth.push_back(it->second->info.label);
  }
  WriteText(dir / "predictions.csv", PredictionsCsv(full, truth, config.num_classes));
  WriteText(dir / "baseline_predictions.csv",
            PredictionsCsv(baseline, truth, config.num_classes));
}

void WriteReport(const fs::path& dir, const std::string& stem,
                 const eval::MetricsReport& report) {
  WriteText(dir / (stem + ".json"), eval::MetricsToJson(report));
  WriteText(dir / (stem + "_table.txt"), eval::MetricsTable(report));
  std::ostringstream confusion;
  eval::WriteConfusionCsv(confusion, report);
  WriteText(dir / (stem + "_confusion.csv"), confusion.str());
}

void DoEvaluate(const PipelineConfig& config, const StageOptions& options,
                const fs::path& dir) {
  const fs::path predict_dir = StageDir(config, Stage::kPredict);
  for (const auto& [file, stem] : {std::pair<std::string, std::string>{"predictions.csv",
                                                                       "metrics"},
                                   {"baseline_predictions.csv", "baseline_metrics"}}) {
    std::vector<eval::SlidePrediction> predictions;
    std::vector<int> truth;
    ReadPredictionsCsv(predict_dir / file, config.num_classes, &predictions, &truth);
    const auto report = ScorePredictions(predictions, truth, config.num_classes);
    WriteReport(dir, stem, report);
    if (options.log) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "%s: accuracy %.4f, macro-F1 %.4f (%zu slides)",
                    stem.c_str(), report.accuracy, report.macro_f1, truth.size());
      options.log(buf);
    }
  }
}

void DoAblate(const PipelineConfig& config, const StageOptions& options, const fs::path& dir) {
  const fs::path eval_dir = StageDir(config, Stage::kEvaluate);
  const std::string with_text = ReadText(eval_dir / "metrics.json");
  const std::string all_text = ReadText(eval_dir / "baseline_metrics.json");
  WriteText(dir / "with_selection.json", with_text);
  WriteText(dir / "all_patches.json", all_text);
  const auto with_sel = OrderedJson::parse(with_text);
  const auto all = OrderedJson::parse(all_text);
  OrderedJson delta;
  for (const char* key : {"accuracy", "macro_precision", "macro_recall", "macro_f1",
                          "macro_auc"}) {
    if (!with_sel.contains(key) || !all.contains(key) || with_sel[key].is_null() ||
        all[key].is_null()) {
      continue;
    }
    const double a = with_sel[key].get<double>();
    const double b = all[key].get<double>();
    delta[key] = {{"with_selection", a}, {"all_patches", b}, {"delta", a - b}};
  }
  WriteText(dir / "delta.json", delta.dump(2) + "\n");
  if (options.log && delta.contains("macro_f1")) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "macro-F1 with selection %.4f, all patches %.4f, delta %+.4f",
                  delta["macro_f1"]["with_selection"].get<double>(),
                  delta["macro_f1"]["all_patches"].get<double>(),
                  delta["macro_f1"]["delta"].get<double>());
    options.log(buf);
  }
}

}  // namespace

const std::vector<Stage>& AllStages() {
  static const std::vector<Stage> kStages = {
      Stage::kTile,       Stage::kEmbed,   Stage::kTrain,    Stage::kUncertainty, Stage::kSelect,
      Stage::kTrainFinal, Stage::kPredict, Stage::kEvaluate, Stage::kAblate};
  return kStages;
}

std::string_view StageName(Stage stage) {
  switch (stage) {
    case Stage::kTile: return "tile";
    case Stage::kEmbed: return "embed";
    case Stage::kTrain: return "train";
    case Stage::kUncertainty: return "uncertainty";
    case Stage::kSelect: return "select";
    case Stage::kTrainFinal: return "train_final";
    case Stage::kPredict: return "predict";
    case Stage::kEvaluate: return "evaluate";
    case Stage::kAblate: return "ablate";
  }
  return "unknown";
}

std::string_view StageCommand(Stage stage) {
  switch (stage) {
    case Stage::kEmbed: return "embed-toy";
    case Stage::kTrainFinal: return "train --final";
    default: return StageName(stage);
  }
}

uint64_t StageHash(const PipelineConfig& config, Stage stage) {
  const auto all = OrderedJson::parse(ConfigToJson(config));
  uint64_t h = Fnv1a64("pam50-stage-v1");
  for (Stage s : AllStages()) {
    OrderedJson part;
    part["stage"] = StageName(s);
    for (const auto& key : StageSections(s)) part[key] = all.at(key);
    h = Fnv1a64(part.dump(), h);
    if (s == stage) break;
  }
  return h;
}

fs::path StageDir(const PipelineConfig& config, Stage stage) {
  return fs::path(config.work_dir) / std::string(StageName(stage));
}

bool RunStage(Stage stage, const PipelineConfig& config, const StageOptions& options) {
  config.Validate();
  const std::string name(StageName(stage));
  if (!options.force && IsCurrent(config, stage)) {
    if (options.log) options.log(name + ": up to date (use --force to rerun)");
    return false;
  }
  RequireUpstream(config, stage);
  const fs::path dir = StageDir(config, stage);
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto start = std::chrono::steady_clock::now();
  switch (stage) {
    case Stage::kTile: DoTile(config, options, dir); break;
    case Stage::kEmbed: DoEmbed(config, options, dir); break;
    case Stage::kTrain: DoTrain(config, options, dir); break;
    case Stage::kUncertainty: DoUncertainty(config, options, dir); break;
    case Stage::kSelect: DoSelect(config, options, dir); break;
    case Stage::kTrainFinal: DoTrainFinal(config, options, dir); break;
    case Stage::kPredict: DoPredict(config, options, dir); break;
    case Stage::kEvaluate: DoEvaluate(config, options, dir); break;
    case Stage::kAblate: DoAblate(config, options, dir); break;
  }
  WriteText(dir / kStampFile, StampText(config, stage));
  if (options.log) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%s: done in %.2f s", name.c_str(),
                  std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                      .count());
    options.log(buf);
  }
  return true;
}

void RunAll(const PipelineConfig& config, const StageOptions& options) {
  for (Stage stage : AllStages()) RunStage(stage, config, options);
}

void WriteSynthetic(const PipelineConfig& config, const StageOptions& options) {
  config.Validate();
  const fs::path dir = config.slides_dir;
  fs::create_directories(dir);
  const auto corpus = SyntheticCorpus(config.synthetic);
  ParallelFor(
      corpus.size(),
      [&](size_t i) {
        const SyntheticSlide slide = GenerateSyntheticSlide(config.synthetic, static_cast<int>(i));
        WriteImage(slide.raster.image, dir / slide.info.path, 1);
      },
      options.threads);
  WriteLabels(dir / "labels.csv", corpus);
  if (options.log) {
    options.log("wrote " + std::to_string(corpus.size()) + " synthetic slides to " +
                dir.string());
  }
}

std::string RunSyntheticAblationStage(const PipelineConfig& config,
                                      const StageOptions& options) {
  config.Validate();
  const AblationSummary summary =
      RunSyntheticAblation(config, config.ablation_seeds, options.log);
  const std::string text = AblationToJson(summary);
  const fs::path dir = fs::path(config.work_dir) / "ablate_synthetic";
  fs::create_directories(dir);
  WriteText(dir / "ablation.json", text);
  return text;
}

}  // namespace pam50::pipeline
