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

#include "pam50/pipeline.h"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <nlohmann/json.hpp>
#include <sstream>
#include <thread>

#include "pam50/errors.h"
#include "pam50/rng.h"
#include "pam50/synthetic.h"

namespace pam50::pipeline {

void ParallelFor(size_t n, const std::function<void(size_t)>& fn, unsigned threads) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<size_t>(threads, n));
  if (threads <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  for (unsigned t = 0; t < threads; ++t) {
    workers.emplace_back([&] {
      for (size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  if (error) std::rethrow_exception(error);
}

tiling::TileOptions MakeTileOptions(const PipelineConfig& config) {
  tiling::TileOptions o;
  o.qc = config.qc;
  o.border_filter = config.border_filter;
  o.stain_normalize = config.stain_normalize;
  if (!config.stain_reference.empty()) {
    std::ifstream in(config.stain_reference);
    if (!in) {
      throw Error(ErrorCode::kConfig, "cannot read stain reference " + config.stain_reference);
    }
    std::stringstream ss;
    ss << in.rdbuf();
    o.reference = stain::ProfileFromJson(ss.str());
  }
  return o;
}

SlideEmbeddings TileAndEmbed(const SlideRaster& slide, const SlideInfo& info,
                             const tiling::TileOptions& options,
                             const embed::ToyEmbedder& embedder) {
  SlideEmbeddings out;
  out.info = info;
  out.store.slide_id = info.slide_id;
  out.store.dim = static_cast<uint32_t>(embedder.dim());
  auto result = tiling::TileSlide(slide, options, [&](tiling::PreparedPatch&& p) {
    const auto v = embedder.Embed(p);
    out.store.patch_ids.push_back(static_cast<uint64_t>(p.patch_id));
    out.store.vectors.insert(out.store.vectors.end(), v.begin(), v.end());
  });
  out.manifest = std::move(result.manifest);
  out.source_profile = result.source_profile;
  out.stain_warning = std::move(result.stain_warning);
  out.store.Validate();
  return out;
}

head::Dataset<float> BuildDataset(const std::vector<const SlideEmbeddings*>& slides,
                                  const std::map<std::string, PatchSubset>* subsets) {
  std::vector<std::pair<const SlideEmbeddings*, size_t>> rows;
  uint32_t dim = 0;
  for (const SlideEmbeddings* s : slides) {
    if (dim == 0) dim = s->store.dim;
    if (s->store.dim != dim) throw Error(ErrorCode::kShape, "mixed embedding dims");
    if (subsets == nullptr) {
      for (size_t i = 0; i < s->store.count(); ++i) rows.emplace_back(s, i);
      continue;
    }
    const auto it = subsets->find(s->info.slide_id);
    if (it == subsets->end()) {
      throw Error(ErrorCode::kInput, "no patch subset for slide '" + s->info.slide_id + "'");
    }
    for (int64_t id : it->second) {
      const int64_t idx = s->store.IndexOf(static_cast<uint64_t>(id));
      if (idx < 0) {
        throw Error(ErrorCode::kInput, "patch " + std::to_string(id) +
                                           " missing from slide '" + s->info.slide_id + "'");
      }
      rows.emplace_back(s, static_cast<size_t>(idx));
    }
  }
  head::Dataset<float> d;
  d.x.resize(static_cast<Eigen::Index>(rows.size()), dim);
  d.labels.reserve(rows.size());
  for (size_t r = 0; r < rows.size(); ++r) {
    const auto v = rows[r].first->store.row(rows[r].second);
    std::copy(v.begin(), v.end(), d.x.row(static_cast<Eigen::Index>(r)).data());
    d.labels.push_back(rows[r].first->info.label);
  }
  return d;
}

head::TrainConfig MakeTrainConfig(const PipelineConfig& config, const std::string& stage) {
  head::TrainConfig t = config.train;
  t.seed = DeriveSeed(config.seed, stage);
  return t;
}

namespace {

head::Matrix<float> SlideMatrix(const SlideEmbeddings& slide, const PatchSubset* subset,
                                std::vector<int64_t>* ids) {
  const auto& store = slide.store;
  std::vector<size_t> idx;
  if (subset == nullptr) {
    for (size_t i = 0; i < store.count(); ++i) idx.push_back(i);
  } else {
    for (int64_t id : *subset) {
      const int64_t k = store.IndexOf(static_cast<uint64_t>(id));
      if (k < 0) {
        throw Error(ErrorCode::kInput, "patch " + std::to_string(id) +
                                           " missing from slide '" + slide.info.slide_id + "'");
      }
      idx.push_back(static_cast<size_t>(k));
    }
  }
  head::Matrix<float> x(static_cast<Eigen::Index>(idx.size()), store.dim);
  for (size_t r = 0; r < idx.size(); ++r) {
    const auto v = store.row(idx[r]);
    std::copy(v.begin(), v.end(), x.row(static_cast<Eigen::Index>(r)).data());
    if (ids != nullptr) ids->push_back(static_cast<int64_t>(store.patch_ids[idx[r]]));
  }
  return x;
}

}  // namespace

std::vector<head::UncertaintyReport> ScoreUncertainty(const head::HeadParams<float>& params,
                                                      const SlideEmbeddings& slide,
                                                      const PipelineConfig& config) {
  std::vector<int64_t> ids;
  const auto x = SlideMatrix(slide, nullptr, &ids);
  return head::McUncertaintyBatch(params, x, ids, config.mc_passes,
                                  DeriveSeed(config.seed, "mc", slide.info.slide_id));
}

SlideSelection SelectForSlide(const SlideEmbeddings& slide,
                              const std::vector<head::UncertaintyReport>& reports,
                              const PipelineConfig& config) {
  SlideSelection sel;
  try {
    sel.filtered = head::FilterByUncertainty(reports, config.filter);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kEmptyAfterFilter) throw;
    sel.filtered = head::FilterByUncertainty(reports, head::FilterPolicy::KeepFraction(1.0));
    sel.filter_fallback = true;
  }
  std::map<int64_t, double> u_of;
  for (const auto& r : reports) u_of[r.patch_id] = r.u;

  const auto& store = slide.store;
  std::vector<double> emb;
  std::vector<double> u;
  emb.reserve(sel.filtered.size() * store.dim);
  for (int64_t id : sel.filtered) {
    const auto row = store.row(static_cast<size_t>(store.IndexOf(static_cast<uint64_t>(id))));
    emb.insert(emb.end(), row.begin(), row.end());
    u.push_back(u_of.at(id));
  }
  const int n = static_cast<int>(sel.filtered.size());
  const int k_min = std::min(config.k_min, n);
  const select::SelectionProblem problem(std::move(emb), static_cast<int>(store.dim),
                                         std::move(u), k_min);
  select::GAConfig ga = config.ga;
  ga.seed = DeriveSeed(config.seed, "select", slide.info.slide_id);

  auto& rec = sel.record;
  rec.slide_id = slide.info.slide_id;
  rec.seed = ga.seed;
  rec.n_filtered = n;
  rec.generations = ga.generations;
  rec.population = ga.population;
  if (n == 1) {
    rec.selected_patch_ids = sel.filtered;
    rec.objectives = select::EvalObjectives(select::Bits{1}, problem);
    rec.front_size = 1;
    return sel;
  }
  const auto result = select::Evolve(problem, ga);
  const select::Genome& pick = select::PickSubset(result.front);
  for (int i = 0; i < n; ++i) {
    if (pick.bits[i]) rec.selected_patch_ids.push_back(sel.filtered[i]);
  }
  rec.objectives = pick.objectives;
  rec.front_size = static_cast<int>(result.front.size());
  return sel;
}

eval::SlidePrediction PredictSlide(const head::HeadParams<float>& params,
                                   const SlideEmbeddings& slide, const PatchSubset* subset) {
  const auto x = SlideMatrix(slide, subset, nullptr);
  if (x.rows() == 0) {
    throw Error(ErrorCode::kEmptyPatchSet, "no patches to predict slide '" +
                                               slide.info.slide_id + "'");
  }
  const auto probs = head::Forward(params, x, head::Mode::kEval);
  std::vector<std::vector<double>> rows(static_cast<size_t>(probs.rows()));
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    rows[i].assign(probs.row(i).data(), probs.row(i).data() + probs.cols());
  }
  return eval::AggregateSlide(rows, slide.info.slide_id);
}

eval::MetricsReport ScorePredictions(const std::vector<eval::SlidePrediction>& predictions,
                                     const std::vector<int>& truth, int classes) {
  std::vector<int> predicted;
  std::vector<std::vector<double>> probs;
  for (const auto& p : predictions) {
    predicted.push_back(p.predicted_class);
    probs.push_back(p.mean_probs);
  }
  auto report = eval::EvaluateMetrics(predicted, truth, classes);
  eval::AttachAuc(report, probs, truth);
  return report;
}

Split SplitSlides(const std::vector<SlideInfo>& slides, const PipelineConfig& config) {
  Split split = PatientSplit(slides, config.val_fraction, DeriveSeed(config.seed, "split"));
  if (split.train_slides.empty() || split.val_slides.empty()) {
    throw Error(ErrorCode::kInput, "the patient split left an empty train or validation side");
  }
  return split;
}

head::TrainResult<float> TrainSplitHead(const std::vector<const SlideEmbeddings*>& slides,
                                        const Split& split, const PipelineConfig& config,
                                        const std::string& stage,
                                        const std::map<std::string, PatchSubset>* subsets) {
  std::map<std::string, const SlideEmbeddings*> by_id;
  for (const SlideEmbeddings* s : slides) by_id[s->info.slide_id] = s;
  auto pick = [&](const std::vector<std::string>& ids) {
    std::vector<const SlideEmbeddings*> out;
    for (const auto& id : ids) {
      const auto it = by_id.find(id);
      if (it == by_id.end()) {
        throw Error(ErrorCode::kInput, "split names unknown slide '" + id + "'");
      }
      out.push_back(it->second);
    }
    return out;
  };
  return head::TrainHead(BuildDataset(pick(split.train_slides), subsets),
                         BuildDataset(pick(split.val_slides), subsets), config.num_classes,
                         MakeTrainConfig(config, stage));
}

StudyResult RunStudy(const std::vector<SlideEmbeddings>& slides, const PipelineConfig& config) {
  StudyResult r;
  std::vector<SlideInfo> infos;
  std::vector<const SlideEmbeddings*> all;
  std::map<std::string, const SlideEmbeddings*> by_id;
  for (const auto& s : slides) {
    infos.push_back(s.info);
    all.push_back(&s);
    by_id[s.info.slide_id] = &s;
  }
  r.split = SplitSlides(infos, config);
  r.provisional = TrainSplitHead(all, r.split, config, "train_provisional");

  std::vector<SlideSelection> selections(slides.size());
  ParallelFor(slides.size(), [&](size_t i) {
    const auto reports = ScoreUncertainty(r.provisional.params, slides[i], config);
    selections[i] = SelectForSlide(slides[i], reports, config);
  });
  std::map<std::string, PatchSubset> subsets;
  for (size_t i = 0; i < slides.size(); ++i) {
    subsets[slides[i].info.slide_id] = selections[i].record.selected_patch_ids;
    r.selections[slides[i].info.slide_id] = std::move(selections[i]);
  }

  r.final_head = TrainSplitHead(all, r.split, config, "train_final", &subsets);

  for (const auto& id : r.split.val_slides) {
    const SlideEmbeddings* s = by_id.at(id);
    r.full_predictions.push_back(
        PredictSlide(r.final_head.params, *s, &subsets.at(s->info.slide_id)));
    r.baseline_predictions.push_back(PredictSlide(r.provisional.params, *s));
    r.truth.push_back(s->info.label);
  }
  r.full = ScorePredictions(r.full_predictions, r.truth, config.num_classes);
  r.baseline = ScorePredictions(r.baseline_predictions, r.truth, config.num_classes);
  return r;
}

double Median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

AblationSummary RunSyntheticAblation(const PipelineConfig& config, int n_seeds,
                                     const std::function<void(const std::string&)>& log) {
  AblationSummary summary;
  const embed::ToyEmbedder embedder(config.seed, config.embed_dim);
  for (int k = 0; k < n_seeds; ++k) {
    const auto start = std::chrono::steady_clock::now();
    PipelineConfig c = config;
    c.seed = config.seed + static_cast<uint64_t>(k);
    c.synthetic.seed = config.synthetic.seed + static_cast<uint64_t>(k);
    const tiling::TileOptions options = MakeTileOptions(c);
    const auto corpus = SyntheticCorpus(c.synthetic);
    std::vector<SlideEmbeddings> slides(corpus.size());
    ParallelFor(corpus.size(), [&](size_t i) {
      const SyntheticSlide s = GenerateSyntheticSlide(c.synthetic, static_cast<int>(i));
      slides[i] = TileAndEmbed(s.raster, s.info, options, embedder);
    });
    const StudyResult study = RunStudy(slides, c);
    AblationRun run;
    run.seed = c.seed;
    run.synthetic_seed = c.synthetic.seed;
    run.n_val_slides = static_cast<int>(study.truth.size());
    run.full = study.full;
    run.baseline = study.baseline;
    run.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (log) {
      char buf[200];
      std::snprintf(buf, sizeof(buf),
                    "seed %llu: full macro-F1 %.4f, all-patches macro-F1 %.4f "
                    "(%d validation slides, %.1f s)",
                    static_cast<unsigned long long>(run.seed), run.full.macro_f1,
                    run.baseline.macro_f1, run.n_val_slides, run.seconds);
      log(buf);
    }
    summary.runs.push_back(std::move(run));
  }
  std::vector<double> full, base, delta;
  for (const auto& r : summary.runs) {
    full.push_back(r.full.macro_f1);
    base.push_back(r.baseline.macro_f1);
    delta.push_back(r.full.macro_f1 - r.baseline.macro_f1);
  }
  summary.median_full_f1 = Median(full);
  summary.median_baseline_f1 = Median(base);
  summary.median_delta_f1 = Median(delta);
  return summary;
}

std::string AblationToJson(const AblationSummary& summary) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json runs = nlohmann::ordered_json::array();
  for (const auto& r : summary.runs) {
    nlohmann::ordered_json e;
    e["seed"] = r.seed;
    e["synthetic_seed"] = r.synthetic_seed;
    e["n_val_slides"] = r.n_val_slides;
    e["with_selection"] = nlohmann::ordered_json::parse(eval::MetricsToJson(r.full));
    e["all_patches"] = nlohmann::ordered_json::parse(eval::MetricsToJson(r.baseline));
    e["delta_macro_f1"] = r.full.macro_f1 - r.baseline.macro_f1;
    runs.push_back(e);
  }
  j["runs"] = runs;
  j["median_full_macro_f1"] = summary.median_full_f1;
  j["median_baseline_macro_f1"] = summary.median_baseline_f1;
  j["median_delta_macro_f1"] = summary.median_delta_f1;
  return j.dump(2) + "\n";
}

}  // namespace pam50::pipeline
