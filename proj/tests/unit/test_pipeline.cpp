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

#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <sys/wait.h>

#include "oracles.h"
#include "pam50/config.h"
#include "pam50/errors.h"
#include "pam50/pipeline.h"
#include "pam50/rng.h"
#include "pam50/slides.h"
#include "pam50/stages.h"
#include "pam50/synthetic.h"

namespace pam50::pipeline {
namespace {

namespace fs = std::filesystem;

ErrorCode CodeOf(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::kInput;
}

SyntheticSpec TinySpec(uint64_t seed) {
  SyntheticSpec s;
  s.slides_per_class = 2;
  s.grid_rows = 3;
  s.grid_cols = 3;
  s.informative_fraction = 0.4;
  s.background_fraction = 0.2;
  s.seed = seed;
  return s;
}

// A small corpus config rooted at `root`, fast enough for unit tests.
PipelineConfig TinyConfig(const fs::path& root) {
  PipelineConfig c;
  c.seed = 5;
  c.slides_dir = (root / "slides").string();
  c.work_dir = (root / "work").string();
  c.synthetic = TinySpec(5);
  c.synthetic.slides_per_class = 3;
  c.k_min = 2;
  c.train.max_epochs = 5;
  c.train.hidden = 32;
  c.mc_passes = 4;
  c.ga.population = 8;
  c.ga.generations = 3;
  c.ablation_seeds = 1;
  return c;
}

StageOptions Quiet() {
  StageOptions o;
  o.threads = 2;
  return o;
}

// ---- configuration --------------------------------------------------------

TEST(Config, MinimalDocumentTakesDefaults) {
  const PipelineConfig c = ParseConfig(R"({"seed": 17})");
  EXPECT_EQ(c.seed, 17u);
  EXPECT_EQ(c.train.batch_size, 64);
  EXPECT_EQ(c.train.max_epochs, 100);
  EXPECT_DOUBLE_EQ(c.train.learning_rate, 1e-4);
  EXPECT_EQ(c.mc_passes, 20);
  EXPECT_EQ(c.ga.population, 50);
  EXPECT_EQ(c.ga.generations, 50);
  EXPECT_DOUBLE_EQ(c.ga.crossover_prob, 0.9);
  EXPECT_DOUBLE_EQ(c.ga.mutation_prob, 0.1);
  EXPECT_DOUBLE_EQ(c.qc.m_min, 0.2);
  EXPECT_DOUBLE_EQ(c.qc.varl_min, 100.0);
}

TEST(Config, CanonicalJsonRoundTrips) {
  PipelineConfig c = ParseConfig(R"({"seed": 3, "ga": {"k_min": 7}, "filter": {"policy": "absolute", "tau": 0.02}})");
  const PipelineConfig back = ParseConfig(ConfigToJson(c));
  EXPECT_EQ(ConfigToJson(back), ConfigToJson(c));
  EXPECT_EQ(ConfigHash(back), ConfigHash(c));
  EXPECT_EQ(back.k_min, 7);
  EXPECT_EQ(back.filter.kind, head::FilterPolicy::Kind::kAbsolute);
  c.seed = 4;
  EXPECT_NE(ConfigHash(c), ConfigHash(back));
  EXPECT_EQ(HexHash(0xabcULL), "0000000000000abc");
}

TEST(Config, RejectsBadDocuments) {
  EXPECT_EQ(CodeOf([] { ParseConfig(R"({"qc": {}})"); }), ErrorCode::kConfig);
  EXPECT_EQ(CodeOf([] { ParseConfig(R"({"seed": 1, "qc": {"m_mni": 0.3}})"); }), ErrorCode::kConfig);
  EXPECT_EQ(CodeOf([] { ParseConfig(R"({"seed": 1, "colour": true})"); }), ErrorCode::kConfig);
  EXPECT_EQ(CodeOf([] { ParseConfig(R"({"seed": "one"})"); }), ErrorCode::kConfig);
  EXPECT_EQ(CodeOf([] { ParseConfig(R"({"seed": 1, "split": {"train": 0.7, "val": 0.2}})"); }),
            ErrorCode::kConfig);
  EXPECT_EQ(CodeOf([] { ParseConfig(R"({"seed": 1, "paths": {"slides_dir": "x", "work_dir": "x"}})"); }),
            ErrorCode::kConfig);
  try {
    ParseConfig("{\n  \"seed\": 1,\n  oops\n}");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

// ---- slides and split ---------------------------------------------------------

std::vector<SlideInfo> RandomCohort(uint64_t seed) {
  Rng rng(seed);
  std::vector<SlideInfo> slides;
  const int patients = 8 + static_cast<int>(rng.UniformInt(30));
  for (int p = 0; p < patients; ++p) {
    const int label = static_cast<int>(rng.UniformInt(4));
    const int n = 1 + static_cast<int>(rng.UniformInt(3));
    for (int s = 0; s < n; ++s) {
      slides.push_back({"p" + std::to_string(p) + "_s" + std::to_string(s), "p" + std::to_string(p), label, ""});
    }
  }
  return slides;
}

TEST(Split, PatientsNeverStraddle) {
  for (uint64_t seed = 0; seed < 30; ++seed) {
    const auto slides = RandomCohort(seed);
    const Split split = PatientSplit(slides, 0.2, seed);
    std::set<std::string> train(split.train_patients.begin(), split.train_patients.end());
    for (const auto& p : split.val_patients) EXPECT_FALSE(train.count(p)) << p;
    std::set<std::string> train_slides(split.train_slides.begin(), split.train_slides.end());
    std::set<std::string> val_slides(split.val_slides.begin(), split.val_slides.end());
    EXPECT_EQ(train_slides.size() + val_slides.size(), slides.size());
    for (const auto& s : slides) {
      const bool in_train = train_slides.count(s.slide_id) > 0;
      EXPECT_NE(in_train, val_slides.count(s.slide_id) > 0);
      EXPECT_EQ(in_train, train.count(s.patient_id) > 0) << s.slide_id;
    }
    EXPECT_EQ(PatientSplit(slides, 0.2, seed), split);
    EXPECT_EQ(SplitFromJson(SplitToJson(split)), split);
  }
}

TEST(Split, StratifiedByClass) {
  std::vector<SlideInfo> slides;
  for (int c = 0; c < 4; ++c) {
    for (int p = 0; p < 10; ++p) {
      const std::string id = std::to_string(c) + "_" + std::to_string(p);
      slides.push_back({"s" + id, "p" + id, c, ""});
    }
  }
  const Split split = PatientSplit(slides, 0.2, 9);
  ASSERT_EQ(split.val_slides.size(), 8u);
  for (int c = 0; c < 4; ++c) {
    int n = 0;
    for (const auto& s : split.val_slides) n += s[1] == '0' + c;
    EXPECT_EQ(n, 2) << "class " << c;
  }
}

TEST(Labels, RoundTripAndNames) {
  const fs::path dir = testing::FreshTempDir("labels");
  const std::vector<SlideInfo> slides = {{"a", "pa", 0, "a.png"}, {"b", "pb", 3, "tiles/b"}};
  WriteLabels(dir / "labels.csv", slides);
  EXPECT_EQ(ReadLabels(dir / "labels.csv", 4), slides);
  std::ofstream(dir / "named.csv") << "slide_id,patient_id,label\nz,pz,Basal\ny,py,Luminal B\n";
  const auto named = ReadLabels(dir / "named.csv", 4);
  ASSERT_EQ(named.size(), 2u);
  EXPECT_EQ(named[0].slide_id, "y");
  EXPECT_EQ(named[0].label, 1);
  EXPECT_EQ(named[1].label, 3);
  std::ofstream(dir / "dup.csv") << "slide_id,patient_id,label\nz,pz,0\nz,pz,1\n";
  EXPECT_EQ(CodeOf([&] { ReadLabels(dir / "dup.csv", 4); }), ErrorCode::kInput);
  fs::remove_all(dir);
}

// ---- synthetic corpus -----------------------------------------------------------

TEST(Synthetic, DeterministicAndLabelled) {
  const SyntheticSpec spec = TinySpec(11);
  const auto corpus = SyntheticCorpus(spec);
  ASSERT_EQ(corpus.size(), 8u);
  std::vector<int> per_class(4, 0);
  for (const auto& s : corpus) ++per_class[s.label];
  EXPECT_EQ(per_class, std::vector<int>(4, 2));
  const auto a = GenerateSyntheticSlide(spec, 3);
  const auto b = GenerateSyntheticSlide(spec, 3);
  EXPECT_EQ(a.raster.image, b.raster.image);
  EXPECT_EQ(a.info, corpus[3]);
  EXPECT_EQ(a.raster.image.width, 3 * 512);
  EXPECT_EQ(a.kinds.size(), 9u);
  SyntheticSpec other = spec;
  other.seed = 12;
  EXPECT_FALSE(GenerateSyntheticSlide(other, 3).raster.image == a.raster.image);
}

TEST(Synthetic, BackgroundPositionsFailQc) {
  const auto slide = GenerateSyntheticSlide(TinySpec(2), 0);
  const auto result = tiling::ScoreSlide(slide.raster, tiling::TileOptions{});
  for (size_t i = 0; i < slide.kinds.size(); ++i) {
    if (slide.kinds[i] == PatchKind::kBackground) {
      EXPECT_EQ(result.manifest[i].qc_status, tiling::QcStatus::kFailBackground);
    } else {
      EXPECT_EQ(result.manifest[i].qc_status, tiling::QcStatus::kPass) << "patch " << i;
    }
  }
}

TEST(Synthetic, BackgroundOnlySlideIsEmpty) {
  SyntheticSpec spec = TinySpec(3);
  spec.background_fraction = 1.0;
  spec.informative_fraction = 0.0;
  const auto slide = GenerateSyntheticSlide(spec, 0);
  EXPECT_EQ(CodeOf([&] { tiling::ScoreSlide(slide.raster, tiling::TileOptions{}); }),
            ErrorCode::kEmptySlide);
}

TEST(Synthetic, PureSignalIsLearnable) {
  SyntheticSpec spec = TinySpec(4);
  spec.slides_per_class = 3;
  spec.informative_fraction = 1.0;
  spec.background_fraction = 0.0;
  spec.noise_level = 0.0;
  PipelineConfig config;
  config.seed = 4;
  config.train.max_epochs = 60;
  config.train.learning_rate = 1e-3;
  const auto options = MakeTileOptions(config);
  const embed::ToyEmbedder embedder(DeriveSeed(config.seed, "toy_embed"), config.embed_dim);
  std::vector<SlideEmbeddings> slides(12);
  ParallelFor(slides.size(), [&](size_t i) {
    const auto s = GenerateSyntheticSlide(spec, static_cast<int>(i));
    slides[i] = TileAndEmbed(s.raster, s.info, options, embedder);
  });
  std::vector<SlideInfo> infos;
  std::vector<const SlideEmbeddings*> ptrs;
  for (const auto& s : slides) {
    infos.push_back(s.info);
    ptrs.push_back(&s);
  }
  const Split split = SplitSlides(infos, config);
  const auto result = TrainSplitHead(ptrs, split, config, "train_provisional");
  std::vector<const SlideEmbeddings*> train;
  for (const auto& s : slides) {
    if (std::count(split.train_slides.begin(), split.train_slides.end(), s.info.slide_id)) train.push_back(&s);
  }
  EXPECT_GE(head::Accuracy(result.params, BuildDataset(train)), 0.99);
}

// ---- in-memory orchestration ----------------------------------------------------------

TEST(Orchestration, ParallelForCoversEveryIndexAndRethrows) {
  std::vector<int> hits(100, 0);
  ParallelFor(hits.size(), [&](size_t i) { ++hits[i]; }, 4);
  EXPECT_EQ(hits, std::vector<int>(100, 1));
  EXPECT_THROW(ParallelFor(10, [](size_t i) {
                 if (i == 7) throw Error(ErrorCode::kInput, "boom");
               }, 3),
               Error);
}

TEST(Orchestration, MedianOfOddAndEven) {
  EXPECT_EQ(Median({3, 1, 2}), 2.0);
  EXPECT_EQ(Median({4, 1, 2, 3}), 2.5);
}

TEST(Orchestration, SelectionFallsBackWhenFilterEmptiesSlide) {
  SlideEmbeddings slide;
  slide.info = {"s", "p", 0, ""};
  slide.store.dim = 2;
  slide.store.patch_ids = {0, 1, 2, 3, 4};
  slide.store.vectors = {1, 0, 0, 1, 1, 1, -1, 0, 2, 3};
  std::vector<head::UncertaintyReport> reports;
  for (int i = 0; i < 5; ++i) reports.push_back({i, {0.5}, 0.5, 4});
  PipelineConfig config;
  config.seed = 1;
  config.filter = head::FilterPolicy::Absolute(0.01);
  config.ga.population = 8;
  config.ga.generations = 4;
  const auto sel = SelectForSlide(slide, reports, config);
  EXPECT_TRUE(sel.filter_fallback);
  EXPECT_EQ(sel.filtered.size(), 5u);
  EXPECT_FALSE(sel.record.selected_patch_ids.empty());
  // k_min (16 by default) drops to the five survivors.
  EXPECT_EQ(sel.record.selected_patch_ids.size(), 5u);
}

// ---- file-based stages and the CLI -------------------------------------------------

TEST(Stages, DependenciesSkipAndForce) {
  const fs::path root = testing::FreshTempDir("stages");
  PipelineConfig config = TinyConfig(root);
  WriteSynthetic(config, Quiet());
  EXPECT_EQ(CodeOf([&] { RunStage(Stage::kEmbed, config, Quiet()); }), ErrorCode::kDependency);
  EXPECT_TRUE(RunStage(Stage::kTile, config, Quiet()));
  EXPECT_TRUE(fs::exists(StageDir(config, Stage::kTile) / "stage.json"));
  EXPECT_FALSE(RunStage(Stage::kTile, config, Quiet()));
  StageOptions force = Quiet();
  force.force = true;
  EXPECT_TRUE(RunStage(Stage::kTile, config, force));
  EXPECT_TRUE(RunStage(Stage::kEmbed, config, Quiet()));

  // A tiling setting changes the hash of tiling and everything downstream.
  PipelineConfig changed = config;
  changed.qc.varl_min = 50.0;
  EXPECT_NE(StageHash(changed, Stage::kTile), StageHash(config, Stage::kTile));
  EXPECT_NE(StageHash(changed, Stage::kSelect), StageHash(config, Stage::kSelect));
  EXPECT_EQ(CodeOf([&] { RunStage(Stage::kTrain, changed, Quiet()); }), ErrorCode::kDependency);
  // A selection setting leaves upstream hashes alone.
  changed = config;
  changed.ga.generations = 9;
  EXPECT_EQ(StageHash(changed, Stage::kTrain), StageHash(config, Stage::kTrain));
  EXPECT_NE(StageHash(changed, Stage::kSelect), StageHash(config, Stage::kSelect));
  // Paths do not enter the hash.
  changed = config;
  changed.work_dir = (root / "elsewhere").string();
  EXPECT_EQ(StageHash(changed, Stage::kEvaluate), StageHash(config, Stage::kEvaluate));
  fs::remove_all(root);
}

TEST(Stages, RunAllWritesEveryArtifact) {
  const fs::path root = testing::FreshTempDir("run_all");
  const PipelineConfig config = TinyConfig(root);
  WriteSynthetic(config, Quiet());
  RunAll(config, Quiet());
  const auto corpus = SyntheticCorpus(config.synthetic);
  const std::string id = corpus[0].slide_id;
  for (const fs::path& p :
       {StageDir(config, Stage::kTile) / (id + ".manifest.csv"), StageDir(config, Stage::kEmbed) / (id + ".pemb"),
        StageDir(config, Stage::kEmbed) / (id + ".json"), StageDir(config, Stage::kTrain) / "head.phed",
        StageDir(config, Stage::kUncertainty) / (id + ".csv"), StageDir(config, Stage::kSelect) / (id + ".json"),
        StageDir(config, Stage::kTrainFinal) / "head.phed", StageDir(config, Stage::kPredict) / "predictions.csv",
        StageDir(config, Stage::kEvaluate) / "metrics.json", StageDir(config, Stage::kAblate) / "delta.json"}) {
    EXPECT_TRUE(fs::exists(p)) << p;
  }
  for (Stage s : AllStages()) EXPECT_FALSE(RunStage(s, config, Quiet())) << StageName(s);
  fs::remove_all(root);
}

TEST(Stages, OutputsIndependentOfThreadCount) {
  const fs::path root = testing::FreshTempDir("threads");
  PipelineConfig config = TinyConfig(root);
  WriteSynthetic(config, Quiet());
  std::vector<fs::path> work;
  for (unsigned threads : {1u, 3u}) {
    config.work_dir = (root / ("work_" + std::to_string(threads))).string();
    StageOptions options;
    options.threads = threads;
    RunAll(config, options);
    work.push_back(config.work_dir);
  }
  int compared = 0;
  for (const char* stage : {"select", "evaluate"}) {
    for (const auto& entry : fs::directory_iterator(work[0] / stage)) {
      if (entry.path().filename() == "stage.json") continue;
      ++compared;
      EXPECT_TRUE(testing::SameBytes(entry.path(), work[1] / stage / entry.path().filename()))
          << entry.path().filename();
    }
  }
  EXPECT_GT(compared, 0);
  fs::remove_all(root);
}

#ifdef PAM50_CLI_PATH
int RunCli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(PAM50_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, ExitCodes) {
  const fs::path root = testing::FreshTempDir("cli");
  const fs::path log = root / "log.txt";
  EXPECT_EQ(RunCli("tile", log), 1);  // --config is required
  EXPECT_EQ(RunCli("tile --config " + (root / "missing.json").string(), log), 1);
  std::ofstream(root / "bad.json") << R"({"seed": 1, "unknown": 2})";
  EXPECT_EQ(RunCli("tile --config " + (root / "bad.json").string(), log), 1);

  const std::string cfg = (root / "config.json").string();
  std::ofstream(cfg) << R"({"seed": 2, "paths": {"slides_dir": "slides", "work_dir": "work"},
    "synthetic": {"slides_per_class": 2, "grid_rows": 3, "grid_cols": 3,
                  "informative_fraction": 0.4, "background_fraction": 0.2}})";
  EXPECT_EQ(RunCli("embed-toy -q --config " + cfg, log), 3);
  EXPECT_EQ(RunCli("synth -q --config " + cfg, log), 0);
  // Relative paths resolve against the config file's directory.
  EXPECT_TRUE(fs::exists(root / "slides" / "labels.csv"));
  EXPECT_EQ(RunCli("tile -q --config " + cfg, log), 0);
  EXPECT_TRUE(fs::exists(root / "work" / "tile" / "stage.json"));
  EXPECT_EQ(RunCli("select -q --config " + cfg + " --tau 0.1 --keep-frac 0.5", log), 1);
  EXPECT_EQ(RunCli("init-config -o " + (root / "init.json").string(), log), 0);
  std::ifstream in(root / "init.json");
  std::stringstream text;
  text << in.rdbuf();
  EXPECT_NO_THROW(ParseConfig(text.str()));
  fs::remove_all(root);
}
#endif  // PAM50_CLI_PATH

}  // namespace
}  // namespace pam50::pipeline
