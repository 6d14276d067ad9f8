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

// pam50: command line driver for the slide-level subtyping pipeline.
//
//   pam50 <subcommand> --config <path> [--seed N] [--force]
//         [--tau X | --keep-frac Q] [--pop M] [--gens G] [--k-min K]
//
// Exit status: 0 success, 1 usage or configuration error, 2 data error,
// 3 missing or stale upstream stage.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "pam50/config.h"
#include "pam50/errors.h"
#include "pam50/stages.h"

namespace {

namespace fs = std::filesystem;
using pam50::Error;
using pam50::ErrorCode;
using pam50::pipeline::PipelineConfig;
using pam50::pipeline::Stage;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitDependency = 3;

struct Flags {
  std::string config_path;
  std::optional<uint64_t> seed;
  bool force = false;
  std::optional<double> tau;
  std::optional<double> keep_frac;
  std::optional<int> pop;
  std::optional<int> gens;
  std::optional<int> k_min;
  unsigned threads = 0;
  bool quiet = false;
};

void AddCommonFlags(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config_path, "Pipeline configuration (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "Override the configuration seed");
  cmd->add_flag("--force", f.force, "Rerun stages even when their outputs are current");
  auto* tau = cmd->add_option("--tau", f.tau, "Keep patches with uncertainty <= TAU");
  auto* keep = cmd->add_option("--keep-frac", f.keep_frac,
                               "Keep the least uncertain fraction of patches")
                   ->check(CLI::Range(0.0, 1.0));
  tau->excludes(keep);
  cmd->add_option("--pop", f.pop, "GA population size")->check(CLI::PositiveNumber);
  cmd->add_option("--gens", f.gens, "GA generations")->check(CLI::NonNegativeNumber);
  cmd->add_option("--k-min", f.k_min, "Minimum subset size")->check(CLI::PositiveNumber);
  cmd->add_option("--threads", f.threads, "Worker threads (0 = all cores)");
  cmd->add_flag("-q,--quiet", f.quiet, "Suppress progress messages");
}

/// Relative paths in a configuration file are taken relative to the file.
void ResolvePaths(PipelineConfig& c, const fs::path& config_path) {
  const fs::path base = fs::absolute(config_path).parent_path();
  auto resolve = [&](std::string& p) {
    if (!p.empty() && fs::path(p).is_relative()) p = (base / p).lexically_normal().string();
  };
  resolve(c.slides_dir);
  resolve(c.work_dir);
  resolve(c.labels);
  resolve(c.stain_reference);
}

PipelineConfig LoadWithOverrides(const Flags& f) {
  PipelineConfig c = pam50::pipeline::LoadConfig(f.config_path);
  ResolvePaths(c, f.config_path);
  if (f.seed) c.seed = *f.seed;
  if (f.tau) c.filter = pam50::head::FilterPolicy::Absolute(*f.tau);
  if (f.keep_frac) c.filter = pam50::head::FilterPolicy::KeepFraction(*f.keep_frac);
  if (f.pop) c.ga.population = *f.pop;
  if (f.gens) c.ga.generations = *f.gens;
  if (f.k_min) c.k_min = *f.k_min;
  c.Validate();
  return c;
}

pam50::pipeline::StageOptions MakeOptions(const Flags& f) {
  pam50::pipeline::StageOptions o;
  o.force = f.force;
  o.threads = f.threads;
  if (!f.quiet) o.log = [](const std::string& m) { std::cerr << "pam50: " << m << '\n'; };
  return o;
}

int ExitCodeFor(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfig:
    case ErrorCode::kParameter: return kExitUsage;
    case ErrorCode::kDependency: return kExitDependency;
    default: return kExitData;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Slide-level PAM50 subtyping with uncertainty-aware patch selection", "pam50"};
  app.require_subcommand(1);
  Flags flags;

  struct StageCommand {
    const char* name;
    const char* help;
    Stage stage;
  };
  const StageCommand stage_commands[] = {
      {"tile", "Grid, QC-score and stain-fit every slide", Stage::kTile},
      {"embed-toy", "Prepare passing patches and embed them with the toy embedder",
       Stage::kEmbed},
      {"uncertainty", "Score MC-dropout uncertainty of every patch", Stage::kUncertainty},
      {"select", "Filter by uncertainty and pick a patch subset per slide", Stage::kSelect},
      {"predict", "Predict validation slides (selected and all patches)", Stage::kPredict},
      {"evaluate", "Compute metrics for the predictions", Stage::kEvaluate},
  };
  std::optional<Stage> chosen;
  for (const auto& sc : stage_commands) {
    auto* cmd = app.add_subcommand(sc.name, sc.help);
    AddCommonFlags(cmd, flags);
    cmd->callback([&chosen, stage = sc.stage] { chosen = stage; });
  }

  bool final_head = false;
  auto* train = app.add_subcommand("train", "Train the provisional head (or the final one)");
  AddCommonFlags(train, flags);
  train->add_flag("--final", final_head, "Train the final head on the selected patches");
  train->callback([&] { chosen = final_head ? Stage::kTrainFinal : Stage::kTrain; });

  bool synthetic_ablation = false;
  auto* ablate = app.add_subcommand(
      "ablate", "Compare selected-patch and all-patch metrics (or run the synthetic study)");
  AddCommonFlags(ablate, flags);
  ablate->add_flag("--synthetic", synthetic_ablation,
                   "Run the multi-seed ablation on generated slides instead");

  auto* run_all = app.add_subcommand("run-all", "Run every stage in order");
  AddCommonFlags(run_all, flags);

  auto* synth = app.add_subcommand("synth", "Write a synthetic slide corpus to slides_dir");
  AddCommonFlags(synth, flags);

  std::string init_out;
  auto* init = app.add_subcommand("init-config", "Print a configuration with every default");
  init->add_option("-o,--out", init_out, "Write to this file instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (init->parsed()) {
      const std::string text = pam50::pipeline::ConfigToJson(PipelineConfig{});
      if (init_out.empty()) {
        std::cout << text;
      } else {
        std::ofstream out(init_out, std::ios::binary);
        if (!out) throw Error(ErrorCode::kIo, "cannot write " + init_out);
        out << text;
      }
      return kExitOk;
    }
    const PipelineConfig config = LoadWithOverrides(flags);
    const auto options = MakeOptions(flags);
    if (run_all->parsed()) {
      pam50::pipeline::RunAll(config, options);
    } else if (synth->parsed()) {
      pam50::pipeline::WriteSynthetic(config, options);
    } else if (ablate->parsed()) {
      if (synthetic_ablation) {
        std::cout << pam50::pipeline::RunSyntheticAblationStage(config, options);
      } else {
        pam50::pipeline::RunStage(Stage::kAblate, config, options);
      }
    } else if (chosen) {
      pam50::pipeline::RunStage(*chosen, config, options);
    }
    return kExitOk;
  } catch (const Error& e) {
    std::cerr << "pam50: error: " << e.what() << '\n';
    return ExitCodeFor(e.code());
  } catch (const std::exception& e) {
    std::cerr << "pam50: error: " << e.what() << '\n';
    return kExitData;
  }
}
