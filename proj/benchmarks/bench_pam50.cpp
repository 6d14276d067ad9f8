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

// Micro benchmarks of the per-slide hot paths.

#include <benchmark/benchmark.h>

#include "pam50/head.h"
#include "pam50/nsga2.h"
#include "pam50/rng.h"
#include "pam50/stain.h"
#include "pam50/tiling.h"
#include "pam50/uncertainty.h"

namespace {

using namespace pam50;

RgbImage TissuePatch(uint64_t seed) {
  Rng rng(seed);
  RgbImage img(tiling::kPatchSize, tiling::kPatchSize);
  for (auto& v : img.pixels) v = static_cast<uint8_t>(40 + rng.UniformInt(150));
  return img;
}

void BM_TileQc(benchmark::State& state) {
  const RgbImage patch = TissuePatch(1);
  for (auto _ : state) {
    const GrayImage gray = tiling::ToGrayscale(patch);
    benchmark::DoNotOptimize(tiling::QcFilter(tiling::TissueFraction(gray),
                                              tiling::LaplacianVariance(gray)));
  }
}
BENCHMARK(BM_TileQc)->Unit(benchmark::kMicrosecond);

void BM_PreparePatch(benchmark::State& state) {
  const RgbImage patch = TissuePatch(2);
  for (auto _ : state) benchmark::DoNotOptimize(tiling::PreparePatch(patch));
}
BENCHMARK(BM_PreparePatch)->Unit(benchmark::kMicrosecond);

void BM_StainApply(benchmark::State& state) {
  const RgbImage patch = TissuePatch(3);
  const stain::StainProfile source = stain::MacenkoFit(patch);
  const stain::StainNormalizer normalizer(source, stain::ReferenceProfile());
  RgbImage work = patch;
  for (auto _ : state) {
    work.pixels = patch.pixels;
    normalizer.Apply(work.pixels);
    benchmark::DoNotOptimize(work.pixels.data());
  }
}
BENCHMARK(BM_StainApply)->Unit(benchmark::kMicrosecond);

void BM_HeadForward(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  const auto params = head::HeadParams<float>::Init(512, 256, 4, 0.5, 1);
  head::Matrix<float> x(batch, 512);
  Rng rng(2);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = static_cast<float>(rng.Normal());
  for (auto _ : state) benchmark::DoNotOptimize(head::Forward(params, x, head::Mode::kEval));
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_HeadForward)->Arg(64)->Arg(512)->Unit(benchmark::kMicrosecond);

void BM_McUncertainty(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto params = head::HeadParams<float>::Init(512, 256, 4, 0.5, 1);
  head::Matrix<float> x(n, 512);
  Rng rng(3);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = static_cast<float>(rng.Normal());
  std::vector<int64_t> ids(n);
  for (int i = 0; i < n; ++i) ids[i] = i;
  for (auto _ : state) {
    benchmark::DoNotOptimize(head::McUncertaintyBatch(params, x, ids, head::kDefaultMcPasses, 7));
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_McUncertainty)->Arg(150)->Unit(benchmark::kMillisecond);

std::vector<select::Objectives> RandomPoints(int n, uint64_t seed) {
  Rng rng(seed);
  std::vector<select::Objectives> points(n, select::Objectives(select::kNumObjectives));
  for (auto& p : points) {
    for (double& v : p) v = rng.Uniform();
  }
  return points;
}

void BM_NondominatedSort(benchmark::State& state) {
  const auto points = RandomPoints(static_cast<int>(state.range(0)), 4);
  for (auto _ : state) benchmark::DoNotOptimize(select::NondominatedSort(points));
}
BENCHMARK(BM_NondominatedSort)->Arg(100)->Arg(400)->Unit(benchmark::kMicrosecond);

void BM_Evolve(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(5);
  std::vector<double> embeddings(static_cast<size_t>(n) * 512);
  for (double& v : embeddings) v = rng.Normal();
  std::vector<double> u(n);
  for (double& v : u) v = rng.Uniform(0.0, 0.05);
  const select::SelectionProblem problem(embeddings, 512, u, 16);
  select::GAConfig config;
  config.seed = 9;
  for (auto _ : state) benchmark::DoNotOptimize(select::Evolve(problem, config));
}
BENCHMARK(BM_Evolve)->Arg(120)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
