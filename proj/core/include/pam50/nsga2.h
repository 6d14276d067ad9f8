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

/// @file nsga2.h
/// @brief Per-slide patch subset selection with NSGA-II.
///
/// A genome is a bit vector over the N' patches that survived the
/// uncertainty filter. Four objectives are maximized:
///
///  - diversity:       mean pairwise cosine distance of the selected
///                     embeddings (0 for fewer than two patches; a zero
///                     vector has cosine similarity 0 with anything);
///  - informativeness: mean L2 norm of the selected embeddings;
///  - compactness:     minus the number of selected patches;
///  - reliability:     minus the mean uncertainty of the selected patches.
///
/// The optimizer is the (mu + lambda) elitist NSGA-II loop: fast
/// non-dominated sorting, crowding distance, binary tournaments on
/// (rank, crowding), uniform crossover, bit-flip mutation and a repair step
/// that keeps at least k_min patches selected.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pam50/rng.h"

namespace pam50::select {

inline constexpr int kNumObjectives = 4;
inline constexpr int kDefaultKMin = 16;

using Bits = std::vector<uint8_t>;
using Objectives = std::vector<double>;

class SelectionProblem {
 public:
  /// `embeddings` is row-major n x dim; `uncertainties` has n entries.
  /// Throws `Error(kProblem)` when n = 0, the arrays disagree, k_min < 1
  /// or an input is not finite.
  SelectionProblem(std::vector<double> embeddings, int dim,
                   std::vector<double> uncertainties, int k_min = kDefaultKMin);

  int size() const { return n_; }
  int dim() const { return dim_; }
  int k_min() const { return k_min_; }
  double norm(int i) const { return norms_[i]; }
  double uncertainty(int i) const { return uncertainties_[i]; }
  /// 1 - cos(z_i, z_j), with cos taken as 0 when either norm is 0.
  double cosine_distance(int i, int j) const {
    return distance_[static_cast<size_t>(i) * n_ + j];
  }

 private:
  int n_ = 0;
  int dim_ = 0;
  int k_min_ = kDefaultKMin;
  std::vector<double> uncertainties_;
  std::vector<double> norms_;
  std::vector<double> distance_;  // n x n
};

struct Genome {
  Bits bits;
  Objectives objectives;
  int rank = 0;
  double crowding = 0.0;

  int popcount() const;
  bool operator==(const Genome&) const = default;
};

/// The four objectives of a subset. An empty subset evaluates to all zeros;
/// the caller must treat it as invalid (the optimizer never produces one).
Objectives EvalObjectives(const Bits& bits, const SelectionProblem& problem);

/// a >= b in every component and a > b in at least one (maximization).
bool Dominates(std::span<const double> a, std::span<const double> b);

/// Fast non-dominated sort. Returns fronts of indices into `points`, each in
/// increasing index order; front 0 is the non-dominated set.
std::vector<std::vector<int>> NondominatedSort(std::span<const Objectives> points);

/// Crowding distance of each member of `front` (indices into `points`),
/// aligned with `front`. Boundary members get +inf; fronts of size <= 2 are
/// all +inf; objectives that are constant over the front add nothing.
std::vector<double> CrowdingDistance(std::span<const Objectives> points,
                                     std::span<const int> front);

struct GAConfig {
  int population = 50;
  int generations = 50;
  int tournament_size = 2;
  double crossover_prob = 0.9;
  double mutation_prob = 0.1;
  double init_density = 0.05;
  /// false: mutate an individual with probability mutation_prob, flipping
  /// each gene with probability 1/N'. true: flip each gene with probability
  /// mutation_prob.
  bool per_gene_mutation = false;
  uint64_t seed = 0;

  /// Throws `Error(kParameter)` on out-of-range values.
  void Validate() const;
};

/// Tournament on (lower rank, larger crowding), remaining ties by rng.
/// Returns the index of the winner.
int Tournament(std::span<const Genome> population, int tournament_size, Rng& rng);

/// Swaps each gene between the two children with probability 0.5.
void UniformCrossover(Bits& a, Bits& b, Rng& rng);

/// Flips each gene independently with probability `rate`.
void FlipGenes(Bits& bits, double rate, Rng& rng);

/// Mutation as configured by `config` (see GAConfig::per_gene_mutation).
void Mutate(Bits& bits, const GAConfig& config, Rng& rng);

/// Activates uniformly random unselected genes until popcount >= k_min
/// (or every gene is set).
void Repair(Bits& bits, int k_min, Rng& rng);

/// One generation of offspring: population/2 tournament pairs, crossover
/// with probability crossover_prob, mutation, repair and evaluation.
/// `parents` must carry rank and crowding.
std::vector<Genome> MakeOffspring(std::span<const Genome> parents,
                                  const SelectionProblem& problem,
                                  const GAConfig& config, Rng& rng);

/// Sorts `pool` and keeps `size` individuals front by front, truncating the
/// last front by descending crowding. Survivors carry rank and crowding.
std::vector<Genome> EnvironmentalSelection(std::vector<Genome> pool, int size);

struct EvolveResult {
  std::vector<Genome> population;
  /// Distinct genomes of the final first front, in population order.
  std::vector<Genome> front;
  /// Best value of each objective in the population after each generation
  /// (entry 0 is the initial population).
  std::vector<Objectives> best_per_generation;
};

/// Runs the optimizer. Throws `Error(kProblem)` when N' < k_min.
EvolveResult Evolve(const SelectionProblem& problem, const GAConfig& config);

/// Knee pick: min-max normalize each objective over the front (constant
/// objectives count 0.5), maximize the sum; ties go to the smaller popcount,
/// then to the lexicographically smaller bit vector.
/// Throws `Error(kInput)` on an empty front.
const Genome& PickSubset(std::span<const Genome> front);

struct SelectionRecord {
  std::string slide_id;
  uint64_t seed = 0;
  int n_filtered = 0;
  std::vector<int64_t> selected_patch_ids;
  Objectives objectives;  // diversity, informativeness, compactness, reliability
  int front_size = 0;
  int generations = 0;
  int population = 0;

  bool operator==(const SelectionRecord&) const = default;
};

std::string SelectionToJson(const SelectionRecord& record);
SelectionRecord SelectionFromJson(const std::string& text);

}  // namespace pam50::select
