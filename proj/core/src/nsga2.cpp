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

#include "pam50/nsga2.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>
#include <set>

#include "pam50/errors.h"

namespace pam50::select {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool BetterInTournament(const Genome& a, const Genome& b) {
  if (a.rank != b.rank) return a.rank < b.rank;
  return a.crowding > b.crowding;
}

}  // namespace

SelectionProblem::SelectionProblem(std::vector<double> embeddings, int dim,
                                   std::vector<double> uncertainties, int k_min)
    : n_(static_cast<int>(uncertainties.size())),
      dim_(dim),
      k_min_(k_min),
      uncertainties_(std::move(uncertainties)) {
  if (n_ == 0) throw Error(ErrorCode::kProblem, "selection problem has no patches");
  if (dim_ <= 0 || embeddings.size() != static_cast<size_t>(n_) * dim_) {
    throw Error(ErrorCode::kProblem, "embedding table does not match n x dim");
  }
  if (k_min_ < 1) throw Error(ErrorCode::kProblem, "k_min must be at least 1");
  for (double v : embeddings) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kProblem, "non-finite embedding");
  }
  for (double u : uncertainties_) {
    if (!std::isfinite(u) || u < 0) {
      throw Error(ErrorCode::kProblem, "uncertainties must be finite and nonnegative");
    }
  }
  norms_.resize(n_);
  for (int i = 0; i < n_; ++i) {
    double s = 0;
    for (int k = 0; k < dim_; ++k) {
      const double v = embeddings[static_cast<size_t>(i) * dim_ + k];
      s += v * v;
    }
    norms_[i] = std::sqrt(s);
  }
  distance_.assign(static_cast<size_t>(n_) * n_, 0.0);
  for (int i = 0; i < n_; ++i) {
    const double* zi = embeddings.data() + static_cast<size_t>(i) * dim_;
    for (int j = i + 1; j < n_; ++j) {
      const double* zj = embeddings.data() + static_cast<size_t>(j) * dim_;
      double cos = 0.0;
      if (norms_[i] > 0 && norms_[j] > 0) {
        double dot = 0;
        for (int k = 0; k < dim_; ++k) dot += zi[k] * zj[k];
        cos = std::clamp(dot / (norms_[i] * norms_[j]), -1.0, 1.0);
      }
      distance_[static_cast<size_t>(i) * n_ + j] = 1.0 - cos;
      distance_[static_cast<size_t>(j) * n_ + i] = 1.0 - cos;
    }
  }
}

int Genome::popcount() const {
  return static_cast<int>(std::count(bits.begin(), bits.end(), uint8_t{1}));
}

Objectives EvalObjectives(const Bits& bits, const SelectionProblem& problem) {
  if (static_cast<int>(bits.size()) != problem.size()) {
    throw Error(ErrorCode::kShape, "genome length does not match the problem");
  }
  std::vector<int> sel;
  for (int i = 0; i < problem.size(); ++i) {
    if (bits[i]) sel.push_back(i);
  }
  Objectives phi(kNumObjectives, 0.0);
  const auto k = static_cast<double>(sel.size());
  if (sel.empty()) return phi;
  if (sel.size() >= 2) {
    double sum = 0;
    for (size_t a = 0; a < sel.size(); ++a) {
      for (size_t b = a + 1; b < sel.size(); ++b) {
        sum += problem.cosine_distance(sel[a], sel[b]);
      }
    }
    phi[0] = 2.0 * sum / (k * (k - 1.0));
  }
  // Means are accumulated as offsets from the first selected patch so that
  // equal values average to exactly that value for every subset size;
  // otherwise rounding noise in k * x / k shows up as spurious trade-offs.
  const double norm0 = problem.norm(sel[0]);
  const double u0 = problem.uncertainty(sel[0]);
  double norm_dev = 0, u_dev = 0;
  for (int i : sel) {
    norm_dev += problem.norm(i) - norm0;
    u_dev += problem.uncertainty(i) - u0;
  }
  phi[1] = norm0 + norm_dev / k;
  phi[2] = -k;
  phi[3] = -(u0 + u_dev / k);
  return phi;
}

bool Dominates(std::span<const double> a, std::span<const double> b) {
  bool strictly = false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i] < b[i]) return false;
    if (a[i] > b[i]) strictly = true;
  }
  return strictly;
}

std::vector<std::vector<int>> NondominatedSort(std::span<const Objectives> points) {
  const int n = static_cast<int>(points.size());
  std::vector<std::vector<int>> dominated(n);
  std::vector<int> counts(n, 0);
  std::vector<std::vector<int>> fronts;
  std::vector<int> current;
  for (int p = 0; p < n; ++p) {
    for (int q = p + 1; q < n; ++q) {
      if (Dominates(points[p], points[q])) {
        dominated[p].push_back(q);
        ++counts[q];
      } else if (Dominates(points[q], points[p])) {
        dominated[q].push_back(p);
        ++counts[p];
      }
    }
  }
  for (int p = 0; p < n; ++p) {
    if (counts[p] == 0) current.push_back(p);
  }
  while (!current.empty()) {
    std::vector<int> next;
    for (int p : current) {
      for (int q : dominated[p]) {
        if (--counts[q] == 0) next.push_back(q);
      }
    }
    fronts.push_back(std::move(current));
    std::sort(next.begin(), next.end());
    current = std::move(next);
  }
  return fronts;
}

std::vector<double> CrowdingDistance(std::span<const Objectives> points,
                                     std::span<const int> front) {
  const size_t n = front.size();
  std::vector<double> dist(n, 0.0);
  if (n <= 2) {
    std::fill(dist.begin(), dist.end(), kInf);
    return dist;
  }
  const size_t m = points[front[0]].size();
  std::vector<size_t> order(n);
  for (size_t k = 0; k < m; ++k) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      return points[front[a]][k] < points[front[b]][k];
    });
    const double lo = points[front[order.front()]][k];
    const double hi = points[front[order.back()]][k];
    dist[order.front()] = kInf;
    dist[order.back()] = kInf;
    if (!(hi > lo)) continue;
    for (size_t r = 1; r + 1 < n; ++r) {
      dist[order[r]] += (points[front[order[r + 1]]][k] -
                         points[front[order[r - 1]]][k]) / (hi - lo);
    }
  }
  return dist;
}

void GAConfig::Validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (population < 2) throw Error(ErrorCode::kParameter, "population must be >= 2");
  if (generations < 0) throw Error(ErrorCode::kParameter, "generations must be >= 0");
  if (tournament_size < 1) {
    throw Error(ErrorCode::kParameter, "tournament size must be >= 1");
  }
  if (!prob(crossover_prob) || !prob(mutation_prob) || !prob(init_density)) {
    throw Error(ErrorCode::kParameter, "GA probabilities must be in [0, 1]");
  }
}

int Tournament(std::span<const Genome> population, int tournament_size, Rng& rng) {
  const auto n = static_cast<uint64_t>(population.size());
  std::vector<int> best;
  for (int t = 0; t < tournament_size; ++t) {
    const int c = static_cast<int>(rng.UniformInt(n));
    if (best.empty() || BetterInTournament(population[c], population[best[0]])) {
      best.assign(1, c);
    } else if (!BetterInTournament(population[best[0]], population[c])) {
      best.push_back(c);
    }
  }
  if (best.size() == 1) return best[0];
  return best[rng.UniformInt(best.size())];
}

void UniformCrossover(Bits& a, Bits& b, Rng& rng) {
  for (size_t i = 0; i < a.size(); ++i) {
    if (rng.Bernoulli(0.5)) std::swap(a[i], b[i]);
  }
}

void FlipGenes(Bits& bits, double rate, Rng& rng) {
  for (auto& g : bits) {
    if (rng.Bernoulli(rate)) g ^= 1;
  }
}

void Mutate(Bits& bits, const GAConfig& config, Rng& rng) {
  if (bits.empty()) return;
  if (config.per_gene_mutation) {
    FlipGenes(bits, config.mutation_prob, rng);
  } else if (rng.Bernoulli(config.mutation_prob)) {
    FlipGenes(bits, 1.0 / static_cast<double>(bits.size()), rng);
  }
}

void Repair(Bits& bits, int k_min, Rng& rng) {
  std::vector<size_t> zeros;
  int count = 0;
  for (size_t i = 0; i < bits.size(); ++i) {
    if (bits[i]) {
      ++count;
    } else {
      zeros.push_back(i);
    }
  }
  // Partial Fisher-Yates over the unselected genes.
  for (size_t j = 0; count < k_min && j < zeros.size(); ++j, ++count) {
    const size_t pick = j + rng.UniformInt(zeros.size() - j);
    std::swap(zeros[j], zeros[pick]);
    bits[zeros[j]] = 1;
  }
}

std::vector<Genome> MakeOffspring(std::span<const Genome> parents,
                                  const SelectionProblem& problem,
                                  const GAConfig& config, Rng& rng) {
  const size_t target = parents.size();
  std::vector<Genome> children;
  children.reserve(target + 1);
  while (children.size() < target) {
    const int a = Tournament(parents, config.tournament_size, rng);
    const int b = Tournament(parents, config.tournament_size, rng);
    Genome c1{parents[a].bits, {}, 0, 0.0};
    Genome c2{parents[b].bits, {}, 0, 0.0};
    if (rng.Bernoulli(config.crossover_prob)) UniformCrossover(c1.bits, c2.bits, rng);
    for (Genome* c : {&c1, &c2}) {
      Mutate(c->bits, config, rng);
      Repair(c->bits, problem.k_min(), rng);
      c->objectives = EvalObjectives(c->bits, problem);
    }
    children.push_back(std::move(c1));
    children.push_back(std::move(c2));
  }
  children.resize(target);
  return children;
}

std::vector<Genome> EnvironmentalSelection(std::vector<Genome> pool, int size) {
  std::vector<Objectives> points;
  points.reserve(pool.size());
  for (const auto& g : pool) points.push_back(g.objectives);
  const auto fronts = NondominatedSort(points);
  std::vector<Genome> next;
  next.reserve(size);
  for (size_t r = 0; r < fronts.size() && static_cast<int>(next.size()) < size; ++r) {
    const auto& front = fronts[r];
    const auto crowd = CrowdingDistance(points, front);
    for (size_t k = 0; k < front.size(); ++k) {
      pool[front[k]].rank = static_cast<int>(r);
      pool[front[k]].crowding = crowd[k];
    }
    const size_t room = size - next.size();
    std::vector<size_t> order(front.size());
    std::iota(order.begin(), order.end(), 0);
    if (front.size() > room) {
      std::stable_sort(order.begin(), order.end(),
                       [&](size_t a, size_t b) { return crowd[a] > crowd[b]; });
      order.resize(room);
      std::sort(order.begin(), order.end());
    }
    for (size_t k : order) next.push_back(std::move(pool[front[k]]));
  }
  return next;
}

namespace {

/// Keeps the first copy of every distinct genome and drops later copies,
/// unless that would leave fewer than `size` genomes, in which case just
/// enough duplicates (in pool order) are kept. Duplicates otherwise crowd the
/// population and stall the search on small problems.
std::vector<Genome> DropDuplicates(std::vector<Genome> pool, int size) {
  std::set<Bits> seen;
  std::vector<Genome> unique;
  std::vector<Genome> copies;
  for (auto& g : pool) {
    (seen.insert(g.bits).second ? unique : copies).push_back(std::move(g));
  }
  for (auto& g : copies) {
    if (static_cast<int>(unique.size()) >= size) break;
    unique.push_back(std::move(g));
  }
  return unique;
}

Objectives BestPerObjective(std::span<const Genome> population) {
  Objectives best(kNumObjectives, -kInf);
  for (const auto& g : population) {
    for (int k = 0; k < kNumObjectives; ++k) best[k] = std::max(best[k], g.objectives[k]);
  }
  return best;
}

}  // namespace

EvolveResult Evolve(const SelectionProblem& problem, const GAConfig& config) {
  config.Validate();
  if (problem.size() < problem.k_min()) {
    throw Error(ErrorCode::kProblem,
                "only " + std::to_string(problem.size()) + " patches for k_min = " +
                    std::to_string(problem.k_min()) + "; lower k_min");
  }
  Rng rng(DeriveSeed(config.seed, "nsga2"));
  std::vector<Genome> population(config.population);
  for (auto& g : population) {
    g.bits.assign(problem.size(), 0);
    for (auto& b : g.bits) b = rng.Bernoulli(config.init_density) ? 1 : 0;
    Repair(g.bits, problem.k_min(), rng);
    g.objectives = EvalObjectives(g.bits, problem);
  }
  population = EnvironmentalSelection(DropDuplicates(std::move(population), config.population),
                                      config.population);

  EvolveResult result;
  result.best_per_generation.push_back(BestPerObjective(population));
  for (int gen = 0; gen < config.generations; ++gen) {
    std::vector<Genome> pool = MakeOffspring(population, problem, config, rng);
    pool.insert(pool.begin(), std::make_move_iterator(population.begin()),
                std::make_move_iterator(population.end()));
    population =
        EnvironmentalSelection(DropDuplicates(std::move(pool), config.population),
                               config.population);
    result.best_per_generation.push_back(BestPerObjective(population));
  }
  for (const auto& g : population) {
    if (g.rank != 0) continue;
    const bool seen = std::any_of(result.front.begin(), result.front.end(),
                                  [&](const Genome& f) { return f.bits == g.bits; });
    if (!seen) result.front.push_back(g);
  }
  result.population = std::move(population);
  return result;
}

const Genome& PickSubset(std::span<const Genome> front) {
  if (front.empty()) throw Error(ErrorCode::kInput, "empty Pareto front");
  const size_t m = front[0].objectives.size();
  std::vector<double> lo(m, kInf), hi(m, -kInf);
  for (const auto& g : front) {
    for (size_t k = 0; k < m; ++k) {
      lo[k] = std::min(lo[k], g.objectives[k]);
      hi[k] = std::max(hi[k], g.objectives[k]);
    }
  }
  auto score = [&](const Genome& g) {
    double s = 0;
    for (size_t k = 0; k < m; ++k) {
      s += hi[k] > lo[k] ? (g.objectives[k] - lo[k]) / (hi[k] - lo[k]) : 0.5;
    }
    return s;
  };
  size_t best = 0;
  double best_score = score(front[0]);
  for (size_t i = 1; i < front.size(); ++i) {
    const double s = score(front[i]);
    const Genome& g = front[i];
    const Genome& b = front[best];
    bool better = s > best_score;
    if (s == best_score) {
      if (g.popcount() != b.popcount()) {
        better = g.popcount() < b.popcount();
      } else {
        better = g.bits < b.bits;
      }
    }
    if (better) {
      best = i;
      best_score = s;
    }
  }
  return front[best];
}

std::string SelectionToJson(const SelectionRecord& r) {
  nlohmann::ordered_json j;
  j["slide_id"] = r.slide_id;
  j["seed"] = r.seed;
  j["n_filtered"] = r.n_filtered;
  j["selected_patch_ids"] = r.selected_patch_ids;
  nlohmann::ordered_json o;
  static const char* kNames[kNumObjectives] = {"diversity", "informativeness",
                                                "compactness", "reliability"};
  for (int k = 0; k < kNumObjectives; ++k) {
    o[kNames[k]] = k < static_cast<int>(r.objectives.size()) ? r.objectives[k] : 0.0;
  }
  j["objectives"] = o;
  j["front_size"] = r.front_size;
  j["generations"] = r.generations;
  j["population"] = r.population;
  return j.dump(2) + "\n";
}

SelectionRecord SelectionFromJson(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    SelectionRecord r;
    r.slide_id = j.at("slide_id").get<std::string>();
    r.seed = j.at("seed").get<uint64_t>();
    r.n_filtered = j.at("n_filtered").get<int>();
    r.selected_patch_ids = j.at("selected_patch_ids").get<std::vector<int64_t>>();
    const auto& o = j.at("objectives");
    r.objectives = {o.at("diversity").get<double>(), o.at("informativeness").get<double>(),
                    o.at("compactness").get<double>(), o.at("reliability").get<double>()};
    r.front_size = j.at("front_size").get<int>();
    r.generations = j.at("generations").get<int>();
    r.population = j.at("population").get<int>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInput, std::string("selection JSON: ") + e.what());
  }
}

}  // namespace pam50::select
