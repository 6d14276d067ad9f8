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

/// @file uncertainty.h
/// @brief Monte Carlo dropout uncertainty and the uncertainty filter.
///
/// For a patch embedding the head is run T times in mc mode (running batch
/// norm statistics, freshly sampled dropout masks). The per-class sample
/// variance of the T softmax outputs, with the unbiased 1/(T-1) estimator,
/// gives `class_variances`; their mean is the scalar uncertainty u.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pam50/head.h"

namespace pam50::head {

inline constexpr int kDefaultMcPasses = 20;

struct UncertaintyReport {
  int64_t patch_id = 0;
  std::vector<double> class_variances;
  double u = 0.0;
  int passes = 0;

  bool operator==(const UncertaintyReport&) const = default;
};

/// Unbiased per-class variance of `passes` probability vectors (row-major,
/// passes x classes). Deviations are taken from the first pass before
/// squaring, so identical passes give exactly 0.
std::vector<double> ClassVariances(std::span<const double> probs, int passes,
                                   int classes);

/// Builds a report from per-pass probabilities (passes x classes).
UncertaintyReport ReportFromPasses(int64_t patch_id, std::span<const double> probs,
                                   int passes, int classes);

/// T mc-mode passes over one embedding. The masks come from a stream
/// derived from (seed, patch_id), so a patch's report does not depend on
/// which other patches are scored with it. Throws `Error(kParameter)` when
/// passes < 2.
template <typename S>
UncertaintyReport McUncertainty(const HeadParams<S>& params,
                                std::span<const S> embedding, int64_t patch_id,
                                int passes, uint64_t seed);

/// Scores every row of `x`; equal to calling `McUncertainty` per row but
/// shares the deterministic first layer across passes.
template <typename S>
std::vector<UncertaintyReport> McUncertaintyBatch(const HeadParams<S>& params,
                                                  const Matrix<S>& x,
                                                  std::span<const int64_t> patch_ids,
                                                  int passes, uint64_t seed);

struct FilterPolicy {
  enum class Kind { kAbsolute, kKeepFraction };
  Kind kind = Kind::kKeepFraction;
  /// Absolute policy: keep u <= tau.
  double tau = 0.0;
  /// Keep-fraction policy: keep the ceil(q * N) lowest-u patches.
  double keep_fraction = 0.8;

  static FilterPolicy Absolute(double tau) { return {Kind::kAbsolute, tau, 0.0}; }
  static FilterPolicy KeepFraction(double q) { return {Kind::kKeepFraction, 0.0, q}; }
};

/// Kept patch ids in increasing order. Ties in the keep-fraction ranking go
/// to the lower patch id. Throws `Error(kEmptyAfterFilter)` when nothing is
/// kept and `Error(kInput)` on an empty report list.
std::vector<int64_t> FilterByUncertainty(std::span<const UncertaintyReport> reports,
                                         const FilterPolicy& policy);

}  // namespace pam50::head
