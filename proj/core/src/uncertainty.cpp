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

#include "pam50/uncertainty.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pam50/errors.h"
#include "pam50/rng.h"

namespace pam50::head {

std::vector<double> ClassVariances(std::span<const double> probs, int passes,
                                   int classes) {
  if (passes < 2) {
    throw Error(ErrorCode::kParameter, "variance needs at least 2 passes");
  }
  if (probs.size() != static_cast<size_t>(passes) * classes) {
    throw Error(ErrorCode::kShape, "probability table has the wrong size");
  }
  std::vector<double> var(classes, 0.0);
  for (int c = 0; c < classes; ++c) {
    const double shift = probs[c];
    double sum = 0.0, sum_sq = 0.0;
    for (int t = 0; t < passes; ++t) {
      const double d = probs[static_cast<size_t>(t) * classes + c] - shift;
      sum += d;
      sum_sq += d * d;
    }
    var[c] = std::max(0.0, (sum_sq - sum * sum / passes) / (passes - 1));
  }
  return var;
}

UncertaintyReport ReportFromPasses(int64_t patch_id, std::span<const double> probs,
                                   int passes, int classes) {
  UncertaintyReport r;
  r.patch_id = patch_id;
  r.passes = passes;
  r.class_variances = ClassVariances(probs, passes, classes);
  r.u = std::accumulate(r.class_variances.begin(), r.class_variances.end(), 0.0) /
        classes;
  return r;
}

template <typename S>
std::vector<UncertaintyReport> McUncertaintyBatch(const HeadParams<S>& params,
                                                  const Matrix<S>& x,
                                                  std::span<const int64_t> patch_ids,
                                                  int passes, uint64_t seed) {
  if (passes < 2) {
    throw Error(ErrorCode::kParameter, "mc uncertainty needs at least 2 passes");
  }
  if (x.cols() != params.input_dim()) {
    throw Error(ErrorCode::kShape, "embedding dim does not match the head");
  }
  if (static_cast<size_t>(x.rows()) != patch_ids.size()) {
    throw Error(ErrorCode::kShape, "one patch id per embedding row is required");
  }
  const int hidden = params.hidden();
  const int classes = params.classes();

  // Everything before dropout is deterministic in mc mode.
  Matrix<S> bn = x * params.w1;
  bn.rowwise() += params.b1;
  bn = bn.cwiseMax(S(0));
  const RowVec<S> inv_std = (params.bn_running_var.array() + S(kBnEps)).rsqrt();
  bn = ((bn.rowwise() - params.bn_running_mean).array().rowwise() *
        (inv_std.array() * params.bn_gamma.array()))
           .matrix();
  bn.rowwise() += params.bn_beta;

  std::vector<UncertaintyReport> reports;
  reports.reserve(patch_ids.size());
  std::vector<double> probs(static_cast<size_t>(passes) * classes);
  RowVec<S> dropped(hidden);
  RowVec<S> logits(classes);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Rng rng(DeriveSeed(seed, "mc", static_cast<uint64_t>(patch_ids[i])));
    for (int t = 0; t < passes; ++t) {
      const Matrix<S> mask = SampleDropoutMask<S>(1, hidden, params.dropout_rate, rng);
      dropped = bn.row(i).cwiseProduct(mask.row(0));
      logits = dropped * params.w2 + params.b2;
      const S mx = logits.maxCoeff();
      logits = (logits.array() - mx).exp();
      const S total = logits.sum();
      for (int c = 0; c < classes; ++c) {
        probs[static_cast<size_t>(t) * classes + c] =
            static_cast<double>(logits[c] / total);
      }
    }
    reports.push_back(ReportFromPasses(patch_ids[i], probs, passes, classes));
  }
  return reports;
}

template <typename S>
UncertaintyReport McUncertainty(const HeadParams<S>& params,
                                std::span<const S> embedding, int64_t patch_id,
                                int passes, uint64_t seed) {
  if (static_cast<int>(embedding.size()) != params.input_dim()) {
    throw Error(ErrorCode::kShape, "embedding dim does not match the head");
  }
  Matrix<S> x(1, params.input_dim());
  std::copy(embedding.begin(), embedding.end(), x.data());
  const int64_t ids[1] = {patch_id};
  return McUncertaintyBatch(params, x, ids, passes, seed).front();
}

std::vector<int64_t> FilterByUncertainty(std::span<const UncertaintyReport> reports,
                                         const FilterPolicy& policy) {
  if (reports.empty()) throw Error(ErrorCode::kInput, "no uncertainty reports");
  std::vector<int64_t> kept;
  if (policy.kind == FilterPolicy::Kind::kAbsolute) {
    for (const auto& r : reports) {
      if (r.u <= policy.tau) kept.push_back(r.patch_id);
    }
  } else {
    if (!(policy.keep_fraction >= 0.0 && policy.keep_fraction <= 1.0)) {
      throw Error(ErrorCode::kParameter, "keep fraction must be in [0, 1]");
    }
    std::vector<size_t> idx(reports.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
      if (reports[a].u != reports[b].u) return reports[a].u < reports[b].u;
      return reports[a].patch_id < reports[b].patch_id;
    });
    // The small slack keeps q * N from rounding up past an exact integer.
    const double target = policy.keep_fraction * static_cast<double>(reports.size());
    const auto keep = std::min(reports.size(),
                               static_cast<size_t>(std::ceil(target - 1e-9)));
    for (size_t k = 0; k < keep; ++k) kept.push_back(reports[idx[k]].patch_id);
  }
  if (kept.empty()) {
    throw Error(ErrorCode::kEmptyAfterFilter, "uncertainty filter kept no patches");
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

template std::vector<UncertaintyReport> McUncertaintyBatch(
    const HeadParams<float>&, const Matrix<float>&, std::span<const int64_t>, int, uint64_t);
template std::vector<UncertaintyReport> McUncertaintyBatch(
    const HeadParams<double>&, const Matrix<double>&, std::span<const int64_t>, int,
    uint64_t);
template UncertaintyReport McUncertainty(const HeadParams<float>&, std::span<const float>,
                                         int64_t, int, uint64_t);
template UncertaintyReport McUncertainty(const HeadParams<double>&,
                                         std::span<const double>, int64_t, int, uint64_t);

}  // namespace pam50::head
