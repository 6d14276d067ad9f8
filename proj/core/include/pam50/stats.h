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

#pragma once

#include <algorithm>
#include <cmath>
#include <span>

namespace pam50 {

/// Percentile with linear interpolation between closest ranks (the NumPy
/// default). Reorders `values`. `p` is in [0, 100]; `values` non-empty.
inline double Percentile(std::span<double> values, double p) {
  const size_t n = values.size();
  const double pos = std::clamp(p, 0.0, 100.0) / 100.0 * static_cast<double>(n - 1);
  const auto lo = static_cast<size_t>(std::floor(pos));
  const double frac = pos - static_cast<double>(lo);
  std::nth_element(values.begin(), values.begin() + lo, values.end());
  const double lo_val = values[lo];
  if (frac == 0.0 || lo + 1 >= n) return lo_val;
  const double hi_val =
      *std::min_element(values.begin() + lo + 1, values.end());
  return lo_val + frac * (hi_val - lo_val);
}

}  // namespace pam50
