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

/// @file evaluate.h
/// @brief Slide-level aggregation, evaluation metrics and IHC surrogate rules.
///
/// Class indices follow the subtype order Luminal A (0), Luminal B (1),
/// HER2-enriched (2), Basal-like (3).

#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pam50::eval {

inline constexpr int kNumSubtypes = 4;

/// "Luminal A", "Luminal B", "HER2-enriched", "Basal-like"; other indices
/// render as "class <i>".
std::string SubtypeName(int index);
/// Inverse of SubtypeName; also accepts "LumA", "LumB", "HER2", "Basal".
/// Returns -1 for unknown names.
int SubtypeIndex(std::string_view name);

struct SlidePrediction {
  std::string slide_id;
  std::vector<double> mean_probs;
  int predicted_class = 0;
  int n_patches_used = 0;
};

/// Arithmetic mean of the patch probability vectors; argmax with ties to
/// the lowest class. Throws `Error(kEmptyPatchSet)` on an empty list and
/// `Error(kShape)` on ragged vectors.
SlidePrediction AggregateSlide(std::span<const std::vector<double>> patch_probs,
                               std::string slide_id = {});

/// Index of the largest entry, ties to the lowest index.
int Argmax(std::span<const double> values);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  /// One-vs-rest accuracy (TP + TN) / N.
  double accuracy = 0.0;
  int support = 0;
  /// One-vs-rest AUC, when probabilities were given and the class has both
  /// positives and negatives.
  std::optional<double> auc;
};

struct MetricsReport {
  int classes = 0;
  std::vector<std::vector<int>> confusion;  // [truth][predicted]
  double accuracy = 0.0;
  std::vector<ClassMetrics> per_class;
  /// Classes present in truth or predictions; the macro means run over them.
  std::vector<int> macro_classes;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  std::optional<double> macro_auc;
};

/// Confusion-matrix metrics. Precision/recall/F1 are 0 when their
/// denominator is 0. Throws `Error(kInput)` on empty or unequal inputs or
/// labels outside [0, classes).
MetricsReport EvaluateMetrics(std::span<const int> predicted,
                              std::span<const int> truth, int classes);

/// Mann-Whitney AUC with midranks. `positive[i]` marks the positives.
/// Returns nullopt when either group is empty.
std::optional<double> BinaryAuc(std::span<const double> scores,
                                std::span<const int> positive);

/// Mean one-vs-rest AUC over the classes that have both positives and
/// negatives. Throws `Error(kUndefined)` when no class qualifies.
double AucOvrMacro(std::span<const std::vector<double>> probs,
                   std::span<const int> truth);

/// Fills per-class and macro AUC in `report` from slide probabilities.
/// Classes that cannot be scored keep nullopt; macro AUC stays nullopt when
/// none can.
void AttachAuc(MetricsReport& report, std::span<const std::vector<double>> probs,
               std::span<const int> truth);

std::string MetricsToJson(const MetricsReport& report);

/// Plain-text table: subtype rows (alphabetical) then "Macro Avg", columns
/// Precision, Recall, F1-Score, Accuracy, AUC.
std::string MetricsTable(const MetricsReport& report);

/// CSV with a header row of predicted class names and one row per true
/// class.
void WriteConfusionCsv(std::ostream& out, const MetricsReport& report);

// --- IHC surrogate subtyping -------------------------------------------

/// Marker status: true = positive (Ki-67: high), false = negative (low),
/// nullopt = missing.
struct IhcMarkers {
  std::optional<bool> er;
  std::optional<bool> pr;
  std::optional<bool> her2;
  std::optional<bool> ki67_high;
};

/// Parses "+"/"-" (also "pos"/"neg") for receptors and "high"/"low" for
/// Ki-67; empty strings mean missing. Throws `Error(kInput)` otherwise.
IhcMarkers ParseIhcMarkers(std::string_view er, std::string_view pr,
                           std::string_view her2, std::string_view ki67);

/// A rule matches when every constrained marker agrees; nullopt = any.
struct IhcRule {
  std::string subtype;
  std::optional<bool> er;
  std::optional<bool> pr;
  std::optional<bool> her2;
  std::optional<bool> ki67_high;
};

inline constexpr std::string_view kUnclassified = "Unclassified";

/// Luminal A, Luminal B, HER2-enriched, Basal-like, in that order.
std::vector<IhcRule> DefaultIhcRules();

/// Rule table as a JSON array of objects with "subtype" and optional
/// "er", "pr", "her2" ("+"/"-") and "ki67" ("high"/"low") keys.
std::vector<IhcRule> IhcRulesFromJson(const std::string& text);
std::string IhcRulesToJson(const std::vector<IhcRule>& rules);

/// First matching rule's subtype, or "Unclassified". Throws `Error(kInput)`
/// when any marker is missing.
std::string IhcSubtype(const IhcMarkers& markers,
                       const std::vector<IhcRule>& rules = DefaultIhcRules());

}  // namespace pam50::eval
