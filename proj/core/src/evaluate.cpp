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

#include "pam50/evaluate.h"

#include <algorithm>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <numeric>
#include <ostream>

#include "pam50/errors.h"

namespace pam50::eval {
namespace {

constexpr const char* kSubtypeNames[kNumSubtypes] = {"Luminal A", "Luminal B",
                                                     "HER2-enriched", "Basal-like"};
constexpr const char* kSubtypeShort[kNumSubtypes] = {"LumA", "LumB", "HER2", "Basal"};

double SafeDiv(double a, double b) { return b > 0 ? a / b : 0.0; }

}  // namespace

std::string SubtypeName(int index) {
  if (index >= 0 && index < kNumSubtypes) return kSubtypeNames[index];
  return "class " + std::to_string(index);
}

int SubtypeIndex(std::string_view name) {
  for (int i = 0; i < kNumSubtypes; ++i) {
    if (name == kSubtypeNames[i] || name == kSubtypeShort[i]) return i;
  }
  return -1;
}

int Argmax(std::span<const double> values) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(values.size()); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

SlidePrediction AggregateSlide(std::span<const std::vector<double>> patch_probs,
                               std::string slide_id) {
  if (patch_probs.empty()) {
    throw Error(ErrorCode::kEmptyPatchSet, "no patch probabilities for slide '" +
                                               slide_id + "'");
  }
  const size_t c = patch_probs[0].size();
  SlidePrediction p;
  p.slide_id = std::move(slide_id);
  p.mean_probs.assign(c, 0.0);
  for (const auto& row : patch_probs) {
    if (row.size() != c) throw Error(ErrorCode::kShape, "ragged probability vectors");
    for (size_t k = 0; k < c; ++k) p.mean_probs[k] += row[k];
  }
  for (double& v : p.mean_probs) v /= static_cast<double>(patch_probs.size());
  p.predicted_class = Argmax(p.mean_probs);
  p.n_patches_used = static_cast<int>(patch_probs.size());
  return p;
}

MetricsReport EvaluateMetrics(std::span<const int> predicted,
                              std::span<const int> truth, int classes) {
  if (predicted.empty() || predicted.size() != truth.size()) {
    throw Error(ErrorCode::kInput, "metrics need equal-length nonempty label lists");
  }
  MetricsReport r;
  r.classes = classes;
  r.confusion.assign(classes, std::vector<int>(classes, 0));
  for (size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= classes || predicted[i] < 0 ||
        predicted[i] >= classes) {
      throw Error(ErrorCode::kInput, "label out of range at index " + std::to_string(i));
    }
    ++r.confusion[truth[i]][predicted[i]];
  }
  const double n = static_cast<double>(truth.size());
  int trace = 0;
  r.per_class.resize(classes);
  for (int c = 0; c < classes; ++c) {
    trace += r.confusion[c][c];
    double tp = r.confusion[c][c], fp = 0, fn = 0;
    for (int k = 0; k < classes; ++k) {
      if (k == c) continue;
      fp += r.confusion[k][c];
      fn += r.confusion[c][k];
    }
    auto& m = r.per_class[c];
    m.precision = SafeDiv(tp, tp + fp);
    m.recall = SafeDiv(tp, tp + fn);
    m.f1 = SafeDiv(2 * m.precision * m.recall, m.precision + m.recall);
    m.accuracy = (n - fp - fn) / n;
    m.support = static_cast<int>(tp + fn);
    if (tp + fn > 0 || tp + fp > 0) r.macro_classes.push_back(c);
  }
  r.accuracy = trace / n;
  for (int c : r.macro_classes) {
    r.macro_precision += r.per_class[c].precision;
    r.macro_recall += r.per_class[c].recall;
    r.macro_f1 += r.per_class[c].f1;
  }
  const double k = static_cast<double>(r.macro_classes.size());
  r.macro_precision /= k;
  r.macro_recall /= k;
  r.macro_f1 /= k;
  return r;
}

std::optional<double> BinaryAuc(std::span<const double> scores,
                                std::span<const int> positive) {
  const size_t n = scores.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0;
  size_t n_pos = 0;
  for (size_t i = 0; i < n;) {
    size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (size_t k = i; k < j; ++k) {
      if (positive[order[k]]) {
        rank_sum += midrank;
        ++n_pos;
      }
    }
    i = j;
  }
  const size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double np = static_cast<double>(n_pos);
  return (rank_sum - np * (np + 1) / 2) / (np * static_cast<double>(n_neg));
}

namespace {

std::vector<std::optional<double>> PerClassAuc(std::span<const std::vector<double>> probs,
                                               std::span<const int> truth) {
  if (probs.size() != truth.size() || probs.empty()) {
    throw Error(ErrorCode::kInput, "AUC needs one probability vector per label");
  }
  const size_t classes = probs[0].size();
  std::vector<std::optional<double>> out(classes);
  std::vector<double> scores(probs.size());
  std::vector<int> pos(probs.size());
  for (size_t c = 0; c < classes; ++c) {
    for (size_t i = 0; i < probs.size(); ++i) {
      if (probs[i].size() != classes) {
        throw Error(ErrorCode::kShape, "ragged probability vectors");
      }
      scores[i] = probs[i][c];
      pos[i] = truth[i] == static_cast<int>(c) ? 1 : 0;
    }
    out[c] = BinaryAuc(scores, pos);
  }
  return out;
}

std::optional<double> MeanOfPresent(const std::vector<std::optional<double>>& v) {
  double sum = 0;
  int k = 0;
  for (const auto& a : v) {
    if (a) {
      sum += *a;
      ++k;
    }
  }
  if (k == 0) return std::nullopt;
  return sum / k;
}

}  // namespace

double AucOvrMacro(std::span<const std::vector<double>> probs,
                   std::span<const int> truth) {
  const auto macro = MeanOfPresent(PerClassAuc(probs, truth));
  if (!macro) {
    throw Error(ErrorCode::kUndefined, "no class has both positives and negatives");
  }
  return *macro;
}

void AttachAuc(MetricsReport& report, std::span<const std::vector<double>> probs,
               std::span<const int> truth) {
  const auto per = PerClassAuc(probs, truth);
  for (size_t c = 0; c < per.size() && c < report.per_class.size(); ++c) {
    report.per_class[c].auc = per[c];
  }
  report.macro_auc = MeanOfPresent(per);
}

std::string MetricsToJson(const MetricsReport& r) {
  using nlohmann::ordered_json;
  auto opt = [](const std::optional<double>& v) {
    return v ? ordered_json(*v) : ordered_json(nullptr);
  };
  ordered_json j;
  j["classes"] = r.classes;
  j["n_slides"] = std::accumulate(r.per_class.begin(), r.per_class.end(), 0,
                                  [](int s, const ClassMetrics& m) { return s + m.support; });
  j["accuracy"] = r.accuracy;
  j["macro_precision"] = r.macro_precision;
  j["macro_recall"] = r.macro_recall;
  j["macro_f1"] = r.macro_f1;
  j["macro_auc"] = opt(r.macro_auc);
  j["macro_classes"] = r.macro_classes;
  ordered_json per = ordered_json::array();
  for (int c = 0; c < r.classes; ++c) {
    const auto& m = r.per_class[c];
    ordered_json e;
    e["class"] = c;
    e["name"] = SubtypeName(c);
    e["precision"] = m.precision;
    e["recall"] = m.recall;
    e["f1"] = m.f1;
    e["accuracy"] = m.accuracy;
    e["support"] = m.support;
    e["auc"] = opt(m.auc);
    per.push_back(e);
  }
  j["per_class"] = per;
  j["confusion"] = r.confusion;
  return j.dump(2) + "\n";
}

std::string MetricsTable(const MetricsReport& r) {
  std::vector<int> order(r.classes);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [](int a, int b) { return SubtypeName(a) < SubtypeName(b); });
  auto fmt = [](const std::optional<double>& v) {
    char buf[32];
    if (!v) return std::string("     n/a");
    std::snprintf(buf, sizeof(buf), "%8.4f", *v);
    return std::string(buf);
  };
  std::string out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-14s %8s %8s %8s %8s %8s\n", "Subtype",
                "Precision", "Recall", "F1-Score", "Accuracy", "AUC");
  out += line;
  for (int c : order) {
    const auto& m = r.per_class[c];
    std::snprintf(line, sizeof(line), "%-14s %s %s %s %s %s\n", SubtypeName(c).c_str(),
                  fmt(m.precision).c_str(), fmt(m.recall).c_str(), fmt(m.f1).c_str(),
                  fmt(m.accuracy).c_str(), fmt(m.auc).c_str());
    out += line;
  }
  std::snprintf(line, sizeof(line), "%-14s %s %s %s %s %s\n", "Macro Avg",
                fmt(r.macro_precision).c_str(), fmt(r.macro_recall).c_str(),
                fmt(r.macro_f1).c_str(), fmt(r.accuracy).c_str(), fmt(r.macro_auc).c_str());
  out += line;
  return out;
}

void WriteConfusionCsv(std::ostream& out, const MetricsReport& r) {
  out << "truth";
  for (int c = 0; c < r.classes; ++c) out << ',' << SubtypeName(c);
  out << '\n';
  for (int t = 0; t < r.classes; ++t) {
    out << SubtypeName(t);
    for (int c = 0; c < r.classes; ++c) out << ',' << r.confusion[t][c];
    out << '\n';
  }
}

namespace {

std::optional<bool> ParseReceptor(std::string_view s, const char* name) {
  if (s.empty()) return std::nullopt;
  if (s == "+" || s == "pos" || s == "positive") return true;
  if (s == "-" || s == "neg" || s == "negative") return false;
  throw Error(ErrorCode::kInput, std::string("bad ") + name + " status '" +
                                     std::string(s) + "'");
}

std::optional<bool> ParseKi67(std::string_view s) {
  if (s.empty()) return std::nullopt;
  if (s == "high") return true;
  if (s == "low") return false;
  throw Error(ErrorCode::kInput, "bad Ki-67 status '" + std::string(s) + "'");
}

bool Matches(const std::optional<bool>& rule, bool value) {
  return !rule || *rule == value;
}

}  // namespace

IhcMarkers ParseIhcMarkers(std::string_view er, std::string_view pr,
                           std::string_view her2, std::string_view ki67) {
  return {ParseReceptor(er, "ER"), ParseReceptor(pr, "PR"), ParseReceptor(her2, "HER2"),
          ParseKi67(ki67)};
}

std::vector<IhcRule> DefaultIhcRules() {
  return {
      {SubtypeName(0), true, true, false, false},
      {SubtypeName(1), true, std::nullopt, std::nullopt, true},
      {SubtypeName(2), false, false, true, true},
      {SubtypeName(3), false, false, false, true},
  };
}

std::vector<IhcRule> IhcRulesFromJson(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (!j.is_array()) throw Error(ErrorCode::kInput, "IHC rule table must be an array");
    std::vector<IhcRule> rules;
    for (const auto& e : j) {
      IhcRule r;
      r.subtype = e.at("subtype").get<std::string>();
      auto get = [&](const char* key) {
        return e.contains(key) ? e.at(key).get<std::string>() : std::string();
      };
      r.er = ParseReceptor(get("er"), "ER");
      r.pr = ParseReceptor(get("pr"), "PR");
      r.her2 = ParseReceptor(get("her2"), "HER2");
      r.ki67_high = ParseKi67(get("ki67"));
      rules.push_back(std::move(r));
    }
    return rules;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInput, std::string("IHC rule table: ") + e.what());
  }
}

std::string IhcRulesToJson(const std::vector<IhcRule>& rules) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : rules) {
    nlohmann::ordered_json e;
    e["subtype"] = r.subtype;
    if (r.er) e["er"] = *r.er ? "+" : "-";
    if (r.pr) e["pr"] = *r.pr ? "+" : "-";
    if (r.her2) e["her2"] = *r.her2 ? "+" : "-";
    if (r.ki67_high) e["ki67"] = *r.ki67_high ? "high" : "low";
    j.push_back(e);
  }
  return j.dump(2) + "\n";
}

std::string IhcSubtype(const IhcMarkers& m, const std::vector<IhcRule>& rules) {
  if (!m.er || !m.pr || !m.her2 || !m.ki67_high) {
    throw Error(ErrorCode::kInput, "all four IHC markers (ER, PR, HER2, Ki-67) are required");
  }
  for (const auto& r : rules) {
    if (Matches(r.er, *m.er) && Matches(r.pr, *m.pr) && Matches(r.her2, *m.her2) &&
        Matches(r.ki67_high, *m.ki67_high)) {
      return r.subtype;
    }
  }
  return std::string(kUnclassified);
}

}  // namespace pam50::eval
