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

#include "pam50/slides.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <set>

#include "pam50/csv.h"
#include "pam50/errors.h"
#include "pam50/evaluate.h"
#include "pam50/rng.h"

namespace pam50::pipeline {

std::vector<SlideInfo> ReadLabels(const std::filesystem::path& path, int num_classes) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open labels file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kInput, path.string() + " is empty");
  const auto header = csv::Split(csv::TrimEol(line));
  if (header.size() < 3 || header[0] != "slide_id" || header[1] != "patient_id" ||
      header[2] != "label" || (header.size() == 4 && header[3] != "path") ||
      header.size() > 4) {
    throw Error(ErrorCode::kInput,
                path.string() + ": header must be slide_id,patient_id,label[,path]");
  }
  std::vector<SlideInfo> slides;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = csv::TrimEol(line);
    if (line.empty()) continue;
    const auto f = csv::Split(line);
    if (f.size() != header.size()) {
      throw Error(ErrorCode::kInput, path.string() + " line " + std::to_string(line_no) +
                                         ": expected " + std::to_string(header.size()) +
                                         " fields");
    }
    SlideInfo s;
    s.slide_id = f[0];
    s.patient_id = f[1];
    int label = eval::SubtypeIndex(f[2]);
    if (label < 0) label = static_cast<int>(csv::ParseInt(f[2], line_no));
    if (label < 0 || label >= num_classes) {
      throw Error(ErrorCode::kInput, path.string() + " line " + std::to_string(line_no) +
                                         ": label '" + f[2] + "' out of range");
    }
    s.label = label;
    s.path = f.size() == 4 && !f[3].empty() ? f[3] : s.slide_id + ".png";
    if (s.slide_id.empty() || s.patient_id.empty()) {
      throw Error(ErrorCode::kInput, path.string() + " line " + std::to_string(line_no) +
                                         ": empty slide or patient id");
    }
    slides.push_back(std::move(s));
  }
  std::sort(slides.begin(), slides.end(),
            [](const SlideInfo& a, const SlideInfo& b) { return a.slide_id < b.slide_id; });
  for (size_t i = 1; i < slides.size(); ++i) {
    if (slides[i].slide_id == slides[i - 1].slide_id) {
      throw Error(ErrorCode::kInput, "duplicate slide id '" + slides[i].slide_id + "'");
    }
  }
  return slides;
}

void WriteLabels(const std::filesystem::path& path, const std::vector<SlideInfo>& slides) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << "slide_id,patient_id,label,path\n";
  for (const auto& s : slides) {
    out << s.slide_id << ',' << s.patient_id << ',' << eval::SubtypeName(s.label) << ','
        << s.path << '\n';
  }
}

Split PatientSplit(const std::vector<SlideInfo>& slides, double val_fraction,
                   uint64_t seed) {
  // Patients in first-seen order of the slide-id-sorted list.
  std::vector<SlideInfo> sorted = slides;
  std::sort(sorted.begin(), sorted.end(),
            [](const SlideInfo& a, const SlideInfo& b) { return a.slide_id < b.slide_id; });
  std::map<std::string, int> patient_class;
  for (const auto& s : sorted) patient_class.emplace(s.patient_id, s.label);

  std::map<int, std::vector<std::string>> by_class;
  for (const auto& [patient, label] : patient_class) by_class[label].push_back(patient);

  std::set<std::string> val;
  for (auto& [label, patients] : by_class) {
    Rng rng(DeriveSeed(seed, "split", static_cast<uint64_t>(label)));
    rng.Shuffle(patients.begin(), patients.end());
    auto n_val = static_cast<size_t>(std::llround(val_fraction * patients.size()));
    if (n_val == 0 && patients.size() >= 2) n_val = 1;
    n_val = std::min(n_val, patients.size() - (patients.size() >= 2 ? 1 : 0));
    val.insert(patients.begin(), patients.begin() + n_val);
  }
  Split split;
  for (const auto& [patient, label] : patient_class) {
    (val.count(patient) ? split.val_patients : split.train_patients).push_back(patient);
  }
  for (const auto& s : sorted) {
    (val.count(s.patient_id) ? split.val_slides : split.train_slides).push_back(s.slide_id);
  }
  return split;
}

std::string SplitToJson(const Split& split) {
  nlohmann::ordered_json j;
  j["train_patients"] = split.train_patients;
  j["val_patients"] = split.val_patients;
  j["train_slides"] = split.train_slides;
  j["val_slides"] = split.val_slides;
  return j.dump(2) + "\n";
}

Split SplitFromJson(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    Split s;
    s.train_patients = j.at("train_patients").get<std::vector<std::string>>();
    s.val_patients = j.at("val_patients").get<std::vector<std::string>>();
    s.train_slides = j.at("train_slides").get<std::vector<std::string>>();
    s.val_slides = j.at("val_slides").get<std::vector<std::string>>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInput, std::string("split JSON: ") + e.what());
  }
}

}  // namespace pam50::pipeline
