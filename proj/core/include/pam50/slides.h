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

/// @file slides.h
/// @brief Slide lists (labels CSV) and the patient-level train/validation split.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace pam50::pipeline {

struct SlideInfo {
  std::string slide_id;
  std::string patient_id;
  int label = 0;
  /// Image file or tile directory; relative paths resolve against the
  /// slides directory.
  std::string path;

  bool operator==(const SlideInfo&) const = default;
};

/// CSV `slide_id,patient_id,label,path` where label is a subtype name
/// ("Luminal A", "LumA", ...) or a class index. The path column may be
/// omitted, in which case `<slide_id>.png` is assumed. Rows are returned
/// sorted by slide_id; duplicate ids raise `Error(kInput)`.
std::vector<SlideInfo> ReadLabels(const std::filesystem::path& path, int num_classes);
void WriteLabels(const std::filesystem::path& path, const std::vector<SlideInfo>& slides);

struct Split {
  std::vector<std::string> train_patients;
  std::vector<std::string> val_patients;
  std::vector<std::string> train_slides;
  std::vector<std::string> val_slides;

  bool operator==(const Split&) const = default;
};

/// Patient-level split stratified by class: within each class the patients
/// are shuffled with `seed` and round(val_fraction * n) of them (at least
/// one when the class has two or more patients) go to validation. All
/// slides of a patient share its side. A patient's class is the label of
/// its first slide. Lists are sorted.
Split PatientSplit(const std::vector<SlideInfo>& slides, double val_fraction,
                   uint64_t seed);

std::string SplitToJson(const Split& split);
Split SplitFromJson(const std::string& text);

}  // namespace pam50::pipeline
