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

#include "pam50/errors.h"

namespace pam50 {

std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInput: return "InputError";
    case ErrorCode::kParameter: return "ParameterError";
    case ErrorCode::kShape: return "ShapeError";
    case ErrorCode::kNumeric: return "NumericError";
    case ErrorCode::kConfig: return "ConfigError";
    case ErrorCode::kDependency: return "DependencyError";
    case ErrorCode::kIo: return "IoError";
    case ErrorCode::kEmptySlide: return "EmptySlide";
    case ErrorCode::kNoTissue: return "NoTissue";
    case ErrorCode::kDegenerateStains: return "DegenerateStains";
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kVersionMismatch: return "VersionMismatch";
    case ErrorCode::kTruncated: return "Truncated";
    case ErrorCode::kSizeMismatch: return "SizeMismatch";
    case ErrorCode::kNonFinite: return "NonFinite";
    case ErrorCode::kBadPatchIds: return "BadPatchIds";
    case ErrorCode::kEmptyAfterFilter: return "EmptyAfterFilter";
    case ErrorCode::kProblem: return "ProblemError";
    case ErrorCode::kEmptyPatchSet: return "EmptyPatchSet";
    case ErrorCode::kUndefined: return "Undefined";
  }
  return "Error";
}

}  // namespace pam50
