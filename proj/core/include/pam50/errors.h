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

/// @file errors.h
/// @brief Error type shared by every pam50 module.
///
/// All recoverable failures are reported as `pam50::Error` carrying an
/// `ErrorCode`. Callers that need to branch on the failure (the CLI maps
/// codes to exit statuses, the pipeline falls back on `kEmptyAfterFilter`)
/// inspect `code()` instead of parsing messages.

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pam50 {

enum class ErrorCode {
  // Generic input / usage problems.
  kInput,
  kParameter,
  kShape,
  kNumeric,
  kConfig,
  kDependency,
  kIo,
  // Tiling.
  kEmptySlide,
  // Stain normalization.
  kNoTissue,
  kDegenerateStains,
  // Binary formats.
  kBadMagic,
  kVersionMismatch,
  kTruncated,
  kSizeMismatch,
  kNonFinite,
  kBadPatchIds,
  // Uncertainty filter / selection.
  kEmptyAfterFilter,
  kProblem,
  // Evaluation.
  kEmptyPatchSet,
  kUndefined,
};

std::string_view ErrorCodeName(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace pam50
