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

/// @file embedding.h
/// @brief Patch embedding stores (PEMB files) and the toy embedder.
///
/// PEMB layout, all little-endian:
///
///     offset  size          field
///     0       4             magic "PEMB"
///     4       4             version (u32) = 1
///     8       4             dim (u32)
///     12      8             count (u64)
///     20      8 * count     patch ids (u64), strictly increasing
///     ...     4*count*dim   float32 vectors, row-major
///
/// A sidecar `<stem>.json` next to the store carries
/// `{"slide_id": ..., "source": "toy"|"exporter", "model": ...}`.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pam50/tiling.h"

namespace pam50::embed {

inline constexpr int kEmbeddingDim = 512;
inline constexpr uint32_t kPembVersion = 1;

struct EmbeddingStore {
  std::string slide_id;
  uint32_t dim = kEmbeddingDim;
  std::vector<uint64_t> patch_ids;
  std::vector<float> vectors;  // patch_ids.size() * dim, row-major

  size_t count() const { return patch_ids.size(); }

  std::span<const float> row(size_t i) const {
    return {vectors.data() + i * dim, dim};
  }

  /// Index of `patch_id`, or -1.
  int64_t IndexOf(uint64_t patch_id) const;

  /// Checks the store invariants; throws `Error` (kBadPatchIds,
  /// kSizeMismatch, kNonFinite) on violation.
  void Validate() const;

  bool operator==(const EmbeddingStore&) const = default;
};

struct StoreMetadata {
  std::string slide_id;
  std::string source = "toy";
  std::string model;
};

/// Serializes to the PEMB byte layout.
std::vector<uint8_t> EncodeStore(const EmbeddingStore& store);

/// Parses PEMB bytes. Errors: kBadMagic, kVersionMismatch, kTruncated,
/// kSizeMismatch (trailing bytes or zero dim), kBadPatchIds, kNonFinite.
EmbeddingStore DecodeStore(std::span<const uint8_t> bytes);

/// Writes `<path>` and, when `meta` is given, the `.json` sidecar.
void WriteStore(const EmbeddingStore& store, const std::filesystem::path& path,
                const StoreMetadata* meta = nullptr);

/// Reads `<path>`; fills `slide_id` from the sidecar when present.
EmbeddingStore ReadStore(const std::filesystem::path& path);

std::filesystem::path SidecarPath(const std::filesystem::path& store_path);

/// Deterministic stand-in for a frozen CNN backbone.
///
/// Pools channel-wise statistics of a prepared patch (means and standard
/// deviations, directional gradient and Laplacian energies, a 2x2 grid of
/// mean offsets) into a short descriptor, then maps it through a fixed
/// Gaussian random projection drawn from `seed`. The projection is linear
/// and injective, so a patch with any spatial variation maps to a nonzero
/// vector.
class ToyEmbedder {
 public:
  explicit ToyEmbedder(uint64_t seed, int dim = kEmbeddingDim);

  std::vector<float> Embed(const tiling::PreparedPatch& patch) const;

  int dim() const { return dim_; }

  static constexpr int kDescriptorSize = 33;

  /// The pooled descriptor before projection.
  static std::vector<double> Describe(const tiling::PreparedPatch& patch);

 private:
  int dim_;
  std::vector<double> projection_;  // dim x kDescriptorSize
};

std::vector<float> ToyEmbed(const tiling::PreparedPatch& patch, uint64_t seed);

}  // namespace pam50::embed
