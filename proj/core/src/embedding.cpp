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

#include "pam50/embedding.h"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>

#include "pam50/errors.h"
#include "pam50/rng.h"

namespace pam50::embed {
namespace {

constexpr char kMagic[4] = {'P', 'E', 'M', 'B'};
constexpr size_t kHeaderSize = 20;

template <typename T>
void PutLe(std::vector<uint8_t>& out, T value) {
  using U = std::conditional_t<sizeof(T) == 4, uint32_t, uint64_t>;
  const U bits = std::bit_cast<U>(value);
  for (size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<uint8_t>(bits >> (8 * i)));
  }
}

template <typename T>
T GetLe(const uint8_t* p) {
  using U = std::conditional_t<sizeof(T) == 4, uint32_t, uint64_t>;
  U bits = 0;
  for (size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(p[i]) << (8 * i);
  return std::bit_cast<T>(bits);
}

}  // namespace

int64_t EmbeddingStore::IndexOf(uint64_t patch_id) const {
  const auto it = std::lower_bound(patch_ids.begin(), patch_ids.end(), patch_id);
  if (it == patch_ids.end() || *it != patch_id) return -1;
  return it - patch_ids.begin();
}

void EmbeddingStore::Validate() const {
  if (dim == 0) throw Error(ErrorCode::kSizeMismatch, "embedding dim is 0");
  if (vectors.size() != patch_ids.size() * dim) {
    throw Error(ErrorCode::kSizeMismatch,
                "vector payload has " + std::to_string(vectors.size()) +
                    " values, expected " + std::to_string(patch_ids.size() * dim));
  }
  for (size_t i = 1; i < patch_ids.size(); ++i) {
    if (patch_ids[i] <= patch_ids[i - 1]) {
      throw Error(ErrorCode::kBadPatchIds,
                  "patch ids not strictly increasing at index " + std::to_string(i));
    }
  }
  for (size_t i = 0; i < vectors.size(); ++i) {
    if (!std::isfinite(vectors[i])) {
      throw Error(ErrorCode::kNonFinite,
                  "non-finite value in vector " + std::to_string(i / dim));
    }
  }
}

std::vector<uint8_t> EncodeStore(const EmbeddingStore& store) {
  store.Validate();
  std::vector<uint8_t> out;
  out.reserve(kHeaderSize + store.count() * 8 + store.vectors.size() * 4);
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  PutLe<uint32_t>(out, kPembVersion);
  PutLe<uint32_t>(out, store.dim);
  PutLe<uint64_t>(out, store.count());
  for (uint64_t id : store.patch_ids) PutLe<uint64_t>(out, id);
  for (float v : store.vectors) PutLe<float>(out, v);
  return out;
}

EmbeddingStore DecodeStore(std::span<const uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw Error(ErrorCode::kBadMagic, "not a PEMB file");
  }
  if (bytes.size() < kHeaderSize) {
    throw Error(ErrorCode::kTruncated, "header shorter than 20 bytes");
  }
  const uint8_t* p = bytes.data();
  const auto version = GetLe<uint32_t>(p + 4);
  if (version != kPembVersion) {
    throw Error(ErrorCode::kVersionMismatch,
                "PEMB version " + std::to_string(version) + ", expected 1");
  }
  EmbeddingStore store;
  store.dim = GetLe<uint32_t>(p + 8);
  const auto count = GetLe<uint64_t>(p + 12);
  if (store.dim == 0) throw Error(ErrorCode::kSizeMismatch, "embedding dim is 0");

  const size_t available = bytes.size() - kHeaderSize;
  // Guard the multiplication against absurd counts before computing sizes.
  if (count > available / 8) {
    throw Error(ErrorCode::kTruncated, "patch id table truncated");
  }
  const size_t ids_bytes = count * 8;
  const size_t payload = available - ids_bytes;
  if (count != 0 && payload / 4 / count < store.dim) {
    throw Error(ErrorCode::kTruncated,
                "payload shorter than count*dim*4 = " +
                    std::to_string(count * store.dim * 4) + " bytes");
  }
  const size_t values = count * store.dim;
  if (payload != values * 4) {
    throw Error(ErrorCode::kSizeMismatch,
                std::to_string(payload - values * 4) + " trailing bytes");
  }
  store.patch_ids.resize(count);
  for (size_t i = 0; i < count; ++i) {
    store.patch_ids[i] = GetLe<uint64_t>(p + kHeaderSize + 8 * i);
  }
  store.vectors.resize(values);
  const uint8_t* v = p + kHeaderSize + ids_bytes;
  for (size_t i = 0; i < values; ++i) store.vectors[i] = GetLe<float>(v + 4 * i);
  store.Validate();
  return store;
}

std::filesystem::path SidecarPath(const std::filesystem::path& store_path) {
  auto p = store_path;
  p.replace_extension(".json");
  return p;
}

void WriteStore(const EmbeddingStore& store, const std::filesystem::path& path,
                const StoreMetadata* meta) {
  const auto bytes = EncodeStore(store);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (meta != nullptr) {
    nlohmann::ordered_json j;
    j["slide_id"] = meta->slide_id;
    j["source"] = meta->source;
    j["model"] = meta->model;
    std::ofstream side(SidecarPath(path));
    side << j.dump(2) << '\n';
  }
}

EmbeddingStore ReadStore(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  const std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  EmbeddingStore store = DecodeStore(bytes);
  const auto side = SidecarPath(path);
  if (std::filesystem::exists(side)) {
    try {
      std::ifstream s(side);
      const auto j = nlohmann::json::parse(s);
      store.slide_id = j.value("slide_id", std::string());
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kInput, side.string() + ": " + e.what());
    }
  }
  return store;
}

ToyEmbedder::ToyEmbedder(uint64_t seed, int dim) : dim_(dim) {
  if (dim <= 0) throw Error(ErrorCode::kParameter, "embedding dim must be positive");
  Rng rng(DeriveSeed(seed, "toy_embed"));
  projection_.resize(static_cast<size_t>(dim) * kDescriptorSize);
  const double scale = 1.0 / std::sqrt(static_cast<double>(kDescriptorSize));
  for (double& w : projection_) w = rng.Normal() * scale;
}

std::vector<double> ToyEmbedder::Describe(const tiling::PreparedPatch& patch) {
  constexpr int n = tiling::kPreparedSize;
  constexpr int half = n / 2;
  std::vector<double> d;
  d.reserve(kDescriptorSize);
  for (int c = 0; c < 3; ++c) {
    double sum = 0, sum_sq = 0;
    double quad[4] = {0, 0, 0, 0};
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        const double v = patch.at(c, y, x);
        sum += v;
        sum_sq += v * v;
        quad[(y >= half ? 2 : 0) + (x >= half ? 1 : 0)] += v;
      }
    }
    const double count = static_cast<double>(n) * n;
    const double mean = sum / count;
    const double var = std::max(sum_sq / count - mean * mean, 0.0);

    double gx = 0, gy = 0, gd = 0, ga = 0, lap = 0;
    for (int y = 1; y < n - 1; ++y) {
      for (int x = 1; x < n - 1; ++x) {
        const double v = patch.at(c, y, x);
        gx += std::abs(patch.at(c, y, x + 1) - v);
        gy += std::abs(patch.at(c, y + 1, x) - v);
        gd += std::abs(patch.at(c, y + 1, x + 1) - v);
        ga += std::abs(patch.at(c, y + 1, x - 1) - v);
        lap += std::abs(patch.at(c, y - 1, x) + patch.at(c, y + 1, x) +
                        patch.at(c, y, x - 1) + patch.at(c, y, x + 1) - 4 * v);
      }
    }
    const double inner = static_cast<double>(n - 2) * (n - 2);
    d.push_back(mean);
    d.push_back(std::sqrt(var));
    d.push_back(gx / inner);
    d.push_back(gy / inner);
    d.push_back(gd / inner);
    d.push_back(ga / inner);
    d.push_back(lap / inner);
    for (double q : quad) d.push_back(q / (count / 4) - mean);
  }
  return d;
}

std::vector<float> ToyEmbedder::Embed(const tiling::PreparedPatch& patch) const {
  const auto d = Describe(patch);
  std::vector<float> out(dim_);
  for (int i = 0; i < dim_; ++i) {
    const double* w = projection_.data() + static_cast<size_t>(i) * kDescriptorSize;
    double acc = 0;
    for (int k = 0; k < kDescriptorSize; ++k) acc += w[k] * d[k];
    out[i] = static_cast<float>(acc);
  }
  return out;
}

std::vector<float> ToyEmbed(const tiling::PreparedPatch& patch, uint64_t seed) {
  return ToyEmbedder(seed).Embed(patch);
}

}  // namespace pam50::embed
