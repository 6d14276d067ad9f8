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

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

#include "oracles.h"
#include "pam50/embedding.h"
#include "pam50/errors.h"
#include "pam50/rng.h"

namespace pam50::embed {
namespace {

ErrorCode DecodeError(const std::vector<uint8_t>& bytes) {
  try {
    DecodeStore(bytes);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "decode accepted invalid bytes";
  return ErrorCode::kInput;
}

template <typename T>
void PutLe(std::vector<uint8_t>& out, T value) {
  uint8_t raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  // The test host is little-endian; spell out the byte order regardless.
  uint64_t bits = 0;
  std::memcpy(&bits, raw, sizeof(T));
  for (size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<uint8_t>(bits >> (8 * i)));
}

EmbeddingStore RandomStore(uint64_t seed, uint32_t dim, size_t count) {
  Rng rng(seed);
  EmbeddingStore s;
  s.slide_id = "s";
  s.dim = dim;
  uint64_t id = rng.UniformInt(5);
  for (size_t i = 0; i < count; ++i) {
    s.patch_ids.push_back(id);
    id += 1 + rng.UniformInt(4);
  }
  s.vectors.resize(count * dim);
  for (float& v : s.vectors) v = static_cast<float>(rng.Normal());
  return s;
}

tiling::PreparedPatch PatchFrom(const RgbImage& img) { return tiling::PreparePatch(img); }

RgbImage NoisePatch(uint64_t seed, int offset = 0) {
  Rng rng(seed);
  RgbImage img(512, 512);
  for (auto& v : img.pixels) v = static_cast<uint8_t>(60 + offset + rng.UniformInt(100));
  return img;
}

double Cosine(const std::vector<float>& a, const std::vector<float>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    ab += double(a[i]) * b[i];
    aa += double(a[i]) * a[i];
    bb += double(b[i]) * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

TEST(Pemb, ByteLayoutMatchesHandEncoding) {
  EmbeddingStore s;
  s.dim = 2;
  s.patch_ids = {3, 7};
  s.vectors = {1.0f, -2.0f, 0.5f, 4.0f};
  std::vector<uint8_t> expected = {'P', 'E', 'M', 'B'};
  PutLe<uint32_t>(expected, 1);
  PutLe<uint32_t>(expected, 2);
  PutLe<uint64_t>(expected, 2);
  PutLe<uint64_t>(expected, 3);
  PutLe<uint64_t>(expected, 7);
  for (float f : s.vectors) PutLe<float>(expected, f);
  EXPECT_EQ(EncodeStore(s), expected);
  EXPECT_EQ(expected.size(), 20u + 8 * 2 + 4 * 2 * 2);
}

TEST(Pemb, RandomStoresRoundTrip) {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const EmbeddingStore s = RandomStore(seed, 1 + seed % 17, seed % 9);
    EmbeddingStore back = DecodeStore(EncodeStore(s));
    back.slide_id = s.slide_id;
    EXPECT_EQ(back, s);
  }
}

TEST(Pemb, CorruptionsAreClassified) {
  const std::vector<uint8_t> good = EncodeStore(RandomStore(1, 4, 3));
  auto bad = good;
  bad[0] = 'X';
  EXPECT_EQ(DecodeError(bad), ErrorCode::kBadMagic);
  bad = good;
  bad[4] = 2;
  EXPECT_EQ(DecodeError(bad), ErrorCode::kVersionMismatch);
  bad.assign(good.begin(), good.end() - 1);
  EXPECT_EQ(DecodeError(bad), ErrorCode::kTruncated);
  bad.assign(good.begin(), good.begin() + 10);
  EXPECT_EQ(DecodeError(bad), ErrorCode::kTruncated);
  bad = good;
  bad.push_back(0);
  EXPECT_EQ(DecodeError(bad), ErrorCode::kSizeMismatch);
}

TEST(Pemb, RejectsUnorderedIdsAndNonFiniteValues) {
  const EmbeddingStore good = RandomStore(2, 3, 3);
  const std::vector<uint8_t> bytes = EncodeStore(good);
  auto with_id = [&](size_t index, uint64_t id) {
    auto out = bytes;
    std::vector<uint8_t> le;
    PutLe<uint64_t>(le, id);
    std::copy(le.begin(), le.end(), out.begin() + 20 + 8 * index);
    return out;
  };
  EXPECT_EQ(DecodeError(with_id(1, good.patch_ids[0])), ErrorCode::kBadPatchIds);
  EXPECT_EQ(DecodeError(with_id(2, good.patch_ids[0])), ErrorCode::kBadPatchIds);
  auto nan = bytes;
  std::vector<uint8_t> le;
  PutLe<float>(le, std::numeric_limits<float>::quiet_NaN());
  std::copy(le.begin(), le.end(), nan.end() - 8);
  EXPECT_EQ(DecodeError(nan), ErrorCode::kNonFinite);

  EmbeddingStore s = good;
  s.patch_ids = {5, 5, 9};
  EXPECT_THROW(EncodeStore(s), Error);
  s = good;
  s.vectors[4] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(s.Validate(), Error);
  s = good;
  s.vectors.pop_back();
  EXPECT_THROW(s.Validate(), Error);
}

TEST(Pemb, FileAndSidecarRoundTrip) {
  const auto dir = testing::FreshTempDir("pemb");
  EmbeddingStore s = RandomStore(3, 8, 5);
  s.slide_id = "slide-7";
  const StoreMetadata meta{"slide-7", "toy", "toy-projection-v1"};
  WriteStore(s, dir / "slide-7.pemb", &meta);
  ASSERT_TRUE(std::filesystem::exists(SidecarPath(dir / "slide-7.pemb")));
  std::ifstream in(SidecarPath(dir / "slide-7.pemb"));
  std::stringstream text;
  text << in.rdbuf();
  for (const char* key : {"\"slide_id\"", "\"source\"", "\"model\"", "slide-7", "toy-projection-v1"}) {
    EXPECT_NE(text.str().find(key), std::string::npos) << key;
  }
  EXPECT_EQ(ReadStore(dir / "slide-7.pemb"), s);
  EXPECT_EQ(s.IndexOf(s.patch_ids[2]), 2);
  EXPECT_EQ(s.IndexOf(s.patch_ids.back() + 1), -1);
  std::filesystem::remove_all(dir);
}

TEST(ToyEmbedder, DeterministicPerSeed) {
  const auto patch = PatchFrom(NoisePatch(1));
  const auto a = ToyEmbed(patch, 42);
  EXPECT_EQ(a.size(), static_cast<size_t>(kEmbeddingDim));
  EXPECT_EQ(a, ToyEmbed(patch, 42));
  EXPECT_NE(a, ToyEmbed(patch, 43));
}

TEST(ToyEmbedder, DistinguishesIntensityShift) {
  const auto a = ToyEmbed(PatchFrom(NoisePatch(1)), 42);
  const auto b = ToyEmbed(PatchFrom(NoisePatch(1, 50)), 42);
  EXPECT_LT(Cosine(a, b), 0.999);
}

TEST(ToyEmbedder, NonConstantPatchHasNonzeroNorm) {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    const auto v = ToyEmbed(PatchFrom(NoisePatch(seed)), seed);
    double norm = 0;
    for (float f : v) {
      ASSERT_TRUE(std::isfinite(f));
      norm += double(f) * f;
    }
    EXPECT_GT(norm, 0.0);
  }
}

TEST(ToyEmbedder, ProjectionIsLinearInDescriptor) {
  const ToyEmbedder embedder(7, 64);
  const auto patch = PatchFrom(NoisePatch(3));
  const auto d = ToyEmbedder::Describe(patch);
  ASSERT_EQ(d.size(), static_cast<size_t>(ToyEmbedder::kDescriptorSize));
  const auto v = embedder.Embed(patch);
  ASSERT_EQ(v.size(), 64u);
  // Same descriptor from a second instance gives the same projection.
  EXPECT_EQ(ToyEmbedder(7, 64).Embed(patch), v);
}

}  // namespace
}  // namespace pam50::embed
