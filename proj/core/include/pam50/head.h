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

/// @file head.h
/// @brief Classification head over frozen patch embeddings.
///
/// Architecture (inputs are already pooled vectors, so global average
/// pooling is the identity and is not materialized):
///
///     x (D) -> FC(D, H) -> ReLU -> BatchNorm(H) -> Dropout(p) -> FC(H, C)
///           -> softmax
///
/// Dropout is inverted: kept units are scaled by 1 / (1 - p) when a mask is
/// applied, so evaluation needs no rescaling. Batch norm uses momentum 0.1
/// and eps 1e-5; the running variance is updated with the unbiased batch
/// variance.
///
/// Everything is templated on the scalar type. `float` is the runtime
/// default; `double` exists for finite-difference gradient checks.

#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "pam50/rng.h"

namespace pam50::head {

template <typename S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

inline constexpr double kBnMomentum = 0.1;
inline constexpr double kBnEps = 1e-5;
inline constexpr int kDefaultHidden = 256;
inline constexpr int kDefaultClasses = 4;

enum class Mode { kTrain, kEval, kMc };

template <typename S>
struct HeadParams {
  Matrix<S> w1;  // D x H
  RowVec<S> b1;
  RowVec<S> bn_gamma;
  RowVec<S> bn_beta;
  RowVec<S> bn_running_mean;
  RowVec<S> bn_running_var;
  Matrix<S> w2;  // H x C
  RowVec<S> b2;
  double dropout_rate = 0.5;

  int input_dim() const { return static_cast<int>(w1.rows()); }
  int hidden() const { return static_cast<int>(w1.cols()); }
  int classes() const { return static_cast<int>(w2.cols()); }

  /// PyTorch-style init: weights and biases U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
  /// gamma 1, beta 0, running mean 0, running variance 1.
  static HeadParams Init(int input_dim, int hidden, int classes,
                         double dropout_rate, uint64_t seed);

  template <typename T>
  HeadParams<T> Cast() const {
    HeadParams<T> o;
    o.w1 = w1.template cast<T>();
    o.b1 = b1.template cast<T>();
    o.bn_gamma = bn_gamma.template cast<T>();
    o.bn_beta = bn_beta.template cast<T>();
    o.bn_running_mean = bn_running_mean.template cast<T>();
    o.bn_running_var = bn_running_var.template cast<T>();
    o.w2 = w2.template cast<T>();
    o.b2 = b2.template cast<T>();
    o.dropout_rate = dropout_rate;
    return o;
  }

  bool operator==(const HeadParams&) const = default;
};

/// Gradients of the trainable parameters (running statistics excluded).
template <typename S>
struct HeadGrads {
  Matrix<S> w1;
  RowVec<S> b1;
  RowVec<S> bn_gamma;
  RowVec<S> bn_beta;
  Matrix<S> w2;
  RowVec<S> b2;

  static HeadGrads ZerosLike(const HeadParams<S>& p);
};

/// Flat views over the six trainable arrays, in field order.
template <typename S>
std::array<std::span<S>, 6> Trainables(HeadParams<S>& p);
template <typename S>
std::array<std::span<S>, 6> Trainables(HeadGrads<S>& g);

/// Dropout mask with entries 0 or 1 / (1 - rate); all ones when rate is 0.
template <typename S>
Matrix<S> SampleDropoutMask(int rows, int cols, double rate, Rng& rng);

/// Row-wise class probabilities. Train mode uses batch statistics and
/// samples a dropout mask from `rng`; eval mode uses running statistics and
/// no dropout; mc mode uses running statistics with a sampled mask.
/// Throws `Error(kShape)` on dimension mismatch and `Error(kParameter)` when
/// a stochastic mode is requested without an rng.
template <typename S>
Matrix<S> Forward(const HeadParams<S>& params, const Matrix<S>& x, Mode mode,
                  Rng* rng = nullptr);

/// Same as `Forward` in train (`use_batch_stats`) or mc mode, but with a
/// caller-provided mask (nullptr = no dropout).
template <typename S>
Matrix<S> ForwardWithMask(const HeadParams<S>& params, const Matrix<S>& x,
                          bool use_batch_stats, const Matrix<S>* mask);

template <typename S>
struct LossAndGradsResult {
  S loss = 0;
  HeadGrads<S> grads;
  RowVec<S> batch_mean;
  RowVec<S> batch_var;  // biased
};

/// Weighted cross-entropy, mean over the batch:
///     loss = (1/B) sum_i w[y_i] * -log p[i, y_i]
/// with exact gradients through the train-mode graph (batch-norm batch
/// statistics, the given dropout mask). Throws `Error(kNumeric)` naming
/// `batch_index` when the loss is not finite.
template <typename S>
LossAndGradsResult<S> LossAndGrads(const HeadParams<S>& params,
                                   const Matrix<S>& x, std::span<const int> labels,
                                   std::span<const double> class_weights,
                                   const Matrix<S>* mask, int batch_index = -1);

template <typename S>
void UpdateRunningStats(HeadParams<S>& params, const RowVec<S>& batch_mean,
                        const RowVec<S>& batch_var, int batch_size);

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename S>
struct AdamState {
  HeadGrads<S> m;
  HeadGrads<S> v;
  int64_t step = 0;

  static AdamState ZerosLike(const HeadParams<S>& p) {
    return {HeadGrads<S>::ZerosLike(p), HeadGrads<S>::ZerosLike(p), 0};
  }
};

/// Bias-corrected Adam on the trainable arrays.
template <typename S>
void AdamStep(HeadParams<S>& params, const HeadGrads<S>& grads,
              AdamState<S>& state, const AdamConfig& config = {});

/// Scalar Adam update, exposed for tests. Returns the new parameter value.
double AdamScalarStep(double param, double grad, double& m, double& v,
                      int64_t step, const AdamConfig& config = {});

/// PHED binary: magic "PHED", version u32 = 1, C u32, D u32, H u32, then
/// W1, b1, gamma, beta, running mean, running var, W2, b2 and the dropout
/// rate as float32 little-endian.
void WriteHead(const HeadParams<float>& params, const std::filesystem::path& path);
HeadParams<float> ReadHead(const std::filesystem::path& path);
std::vector<uint8_t> EncodeHead(const HeadParams<float>& params);
HeadParams<float> DecodeHead(std::span<const uint8_t> bytes);

}  // namespace pam50::head
