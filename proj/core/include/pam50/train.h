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

/// @file train.h
/// @brief Mini-batch training of the classification head with early stopping.
///
/// Each epoch shuffles the training rows with a stream derived from the
/// config seed and the epoch number, runs Adam over mini-batches of the
/// weighted cross-entropy, then measures patch-level accuracy on the
/// validation rows in eval mode. Training stops once `patience` consecutive
/// epochs fail to improve the best validation accuracy, or at `max_epochs`;
/// the parameters of the best epoch are returned.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "pam50/head.h"

namespace pam50::head {

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 64;
  int max_epochs = 100;
  int patience = 10;
  int hidden = kDefaultHidden;
  double dropout_rate = 0.5;
  /// Empty means N / (C * N_c) from the training labels.
  std::vector<double> class_weights;
  /// Standard deviation of Gaussian noise added to training embeddings
  /// (0 disables the jitter).
  double feature_jitter = 0.0;
  uint64_t seed = 0;
  AdamConfig adam;
};

template <typename S>
struct Dataset {
  Matrix<S> x;              // one embedding per row
  std::vector<int> labels;  // one label per row

  size_t size() const { return labels.size(); }
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

template <typename S>
struct TrainResult {
  HeadParams<S> params;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
};

/// w_c = N / (C * N_c). Classes absent from `labels` get weight 0.
std::vector<double> ClassWeights(std::span<const int> labels, int classes);

/// Fraction of rows whose eval-mode argmax equals the label.
template <typename S>
double Accuracy(const HeadParams<S>& params, const Dataset<S>& data);

/// Throws `Error(kInput)` when either set is empty or a label is outside
/// [0, classes).
template <typename S>
TrainResult<S> TrainHead(const Dataset<S>& train, const Dataset<S>& val,
                         int classes, const TrainConfig& config);

/// CSV `epoch,train_loss,val_accuracy`.
void WriteHistory(std::ostream& out, const std::vector<EpochRecord>& history);

}  // namespace pam50::head
