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

#include "pam50/train.h"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "pam50/errors.h"
#include "pam50/rng.h"

namespace pam50::head {
namespace {

template <typename S>
void CheckDataset(const Dataset<S>& d, int classes, const char* name) {
  if (d.size() == 0) {
    throw Error(ErrorCode::kInput, std::string(name) + " set is empty");
  }
  if (static_cast<size_t>(d.x.rows()) != d.size()) {
    throw Error(ErrorCode::kShape, std::string(name) + " set rows and labels differ");
  }
  for (int y : d.labels) {
    if (y < 0 || y >= classes) {
      throw Error(ErrorCode::kInput, std::string(name) + " label " +
                                         std::to_string(y) + " out of range");
    }
  }
}

}  // namespace

std::vector<double> ClassWeights(std::span<const int> labels, int classes) {
  std::vector<double> counts(classes, 0.0);
  for (int y : labels) {
    if (y < 0 || y >= classes) {
      throw Error(ErrorCode::kInput, "label " + std::to_string(y) + " out of range");
    }
    counts[y] += 1.0;
  }
  const double n = static_cast<double>(labels.size());
  std::vector<double> w(classes, 0.0);
  for (int c = 0; c < classes; ++c) {
    if (counts[c] > 0) w[c] = n / (classes * counts[c]);
  }
  return w;
}

template <typename S>
double Accuracy(const HeadParams<S>& params, const Dataset<S>& data) {
  if (data.size() == 0) return 0.0;
  const Matrix<S> probs = Forward(params, data.x, Mode::kEval);
  size_t correct = 0;
  for (size_t i = 0; i < data.size(); ++i) {
    Eigen::Index arg = 0;
    probs.row(static_cast<Eigen::Index>(i)).maxCoeff(&arg);
    if (arg == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

template <typename S>
TrainResult<S> TrainHead(const Dataset<S>& train, const Dataset<S>& val,
                         int classes, const TrainConfig& config) {
  CheckDataset(train, classes, "training");
  CheckDataset(val, classes, "validation");
  if (config.batch_size <= 0 || config.max_epochs <= 0 || config.patience < 0 ||
      !(config.learning_rate > 0)) {
    throw Error(ErrorCode::kParameter, "invalid training configuration");
  }
  std::vector<double> weights = config.class_weights;
  if (weights.empty()) weights = ClassWeights(train.labels, classes);
  if (static_cast<int>(weights.size()) != classes) {
    throw Error(ErrorCode::kParameter, "class weight count does not match class count");
  }

  TrainResult<S> result;
  HeadParams<S> params = HeadParams<S>::Init(static_cast<int>(train.x.cols()),
                                             config.hidden, classes,
                                             config.dropout_rate, config.seed);
  AdamState<S> adam = AdamState<S>::ZerosLike(params);
  Rng dropout_rng(DeriveSeed(config.seed, "train_dropout"));
  Rng jitter_rng(DeriveSeed(config.seed, "train_jitter"));

  const auto n = static_cast<Eigen::Index>(train.size());
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);

  // Batch boundaries; a trailing single row is folded into the previous
  // batch because batch statistics of one row are degenerate.
  std::vector<Eigen::Index> bounds;
  for (Eigen::Index b = 0; b < n; b += config.batch_size) bounds.push_back(b);
  if (bounds.size() > 1 && n - bounds.back() == 1) bounds.pop_back();
  bounds.push_back(n);

  double best_acc = -1.0;
  int wait = 0;
  Matrix<S> xb;
  std::vector<int> yb;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    Rng shuffle_rng(DeriveSeed(config.seed, "train_shuffle", static_cast<uint64_t>(epoch)));
    shuffle_rng.Shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    for (size_t b = 0; b + 1 < bounds.size(); ++b) {
      const Eigen::Index lo = bounds[b];
      const Eigen::Index rows = bounds[b + 1] - lo;
      xb.resize(rows, train.x.cols());
      yb.resize(rows);
      for (Eigen::Index r = 0; r < rows; ++r) {
        xb.row(r) = train.x.row(order[lo + r]);
        yb[r] = train.labels[order[lo + r]];
      }
      if (config.feature_jitter > 0) {
        for (Eigen::Index k = 0; k < xb.size(); ++k) {
          xb.data()[k] += static_cast<S>(jitter_rng.Normal() * config.feature_jitter);
        }
      }
      const Matrix<S> mask = SampleDropoutMask<S>(static_cast<int>(rows), params.hidden(),
                                                  params.dropout_rate, dropout_rng);
      auto lg = LossAndGrads(params, xb, yb, weights, &mask, static_cast<int>(b));
      AdamStep(params, lg.grads, adam, config.adam);
      UpdateRunningStats(params, lg.batch_mean, lg.batch_var, static_cast<int>(rows));
      loss_sum += static_cast<double>(lg.loss) * static_cast<double>(rows);
    }
    const double acc = Accuracy(params, val);
    result.history.push_back({epoch, loss_sum / static_cast<double>(n), acc});
    if (acc > best_acc) {
      best_acc = acc;
      result.params = params;
      result.best_epoch = epoch;
      wait = 0;
    } else if (++wait >= config.patience) {
      break;
    }
  }
  return result;
}

void WriteHistory(std::ostream& out, const std::vector<EpochRecord>& history) {
  out << "epoch,train_loss,val_accuracy\n";
  char buf[96];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f\n", r.epoch, r.train_loss,
                  r.val_accuracy);
    out << buf;
  }
}

template double Accuracy(const HeadParams<float>&, const Dataset<float>&);
template double Accuracy(const HeadParams<double>&, const Dataset<double>&);
template TrainResult<float> TrainHead(const Dataset<float>&, const Dataset<float>&,
                                      int, const TrainConfig&);
template TrainResult<double> TrainHead(const Dataset<double>&, const Dataset<double>&,
                                       int, const TrainConfig&);

}  // namespace pam50::head
