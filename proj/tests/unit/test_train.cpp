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

#include <sstream>

#include "pam50/errors.h"
#include "pam50/rng.h"
#include "pam50/train.h"

namespace pam50::head {
namespace {

// Gaussian clusters around well-separated class centres.
Dataset<float> Clusters(int per_class, int dim, int classes, double spread, uint64_t seed) {
  Rng rng(seed);
  Rng centre_rng(1234);
  std::vector<std::vector<double>> centres(classes, std::vector<double>(dim));
  for (auto& c : centres) {
    for (double& v : c) v = 3.0 * centre_rng.Normal();
  }
  Dataset<float> d;
  d.x.resize(per_class * classes, dim);
  for (int k = 0; k < classes; ++k) {
    for (int i = 0; i < per_class; ++i) {
      const int row = k * per_class + i;
      d.labels.push_back(k);
      for (int j = 0; j < dim; ++j) d.x(row, j) = static_cast<float>(centres[k][j] + spread * rng.Normal());
    }
  }
  return d;
}

TrainConfig SmallConfig() {
  TrainConfig c;
  c.hidden = 32;
  c.batch_size = 16;
  c.learning_rate = 3e-3;
  c.max_epochs = 40;
  c.patience = 5;
  c.seed = 7;
  return c;
}

TEST(ClassWeights, InverseFrequency) {
  const std::vector<int> labels = {0, 0, 0, 1};
  const auto w = ClassWeights(labels, 2);
  EXPECT_NEAR(w[0], 4.0 / 6.0, 1e-12);
  EXPECT_NEAR(w[1], 2.0, 1e-12);
  const auto with_absent = ClassWeights(labels, 3);
  EXPECT_EQ(with_absent[2], 0.0);
  EXPECT_NEAR(with_absent[0], 4.0 / 9.0, 1e-12);
}

TEST(ClassWeights, BalancedLabelsGiveUnitWeights) {
  const std::vector<int> labels = {0, 1, 2, 3, 3, 2, 1, 0};
  for (double w : ClassWeights(labels, 4)) EXPECT_DOUBLE_EQ(w, 1.0);
}

TEST(TrainHead, SeparableClustersAreLearned) {
  const auto train = Clusters(40, 24, 4, 0.5, 1);
  const auto val = Clusters(20, 24, 4, 0.5, 2);
  const auto result = TrainHead(train, val, 4, SmallConfig());
  EXPECT_GE(Accuracy(result.params, val), 0.95);
}

TEST(TrainHead, ReturnsBestEpochParameters) {
  const auto train = Clusters(20, 8, 3, 2.5, 3);
  const auto val = Clusters(20, 8, 3, 2.5, 4);
  const auto result = TrainHead(train, val, 3, SmallConfig());
  ASSERT_GE(result.best_epoch, 1);
  double best = -1;
  for (const auto& e : result.history) best = std::max(best, e.val_accuracy);
  EXPECT_EQ(result.history[result.best_epoch - 1].val_accuracy, best);
  EXPECT_DOUBLE_EQ(Accuracy(result.params, val), best);
}

TEST(TrainHead, ZeroPatienceStopsAtFirstStall) {
  const auto train = Clusters(20, 8, 3, 2.5, 5);
  const auto val = Clusters(20, 8, 3, 2.5, 6);
  auto config = SmallConfig();
  config.patience = 0;
  config.learning_rate = 1e-4;
  const auto result = TrainHead(train, val, 3, config);
  const auto& h = result.history;
  double best = h[0].val_accuracy;
  for (size_t i = 1; i + 1 < h.size(); ++i) {
    EXPECT_GT(h[i].val_accuracy, best) << "epoch " << h[i].epoch;
    best = h[i].val_accuracy;
  }
  if (h.size() > 1 && static_cast<int>(h.size()) < config.max_epochs) {
    EXPECT_LE(h.back().val_accuracy, best);
  }
}

TEST(TrainHead, PatienceBoundsStalledEpochs) {
  const auto train = Clusters(20, 8, 3, 2.5, 7);
  const auto val = Clusters(20, 8, 3, 2.5, 8);
  auto config = SmallConfig();
  config.patience = 3;
  const auto result = TrainHead(train, val, 3, config);
  const int epochs = static_cast<int>(result.history.size());
  // Three consecutive epochs without improvement end the run.
  EXPECT_TRUE(epochs == config.max_epochs || epochs == result.best_epoch + config.patience)
      << epochs << " epochs, best " << result.best_epoch;
}

TEST(TrainHead, DeterministicForSeed) {
  const auto train = Clusters(10, 6, 2, 1.0, 9);
  const auto val = Clusters(10, 6, 2, 1.0, 10);
  auto config = SmallConfig();
  config.max_epochs = 5;
  const auto a = TrainHead(train, val, 2, config);
  const auto b = TrainHead(train, val, 2, config);
  EXPECT_EQ(a.params, b.params);
  config.seed = 8;
  EXPECT_FALSE(TrainHead(train, val, 2, config).params == a.params);
}

TEST(TrainHead, RejectsBadInputs) {
  const auto train = Clusters(5, 4, 2, 1.0, 1);
  Dataset<float> empty;
  empty.x.resize(0, 4);
  EXPECT_THROW(TrainHead(train, empty, 2, SmallConfig()), Error);
  auto bad = train;
  bad.labels[0] = 2;
  EXPECT_THROW(TrainHead(bad, train, 2, SmallConfig()), Error);
}

TEST(History, CsvHeader) {
  std::ostringstream out;
  WriteHistory(out, {{1, 0.5, 0.25}});
  EXPECT_EQ(out.str().substr(0, out.str().find('\n')), "epoch,train_loss,val_accuracy");
}

}  // namespace
}  // namespace pam50::head
