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

#include "pam50/head.h"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "pam50/errors.h"

namespace pam50::head {
namespace {

template <typename S>
std::span<S> Flat(Matrix<S>& m) {
  return {m.data(), static_cast<size_t>(m.size())};
}
template <typename S>
std::span<S> Flat(RowVec<S>& m) {
  return {m.data(), static_cast<size_t>(m.size())};
}

template <typename S>
void CheckShapes(const HeadParams<S>& p, const Matrix<S>& x) {
  if (x.cols() != p.w1.rows()) {
    throw Error(ErrorCode::kShape,
                "input has " + std::to_string(x.cols()) + " columns, head expects " +
                    std::to_string(p.w1.rows()));
  }
}

template <typename S>
void SoftmaxRows(Matrix<S>& z) {
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    auto row = z.row(i);
    const S mx = row.maxCoeff();
    row = (row.array() - mx).exp();
    row /= row.sum();
  }
}

/// Shared forward pieces, kept for the backward pass.
template <typename S>
struct ForwardCache {
  Matrix<S> pre;     // X W1 + b1
  Matrix<S> xhat;    // normalized activations
  RowVec<S> mean;
  RowVec<S> var;
  RowVec<S> inv_std;
  Matrix<S> dropped;  // BN output after the mask
  Matrix<S> probs;
};

template <typename S>
ForwardCache<S> RunForward(const HeadParams<S>& p, const Matrix<S>& x,
                           bool use_batch_stats, const Matrix<S>* mask) {
  CheckShapes(p, x);
  ForwardCache<S> c;
  c.pre = x * p.w1;
  c.pre.rowwise() += p.b1;
  const Matrix<S> relu = c.pre.cwiseMax(S(0));
  if (use_batch_stats) {
    c.mean = relu.colwise().mean();
    c.var = (relu.rowwise() - c.mean).array().square().colwise().mean();
  } else {
    c.mean = p.bn_running_mean;
    c.var = p.bn_running_var;
  }
  c.inv_std = (c.var.array() + S(kBnEps)).rsqrt();
  c.xhat = ((relu.rowwise() - c.mean).array().rowwise() * c.inv_std.array()).matrix();
  c.dropped = (c.xhat.array().rowwise() * p.bn_gamma.array()).matrix();
  c.dropped.rowwise() += p.bn_beta;
  if (mask != nullptr) {
    if (mask->rows() != x.rows() || mask->cols() != p.w1.cols()) {
      throw Error(ErrorCode::kShape, "dropout mask shape mismatch");
    }
    c.dropped = c.dropped.cwiseProduct(*mask);
  }
  c.probs = c.dropped * p.w2;
  c.probs.rowwise() += p.b2;
  SoftmaxRows(c.probs);
  return c;
}

template <typename S>
void UniformFill(Matrix<S>& m, double bound, Rng& rng) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = static_cast<S>(rng.Uniform(-bound, bound));
  }
}
template <typename S>
void UniformFill(RowVec<S>& m, double bound, Rng& rng) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = static_cast<S>(rng.Uniform(-bound, bound));
  }
}

}  // namespace

template <typename S>
HeadParams<S> HeadParams<S>::Init(int input_dim, int hidden, int classes,
                                  double dropout_rate, uint64_t seed) {
  if (input_dim <= 0 || hidden <= 0 || classes <= 0) {
    throw Error(ErrorCode::kParameter, "head dimensions must be positive");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw Error(ErrorCode::kParameter, "dropout rate must be in [0, 1)");
  }
  Rng rng(DeriveSeed(seed, "head_init"));
  HeadParams p;
  p.w1.resize(input_dim, hidden);
  p.b1.resize(hidden);
  p.w2.resize(hidden, classes);
  p.b2.resize(classes);
  const double bound1 = 1.0 / std::sqrt(static_cast<double>(input_dim));
  const double bound2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  UniformFill(p.w1, bound1, rng);
  UniformFill(p.b1, bound1, rng);
  UniformFill(p.w2, bound2, rng);
  UniformFill(p.b2, bound2, rng);
  p.bn_gamma = RowVec<S>::Ones(hidden);
  p.bn_beta = RowVec<S>::Zero(hidden);
  p.bn_running_mean = RowVec<S>::Zero(hidden);
  p.bn_running_var = RowVec<S>::Ones(hidden);
  p.dropout_rate = dropout_rate;
  return p;
}

template <typename S>
HeadGrads<S> HeadGrads<S>::ZerosLike(const HeadParams<S>& p) {
  HeadGrads g;
  g.w1 = Matrix<S>::Zero(p.w1.rows(), p.w1.cols());
  g.b1 = RowVec<S>::Zero(p.b1.size());
  g.bn_gamma = RowVec<S>::Zero(p.bn_gamma.size());
  g.bn_beta = RowVec<S>::Zero(p.bn_beta.size());
  g.w2 = Matrix<S>::Zero(p.w2.rows(), p.w2.cols());
  g.b2 = RowVec<S>::Zero(p.b2.size());
  return g;
}

template <typename S>
std::array<std::span<S>, 6> Trainables(HeadParams<S>& p) {
  return {Flat(p.w1), Flat(p.b1), Flat(p.bn_gamma),
          Flat(p.bn_beta), Flat(p.w2), Flat(p.b2)};
}

template <typename S>
std::array<std::span<S>, 6> Trainables(HeadGrads<S>& g) {
  return {Flat(g.w1), Flat(g.b1), Flat(g.bn_gamma),
          Flat(g.bn_beta), Flat(g.w2), Flat(g.b2)};
}

template <typename S>
Matrix<S> SampleDropoutMask(int rows, int cols, double rate, Rng& rng) {
  Matrix<S> mask(rows, cols);
  if (rate <= 0.0) {
    mask.setOnes();
    return mask;
  }
  const S keep_scale = static_cast<S>(1.0 / (1.0 - rate));
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = rng.Uniform() < rate ? S(0) : keep_scale;
  }
  return mask;
}

template <typename S>
Matrix<S> ForwardWithMask(const HeadParams<S>& params, const Matrix<S>& x,
                          bool use_batch_stats, const Matrix<S>* mask) {
  return RunForward(params, x, use_batch_stats, mask).probs;
}

template <typename S>
Matrix<S> Forward(const HeadParams<S>& params, const Matrix<S>& x, Mode mode,
                  Rng* rng) {
  CheckShapes(params, x);
  if (mode == Mode::kEval || params.dropout_rate <= 0.0) {
    const Matrix<S>* no_mask = nullptr;
    return RunForward(params, x, mode == Mode::kTrain, no_mask).probs;
  }
  if (rng == nullptr) {
    throw Error(ErrorCode::kParameter, "stochastic forward mode needs an rng");
  }
  const Matrix<S> mask = SampleDropoutMask<S>(static_cast<int>(x.rows()),
                                              params.hidden(), params.dropout_rate, *rng);
  return RunForward(params, x, mode == Mode::kTrain, &mask).probs;
}

template <typename S>
LossAndGradsResult<S> LossAndGrads(const HeadParams<S>& params,
                                   const Matrix<S>& x, std::span<const int> labels,
                                   std::span<const double> class_weights,
                                   const Matrix<S>* mask, int batch_index) {
  const auto b = static_cast<Eigen::Index>(labels.size());
  if (x.rows() != b || b == 0) {
    throw Error(ErrorCode::kShape, "batch has " + std::to_string(x.rows()) +
                                       " rows and " + std::to_string(b) + " labels");
  }
  const int classes = params.classes();
  if (static_cast<int>(class_weights.size()) != classes) {
    throw Error(ErrorCode::kShape, "class weight count does not match class count");
  }
  ForwardCache<S> c = RunForward(params, x, /*use_batch_stats=*/true, mask);

  LossAndGradsResult<S> r;
  const S inv_b = S(1) / static_cast<S>(b);
  Matrix<S> d_logits = c.probs;
  S loss = 0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= classes) {
      throw Error(ErrorCode::kInput, "label " + std::to_string(y) + " out of range");
    }
    const S w = static_cast<S>(class_weights[y]);
    loss -= w * std::log(c.probs(i, y));
    d_logits(i, y) -= S(1);
    d_logits.row(i) *= w * inv_b;
  }
  r.loss = loss * inv_b;
  if (!std::isfinite(static_cast<double>(r.loss))) {
    throw Error(ErrorCode::kNumeric,
                "non-finite loss in batch " + std::to_string(batch_index));
  }

  HeadGrads<S>& g = r.grads;
  g.w2 = c.dropped.transpose() * d_logits;
  g.b2 = d_logits.colwise().sum();
  Matrix<S> d_bn = d_logits * params.w2.transpose();
  if (mask != nullptr) d_bn = d_bn.cwiseProduct(*mask);
  g.bn_gamma = (d_bn.cwiseProduct(c.xhat)).colwise().sum();
  g.bn_beta = d_bn.colwise().sum();

  // Batch-norm backward with batch statistics.
  const Matrix<S> d_xhat = (d_bn.array().rowwise() * params.bn_gamma.array()).matrix();
  const RowVec<S> sum_dxhat = d_xhat.colwise().sum();
  const RowVec<S> sum_dxhat_xhat = d_xhat.cwiseProduct(c.xhat).colwise().sum();
  Matrix<S> d_relu = (d_xhat * static_cast<S>(b)).rowwise() - sum_dxhat;
  d_relu -= (c.xhat.array().rowwise() * sum_dxhat_xhat.array()).matrix();
  d_relu = (d_relu.array().rowwise() * (c.inv_std.array() * inv_b)).matrix();

  const Matrix<S> d_pre =
      d_relu.cwiseProduct((c.pre.array() > S(0)).template cast<S>().matrix());
  g.w1 = x.transpose() * d_pre;
  g.b1 = d_pre.colwise().sum();

  r.batch_mean = c.mean;
  r.batch_var = c.var;
  return r;
}

template <typename S>
void UpdateRunningStats(HeadParams<S>& params, const RowVec<S>& batch_mean,
                        const RowVec<S>& batch_var, int batch_size) {
  const S m = static_cast<S>(kBnMomentum);
  const S correction =
      batch_size > 1 ? static_cast<S>(batch_size) / static_cast<S>(batch_size - 1) : S(1);
  params.bn_running_mean = (S(1) - m) * params.bn_running_mean + m * batch_mean;
  params.bn_running_var =
      (S(1) - m) * params.bn_running_var + (m * correction) * batch_var;
}

double AdamScalarStep(double param, double grad, double& m, double& v,
                      int64_t step, const AdamConfig& config) {
  m = config.beta1 * m + (1.0 - config.beta1) * grad;
  v = config.beta2 * v + (1.0 - config.beta2) * grad * grad;
  const double m_hat = m / (1.0 - std::pow(config.beta1, static_cast<double>(step)));
  const double v_hat = v / (1.0 - std::pow(config.beta2, static_cast<double>(step)));
  return param - config.learning_rate * m_hat / (std::sqrt(v_hat) + config.eps);
}

template <typename S>
void AdamStep(HeadParams<S>& params, const HeadGrads<S>& grads,
              AdamState<S>& state, const AdamConfig& config) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  const S b1 = static_cast<S>(config.beta1);
  const S b2 = static_cast<S>(config.beta2);
  const S lr = static_cast<S>(config.learning_rate);
  const S eps = static_cast<S>(config.eps);
  const S inv_bc1 = static_cast<S>(1.0 / bc1);
  const S inv_bc2 = static_cast<S>(1.0 / bc2);

  auto p = Trainables(params);
  auto g = Trainables(const_cast<HeadGrads<S>&>(grads));
  auto m = Trainables(state.m);
  auto v = Trainables(state.v);
  for (size_t k = 0; k < p.size(); ++k) {
    for (size_t i = 0; i < p[k].size(); ++i) {
      const S gi = g[k][i];
      m[k][i] = b1 * m[k][i] + (S(1) - b1) * gi;
      v[k][i] = b2 * v[k][i] + (S(1) - b2) * gi * gi;
      const S m_hat = m[k][i] * inv_bc1;
      const S v_hat = v[k][i] * inv_bc2;
      p[k][i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

namespace {

constexpr char kHeadMagic[4] = {'P', 'H', 'E', 'D'};
constexpr uint32_t kHeadVersion = 1;

void PutU32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}
uint32_t GetU32(const uint8_t* p) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
  return v;
}
void PutFloats(std::vector<uint8_t>& out, const float* data, size_t n) {
  for (size_t i = 0; i < n; ++i) PutU32(out, std::bit_cast<uint32_t>(data[i]));
}

}  // namespace

std::vector<uint8_t> EncodeHead(const HeadParams<float>& p) {
  std::vector<uint8_t> out(std::begin(kHeadMagic), std::end(kHeadMagic));
  PutU32(out, kHeadVersion);
  PutU32(out, static_cast<uint32_t>(p.classes()));
  PutU32(out, static_cast<uint32_t>(p.input_dim()));
  PutU32(out, static_cast<uint32_t>(p.hidden()));
  PutFloats(out, p.w1.data(), p.w1.size());
  PutFloats(out, p.b1.data(), p.b1.size());
  PutFloats(out, p.bn_gamma.data(), p.bn_gamma.size());
  PutFloats(out, p.bn_beta.data(), p.bn_beta.size());
  PutFloats(out, p.bn_running_mean.data(), p.bn_running_mean.size());
  PutFloats(out, p.bn_running_var.data(), p.bn_running_var.size());
  PutFloats(out, p.w2.data(), p.w2.size());
  PutFloats(out, p.b2.data(), p.b2.size());
  const float rate = static_cast<float>(p.dropout_rate);
  PutFloats(out, &rate, 1);
  return out;
}

HeadParams<float> DecodeHead(std::span<const uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kHeadMagic, 4) != 0) {
    throw Error(ErrorCode::kBadMagic, "not a PHED file");
  }
  if (bytes.size() < 20) throw Error(ErrorCode::kTruncated, "PHED header truncated");
  const uint8_t* p = bytes.data();
  if (GetU32(p + 4) != kHeadVersion) {
    throw Error(ErrorCode::kVersionMismatch, "unsupported PHED version");
  }
  const uint32_t c = GetU32(p + 8);
  const uint32_t d = GetU32(p + 12);
  const uint32_t h = GetU32(p + 16);
  if (c == 0 || d == 0 || h == 0) throw Error(ErrorCode::kSizeMismatch, "zero dimension");
  const uint64_t floats = uint64_t{d} * h + 5ull * h + uint64_t{h} * c + c + 1;
  if (bytes.size() - 20 < floats * 4) {
    throw Error(ErrorCode::kTruncated, "PHED payload truncated");
  }
  if (bytes.size() - 20 != floats * 4) {
    throw Error(ErrorCode::kSizeMismatch, "PHED has trailing bytes");
  }
  size_t off = 20;
  auto read = [&](float* dst, size_t n) {
    for (size_t i = 0; i < n; ++i, off += 4) {
      dst[i] = std::bit_cast<float>(GetU32(p + off));
      if (!std::isfinite(dst[i])) throw Error(ErrorCode::kNonFinite, "non-finite head weight");
    }
  };
  HeadParams<float> hp;
  hp.w1.resize(d, h);
  hp.b1.resize(h);
  hp.bn_gamma.resize(h);
  hp.bn_beta.resize(h);
  hp.bn_running_mean.resize(h);
  hp.bn_running_var.resize(h);
  hp.w2.resize(h, c);
  hp.b2.resize(c);
  read(hp.w1.data(), hp.w1.size());
  read(hp.b1.data(), h);
  read(hp.bn_gamma.data(), h);
  read(hp.bn_beta.data(), h);
  read(hp.bn_running_mean.data(), h);
  read(hp.bn_running_var.data(), h);
  read(hp.w2.data(), hp.w2.size());
  read(hp.b2.data(), c);
  float rate = 0;
  read(&rate, 1);
  hp.dropout_rate = rate;
  return hp;
}

void WriteHead(const HeadParams<float>& params, const std::filesystem::path& path) {
  const auto bytes = EncodeHead(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

HeadParams<float> ReadHead(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  const std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return DecodeHead(bytes);
}

#define PAM50_INSTANTIATE_HEAD(S)                                                \
  template struct HeadParams<S>;                                                 \
  template struct HeadGrads<S>;                                                  \
  template std::array<std::span<S>, 6> Trainables(HeadParams<S>&);               \
  template std::array<std::span<S>, 6> Trainables(HeadGrads<S>&);                \
  template Matrix<S> SampleDropoutMask<S>(int, int, double, Rng&);               \
  template Matrix<S> Forward(const HeadParams<S>&, const Matrix<S>&, Mode, Rng*); \
  template Matrix<S> ForwardWithMask(const HeadParams<S>&, const Matrix<S>&,     \
                                     bool, const Matrix<S>*);                    \
  template LossAndGradsResult<S> LossAndGrads(                                   \
      const HeadParams<S>&, const Matrix<S>&, std::span<const int>,              \
      std::span<const double>, const Matrix<S>*, int);                           \
  template void UpdateRunningStats(HeadParams<S>&, const RowVec<S>&,             \
                                   const RowVec<S>&, int);                       \
  template void AdamStep(HeadParams<S>&, const HeadGrads<S>&, AdamState<S>&,     \
                         const AdamConfig&);

PAM50_INSTANTIATE_HEAD(float)
PAM50_INSTANTIATE_HEAD(double)

#undef PAM50_INSTANTIATE_HEAD

}  // namespace pam50::head
