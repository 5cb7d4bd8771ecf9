// Copyright 2026 The pushrec Authors
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

#ifndef PUSHREC_POLICY_H_
#define PUSHREC_POLICY_H_

// Causal-transformer recovery policy with hand-written reverse mode.
//
// Activations are row-major in the math sense: a batch of N histories is a
// (N*H) x F matrix whose rows n*H .. n*H+H-1 hold sample n oldest first.
// Weights are stored out x in, so a linear layer is Y = X W^T + 1 b^T.
// Everything is templated on the scalar: training runs in float, gradient
// checks in double.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace pushrec {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

struct NetConfig {
  int frame_dim = 22;
  int embed_dim = 64;
  int layers = 2;
  int heads = 2;
  int ff_dim = 0;  // 0 selects 4 * embed_dim
  int history = 16;
  int modes = 4;
  int mode_dim = 16;
  int contacts = 4;
  int action_dim = 4;
  int decoder_hidden1 = 256;
  int decoder_hidden2 = 128;
  double tau_start = 1.0;
  double tau_end = 0.1;

  void Validate() const;
  int head_dim() const { return embed_dim / heads; }
  int ffn() const { return ff_dim > 0 ? ff_dim : 4 * embed_dim; }
  int decoder_input() const { return embed_dim + mode_dim + contacts; }
};

template <typename Scalar>
struct BlockParams {
  Mat<Scalar> ln1_gain, ln1_bias;
  Mat<Scalar> w_query, b_query, w_key, b_key, w_value, b_value, w_out, b_out;
  Mat<Scalar> ln2_gain, ln2_bias;
  Mat<Scalar> w_ff1, b_ff1, w_ff2, b_ff2;
};

template <typename Scalar>
struct NamedTensor {
  std::string name;
  Mat<Scalar>* tensor;
};

template <typename Scalar>
struct ConstNamedTensor {
  std::string name;
  const Mat<Scalar>* tensor;
};

template <typename Scalar>
struct PolicyParams {
  Mat<Scalar> w_in, b_in, pos;
  std::vector<BlockParams<Scalar>> blocks;
  Mat<Scalar> w_mode, b_mode, mode_embed;
  Mat<Scalar> w_aff, b_aff;
  Mat<Scalar> w_dec1, b_dec1, w_dec2, b_dec2, w_dec3, b_dec3;
  Mat<Scalar> w_value, b_value;
  Mat<Scalar> log_std;

  // All tensors with the documented shapes, zero-filled.
  static PolicyParams Zeros(const NetConfig& cfg);

  // Fixed order; names are stable and used by checkpoints.
  std::vector<NamedTensor<Scalar>> Tensors();
  std::vector<ConstNamedTensor<Scalar>> Tensors() const;

  std::int64_t ParameterCount() const;
  void SetZero();
  bool AllFinite() const;

  template <typename Other>
  PolicyParams<Other> Cast() const;
};

// Name and shape of every tensor for a config, in Tensors() order.
struct TensorShape {
  std::string name;
  int rows;
  int cols;
};
std::vector<TensorShape> ParameterCensus(const NetConfig& cfg);

// Fan-in uniform weights, zero biases, unit layer-norm gains, log-std -0.5,
// final decoder layer scaled by 0.01. The float and double versions for a
// seed agree up to rounding.
template <typename Scalar>
PolicyParams<Scalar> InitParams(const NetConfig& cfg, std::uint64_t seed);

enum class ModeSelect { kSoft, kArgmax };

template <typename Scalar>
struct BlockCache {
  Mat<Scalar> x_in, ln1_hat, ln1_rstd, y1, q, k, v, attn, o;
  Mat<Scalar> x_mid, ln2_hat, ln2_rstd, y2, u, g;
};

// Everything the backward pass needs, plus the outputs.
template <typename Scalar>
struct ForwardCache {
  int batch = 0;
  ModeSelect select = ModeSelect::kSoft;
  Scalar tau = Scalar(1);
  std::vector<BlockCache<Scalar>> blocks;
  Mat<Scalar> final_out;   // (N*H) x d, block stack output
  Mat<Scalar> encoding;    // N x d, last row per sample
  Mat<Scalar> logits, probs, mixture;  // N x K, N x K, N x dz
  Mat<Scalar> affordance;  // N x Kc
  Mat<Scalar> dec_in, h1_pre, h1, h2_pre, h2;
  Mat<Scalar> mean;        // N x A
  Mat<Scalar> value;       // N x 1
};

// Runs the full network on a stacked batch of normalized histories.
template <typename Scalar>
void Forward(const PolicyParams<Scalar>& params, const NetConfig& cfg,
             const Mat<Scalar>& histories, Scalar tau, ModeSelect select,
             ForwardCache<Scalar>& cache);

// Upstream gradients of a scalar loss with respect to network outputs.
template <typename Scalar>
struct OutputGrads {
  Mat<Scalar> mean;   // N x A
  Mat<Scalar> value;  // N x 1
  Mat<Scalar> probs;  // N x K
};

// Accumulates parameter gradients into grads. Requires a soft-mode cache.
template <typename Scalar>
void Backward(const PolicyParams<Scalar>& params, const NetConfig& cfg,
              const ForwardCache<Scalar>& cache, const Mat<Scalar>& histories,
              const OutputGrads<Scalar>& upstream,
              PolicyParams<Scalar>& grads);

// ---- Pieces exposed for direct testing ----------------------------------

// Masked softmax(Q K^T / sqrt(dk)) with dk = Q.cols(); zero above diagonal.
template <typename Scalar>
Mat<Scalar> AttentionWeights(const Mat<Scalar>& q, const Mat<Scalar>& k);

// One pre-norm block applied to a single H x d sequence.
template <typename Scalar>
Mat<Scalar> AttentionBlock(const BlockParams<Scalar>& block,
                           const NetConfig& cfg, const Mat<Scalar>& x);

// Per-timestep encoder outputs (H x d) for a single H x F history.
template <typename Scalar>
Mat<Scalar> EncodeSequence(const PolicyParams<Scalar>& params,
                           const NetConfig& cfg, const Mat<Scalar>& history);

// Row-wise softmax(logits / tau). Throws std::invalid_argument if tau <= 0.
template <typename Scalar>
Mat<Scalar> ModePosterior(const Mat<Scalar>& logits, Scalar tau);

// Lowest index among maxima.
template <typename Scalar>
int ArgmaxMode(const Eigen::Ref<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>& p);

template <typename Scalar>
Mat<Scalar> OneHotModes(const Mat<Scalar>& probs);

// Gaussian log-density of pre-clip samples (rows) under mean rows.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> GaussianLogProb(
    const Mat<Scalar>& sample, const Mat<Scalar>& mean,
    const Mat<Scalar>& log_std);

template <typename Scalar>
Scalar GaussianEntropy(const Mat<Scalar>& log_std);

template <typename Scalar>
struct SampledAction {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> action;    // clipped to [-1, 1]
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> pre_clip;  // raw Gaussian draw
  Scalar log_prob = Scalar(0);  // density of pre_clip
};

template <typename Scalar>
SampledAction<Scalar> SampleAction(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& mean,
    const Mat<Scalar>& log_std, std::mt19937_64& rng);

}  // namespace pushrec

#endif  // PUSHREC_POLICY_H_
