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

#ifndef PUSHREC_LEARN_H_
#define PUSHREC_LEARN_H_

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pushrec/env.h"
#include "pushrec/features.h"
#include "pushrec/policy.h"

namespace pushrec {

struct Config;

struct PpoConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip = 0.2;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double mode_coef = 0.1;
  double learning_rate = 3e-4;
  int epochs = 5;
  int minibatch = 128;
  int rollout_length = 48;
  int num_envs = 16;
  std::int64_t total_steps = 300000;
  double max_grad_norm = 0.5;
  // Mode utilization floor as a multiple of 1/K (u_min = util_fraction / K).
  double util_fraction = 0.4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int threads = 1;

  void Validate(int modes) const;
  double util_min(int modes) const { return util_fraction / modes; }
};

// ---- Advantage estimation -----------------------------------------------

enum class StepEnd : std::uint8_t { kNone, kTerminated, kTruncated };

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

// values has T + 1 entries (the last is the bootstrap for step T-1).
// Terminated steps bootstrap with 0, truncated steps with
// truncation_values[t]; both cut the recursion. Throws on NaN input.
GaeResult ComputeGae(std::span<const double> rewards,
                     std::span<const double> values,
                     std::span<const StepEnd> ends, double gamma,
                     double lambda,
                     std::span<const double> truncation_values = {});

// Zero mean, unit population std. Sizes below 2 are left unchanged.
void StandardizeAdvantages(Eigen::Ref<Eigen::VectorXd> advantages);

// ---- Losses --------------------------------------------------------------

template <typename Scalar>
struct ModeLossResult {
  Scalar value = Scalar(0);
  Scalar entropy = Scalar(0);  // mean per-sample posterior entropy
  Scalar penalty = Scalar(0);  // utilization hinge
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> usage;  // batch mean posterior
  Mat<Scalar> grad;  // d value / d probs, N x K
};

template <typename Scalar>
ModeLossResult<Scalar> ModeLoss(const Mat<Scalar>& probs, Scalar util_min);

// min(r A, clip(r, 1 - eps, 1 + eps) A).
double ClippedObjective(double ratio, double advantage, double clip);

template <typename Scalar>
struct Minibatch {
  Mat<Scalar> histories;    // (N*H) x F, normalized
  Mat<Scalar> pre_actions;  // N x A, pre-clip samples
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> old_log_prob;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> advantages;  // standardized
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> returns;

  int size() const { return static_cast<int>(old_log_prob.size()); }
};

struct LossWeights {
  double clip = 0.2;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double mode_coef = 0.1;
  double util_min = 0.1;
};

struct LossStats {
  double total = 0.0;
  double ppo = 0.0;        // surrogate + value + entropy terms
  double surrogate = 0.0;  // -E[min(r A, clip(r) A)]
  double value_loss = 0.0;
  double entropy = 0.0;    // Gaussian action entropy
  double mode = 0.0;
  double mode_entropy = 0.0;
  double mode_penalty = 0.0;
  double ratio_mean = 0.0;
  double clip_fraction = 0.0;
  Eigen::VectorXd usage;
};

// Total loss PPO + mode_coef * mode. When grads is non-null it is zeroed
// and filled with the gradient of the total.
template <typename Scalar>
LossStats LossAndGradient(const PolicyParams<Scalar>& params,
                          const NetConfig& cfg, const Minibatch<Scalar>& mb,
                          const LossWeights& weights, Scalar tau,
                          PolicyParams<Scalar>* grads);

// tau = start + (end - start) * step / total, clamped to the schedule.
double AnnealTau(std::int64_t step, std::int64_t total, double start,
                 double end);

// ---- Optimization --------------------------------------------------------

struct AdamState {
  PolicyParams<float> m;
  PolicyParams<float> v;
  std::int64_t step = 0;
};

AdamState MakeAdamState(const NetConfig& cfg);

// Scales grads so that the global L2 norm is at most max_norm. Returns the
// norm before clipping.
double ClipGradNorm(PolicyParams<float>& grads, double max_norm);
double GlobalNorm(const PolicyParams<float>& grads);

void AdamStep(PolicyParams<float>& params, const PolicyParams<float>& grads,
              AdamState& state, const PpoConfig& cfg);

// ---- Rollouts ------------------------------------------------------------

struct EpisodeSummary {
  double episode_return = 0.0;
  int length = 0;
  bool terminated = false;
  double push_force = 0.0;
};

// One environment with its causal history, exclusively owned by a worker.
class EnvWorker {
 public:
  EnvWorker(const EnvParams& params, const RewardConfig& reward,
            const PushRanges& pushes, double friction_min,
            double friction_max, int history, std::uint64_t seed);

  void StartEpisode();

  const EnvParams& params() const { return episode_params_; }
  const RewardConfig& reward() const { return reward_; }
  EnvState& state() { return state_; }
  HistoryBuffer& history() { return history_; }
  // Raw frame of the episode start.
  const ObservationFrame& start_frame() const { return start_frame_; }
  std::mt19937_64& rng() { return rng_; }

  double episode_return = 0.0;
  int episode_length = 0;
  bool start_frame_recorded = false;

 private:
  EnvParams base_params_;
  EnvParams episode_params_;
  RewardConfig reward_;
  PushRanges pushes_;
  double friction_min_;
  double friction_max_;
  std::mt19937_64 rng_;
  EnvState state_;
  HistoryBuffer history_;
  ObservationFrame start_frame_;
};

// Transition-major storage: index i = t * num_envs + e.
struct RolloutBatch {
  int num_envs = 0;
  int steps = 0;
  int history = 0;
  Mat<float> histories;    // (num_envs*steps*H) x F
  Mat<float> pre_actions;  // (num_envs*steps) x A
  Eigen::VectorXf log_probs;
  Eigen::VectorXf values;
  Eigen::VectorXd rewards;
  std::vector<StepEnd> ends;
  Eigen::VectorXd truncation_values;
  Eigen::VectorXf bootstrap_values;  // per env, V after the last step
  Mat<float> mode_probs;             // (num_envs*steps) x K
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;
  Eigen::MatrixXd raw_frames;  // frames observed during collection
  std::vector<int> raw_frame_env;
  std::vector<EpisodeSummary> episodes;
  int diverged = 0;

  int size() const { return num_envs * steps; }
};

// Steps every worker steps times with sampled actions from the soft-mixture
// policy. Parameters and the normalizer are read-only here.
RolloutBatch CollectRollouts(std::vector<EnvWorker>& workers,
                             const PolicyParams<float>& params,
                             const NetConfig& cfg, const RunningNorm& norm,
                             int steps, double tau, int threads);

// Per-env GAE over a collected batch; fills advantages and returns.
void ComputeBatchAdvantages(RolloutBatch& batch, double gamma, double lambda);

// Ordered per-env shard reduction of the batch's raw frames into norm.
void UpdateNormalizer(RunningNorm& norm, const RolloutBatch& batch);

// ---- Training ------------------------------------------------------------

struct TrainerState {
  NetConfig net;
  PolicyParams<float> params;
  AdamState adam;
  RunningNorm norm;
  std::int64_t global_step = 0;
  std::int64_t update = 0;
  double tau = 1.0;
  std::uint64_t seed = 0;
  std::mt19937_64 rng;
};

TrainerState InitTrainer(const Config& config, std::uint64_t seed);

struct UpdateMetrics {
  std::int64_t update = 0;
  std::int64_t step = 0;
  double tau = 1.0;
  double mean_return = 0.0;
  double mean_length = 0.0;
  double train_rsr = 0.0;
  int episodes = 0;
  LossStats loss;
  double grad_norm = 0.0;
  double log_std_mean = 0.0;
  int diverged = 0;
};

std::string MetricsHeader(int modes);
std::string MetricsRow(const UpdateMetrics& m);

// One collect / GAE / epochs cycle.
UpdateMetrics TrainUpdate(TrainerState& state, std::vector<EnvWorker>& workers,
                          const Config& config,
                          std::vector<EpisodeSummary>& recent);

std::vector<EnvWorker> MakeWorkers(const Config& config, std::uint64_t seed);

struct TrainOptions {
  std::string out_dir;  // empty: no files written
  bool verbose = true;
  // Override of ppo.total_steps when > 0.
  std::int64_t total_steps = 0;
  std::function<void(const UpdateMetrics&)> on_update;
};

struct TrainResult {
  TrainerState state;
  std::vector<UpdateMetrics> metrics;
};

TrainResult Train(const Config& config, std::uint64_t seed,
                  const TrainOptions& options);

}  // namespace pushrec

#endif  // PUSHREC_LEARN_H_
