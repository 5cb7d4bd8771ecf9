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

#include "pushrec/learn.h"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <thread>

#include "pushrec/checkpoint.h"
#include "pushrec/config.h"
#include "pushrec/csv.h"
#include "pushrec/errors.h"

namespace pushrec {
namespace {

std::uint64_t StreamSeed(std::uint64_t seed, std::uint64_t stream,
                         std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

constexpr std::uint64_t kWorkerStream = 1;
constexpr std::uint64_t kTrainerStream = 2;
constexpr std::size_t kRecentEpisodes = 100;

// Runs fn(begin, end) over contiguous chunks of [0, n).
template <typename Fn>
void ParallelChunks(int n, int threads, Fn&& fn) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (int k = 0; k < threads; ++k) {
    const int begin = n * k / threads;
    const int end = n * (k + 1) / threads;
    pool.emplace_back([&, k, begin, end] {
      try {
        fn(begin, end);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

void PpoConfig::Validate(int modes) const {
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw ConfigError("ppo.gamma must lie in (0, 1]");
  }
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) {
    throw ConfigError("ppo.lambda must lie in [0, 1]");
  }
  if (!(clip > 0.0)) throw ConfigError("ppo.clip must be positive");
  if (!(value_coef >= 0.0)) throw ConfigError("ppo.value_coef must be >= 0");
  if (!(entropy_coef >= 0.0)) {
    throw ConfigError("ppo.entropy_coef must be >= 0");
  }
  if (!(mode_coef >= 0.0)) throw ConfigError("ppo.mode_coef must be >= 0");
  if (!(learning_rate > 0.0)) {
    throw ConfigError("ppo.learning_rate must be positive");
  }
  if (epochs < 1) throw ConfigError("ppo.epochs must be >= 1");
  if (minibatch < 1) throw ConfigError("ppo.minibatch must be >= 1");
  if (rollout_length < 1) throw ConfigError("ppo.rollout_length must be >= 1");
  if (num_envs < 1) throw ConfigError("ppo.num_envs must be >= 1");
  if (total_steps < 1) throw ConfigError("ppo.total_steps must be >= 1");
  if (!(max_grad_norm > 0.0)) {
    throw ConfigError("ppo.max_grad_norm must be positive");
  }
  if (!(util_fraction >= 0.0) || util_min(modes) * modes > 1.0) {
    throw ConfigError("ppo.util_fraction must satisfy 0 <= u_min * K <= 1");
  }
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) ||
      !(adam_beta2 >= 0.0 && adam_beta2 < 1.0) || !(adam_eps > 0.0)) {
    throw ConfigError("ppo Adam moments out of range");
  }
  if (threads < 1) throw ConfigError("ppo.threads must be >= 1");
}

GaeResult ComputeGae(std::span<const double> rewards,
                     std::span<const double> values,
                     std::span<const StepEnd> ends, double gamma,
                     double lambda, std::span<const double> truncation_values) {
  const std::size_t n = rewards.size();
  if (values.size() != n + 1 || ends.size() != n) {
    throw std::invalid_argument("gae: inconsistent sequence lengths");
  }
  const bool has_trunc = !truncation_values.empty();
  if (has_trunc && truncation_values.size() != n) {
    throw std::invalid_argument("gae: truncation values length mismatch");
  }
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double next_adv = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    double next_value = values[k + 1];
    double carry = 1.0;
    if (ends[k] == StepEnd::kTerminated) {
      next_value = 0.0;
      carry = 0.0;
    } else if (ends[k] == StepEnd::kTruncated) {
      next_value = has_trunc ? truncation_values[k] : values[k + 1];
      carry = 0.0;
    }
    const double delta = rewards[k] + gamma * next_value - values[k];
    const double adv = delta + gamma * lambda * carry * next_adv;
    if (!std::isfinite(adv)) {
      throw std::invalid_argument("gae: non-finite input at step " +
                                  std::to_string(k));
    }
    out.advantages[k] = adv;
    out.returns[k] = adv + values[k];
    next_adv = adv;
  }
  return out;
}

void StandardizeAdvantages(Eigen::Ref<Eigen::VectorXd> advantages) {
  const Eigen::Index n = advantages.size();
  if (n == 0) return;
  const double mean = advantages.mean();
  advantages.array() -= mean;
  if (n < 2) return;
  const double std_dev = std::sqrt(advantages.squaredNorm() / n);
  if (std_dev > 0.0) advantages /= std_dev;
  // Remove the rounding residue of the division from the mean.
  advantages.array() -= advantages.mean();
}

template <typename Scalar>
ModeLossResult<Scalar> ModeLoss(const Mat<Scalar>& probs, Scalar util_min) {
  using std::log;
  const Eigen::Index n = probs.rows();
  const Eigen::Index k = probs.cols();
  ModeLossResult<Scalar> out;
  out.grad = Mat<Scalar>::Zero(n, k);
  if (n == 0) return out;
  const Scalar inv_n = Scalar(1) / Scalar(n);
  const Scalar floor = Scalar(1e-30);
  Scalar entropy(0);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) {
      const Scalar lp = log(std::max(probs(i, j), floor));
      entropy -= probs(i, j) * lp;
      out.grad(i, j) = -(lp + Scalar(1)) * inv_n;
    }
  }
  out.entropy = entropy * inv_n;
  out.usage = probs.colwise().sum().transpose() * inv_n;
  for (Eigen::Index j = 0; j < k; ++j) {
    const Scalar gap = util_min - out.usage[j];
    if (gap > Scalar(0)) {
      out.penalty += gap;
      out.grad.col(j).array() -= inv_n;
    }
  }
  out.value = out.entropy + out.penalty;
  return out;
}

double ClippedObjective(double ratio, double advantage, double clip) {
  const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
  return std::min(ratio * advantage, clipped * advantage);
}

template <typename Scalar>
LossStats LossAndGradient(const PolicyParams<Scalar>& params,
                          const NetConfig& cfg, const Minibatch<Scalar>& mb,
                          const LossWeights& w, Scalar tau,
                          PolicyParams<Scalar>* grads) {
  using std::exp;
  const int n = mb.size();
  const int a = cfg.action_dim;
  ForwardCache<Scalar> c;
  Forward(params, cfg, mb.histories, tau, ModeSelect::kSoft, c);

  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> log_prob =
      GaussianLogProb(mb.pre_actions, c.mean, params.log_std);
  const Scalar inv_n = Scalar(1) / Scalar(n);
  const Scalar lo = Scalar(1.0 - w.clip);
  const Scalar hi = Scalar(1.0 + w.clip);

  LossStats stats;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> g_lp(n);
  Scalar objective(0);
  Scalar ratio_sum(0);
  int clipped = 0;
  for (int i = 0; i < n; ++i) {
    const Scalar ratio = exp(log_prob[i] - mb.old_log_prob[i]);
    const Scalar adv = mb.advantages[i];
    const Scalar plain = ratio * adv;
    const Scalar bounded = std::clamp(ratio, lo, hi) * adv;
    objective += std::min(plain, bounded);
    g_lp[i] = plain <= bounded ? -adv * ratio * inv_n : Scalar(0);
    ratio_sum += ratio;
    using std::abs;
    if (abs(ratio - Scalar(1)) > Scalar(w.clip)) ++clipped;
  }
  const Scalar surrogate = -objective * inv_n;
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> diff =
      c.value.col(0) - mb.returns;
  const Scalar value_loss = diff.squaredNorm() * inv_n;
  const Scalar entropy = GaussianEntropy(params.log_std);
  const Scalar ppo = surrogate + Scalar(w.value_coef) * value_loss -
                     Scalar(w.entropy_coef) * entropy;
  const ModeLossResult<Scalar> mode = ModeLoss(c.probs, Scalar(w.util_min));
  const Scalar total =
      w.mode_coef == 0.0 ? ppo : ppo + Scalar(w.mode_coef) * mode.value;

  stats.total = static_cast<double>(total);
  stats.ppo = static_cast<double>(ppo);
  stats.surrogate = static_cast<double>(surrogate);
  stats.value_loss = static_cast<double>(value_loss);
  stats.entropy = static_cast<double>(entropy);
  stats.mode = static_cast<double>(mode.value);
  stats.mode_entropy = static_cast<double>(mode.entropy);
  stats.mode_penalty = static_cast<double>(mode.penalty);
  stats.ratio_mean = static_cast<double>(ratio_sum * inv_n);
  stats.clip_fraction = static_cast<double>(clipped) / n;
  stats.usage = mode.usage.template cast<double>();

  if (grads == nullptr) return stats;

  OutputGrads<Scalar> up;
  up.mean.resize(n, a);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> d_log_std =
      Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Constant(
          a, -Scalar(w.entropy_coef));
  for (int j = 0; j < a; ++j) {
    const Scalar inv_std = exp(-params.log_std(j, 0));
    for (int i = 0; i < n; ++i) {
      const Scalar z = (mb.pre_actions(i, j) - c.mean(i, j)) * inv_std;
      up.mean(i, j) = g_lp[i] * z * inv_std;
      d_log_std[j] += g_lp[i] * (z * z - Scalar(1));
    }
  }
  up.value = (Scalar(2 * w.value_coef) * inv_n) * diff;
  if (w.mode_coef != 0.0) up.probs = Scalar(w.mode_coef) * mode.grad;
  Backward(params, cfg, c, mb.histories, up, *grads);
  grads->log_std += d_log_std;
  return stats;
}

double AnnealTau(std::int64_t step, std::int64_t total, double start,
                 double end) {
  if (total <= 0) return end;
  const double frac =
      std::clamp(static_cast<double>(step) / static_cast<double>(total), 0.0,
                 1.0);
  return start + (end - start) * frac;
}

AdamState MakeAdamState(const NetConfig& cfg) {
  AdamState s;
  s.m = PolicyParams<float>::Zeros(cfg);
  s.v = PolicyParams<float>::Zeros(cfg);
  return s;
}

double GlobalNorm(const PolicyParams<float>& grads) {
  double sum = 0.0;
  for (const auto& t : grads.Tensors()) {
    sum += t.tensor->template cast<double>().squaredNorm();
  }
  return std::sqrt(sum);
}

double ClipGradNorm(PolicyParams<float>& grads, double max_norm) {
  const double norm = GlobalNorm(grads);
  if (norm > max_norm) {
    // Shrink slightly past the bound so float rounding cannot overshoot it.
    const float scale =
        static_cast<float>(max_norm / norm * (1.0 - 8.0 * FLT_EPSILON));
    for (auto& t : grads.Tensors()) *t.tensor *= scale;
  }
  return norm;
}

void AdamStep(PolicyParams<float>& params, const PolicyParams<float>& grads,
              AdamState& state, const PpoConfig& cfg) {
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const float b1 = static_cast<float>(cfg.adam_beta1);
  const float b2 = static_cast<float>(cfg.adam_beta2);
  const float bias1 = static_cast<float>(1.0 - std::pow(cfg.adam_beta1, t));
  const float bias2 = static_cast<float>(1.0 - std::pow(cfg.adam_beta2, t));
  const float lr = static_cast<float>(cfg.learning_rate);
  const float eps = static_cast<float>(cfg.adam_eps);
  auto p = params.Tensors();
  const auto g = grads.Tensors();
  auto m = state.m.Tensors();
  auto v = state.v.Tensors();
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto& mi = *m[i].tensor;
    auto& vi = *v[i].tensor;
    const auto& gi = *g[i].tensor;
    mi = b1 * mi + (1.0f - b1) * gi;
    vi = b2 * vi + (1.0f - b2) * gi.cwiseProduct(gi);
    p[i].tensor->array() -=
        lr * (mi.array() / bias1) / ((vi.array() / bias2).sqrt() + eps);
  }
}

EnvWorker::EnvWorker(const EnvParams& params, const RewardConfig& reward,
                     const PushRanges& pushes, double friction_min,
                     double friction_max, int history, std::uint64_t seed)
    : base_params_(params),
      episode_params_(params),
      reward_(reward),
      pushes_(pushes),
      friction_min_(friction_min),
      friction_max_(friction_max),
      rng_(seed),
      history_(history, FrameLayout{params.contact_count()}.size()) {
  StartEpisode();
}

void EnvWorker::StartEpisode() {
  episode_params_ = base_params_;
  std::uniform_real_distribution<double> friction(friction_min_,
                                                  friction_max_);
  episode_params_.friction = friction(rng_);
  const PushEvent push =
      SamplePush(rng_, /*training=*/true, pushes_, base_params_.dt_ctrl);
  const std::uint64_t reset_seed = rng_();
  auto [state, frame] = EnvReset(episode_params_, push, reset_seed);
  state_ = std::move(state);
  start_frame_ = frame;
  history_.Clear();
  history_.Push(frame);
  episode_return = 0.0;
  episode_length = 0;
  start_frame_recorded = false;
}

std::vector<EnvWorker> MakeWorkers(const Config& config, std::uint64_t seed) {
  std::vector<EnvWorker> workers;
  workers.reserve(config.ppo.num_envs);
  for (int e = 0; e < config.ppo.num_envs; ++e) {
    workers.emplace_back(config.env, config.reward, config.push,
                         config.run.friction_min, config.run.friction_max,
                         config.net.history,
                         StreamSeed(seed, kWorkerStream, e));
  }
  return workers;
}

RolloutBatch CollectRollouts(std::vector<EnvWorker>& workers,
                             const PolicyParams<float>& params,
                             const NetConfig& cfg, const RunningNorm& norm,
                             int steps, double tau, int threads) {
  const int num_envs = static_cast<int>(workers.size());
  const int h = cfg.history;
  const int f = cfg.frame_dim;
  const int a = cfg.action_dim;
  const int total = num_envs * steps;

  RolloutBatch batch;
  batch.num_envs = num_envs;
  batch.steps = steps;
  batch.history = h;
  batch.histories.resize(static_cast<Eigen::Index>(total) * h, f);
  batch.pre_actions.resize(total, a);
  batch.log_probs.resize(total);
  batch.values.resize(total);
  batch.rewards.resize(total);
  batch.ends.assign(total, StepEnd::kNone);
  batch.truncation_values = Eigen::VectorXd::Zero(total);
  batch.bootstrap_values.resize(num_envs);
  batch.mode_probs.resize(total, cfg.modes);

  struct EnvLog {
    std::vector<ObservationFrame> frames;
    std::vector<std::pair<int, EpisodeSummary>> episodes;
    int diverged = 0;
  };
  std::vector<EnvLog> logs(num_envs);
  const float tau_f = static_cast<float>(tau);

  auto run_chunk = [&](int begin, int end) {
    const int count = end - begin;
    Mat<float> obs(static_cast<Eigen::Index>(count) * h, f);
    ForwardCache<float> cache;
    auto fill_obs = [&] {
      for (int e = begin; e < end; ++e) {
        obs.middleRows(static_cast<Eigen::Index>(e - begin) * h, h) =
            NormalizedHistory(workers[e].history(), norm).cast<float>();
      }
    };
    // Each episode's first frame enters the statistics exactly once.
    auto record_start = [&](int e) {
      if (workers[e].start_frame_recorded) return;
      logs[e].frames.push_back(workers[e].start_frame());
      workers[e].start_frame_recorded = true;
    };
    for (int e = begin; e < end; ++e) record_start(e);
    for (int t = 0; t < steps; ++t) {
      fill_obs();
      Forward(params, cfg, obs, tau_f, ModeSelect::kSoft, cache);
      std::vector<int> truncated;
      Mat<float> trunc_obs;
      for (int e = begin; e < end; ++e) {
        const int local = e - begin;
        const int i = t * num_envs + e;
        EnvWorker& w = workers[e];
        batch.histories.middleRows(static_cast<Eigen::Index>(i) * h, h) =
            obs.middleRows(static_cast<Eigen::Index>(local) * h, h);
        batch.mode_probs.row(i) = cache.probs.row(local);
        batch.values[i] = cache.value(local, 0);
        const SampledAction<float> sample = SampleAction<float>(
            cache.mean.row(local).transpose(), params.log_std, w.rng());
        batch.pre_actions.row(i) = sample.pre_clip.transpose();
        batch.log_probs[i] = sample.log_prob;
        const Action action = sample.action.cast<double>();

        StepOutcome out;
        try {
          out = EnvStep(w.state(), w.params(), action, w.reward());
        } catch (const SimulationDiverged&) {
          batch.rewards[i] = 0.0;
          batch.ends[i] = StepEnd::kTerminated;
          logs[e].diverged += 1;
          w.StartEpisode();
          record_start(e);
          continue;
        }
        batch.rewards[i] = out.reward.total;
        w.episode_return += out.reward.total;
        w.episode_length += 1;
        logs[e].frames.push_back(out.frame);
        w.history().Push(out.frame);
        if (!out.terminated && !out.truncated) continue;

        EpisodeSummary summary;
        summary.episode_return = w.episode_return;
        summary.length = w.episode_length;
        summary.terminated = out.terminated;
        summary.push_force = w.state().push.magnitude;
        logs[e].episodes.emplace_back(t, summary);
        if (out.terminated) {
          batch.ends[i] = StepEnd::kTerminated;
        } else {
          batch.ends[i] = StepEnd::kTruncated;
          truncated.push_back(i);
          trunc_obs.conservativeResize(trunc_obs.rows() + h, f);
          trunc_obs.bottomRows(h) =
              NormalizedHistory(w.history(), norm).cast<float>();
        }
        w.StartEpisode();
        record_start(e);
      }
      if (!truncated.empty()) {
        ForwardCache<float> tc;
        Forward(params, cfg, trunc_obs, tau_f, ModeSelect::kSoft, tc);
        for (std::size_t k = 0; k < truncated.size(); ++k) {
          batch.truncation_values[truncated[k]] = tc.value(k, 0);
        }
      }
    }
    fill_obs();
    Forward(params, cfg, obs, tau_f, ModeSelect::kSoft, cache);
    for (int e = begin; e < end; ++e) {
      batch.bootstrap_values[e] = cache.value(e - begin, 0);
    }
  };
  ParallelChunks(num_envs, threads, run_chunk);

  int frame_count = 0;
  for (const auto& log : logs) frame_count += static_cast<int>(log.frames.size());
  batch.raw_frames.resize(frame_count, f);
  batch.raw_frame_env.reserve(frame_count);
  int row = 0;
  for (int e = 0; e < num_envs; ++e) {
    for (const auto& frame : logs[e].frames) {
      batch.raw_frames.row(row++) = frame.transpose();
      batch.raw_frame_env.push_back(e);
    }
    batch.diverged += logs[e].diverged;
  }
  for (int t = 0; t < steps; ++t) {
    for (int e = 0; e < num_envs; ++e) {
      for (const auto& [step, summary] : logs[e].episodes) {
        if (step == t) batch.episodes.push_back(summary);
      }
    }
  }
  return batch;
}

void ComputeBatchAdvantages(RolloutBatch& batch, double gamma, double lambda) {
  const int num_envs = batch.num_envs;
  const int steps = batch.steps;
  batch.advantages.resize(batch.size());
  batch.returns.resize(batch.size());
  std::vector<double> rewards(steps), values(steps + 1), trunc(steps);
  std::vector<StepEnd> ends(steps);
  for (int e = 0; e < num_envs; ++e) {
    for (int t = 0; t < steps; ++t) {
      const int i = t * num_envs + e;
      rewards[t] = batch.rewards[i];
      values[t] = batch.values[i];
      ends[t] = batch.ends[i];
      trunc[t] = batch.truncation_values[i];
    }
    values[steps] = batch.bootstrap_values[e];
    const GaeResult gae =
        ComputeGae(rewards, values, ends, gamma, lambda, trunc);
    for (int t = 0; t < steps; ++t) {
      const int i = t * num_envs + e;
      batch.advantages[i] = gae.advantages[t];
      batch.returns[i] = gae.returns[t];
    }
  }
}

void UpdateNormalizer(RunningNorm& norm, const RolloutBatch& batch) {
  if (norm.frozen() || batch.raw_frames.rows() == 0) return;
  std::vector<RunningNorm> shards;
  const int f = static_cast<int>(batch.raw_frames.cols());
  int begin = 0;
  const int rows = static_cast<int>(batch.raw_frames.rows());
  while (begin < rows) {
    int end = begin;
    while (end < rows &&
           batch.raw_frame_env[end] == batch.raw_frame_env[begin]) {
      ++end;
    }
    RunningNorm shard(f);
    shard.Update(Eigen::MatrixXd(batch.raw_frames.middleRows(begin, end - begin)));
    shards.push_back(std::move(shard));
    begin = end;
  }
  norm.Merge(MergeTree(std::move(shards)));
}

TrainerState InitTrainer(const Config& config, std::uint64_t seed) {
  TrainerState s;
  s.net = config.net;
  s.params = InitParams<float>(config.net, seed);
  s.adam = MakeAdamState(config.net);
  s.norm = RunningNorm(config.net.frame_dim);
  s.tau = config.net.tau_start;
  s.seed = seed;
  s.rng.seed(StreamSeed(seed, kTrainerStream, 0));
  return s;
}

std::string MetricsHeader(int modes) {
  std::string h =
      "update,step,tau,mean_return,mean_length,train_rsr,episodes,loss_total,"
      "loss_ppo,surrogate,value_loss,entropy,mode_loss,mode_entropy,"
      "mode_penalty,ratio_mean,clip_fraction,grad_norm,log_std,diverged";
  for (int k = 1; k <= modes; ++k) h += ",usage_" + std::to_string(k);
  return h;
}

std::string MetricsRow(const UpdateMetrics& m) {
  std::vector<std::string> cells = {
      std::to_string(m.update),          std::to_string(m.step),
      FormatNumber(m.tau),               FormatNumber(m.mean_return),
      FormatNumber(m.mean_length),       FormatNumber(m.train_rsr),
      std::to_string(m.episodes),        FormatNumber(m.loss.total),
      FormatNumber(m.loss.ppo),          FormatNumber(m.loss.surrogate),
      FormatNumber(m.loss.value_loss),   FormatNumber(m.loss.entropy),
      FormatNumber(m.loss.mode),         FormatNumber(m.loss.mode_entropy),
      FormatNumber(m.loss.mode_penalty), FormatNumber(m.loss.ratio_mean),
      FormatNumber(m.loss.clip_fraction), FormatNumber(m.grad_norm),
      FormatNumber(m.log_std_mean),      std::to_string(m.diverged)};
  for (Eigen::Index k = 0; k < m.loss.usage.size(); ++k) {
    cells.push_back(FormatNumber(m.loss.usage[k]));
  }
  std::string row;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i > 0) row += ',';
    row += cells[i];
  }
  return row;
}

namespace {

void AccumulateStats(LossStats& sum, const LossStats& s) {
  sum.total += s.total;
  sum.ppo += s.ppo;
  sum.surrogate += s.surrogate;
  sum.value_loss += s.value_loss;
  sum.entropy += s.entropy;
  sum.mode += s.mode;
  sum.mode_entropy += s.mode_entropy;
  sum.mode_penalty += s.mode_penalty;
  sum.ratio_mean += s.ratio_mean;
  sum.clip_fraction += s.clip_fraction;
  if (sum.usage.size() == 0) sum.usage = Eigen::VectorXd::Zero(s.usage.size());
  sum.usage += s.usage;
}

void ScaleStats(LossStats& s, double k) {
  s.total *= k;
  s.ppo *= k;
  s.surrogate *= k;
  s.value_loss *= k;
  s.entropy *= k;
  s.mode *= k;
  s.mode_entropy *= k;
  s.mode_penalty *= k;
  s.ratio_mean *= k;
  s.clip_fraction *= k;
  s.usage *= k;
}

}  // namespace

UpdateMetrics TrainUpdate(TrainerState& state, std::vector<EnvWorker>& workers,
                          const Config& config,
                          std::vector<EpisodeSummary>& recent) {
  const PpoConfig& ppo = config.ppo;
  const NetConfig& net = state.net;
  RolloutBatch batch =
      CollectRollouts(workers, state.params, net, state.norm,
                      ppo.rollout_length, state.tau, ppo.threads);
  ComputeBatchAdvantages(batch, ppo.gamma, ppo.gae_lambda);
  Eigen::VectorXd advantages = batch.advantages;
  StandardizeAdvantages(advantages);
  UpdateNormalizer(state.norm, batch);

  LossWeights weights;
  weights.clip = ppo.clip;
  weights.value_coef = ppo.value_coef;
  weights.entropy_coef = ppo.entropy_coef;
  weights.mode_coef = ppo.mode_coef;
  weights.util_min = ppo.util_min(net.modes);

  const int n = batch.size();
  const int h = net.history;
  const int mb_size = std::min(ppo.minibatch, n);
  std::vector<int> order(n);
  PolicyParams<float> grads = PolicyParams<float>::Zeros(net);
  Minibatch<float> mb;
  LossStats sum;
  double grad_norm_sum = 0.0;
  int minibatches = 0;
  const float tau = static_cast<float>(state.tau);
  for (int epoch = 0; epoch < ppo.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), state.rng);
    for (int start = 0; start + mb_size <= n; start += mb_size) {
      mb.histories.resize(static_cast<Eigen::Index>(mb_size) * h,
                          net.frame_dim);
      mb.pre_actions.resize(mb_size, net.action_dim);
      mb.old_log_prob.resize(mb_size);
      mb.advantages.resize(mb_size);
      mb.returns.resize(mb_size);
      for (int j = 0; j < mb_size; ++j) {
        const int i = order[start + j];
        mb.histories.middleRows(static_cast<Eigen::Index>(j) * h, h) =
            batch.histories.middleRows(static_cast<Eigen::Index>(i) * h, h);
        mb.pre_actions.row(j) = batch.pre_actions.row(i);
        mb.old_log_prob[j] = batch.log_probs[i];
        mb.advantages[j] = static_cast<float>(advantages[i]);
        mb.returns[j] = static_cast<float>(batch.returns[i]);
      }
      grads.SetZero();
      const LossStats stats =
          LossAndGradient(state.params, net, mb, weights, tau, &grads);
      if (!std::isfinite(stats.total) || !grads.AllFinite()) {
        std::ostringstream msg;
        msg << "non-finite loss at update " << state.update + 1 << " epoch "
            << epoch << ": total=" << stats.total
            << " surrogate=" << stats.surrogate
            << " value=" << stats.value_loss << " mode=" << stats.mode;
        throw TrainingDiverged(msg.str());
      }
      grad_norm_sum += ClipGradNorm(grads, ppo.max_grad_norm);
      AdamStep(state.params, grads, state.adam, ppo);
      AccumulateStats(sum, stats);
      ++minibatches;
    }
  }
  if (minibatches > 0) ScaleStats(sum, 1.0 / minibatches);

  state.global_step += n;
  state.update += 1;
  state.tau = AnnealTau(state.global_step, ppo.total_steps, net.tau_start,
                        net.tau_end);

  for (const auto& ep : batch.episodes) recent.push_back(ep);
  if (recent.size() > kRecentEpisodes) {
    recent.erase(recent.begin(), recent.end() - kRecentEpisodes);
  }

  UpdateMetrics m;
  m.update = state.update;
  m.step = state.global_step;
  m.tau = state.tau;
  m.episodes = static_cast<int>(batch.episodes.size());
  if (!recent.empty()) {
    double ret = 0.0, len = 0.0, ok = 0.0;
    for (const auto& ep : recent) {
      ret += ep.episode_return;
      len += ep.length;
      ok += ep.terminated ? 0.0 : 1.0;
    }
    m.mean_return = ret / recent.size();
    m.mean_length = len / recent.size();
    m.train_rsr = ok / recent.size();
  }
  m.loss = sum;
  m.grad_norm = minibatches > 0 ? grad_norm_sum / minibatches : 0.0;
  m.log_std_mean = state.params.log_std.cast<double>().mean();
  m.diverged = batch.diverged;
  return m;
}

TrainResult Train(const Config& config_in, std::uint64_t seed,
                  const TrainOptions& options) {
  Config config = config_in;
  if (options.total_steps > 0) config.ppo.total_steps = options.total_steps;
  config.run.seed = seed;
  config.Validate();

  TrainResult result;
  result.state = InitTrainer(config, seed);
  std::vector<EnvWorker> workers = MakeWorkers(config, seed);
  std::vector<EpisodeSummary> recent;

  namespace fs = std::filesystem;
  std::ofstream metrics;
  if (!options.out_dir.empty()) {
    fs::create_directories(options.out_dir);
    std::ofstream echo(fs::path(options.out_dir) / "config.ini");
    echo << DumpConfig(config);
    metrics.open(fs::path(options.out_dir) / "metrics.csv");
    metrics << MetricsHeader(config.net.modes) << '\n';
  }
  auto checkpoint = [&](const std::string& name) {
    if (options.out_dir.empty()) return;
    SaveCheckpoint(config, result.state,
                   (fs::path(options.out_dir) / name).string());
  };

  while (result.state.global_step < config.ppo.total_steps) {
    UpdateMetrics m;
    try {
      m = TrainUpdate(result.state, workers, config, recent);
    } catch (const TrainingDiverged& e) {
      std::cerr << "training aborted: " << e.what() << '\n';
      throw;
    }
    if (metrics.is_open()) metrics << MetricsRow(m) << '\n' << std::flush;
    if (options.verbose) {
      std::printf(
          "update %lld step %lld tau %.3f return %.2f len %.1f rsr %.2f "
          "loss %.4f clip %.3f log_std %.3f\n",
          static_cast<long long>(m.update), static_cast<long long>(m.step),
          m.tau, m.mean_return, m.mean_length, m.train_rsr, m.loss.total,
          m.loss.clip_fraction, m.log_std_mean);
      std::fflush(stdout);
    }
    if (options.on_update) options.on_update(m);
    result.metrics.push_back(m);
    if (m.update % config.run.checkpoint_interval == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "ckpt_%06lld.bin",
                    static_cast<long long>(m.update));
      checkpoint(name);
    }
  }
  checkpoint("final.bin");
  return result;
}

#define PUSHREC_INSTANTIATE(S)                                                \
  template ModeLossResult<S> ModeLoss<S>(const Mat<S>&, S);                   \
  template LossStats LossAndGradient<S>(const PolicyParams<S>&,               \
                                        const NetConfig&, const Minibatch<S>&, \
                                        const LossWeights&, S,                \
                                        PolicyParams<S>*);

PUSHREC_INSTANTIATE(float)
PUSHREC_INSTANTIATE(double)
#undef PUSHREC_INSTANTIATE

}  // namespace pushrec
