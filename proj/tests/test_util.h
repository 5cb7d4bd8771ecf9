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


#ifndef PUSHREC_TESTS_TEST_UTIL_H_
#define PUSHREC_TESTS_TEST_UTIL_H_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pushrec/config.h"
#include "pushrec/learn.h"
#include "pushrec/policy.h"

namespace pushrec::testing {

// d=16, L=1, H=4, two heads, K=3, d_z=8, K_c=2, four actions.
inline NetConfig SmallNet() {
  NetConfig cfg;
  cfg.embed_dim = 16;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.history = 4;
  cfg.modes = 3;
  cfg.mode_dim = 8;
  cfg.contacts = 2;
  cfg.action_dim = 4;
  cfg.frame_dim = 18 + cfg.contacts;
  return cfg;
}

// Full pipeline config shrunk so a training update takes milliseconds.
inline Config TinyConfig() {
  Config c;
  c.net.embed_dim = 16;
  c.net.layers = 1;
  c.net.heads = 2;
  c.net.history = 4;
  c.net.modes = 3;
  c.net.mode_dim = 8;
  c.net.decoder_hidden1 = 32;
  c.net.decoder_hidden2 = 32;
  c.ppo.num_envs = 4;
  c.ppo.rollout_length = 16;
  c.ppo.minibatch = 32;
  c.ppo.epochs = 2;
  c.ppo.total_steps = 640;
  c.eval.episodes = 4;
  return c;
}

inline Mat<double> RandomMatrix(int rows, int cols, std::mt19937_64& rng,
                                double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Mat<double> m(rows, cols);
  for (int j = 0; j < cols; ++j) {
    for (int i = 0; i < rows; ++i) m(i, j) = normal(rng);
  }
  return m;
}

// Ratios exp(new - old) are kept clear of 1 +- clip so the clipped
// surrogate is differentiable at the sampled point.
inline Minibatch<double> RandomMinibatch(const PolicyParams<double>& params,
                                         const NetConfig& cfg, int n,
                                         double clip, std::mt19937_64& rng) {
  Minibatch<double> mb;
  mb.histories = RandomMatrix(n * cfg.history, cfg.frame_dim, rng);
  ForwardCache<double> cache;
  Forward(params, cfg, mb.histories, 1.0, ModeSelect::kSoft, cache);
  mb.pre_actions = cache.mean + RandomMatrix(n, cfg.action_dim, rng, 0.5);
  const Eigen::VectorXd log_prob =
      GaussianLogProb(mb.pre_actions, cache.mean, params.log_std);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  mb.old_log_prob.resize(n);
  for (int i = 0; i < n; ++i) {
    double ratio;
    const double u = unit(rng);
    if (i % 3 == 0) {
      ratio = 1.0 - clip - 0.05 - 0.3 * u;
    } else if (i % 3 == 1) {
      ratio = 1.0 - clip + 0.05 + (2 * clip - 0.1) * u;
    } else {
      ratio = 1.0 + clip + 0.05 + 0.3 * u;
    }
    mb.old_log_prob[i] = log_prob[i] - std::log(ratio);
  }
  mb.advantages = RandomMatrix(n, 1, rng).col(0);
  mb.returns = RandomMatrix(n, 1, rng).col(0);
  return mb;
}

struct GradCheckResult {
  std::map<std::string, double> max_rel_error;  // per tensor
  double worst = 0.0;
  std::string worst_tensor;
};

// Central differences of the total loss against the analytic gradient.
// Tensors above max_entries are checked on a random subset plus their
// largest-gradient entry.
inline GradCheckResult CheckGradients(PolicyParams<double> params,
                                      const NetConfig& cfg,
                                      const Minibatch<double>& mb,
                                      const LossWeights& weights, double tau,
                                      std::uint64_t seed, double step = 1e-4,
                                      int max_entries = 512,
                                      int sampled = 96) {
  PolicyParams<double> grads = PolicyParams<double>::Zeros(cfg);
  LossAndGradient(params, cfg, mb, weights, tau, &grads);
  std::mt19937_64 rng(seed);
  GradCheckResult result;
  auto tensors = params.Tensors();
  const auto grad_tensors = grads.Tensors();
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    Mat<double>& p = *tensors[t].tensor;
    const Mat<double>& g = *grad_tensors[t].tensor;
    std::vector<Eigen::Index> entries;
    if (p.size() <= max_entries) {
      for (Eigen::Index k = 0; k < p.size(); ++k) entries.push_back(k);
    } else {
      std::uniform_int_distribution<Eigen::Index> pick(0, p.size() - 1);
      for (int k = 0; k < sampled; ++k) entries.push_back(pick(rng));
      Eigen::Index best = 0;
      g.reshaped().cwiseAbs().maxCoeff(&best);
      entries.push_back(best);
    }
    double worst = 0.0;
    for (Eigen::Index k : entries) {
      double& x = p.reshaped()[k];
      const double saved = x;
      x = saved + step;
      const double up =
          LossAndGradient<double>(params, cfg, mb, weights, tau, nullptr).total;
      x = saved - step;
      const double down =
          LossAndGradient<double>(params, cfg, mb, weights, tau, nullptr).total;
      x = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = g.reshaped()[k];
      const double denom =
          std::max({std::abs(numeric), std::abs(analytic), 1e-5});
      worst = std::max(worst, std::abs(numeric - analytic) / denom);
    }
    result.max_rel_error[tensors[t].name] = worst;
    if (worst >= result.worst) {
      result.worst = worst;
      result.worst_tensor = tensors[t].name;
    }
  }
  return result;
}

// Loss weights that keep exactly one utilization hinge active and far from
// its kink for this minibatch.
inline LossWeights HingeWeights(const PolicyParams<double>& params,
                                const NetConfig& cfg,
                                const Minibatch<double>& mb, double tau) {
  ForwardCache<double> cache;
  Forward(params, cfg, mb.histories, tau, ModeSelect::kSoft, cache);
  Eigen::VectorXd usage = cache.probs.colwise().mean().transpose();
  std::sort(usage.begin(), usage.end());
  LossWeights w;
  w.util_min = 0.5 * (usage[0] + usage[1]);
  return w;
}

}  // namespace pushrec::testing

#endif  // PUSHREC_TESTS_TEST_UTIL_H_
