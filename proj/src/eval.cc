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

#include "pushrec/eval.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "pushrec/config.h"
#include "pushrec/errors.h"
#include "pushrec/learn.h"

namespace pushrec {
namespace {

struct PolicyOutput {
  Action mean;
  Eigen::VectorXd probs;  // recomputed in double from the logits
  int mode = 0;
  Eigen::VectorXd affordance;
};

PolicyOutput Act(const PolicySnapshot& policy, const HistoryBuffer& history,
                 ModeSelect select, ForwardCache<float>& cache) {
  const Mat<float> obs =
      NormalizedHistory(history, policy.norm).cast<float>();
  Forward(policy.params, policy.net, obs, static_cast<float>(policy.tau),
          select, cache);
  PolicyOutput out;
  out.mean = cache.mean.row(0).transpose().cast<double>();
  out.probs = ModePosterior<double>(cache.logits.cast<double>(), policy.tau)
                  .row(0)
                  .transpose();
  out.mode = ArgmaxMode<float>(cache.probs.row(0));
  out.affordance = cache.affordance.row(0).transpose().cast<double>();
  return out;
}

EnvParams EpisodeEnv(const EnvParams& base, const EpisodeOptions& options) {
  EnvParams params = ApplyMismatch(base, options.mismatch);
  if (options.wall_distance.has_value()) {
    params.wall_present = true;
    params.wall_x = *options.wall_distance;
  }
  return params;
}

std::string Cell(double v) { return FormatNumber(v); }

}  // namespace

void EvalConfig::Validate() const {
  auto check_grid = [](const std::vector<double>& grid, const char* name,
                       bool allow_zero) {
    if (grid.empty()) {
      throw ConfigError(std::string(name) + " must not be empty");
    }
    for (double v : grid) {
      if (!std::isfinite(v) || v < 0.0 || (!allow_zero && v == 0.0)) {
        throw ConfigError(std::string(name) + " has an invalid entry");
      }
    }
  };
  check_grid(force_grid, "eval.force_grid", true);
  check_grid(wall_distances, "eval.wall_distances", false);
  if (!(wall_force >= 0.0)) throw ConfigError("eval.wall_force must be >= 0");
  if (!(mismatch_force >= 0.0)) {
    throw ConfigError("eval.mismatch_force must be >= 0");
  }
  if (!(direction_wall > 0.0)) {
    throw ConfigError("eval.direction_wall must be positive");
  }
  if (episodes < 1) throw ConfigError("eval.episodes must be >= 1");
  if (!(settle_window > 0.0) || !(contact_free_window >= 0.0) ||
      !(settle_tilt > 0.0) || !(settle_rate > 0.0)) {
    throw ConfigError("eval settle thresholds must be positive");
  }
}

std::string OutcomeName(Outcome outcome) {
  switch (outcome) {
    case Outcome::kSuccess:
      return "success";
    case Outcome::kFailTilt:
      return "fail_tilt";
    case Outcome::kFailHeight:
      return "fail_height";
    case Outcome::kFailDiverged:
      return "fail_diverged";
  }
  return "unknown";
}

PolicySnapshot SnapshotFrom(const TrainerState& state) {
  PolicySnapshot snap;
  snap.net = state.net;
  snap.params = state.params;
  snap.norm = state.norm;
  snap.norm.set_frozen(true);
  snap.tau = state.tau;
  return snap;
}

std::uint64_t EpisodeSeed(std::uint64_t base, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(base),
                    static_cast<std::uint32_t>(base >> 32),
                    static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

PushEvent EvalPush(double force, double direction, std::uint64_t seed,
                   const PushRanges& ranges) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> onset(ranges.onset_min,
                                               ranges.onset_max);
  std::bernoulli_distribution sign(0.5);
  PushEvent push;
  push.magnitude = force;
  push.onset = onset(rng);
  const bool positive = sign(rng);
  push.direction = direction != 0.0 ? (direction > 0.0 ? 1.0 : -1.0)
                                    : (positive ? 1.0 : -1.0);
  push.duration = ranges.eval_duration;
  push.Validate();
  return push;
}

EpisodeResult RunEpisode(const PolicySnapshot& policy,
                         const EnvParams& env_params,
                         const RewardConfig& reward, const PushEvent& push,
                         std::uint64_t seed, const EpisodeOptions& options,
                         const EvalConfig& eval) {
  const EnvParams params = EpisodeEnv(env_params, options);
  const NetConfig& net = policy.net;
  const ModeSelect select =
      options.argmax_modes ? ModeSelect::kArgmax : ModeSelect::kSoft;
  std::mt19937_64 action_rng(seed ^ 0xa5a5a5a5deadbeefULL);

  EpisodeResult result;
  result.push_force = push.magnitude;
  result.push_direction = push.direction;
  result.wall_distance = options.wall_distance;
  result.mismatch = options.mismatch;
  result.mode_mean = Eigen::VectorXd::Zero(net.modes);
  result.mode_occupancy = Eigen::VectorXd::Zero(net.modes);
  result.affordance_mean = Eigen::VectorXd::Zero(net.contacts);

  auto [state, frame] = EnvReset(params, push, seed);
  HistoryBuffer history(net.history, net.frame_dim);
  history.Push(frame);
  ForwardCache<float> cache;
  std::vector<double> tilt, rate;
  std::vector<char> touching;
  bool finished = false;
  while (!finished) {
    const PolicyOutput out = Act(policy, history, select, cache);
    result.mode_mean += out.probs;
    result.mode_occupancy[out.mode] += 1.0;
    result.affordance_mean += out.affordance;
    Action action = out.mean;
    if (!options.deterministic) {
      const SampledAction<float> sample = SampleAction<float>(
          cache.mean.row(0).transpose(), policy.params.log_std, action_rng);
      action = sample.action.cast<double>();
    }
    if (options.record_actions) result.actions.push_back(action);

    StepOutcome step;
    try {
      step = EnvStep(state, params, action, reward);
    } catch (const SimulationDiverged&) {
      result.outcome = Outcome::kFailDiverged;
      result.steps += 1;
      break;
    }
    result.steps += 1;
    result.episode_return += step.reward.total;
    tilt.push_back(std::abs(Tilt(state)));
    rate.push_back(std::abs(TiltRate(state)));
    touching.push_back(state.wall_touching ? 1 : 0);
    result.peak_tilt = std::max(result.peak_tilt, tilt.back());
    history.Push(step.frame);
    if (step.terminated) {
      result.outcome = state.cause == Termination::kHeight
                           ? Outcome::kFailHeight
                           : Outcome::kFailTilt;
      finished = true;
    } else if (step.truncated) {
      finished = true;
    }
  }
  const double steps = static_cast<double>(result.steps);
  result.mode_mean /= steps;
  result.mode_occupancy /= steps;
  result.affordance_mean /= steps;

  if (result.outcome != Outcome::kSuccess) return result;

  const int window = std::max(
      1, static_cast<int>(std::lround(eval.settle_window / params.dt_ctrl)));
  const int quiet = static_cast<int>(
      std::lround(eval.contact_free_window / params.dt_ctrl));
  const int n = static_cast<int>(tilt.size());
  auto window_ok = [&](int end) {  // window covering steps [end - window, end)
    double t_sum = 0.0, r_sum = 0.0;
    for (int k = end - window; k < end; ++k) {
      t_sum += tilt[k];
      r_sum += rate[k];
    }
    return t_sum / window < eval.settle_tilt && r_sum / window < eval.settle_rate;
  };
  bool contact_free = true;
  for (int k = std::max(0, n - quiet); k < n; ++k) {
    if (touching[k]) contact_free = false;
  }
  result.success = n >= window && window_ok(n) && contact_free;
  if (!result.success) {
    result.outcome = Outcome::kFailTilt;
    return result;
  }
  const int push_end = static_cast<int>(
      std::ceil((push.onset + push.duration) / params.dt_ctrl - 1e-9));
  for (int end = std::max(window, push_end + window); end <= n; ++end) {
    if (window_ok(end)) {
      result.time_to_stabilize = end * params.dt_ctrl - push.onset;
      break;
    }
  }
  return result;
}

double RecoverySuccessRate(const std::vector<EpisodeResult>& results) {
  if (results.empty()) {
    throw std::invalid_argument("recovery success rate of an empty set");
  }
  int ok = 0;
  for (const auto& r : results) ok += r.success ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(results.size());
}

SweepKind ParseSweepKind(const std::string& name) {
  if (name == "force") return SweepKind::kForce;
  if (name == "wall" || name == "wall_distance") return SweepKind::kWallDistance;
  if (name == "direction" || name == "push_direction") {
    return SweepKind::kPushDirection;
  }
  if (name == "mismatch") return SweepKind::kMismatch;
  throw ConfigError("unknown sweep '" + name +
                    "' (expected force, wall, direction or mismatch)");
}

namespace {

struct CellSummary {
  int n = 0;
  double rsr = 0.0;
  double mean_peak_tilt = 0.0;
};

CellSummary RunCell(const PolicySnapshot& policy, const Config& config,
                    double force, double direction,
                    const EpisodeOptions& options) {
  std::vector<EpisodeResult> results;
  results.reserve(config.eval.episodes);
  double peak = 0.0;
  for (int i = 0; i < config.eval.episodes; ++i) {
    const std::uint64_t seed = EpisodeSeed(config.eval.seed, i);
    const PushEvent push = EvalPush(force, direction, seed, config.push);
    results.push_back(RunEpisode(policy, config.env, config.reward, push, seed,
                                 options, config.eval));
    peak += results.back().peak_tilt;
  }
  CellSummary s;
  s.n = static_cast<int>(results.size());
  s.rsr = RecoverySuccessRate(results);
  s.mean_peak_tilt = peak / s.n;
  return s;
}

EpisodeOptions BaseOptions(const EvalConfig& eval) {
  EpisodeOptions options;
  options.deterministic = eval.deterministic;
  options.argmax_modes = eval.argmax_modes;
  return options;
}

}  // namespace

CsvTable RunSweep(SweepKind kind, const PolicySnapshot& policy,
                  const Config& config) {
  config.eval.Validate();
  CsvTable table;
  const EpisodeOptions base = BaseOptions(config.eval);
  switch (kind) {
    case SweepKind::kForce: {
      table.header = {"force", "n", "rsr", "mean_peak_tilt"};
      for (double force : config.eval.force_grid) {
        const CellSummary s = RunCell(policy, config, force, 0.0, base);
        table.rows.push_back({Cell(force), std::to_string(s.n), Cell(s.rsr),
                              Cell(s.mean_peak_tilt)});
      }
      break;
    }
    case SweepKind::kWallDistance: {
      table.header = {"wall_distance", "direction", "force", "n", "rsr",
                      "mean_peak_tilt"};
      for (double distance : config.eval.wall_distances) {
        for (double direction : {1.0, -1.0}) {
          EpisodeOptions options = base;
          options.wall_distance = distance;
          const CellSummary s = RunCell(policy, config, config.eval.wall_force,
                                        direction, options);
          table.rows.push_back({Cell(distance),
                                direction > 0 ? "toward" : "away",
                                Cell(config.eval.wall_force),
                                std::to_string(s.n), Cell(s.rsr),
                                Cell(s.mean_peak_tilt)});
        }
      }
      break;
    }
    case SweepKind::kPushDirection: {
      table.header = {"direction", "wall_distance", "force", "n", "rsr",
                      "mean_peak_tilt"};
      for (double direction : {1.0, -1.0}) {
        EpisodeOptions options = base;
        options.wall_distance = config.eval.direction_wall;
        const CellSummary s = RunCell(policy, config, config.eval.wall_force,
                                      direction, options);
        table.rows.push_back({direction > 0 ? "toward" : "away",
                              Cell(config.eval.direction_wall),
                              Cell(config.eval.wall_force),
                              std::to_string(s.n), Cell(s.rsr),
                              Cell(s.mean_peak_tilt)});
      }
      break;
    }
    case SweepKind::kMismatch: {
      table.header = {"condition", "force", "n", "rsr", "mean_peak_tilt"};
      const Mismatch conditions[] = {Mismatch::kNone, Mismatch::kFriction,
                                     Mismatch::kLatency, Mismatch::kMass,
                                     Mismatch::kCompound};
      for (Mismatch m : conditions) {
        EpisodeOptions options = base;
        options.mismatch = m;
        const CellSummary s = RunCell(policy, config,
                                      config.eval.mismatch_force, 0.0, options);
        table.rows.push_back({std::string(MismatchName(m)),
                              Cell(config.eval.mismatch_force),
                              std::to_string(s.n), Cell(s.rsr),
                              Cell(s.mean_peak_tilt)});
      }
      break;
    }
  }
  return table;
}

CsvTable ExportModes(const PolicySnapshot& policy, const Config& config,
                     int episodes) {
  if (episodes < 1) throw ConfigError("modes export needs >= 1 episode");
  config.eval.Validate();
  const int k = policy.net.modes;
  CsvTable table;
  table.header = {"episode_id", "force", "direction", "outcome"};
  for (int j = 1; j <= k; ++j) table.header.push_back("zbar_" + std::to_string(j));
  for (int j = 1; j <= k; ++j) {
    table.header.push_back("occupancy_" + std::to_string(j));
  }
  const EpisodeOptions options = BaseOptions(config.eval);
  const auto& grid = config.eval.force_grid;
  const int levels = static_cast<int>(grid.size());
  int id = 0;
  for (int level = 0; level < levels; ++level) {
    const int count = episodes / levels + (level < episodes % levels ? 1 : 0);
    for (int i = 0; i < count; ++i, ++id) {
      const std::uint64_t seed = EpisodeSeed(config.eval.seed, id);
      const PushEvent push = EvalPush(grid[level], 0.0, seed, config.push);
      const EpisodeResult r = RunEpisode(policy, config.env, config.reward,
                                         push, seed, options, config.eval);
      std::vector<std::string> row = {std::to_string(id), Cell(grid[level]),
                                      Cell(push.direction),
                                      OutcomeName(r.outcome)};
      for (int j = 0; j < k; ++j) row.push_back(Cell(r.mode_mean[j]));
      for (int j = 0; j < k; ++j) row.push_back(Cell(r.mode_occupancy[j]));
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

ReturnSummary MeasureReturn(const PolicySnapshot* policy, const Config& config,
                            int episodes, std::uint64_t seed,
                            bool random_actions, bool deterministic) {
  if (policy == nullptr && !random_actions) {
    throw std::invalid_argument("MeasureReturn needs a policy or random mode");
  }
  ReturnSummary summary;
  ForwardCache<float> cache;
  const ModeSelect select = config.eval.argmax_modes ? ModeSelect::kArgmax
                                                     : ModeSelect::kSoft;
  for (int i = 0; i < episodes; ++i) {
    std::mt19937_64 rng(EpisodeSeed(seed, i));
    EnvParams params = config.env;
    std::uniform_real_distribution<double> friction(config.run.friction_min,
                                                    config.run.friction_max);
    params.friction = friction(rng);
    const PushEvent push =
        SamplePush(rng, /*training=*/true, config.push, params.dt_ctrl);
    auto [state, frame] = EnvReset(params, push, rng());
    const int history_len = policy ? policy->net.history : 1;
    HistoryBuffer history(history_len, static_cast<int>(frame.size()));
    history.Push(frame);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    double ret = 0.0;
    int length = 0;
    bool fell = false;
    while (true) {
      Action action;
      if (random_actions) {
        for (int j = 0; j < kActionDim; ++j) action[j] = unit(rng);
      } else {
        const PolicyOutput out = Act(*policy, history, select, cache);
        action = out.mean;
        if (!deterministic) {
          action = SampleAction<float>(cache.mean.row(0).transpose(),
                                       policy->params.log_std, rng)
                       .action.cast<double>();
        }
      }
      StepOutcome step;
      try {
        step = EnvStep(state, params, action, config.reward);
      } catch (const SimulationDiverged&) {
        fell = true;
        ++length;
        break;
      }
      ret += step.reward.total;
      ++length;
      history.Push(step.frame);
      if (step.terminated) {
        fell = true;
        break;
      }
      if (step.truncated) break;
    }
    summary.mean_return += ret;
    summary.mean_length += length;
    summary.fall_fraction += fell ? 1.0 : 0.0;
  }
  summary.mean_return /= episodes;
  summary.mean_length /= episodes;
  summary.fall_fraction /= episodes;
  return summary;
}

}  // namespace pushrec
