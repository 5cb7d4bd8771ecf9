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

#ifndef PUSHREC_EVAL_H_
#define PUSHREC_EVAL_H_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pushrec/csv.h"
#include "pushrec/env.h"
#include "pushrec/features.h"
#include "pushrec/policy.h"

namespace pushrec {

struct Config;
struct TrainerState;

struct EvalConfig {
  std::vector<double> force_grid{5, 10, 15, 20, 25, 30};
  std::vector<double> wall_distances{0.3, 0.45, 0.6, 0.75, 0.9};
  double wall_force = 15.0;
  double mismatch_force = 15.0;
  double direction_wall = 0.5;
  int episodes = 50;
  bool deterministic = true;
  bool argmax_modes = true;
  std::uint64_t seed = 1000;
  // Stable-standing window.
  double settle_window = 1.0;
  double settle_tilt = 0.087;
  double settle_rate = 0.5;
  double contact_free_window = 0.5;

  void Validate() const;
};

enum class Outcome { kSuccess, kFailTilt, kFailHeight, kFailDiverged };
std::string OutcomeName(Outcome outcome);

struct EpisodeResult {
  bool success = false;
  Outcome outcome = Outcome::kSuccess;
  double peak_tilt = 0.0;
  std::optional<double> time_to_stabilize;
  double push_force = 0.0;
  double push_direction = 1.0;
  std::optional<double> wall_distance;
  Mismatch mismatch = Mismatch::kNone;
  int steps = 0;
  double episode_return = 0.0;
  Eigen::VectorXd mode_mean;       // episode-mean posterior, on the simplex
  Eigen::VectorXd mode_occupancy;  // argmax fractions
  Eigen::VectorXd affordance_mean;
  std::vector<Action> actions;     // filled when record_actions is set
};

// Frozen policy snapshot used for evaluation.
struct PolicySnapshot {
  NetConfig net;
  PolicyParams<float> params;
  RunningNorm norm;
  double tau = 0.1;
};

PolicySnapshot SnapshotFrom(const TrainerState& state);

struct EpisodeOptions {
  bool deterministic = true;
  bool argmax_modes = true;
  bool record_actions = false;
  std::optional<double> wall_distance;
  Mismatch mismatch = Mismatch::kNone;
};

EpisodeResult RunEpisode(const PolicySnapshot& policy,
                         const EnvParams& env_params,
                         const RewardConfig& reward, const PushEvent& push,
                         std::uint64_t seed, const EpisodeOptions& options,
                         const EvalConfig& eval);

// Throws std::invalid_argument on an empty set.
double RecoverySuccessRate(const std::vector<EpisodeResult>& results);

// Per-episode seed from the base seed and the episode index.
std::uint64_t EpisodeSeed(std::uint64_t base, std::uint64_t index);

// Evaluation push of a given force; onset is drawn from the episode seed.
PushEvent EvalPush(double force, double direction, std::uint64_t seed,
                   const PushRanges& ranges);

enum class SweepKind { kForce, kWallDistance, kPushDirection, kMismatch };
SweepKind ParseSweepKind(const std::string& name);

CsvTable RunSweep(SweepKind kind, const PolicySnapshot& policy,
                  const Config& config);

// One row per episode spread evenly over the force grid.
CsvTable ExportModes(const PolicySnapshot& policy, const Config& config,
                     int episodes);

// Episodes under the training push distribution. With random_actions the
// policy is ignored and actions are uniform in [-1, 1].
struct ReturnSummary {
  double mean_return = 0.0;
  double mean_length = 0.0;
  double fall_fraction = 0.0;
};
ReturnSummary MeasureReturn(const PolicySnapshot* policy, const Config& config,
                            int episodes, std::uint64_t seed,
                            bool random_actions, bool deterministic);

}  // namespace pushrec

#endif  // PUSHREC_EVAL_H_
