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

#ifndef PUSHREC_ENV_H_
#define PUSHREC_ENV_H_

// Planar balance-recovery environment: a pinned stance-leg/torso/arm chain
// of point masses with a kinematic swing leg, PD actuation at the control
// rate, torso pushes, an optional one-sided wall for hand bracing, and
// pivot transfer as the stepping proxy.

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "pushrec/dynamics.h"

namespace pushrec {

using ObservationFrame = Eigen::VectorXd;

inline constexpr int kActionDim = 4;
using Action = Eigen::Matrix<double, kActionDim, 1>;

struct EnvParams {
  Eigen::Vector3d link_length{0.5, 0.5, 0.4};
  Eigen::Vector3d mass{2.0, 4.0, 0.5};
  double gravity = 9.81;
  double dt_phys = 0.005;
  double dt_ctrl = 0.02;
  Eigen::Vector3d kp{60.0, 60.0, 60.0};
  Eigen::Vector3d kd{2.0, 2.0, 2.0};
  double torque_limit = 40.0;
  Eigen::Vector3d q_default{0.0, 0.0, -0.3};
  double action_scale = 0.25;
  double reset_noise = 0.02;

  bool wall_present = false;
  double wall_x = 0.6;
  double wall_stiffness = 2000.0;
  double wall_damping = 50.0;
  double wall_skin = 0.02;
  double friction = 0.8;
  // Vertical hand speed at which wall friction saturates at mu * normal.
  double friction_slip_speed = 0.01;

  double torso_mass_scale = 1.0;
  double latency = 0.0;

  std::vector<double> contact_heights{0.4, 0.7, 1.0, 1.3};
  double distance_ceiling = 3.0;

  double step_length = 0.6;
  double step_tilt = 0.15;
  double step_swing = 0.3;
  double step_cooldown = 0.2;
  double swing_rate = 6.0;
  double foot_lift_time = 0.1;

  double fall_tilt = 0.785;
  double fall_height = 0.3;
  double episode_time = 10.0;
  double contact_upright_band = 0.05;

  // Throws ConfigError naming the first invalid field.
  void Validate() const;

  int substeps() const;
  int latency_steps() const;
  int episode_steps() const;
  int contact_count() const { return static_cast<int>(contact_heights.size()); }
  ChainModel<double> Chain() const;
};

struct PushEvent {
  double magnitude = 0.0;  // N
  double direction = 1.0;  // +1 or -1 along x
  double onset = 1.0;      // s
  double duration = 0.02;  // s

  void Validate() const;
  bool ActiveAt(double t) const {
    return magnitude > 0.0 && t >= onset && t < onset + duration;
  }
};

struct PushRanges {
  double force_min = 10.0;
  double force_max = 40.0;
  double onset_min = 1.0;
  double onset_max = 3.0;
  double eval_duration = 0.1;

  void Validate() const;
};

struct RewardConfig {
  double upright_weight = 1.0;
  double upright_width = 0.3;
  double height_weight = 0.5;
  double height_width = 0.1;
  double alive_bonus = 0.2;
  double useful_weight = 0.5;
  double harmful_weight = 0.5;
  double action_penalty = 0.01;
  double action_rate_penalty = 0.05;
  double termination_penalty = 200.0;

  void Validate() const;
};

enum class ContactClass { kNone, kUseful, kHarmful };

struct WallContact {
  Eigen::Vector2d force = Eigen::Vector2d::Zero();
  ContactClass classification = ContactClass::kNone;
  bool active = false;
};

struct RewardTerms {
  double up = 0.0;
  double contact = 0.0;
  double reg = 0.0;
  double term = 0.0;
  double total = 0.0;
};

enum class Termination { kNone, kTilt, kHeight };

struct EnvState {
  Eigen::Vector2d pivot = Eigen::Vector2d::Zero();
  Eigen::Vector3d q = Eigen::Vector3d::Zero();   // relative joint angles
  Eigen::Vector3d dq = Eigen::Vector3d::Zero();
  double swing = 0.0;         // kinematic swing-leg angle q4
  double swing_rate = 0.0;    // its rate over the last control step
  double swing_target = 0.0;
  double time = 0.0;
  std::int64_t substep_count = 0;
  int step_count = 0;
  int steps_since_transfer = 1 << 20;
  int foot_lift_steps = 0;
  int foot_contact = 1;
  PushEvent push;
  // Torque commands waiting to be applied, oldest at queue_head.
  std::vector<Eigen::Vector3d> torque_queue;
  std::size_t queue_head = 0;
  Action prev_action = Action::Zero();
  bool contact_useful = false;
  bool contact_harmful = false;
  bool wall_touching = false;
  bool terminated = false;
  Termination cause = Termination::kNone;
};

struct StepOutcome {
  ObservationFrame frame;
  RewardTerms reward;
  bool terminated = false;
  bool truncated = false;
  bool transferred = false;
  ContactClass contact = ContactClass::kNone;
};

// Derived kinematic quantities of a state.
double Tilt(const EnvState& state);
double TiltRate(const EnvState& state);
double HipHeight(const EnvState& state, const EnvParams& params);
Eigen::Vector2d HipVelocity(const EnvState& state, const EnvParams& params);
std::array<Eigen::Vector2d, 3> WorldPoints(const EnvState& state,
                                           const EnvParams& params);
Eigen::Vector2d HandVelocity(const EnvState& state, const EnvParams& params);

std::pair<EnvState, ObservationFrame> EnvReset(const EnvParams& params,
                                               const PushEvent& push,
                                               std::uint64_t seed);

StepOutcome EnvStep(EnvState& state, const EnvParams& params,
                    const Action& action, const RewardConfig& reward_cfg);

// One semi-implicit Euler step of the chain. forces are world-frame forces
// at the hip, torso and hand points.
void DynamicsSubstep(EnvState& state, const EnvParams& params,
                     const Eigen::Vector3d& torques,
                     const std::array<Eigen::Vector2d, 3>& forces, double dt);

WallContact ComputeWallContact(const EnvState& state, const EnvParams& params);

// Relocates the pivot when the swing leg is placed in the fall direction.
// Returns true if a transfer happened.
bool PivotTransfer(EnvState& state, const EnvParams& params);

PushEvent SamplePush(std::mt19937_64& rng, bool training,
                     const PushRanges& ranges, double dt_ctrl);

enum class Mismatch { kNone, kFriction, kLatency, kMass, kCompound };

// Accepts "", "nominal", "friction", "latency", "mass", "compound".
Mismatch ParseMismatch(std::string_view name);
std::string_view MismatchName(Mismatch mismatch);
EnvParams ApplyMismatch(const EnvParams& params, Mismatch mismatch);

RewardTerms ComputeReward(const EnvState& state, const EnvParams& params,
                          const Action& action, const Action& prev_action,
                          ContactClass contact, bool terminated,
                          const RewardConfig& cfg);

}  // namespace pushrec

#endif  // PUSHREC_ENV_H_
