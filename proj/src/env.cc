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

#include "pushrec/env.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "pushrec/errors.h"
#include "pushrec/features.h"

namespace pushrec {
namespace {

void Require(bool ok, const char* field, const char* rule) {
  if (!ok) {
    std::ostringstream msg;
    msg << "invalid env parameter '" << field << "': " << rule;
    throw ConfigError(msg.str());
  }
}

bool AllPositive(const Eigen::Vector3d& v) { return (v.array() > 0.0).all(); }

bool IsMultiple(double big, double small) {
  const double ratio = big / small;
  return std::abs(ratio - std::round(ratio)) < 1e-9 * std::max(1.0, ratio);
}

}  // namespace

void EnvParams::Validate() const {
  Require(AllPositive(link_length), "link_length", "must be > 0");
  Require(AllPositive(mass), "mass", "must be > 0");
  Require(gravity >= 0.0, "gravity", "must be >= 0");
  Require(dt_phys > 0.0, "dt_phys", "must be > 0");
  Require(dt_ctrl >= dt_phys, "dt_ctrl", "must be >= dt_phys");
  Require(IsMultiple(dt_ctrl, dt_phys), "dt_ctrl",
          "must be an integer multiple of dt_phys");
  Require(AllPositive(kp), "kp", "must be > 0");
  Require(AllPositive(kd), "kd", "must be > 0");
  Require(torque_limit > 0.0, "torque_limit", "must be > 0");
  Require(q_default.allFinite(), "q_default", "must be finite");
  Require(action_scale > 0.0, "action_scale", "must be > 0");
  Require(reset_noise >= 0.0, "reset_noise", "must be >= 0");
  Require(wall_stiffness > 0.0, "wall_stiffness", "must be > 0");
  Require(wall_damping > 0.0, "wall_damping", "must be > 0");
  Require(wall_skin >= 0.0, "wall_skin", "must be >= 0");
  Require(friction >= 0.0, "friction", "must be >= 0");
  Require(friction_slip_speed > 0.0, "friction_slip_speed", "must be > 0");
  Require(torso_mass_scale > 0.0, "torso_mass_scale", "must be > 0");
  Require(latency >= 0.0, "latency", "must be >= 0");
  Require(!contact_heights.empty(), "contact_heights", "must be non-empty");
  Require(distance_ceiling > 0.0, "distance_ceiling", "must be > 0");
  Require(step_length > 0.0, "step_length", "must be > 0");
  Require(step_tilt > 0.0, "step_tilt", "must be > 0");
  Require(step_swing > 0.0, "step_swing", "must be > 0");
  Require(step_cooldown >= 0.0, "step_cooldown", "must be >= 0");
  Require(swing_rate > 0.0, "swing_rate", "must be > 0");
  Require(foot_lift_time >= 0.0, "foot_lift_time", "must be >= 0");
  Require(fall_tilt > 0.0, "fall_tilt", "must be > 0");
  Require(fall_height >= 0.0, "fall_height", "must be >= 0");
  Require(episode_time > 0.0, "episode_time", "must be > 0");
  Require(contact_upright_band >= 0.0, "contact_upright_band",
          "must be >= 0");
}

int EnvParams::substeps() const {
  return static_cast<int>(std::lround(dt_ctrl / dt_phys));
}

int EnvParams::latency_steps() const {
  return static_cast<int>(std::lround(latency / dt_phys));
}

int EnvParams::episode_steps() const {
  return static_cast<int>(std::lround(episode_time / dt_ctrl));
}

ChainModel<double> EnvParams::Chain() const {
  ChainModel<double> chain;
  chain.length = link_length;
  chain.mass = mass;
  chain.mass[1] *= torso_mass_scale;
  chain.gravity = gravity;
  return chain;
}

void PushEvent::Validate() const {
  if (!(magnitude >= 0.0)) throw ConfigError("push magnitude must be >= 0");
  if (!(duration > 0.0)) throw ConfigError("push duration must be > 0");
  if (!(onset >= 0.0)) throw ConfigError("push onset must be >= 0");
  if (direction != 1.0 && direction != -1.0) {
    throw ConfigError("push direction must be +1 or -1");
  }
}

void PushRanges::Validate() const {
  if (!(force_min >= 0.0) || !(force_max >= force_min)) {
    throw ConfigError("push force range is empty or negative");
  }
  if (!(onset_min >= 0.0) || !(onset_max >= onset_min)) {
    throw ConfigError("push onset range is empty or negative");
  }
  if (!(eval_duration > 0.0)) {
    throw ConfigError("push eval_duration must be > 0");
  }
}

void RewardConfig::Validate() const {
  const double weights[] = {upright_weight, height_weight,      alive_bonus,
                            useful_weight,  harmful_weight,     action_penalty,
                            action_rate_penalty, termination_penalty};
  for (double w : weights) {
    if (!(w >= 0.0)) throw ConfigError("reward weights must be >= 0");
  }
  if (!(upright_width > 0.0)) throw ConfigError("upright_width must be > 0");
  if (!(height_width > 0.0)) throw ConfigError("height_width must be > 0");
}

double Tilt(const EnvState& state) { return state.q[0] + state.q[1]; }

double TiltRate(const EnvState& state) { return state.dq[0] + state.dq[1]; }

double HipHeight(const EnvState& state, const EnvParams& params) {
  return state.pivot.y() + params.link_length[0] * std::cos(state.q[0]);
}

Eigen::Vector2d HipVelocity(const EnvState& state, const EnvParams& params) {
  const double l1 = params.link_length[0];
  return l1 * state.dq[0] *
         Eigen::Vector2d(std::cos(state.q[0]), -std::sin(state.q[0]));
}

std::array<Eigen::Vector2d, 3> WorldPoints(const EnvState& state,
                                           const EnvParams& params) {
  auto p = PointPositions(params.Chain(), AbsoluteFromJoint(state.q));
  for (auto& point : p) point += state.pivot;
  return p;
}

Eigen::Vector2d HandVelocity(const EnvState& state, const EnvParams& params) {
  const Eigen::Vector3d theta = AbsoluteFromJoint(state.q);
  const Eigen::Vector3d theta_dot = AbsoluteFromJoint(state.dq);
  return PointJacobian(params.Chain(), theta, 2) * theta_dot;
}

std::pair<EnvState, ObservationFrame> EnvReset(const EnvParams& params,
                                               const PushEvent& push,
                                               std::uint64_t seed) {
  params.Validate();
  push.Validate();
  EnvState state;
  std::mt19937_64 rng(seed);
  state.q = params.q_default;
  if (params.reset_noise > 0.0) {
    std::uniform_real_distribution<double> noise(-params.reset_noise,
                                                 params.reset_noise);
    for (int i = 0; i < 3; ++i) state.q[i] += noise(rng);
  }
  state.push = push;
  state.torque_queue.assign(params.latency_steps(), Eigen::Vector3d::Zero());
  ObservationFrame frame = BuildFrame(state, state.prev_action, params);
  return {std::move(state), std::move(frame)};
}

WallContact ComputeWallContact(const EnvState& state, const EnvParams& params) {
  WallContact contact;
  if (!params.wall_present) return contact;
  const auto points = WorldPoints(state, params);
  const Eigen::Vector2d hand = points[2];
  const double penetration = hand.x() - (params.wall_x - params.wall_skin);
  if (penetration <= 0.0) return contact;

  contact.active = true;
  const Eigen::Vector2d hand_vel = HandVelocity(state, params);
  const double normal = std::max(
      0.0, params.wall_stiffness * penetration + params.wall_damping * hand_vel.x());
  contact.force.x() = -normal;
  contact.force.y() = -params.friction * normal *
                      std::tanh(hand_vel.y() / params.friction_slip_speed);

  const double tilt = Tilt(state);
  const double toward_wall = params.wall_x >= state.pivot.x() ? 1.0 : -1.0;
  if (std::abs(tilt) <= params.contact_upright_band) {
    contact.classification = ContactClass::kHarmful;
  } else if (tilt * toward_wall > 0.0) {
    contact.classification = ContactClass::kUseful;
  }
  return contact;
}

void DynamicsSubstep(EnvState& state, const EnvParams& params,
                     const Eigen::Vector3d& torques,
                     const std::array<Eigen::Vector2d, 3>& forces, double dt) {
  const ChainModel<double> chain = params.Chain();
  Eigen::Vector3d theta = AbsoluteFromJoint(state.q);
  Eigen::Vector3d theta_dot = AbsoluteFromJoint(state.dq);
  Eigen::Vector3d q_ext = Eigen::Vector3d::Zero();
  for (int k = 0; k < 3; ++k) {
    if (forces[k].x() != 0.0 || forces[k].y() != 0.0) {
      q_ext += PointJacobian(chain, theta, k).transpose() * forces[k];
    }
  }
  const Eigen::Vector3d accel =
      ForwardDynamics(chain, theta, theta_dot, torques, q_ext);
  theta_dot += dt * accel;
  theta += dt * theta_dot;
  state.q = JointFromAbsolute(theta);
  state.dq = JointFromAbsolute(theta_dot);
}

bool PivotTransfer(EnvState& state, const EnvParams& params) {
  const double tilt = Tilt(state);
  const int cooldown_steps =
      static_cast<int>(std::lround(params.step_cooldown / params.dt_ctrl));
  const bool same_side = (state.swing > 0.0) == (tilt > 0.0);
  if (std::abs(tilt) <= params.step_tilt || !same_side ||
      std::abs(state.swing) <= params.step_swing ||
      state.steps_since_transfer < cooldown_steps) {
    return false;
  }

  const double l1 = params.link_length[0];
  const Eigen::Vector2d hip =
      state.pivot + l1 * Eigen::Vector2d(std::sin(state.q[0]),
                                         std::cos(state.q[0]));
  const Eigen::Vector2d new_pivot(
      state.pivot.x() + params.step_length * std::sin(state.swing),
      state.pivot.y());
  const double offset = hip.x() - new_pivot.x();
  if (std::abs(offset) >= l1) return false;

  // The hip keeps its horizontal position; its height follows from the leg
  // length. Torso and arm keep their absolute angles and rates.
  const Eigen::Vector3d theta = AbsoluteFromJoint(state.q);
  Eigen::Vector3d theta_dot = AbsoluteFromJoint(state.dq);
  const Eigen::Vector2d hip_vel = HipVelocity(state, params);
  const double new_q1 = std::asin(offset / l1);
  const Eigen::Vector2d tangent(std::cos(new_q1), -std::sin(new_q1));
  // Least-squares match of the hip velocity by the new stance-leg rate.
  theta_dot[0] = hip_vel.dot(tangent) / l1;

  Eigen::Vector3d new_theta = theta;
  new_theta[0] = new_q1;
  state.pivot = new_pivot;
  state.q = JointFromAbsolute(new_theta);
  state.dq = JointFromAbsolute(theta_dot);
  state.swing = 0.0;
  state.swing_rate = 0.0;
  state.steps_since_transfer = 0;
  state.foot_lift_steps =
      static_cast<int>(std::lround(params.foot_lift_time / params.dt_ctrl));
  state.foot_contact = state.foot_lift_steps > 0 ? 0 : 1;
  return true;
}

RewardTerms ComputeReward(const EnvState& state, const EnvParams& params,
                          const Action& action, const Action& prev_action,
                          ContactClass contact, bool terminated,
                          const RewardConfig& cfg) {
  RewardTerms r;
  const double tilt_err = Tilt(state) / cfg.upright_width;
  const double height_err =
      (HipHeight(state, params) - params.link_length[0]) / cfg.height_width;
  r.up = cfg.upright_weight * std::exp(-tilt_err * tilt_err) +
         cfg.height_weight * std::exp(-height_err * height_err) +
         cfg.alive_bonus;
  if (params.wall_present) {
    if (contact == ContactClass::kUseful) r.contact = cfg.useful_weight;
    if (contact == ContactClass::kHarmful) r.contact = -cfg.harmful_weight;
  }
  r.reg = -cfg.action_penalty * action.squaredNorm() -
          cfg.action_rate_penalty * (action - prev_action).squaredNorm();
  r.term = terminated ? -cfg.termination_penalty : 0.0;
  r.total = r.up + r.contact + r.reg + r.term;
  return r;
}

StepOutcome EnvStep(EnvState& state, const EnvParams& params,
                    const Action& raw_action, const RewardConfig& reward_cfg) {
  const Action action = raw_action.cwiseMax(-1.0).cwiseMin(1.0);
  const Eigen::Vector3d q_ref =
      params.q_default + params.action_scale * action.head<3>();
  state.swing_target = action[3] * (std::numbers::pi / 3.0);

  if (state.foot_lift_steps > 0) --state.foot_lift_steps;
  state.foot_contact = state.foot_lift_steps > 0 ? 0 : 1;
  ++state.steps_since_transfer;

  state.contact_useful = false;
  state.contact_harmful = false;
  state.wall_touching = false;
  const int substeps = params.substeps();
  for (int s = 0; s < substeps; ++s) {
    const Eigen::Vector3d fresh =
        (params.kp.cwiseProduct(q_ref - state.q) -
         params.kd.cwiseProduct(state.dq))
            .cwiseMax(-params.torque_limit)
            .cwiseMin(params.torque_limit);
    Eigen::Vector3d torque = fresh;
    if (!state.torque_queue.empty()) {
      torque = state.torque_queue[state.queue_head];
      state.torque_queue[state.queue_head] = fresh;
      state.queue_head = (state.queue_head + 1) % state.torque_queue.size();
    }

    std::array<Eigen::Vector2d, 3> forces;
    forces.fill(Eigen::Vector2d::Zero());
    if (state.push.ActiveAt(state.time)) {
      forces[1].x() = state.push.direction * state.push.magnitude;
    }
    const WallContact wall = ComputeWallContact(state, params);
    if (wall.active) {
      forces[2] += wall.force;
      state.wall_touching = true;
      state.contact_useful |= wall.classification == ContactClass::kUseful;
      state.contact_harmful |= wall.classification == ContactClass::kHarmful;
    }

    DynamicsSubstep(state, params, torque, forces, params.dt_phys);
    ++state.substep_count;
    state.time = static_cast<double>(state.substep_count) * params.dt_phys;
  }
  ++state.step_count;

  if (!state.q.allFinite() || !state.dq.allFinite()) {
    std::ostringstream msg;
    msg << "simulation diverged at control step " << state.step_count;
    throw SimulationDiverged(msg.str(), state.step_count);
  }

  StepOutcome out;
  out.transferred = PivotTransfer(state, params);

  const double max_delta = params.swing_rate * params.dt_ctrl;
  const double delta =
      std::clamp(state.swing_target - state.swing, -max_delta, max_delta);
  state.swing += delta;
  state.swing_rate = delta / params.dt_ctrl;

  ContactClass contact = ContactClass::kNone;
  if (state.contact_useful) contact = ContactClass::kUseful;
  if (state.contact_harmful) contact = ContactClass::kHarmful;
  out.contact = contact;

  if (std::abs(Tilt(state)) > params.fall_tilt) {
    state.cause = Termination::kTilt;
  } else if (HipHeight(state, params) < params.fall_height) {
    state.cause = Termination::kHeight;
  }
  state.terminated = state.cause != Termination::kNone;
  out.terminated = state.terminated;
  out.truncated = !out.terminated && state.step_count >= params.episode_steps();

  out.reward = ComputeReward(state, params, action, state.prev_action, contact,
                             out.terminated, reward_cfg);
  state.prev_action = action;
  out.frame = BuildFrame(state, action, params);
  return out;
}

PushEvent SamplePush(std::mt19937_64& rng, bool training,
                     const PushRanges& ranges, double dt_ctrl) {
  ranges.Validate();
  std::uniform_real_distribution<double> force(ranges.force_min,
                                               ranges.force_max);
  std::uniform_real_distribution<double> onset(ranges.onset_min,
                                               ranges.onset_max);
  std::bernoulli_distribution sign(0.5);
  PushEvent push;
  push.magnitude = force(rng);
  push.direction = sign(rng) ? 1.0 : -1.0;
  push.onset = onset(rng);
  push.duration = training ? dt_ctrl : ranges.eval_duration;
  return push;
}

Mismatch ParseMismatch(std::string_view name) {
  if (name.empty() || name == "none" || name == "nominal") {
    return Mismatch::kNone;
  }
  if (name == "friction") return Mismatch::kFriction;
  if (name == "latency") return Mismatch::kLatency;
  if (name == "mass") return Mismatch::kMass;
  if (name == "compound") return Mismatch::kCompound;
  throw ConfigError("unknown mismatch spec '" + std::string(name) + "'");
}

std::string_view MismatchName(Mismatch mismatch) {
  switch (mismatch) {
    case Mismatch::kNone:
      return "nominal";
    case Mismatch::kFriction:
      return "friction";
    case Mismatch::kLatency:
      return "latency";
    case Mismatch::kMass:
      return "mass";
    case Mismatch::kCompound:
      return "compound";
  }
  return "nominal";
}

EnvParams ApplyMismatch(const EnvParams& params, Mismatch mismatch) {
  EnvParams out = params;
  const bool all = mismatch == Mismatch::kCompound;
  if (all || mismatch == Mismatch::kFriction) out.friction = 0.3;
  if (all || mismatch == Mismatch::kLatency) out.latency = 0.030;
  if (all || mismatch == Mismatch::kMass) out.mass[1] = params.mass[1] * 1.25;
  return out;
}

}  // namespace pushrec
