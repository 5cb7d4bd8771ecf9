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

#ifndef PUSHREC_FEATURES_H_
#define PUSHREC_FEATURES_H_

#include <vector>

#include <Eigen/Dense>

#include "pushrec/env.h"

namespace pushrec {

// Index map of an observation frame with K contact regions:
//   [0, 4)        joint positions q1..q4
//   [4, 8)        joint velocities dq1..dq4
//   [8, 10)       projected gravity (sin phi, cos phi)
//   10            torso angular velocity
//   [11, 13)      hip linear velocity (x, z)
//   13            foot contact
//   [14, 14 + K)  hand-to-region distances, clipped to the ceiling
//   [14 + K, 18 + K) previous action
struct FrameLayout {
  static constexpr int kJointPos = 0;
  static constexpr int kJointVel = 4;
  static constexpr int kGravity = 8;
  static constexpr int kTorsoRate = 10;
  static constexpr int kHipVel = 11;
  static constexpr int kFootContact = 13;
  static constexpr int kDistances = 14;

  int contact_count = 4;

  int prev_action() const { return kDistances + contact_count; }
  int size() const { return prev_action() + kActionDim; }
};

ObservationFrame BuildFrame(const EnvState& state, const Action& prev_action,
                            const EnvParams& params);

// Rolling window of the last H frames. Before H frames have been observed the
// missing (oldest) slots read as zero frames.
class HistoryBuffer {
 public:
  HistoryBuffer(int capacity, int frame_dim);

  void Push(const ObservationFrame& frame);
  void Clear();

  // H x frame_dim, oldest row first.
  Eigen::MatrixXd ReadOut() const;

  int capacity() const { return capacity_; }
  int frame_dim() const { return frame_dim_; }
  int fill() const { return fill_; }

 private:
  int capacity_;
  int frame_dim_;
  int fill_ = 0;
  int next_ = 0;
  Eigen::MatrixXd ring_;
};

// Per-entry running mean and variance (population), merged with the
// pairwise formula so shards combine in a fixed order.
class RunningNorm {
 public:
  static constexpr double kClip = 10.0;
  static constexpr double kEpsilon = 1e-8;

  RunningNorm() = default;
  explicit RunningNorm(int dim);

  // Rows of batch are frames. No-op while frozen.
  void Update(const Eigen::MatrixXd& batch);
  void Update(const ObservationFrame& frame);
  void Merge(const RunningNorm& other);

  ObservationFrame Apply(const ObservationFrame& frame) const;
  // Row-wise Apply.
  Eigen::MatrixXd ApplyRows(const Eigen::MatrixXd& frames) const;

  Eigen::VectorXd mean() const { return mean_; }
  Eigen::VectorXd variance() const;

  double count() const { return count_; }
  int dim() const { return static_cast<int>(mean_.size()); }
  bool frozen() const { return frozen_; }
  void set_frozen(bool frozen) { frozen_ = frozen; }

  // Raw sufficient statistics, used by checkpoints.
  const Eigen::VectorXd& sum_sq_dev() const { return m2_; }
  void SetState(double count, const Eigen::VectorXd& mean,
                const Eigen::VectorXd& m2);

 private:
  double count_ = 0.0;
  Eigen::VectorXd mean_;
  Eigen::VectorXd m2_;
  bool frozen_ = false;
};

// Merges shards pairwise in a fixed balanced-tree order.
RunningNorm MergeTree(std::vector<RunningNorm> shards);

// Normalized read-out; pre-fill slots stay zero frames.
Eigen::MatrixXd NormalizedHistory(const HistoryBuffer& history,
                                  const RunningNorm& norm);

}  // namespace pushrec

#endif  // PUSHREC_FEATURES_H_
