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

#include "pushrec/features.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pushrec {

ObservationFrame BuildFrame(const EnvState& state, const Action& prev_action,
                            const EnvParams& params) {
  FrameLayout layout{params.contact_count()};
  ObservationFrame frame = ObservationFrame::Zero(layout.size());
  frame.segment<3>(FrameLayout::kJointPos) = state.q;
  frame[FrameLayout::kJointPos + 3] = state.swing;
  frame.segment<3>(FrameLayout::kJointVel) = state.dq;
  frame[FrameLayout::kJointVel + 3] = state.swing_rate;
  const double tilt = Tilt(state);
  frame[FrameLayout::kGravity] = std::sin(tilt);
  frame[FrameLayout::kGravity + 1] = std::cos(tilt);
  frame[FrameLayout::kTorsoRate] = TiltRate(state);
  frame.segment<2>(FrameLayout::kHipVel) = HipVelocity(state, params);
  frame[FrameLayout::kFootContact] = state.foot_contact;

  const double ceiling = params.distance_ceiling;
  if (params.wall_present) {
    const Eigen::Vector2d hand = WorldPoints(state, params)[2];
    for (int i = 0; i < layout.contact_count; ++i) {
      const Eigen::Vector2d region(params.wall_x, params.contact_heights[i]);
      frame[FrameLayout::kDistances + i] =
          std::min((hand - region).norm(), ceiling);
    }
  } else {
    frame.segment(FrameLayout::kDistances, layout.contact_count)
        .setConstant(ceiling);
  }
  frame.segment<kActionDim>(layout.prev_action()) = prev_action;
  return frame;
}

HistoryBuffer::HistoryBuffer(int capacity, int frame_dim)
    : capacity_(capacity),
      frame_dim_(frame_dim),
      ring_(Eigen::MatrixXd::Zero(capacity, frame_dim)) {
  if (capacity <= 0 || frame_dim <= 0) {
    throw std::invalid_argument("history capacity and frame_dim must be > 0");
  }
}

void HistoryBuffer::Push(const ObservationFrame& frame) {
  if (frame.size() != frame_dim_) {
    throw std::invalid_argument("history frame length mismatch");
  }
  ring_.row(next_) = frame.transpose();
  next_ = (next_ + 1) % capacity_;
  fill_ = std::min(fill_ + 1, capacity_);
}

void HistoryBuffer::Clear() {
  ring_.setZero();
  fill_ = 0;
  next_ = 0;
}

Eigen::MatrixXd HistoryBuffer::ReadOut() const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(capacity_, frame_dim_);
  // Newest frame is at next_ - 1; the oldest observed at next_ - fill_.
  for (int k = 0; k < fill_; ++k) {
    const int src = ((next_ - fill_ + k) % capacity_ + capacity_) % capacity_;
    out.row(capacity_ - fill_ + k) = ring_.row(src);
  }
  return out;
}

RunningNorm::RunningNorm(int dim)
    : mean_(Eigen::VectorXd::Zero(dim)), m2_(Eigen::VectorXd::Zero(dim)) {}

void RunningNorm::Update(const Eigen::MatrixXd& batch) {
  if (frozen_ || batch.rows() == 0) return;
  RunningNorm other(dim());
  other.count_ = static_cast<double>(batch.rows());
  other.mean_ = batch.colwise().mean().transpose();
  other.m2_ = (batch.rowwise() - other.mean_.transpose())
                  .array()
                  .square()
                  .colwise()
                  .sum()
                  .transpose();
  Merge(other);
}

void RunningNorm::Update(const ObservationFrame& frame) {
  if (frozen_) return;
  count_ += 1.0;
  const Eigen::VectorXd delta = frame - mean_;
  mean_ += delta / count_;
  m2_ += delta.cwiseProduct(frame - mean_);
}

void RunningNorm::Merge(const RunningNorm& other) {
  if (frozen_ || other.count_ == 0.0) return;
  if (count_ == 0.0) {
    count_ = other.count_;
    mean_ = other.mean_;
    m2_ = other.m2_;
    return;
  }
  const double total = count_ + other.count_;
  const Eigen::VectorXd delta = other.mean_ - mean_;
  mean_ += delta * (other.count_ / total);
  m2_ += other.m2_ + delta.cwiseProduct(delta) * (count_ * other.count_ / total);
  count_ = total;
}

Eigen::VectorXd RunningNorm::variance() const {
  if (count_ == 0.0) return Eigen::VectorXd::Ones(mean_.size());
  return (m2_ / count_).cwiseMax(0.0);
}

ObservationFrame RunningNorm::Apply(const ObservationFrame& frame) const {
  if (count_ == 0.0) return frame;
  const Eigen::ArrayXd scale = (variance().array() + kEpsilon).rsqrt();
  return ((frame - mean_).array() * scale).cwiseMax(-kClip).cwiseMin(kClip);
}

Eigen::MatrixXd RunningNorm::ApplyRows(const Eigen::MatrixXd& frames) const {
  if (count_ == 0.0) return frames;
  const Eigen::RowVectorXd scale =
      (variance().array() + kEpsilon).rsqrt().matrix().transpose();
  Eigen::MatrixXd out = frames.rowwise() - mean_.transpose();
  out.array().rowwise() *= scale.array();
  return out.cwiseMax(-kClip).cwiseMin(kClip);
}

void RunningNorm::SetState(double count, const Eigen::VectorXd& mean,
                           const Eigen::VectorXd& m2) {
  count_ = count;
  mean_ = mean;
  m2_ = m2;
}

RunningNorm MergeTree(std::vector<RunningNorm> shards) {
  if (shards.empty()) return RunningNorm();
  while (shards.size() > 1) {
    std::vector<RunningNorm> next;
    next.reserve((shards.size() + 1) / 2);
    for (std::size_t i = 0; i + 1 < shards.size(); i += 2) {
      RunningNorm merged = shards[i];
      merged.Merge(shards[i + 1]);
      next.push_back(std::move(merged));
    }
    if (shards.size() % 2 == 1) next.push_back(std::move(shards.back()));
    shards = std::move(next);
  }
  return std::move(shards.front());
}

Eigen::MatrixXd NormalizedHistory(const HistoryBuffer& history,
                                  const RunningNorm& norm) {
  Eigen::MatrixXd out = history.ReadOut();
  const int filled = history.fill();
  const int first = history.capacity() - filled;
  if (filled > 0) {
    out.bottomRows(filled) = norm.ApplyRows(out.bottomRows(filled));
  }
  out.topRows(first).setZero();
  return out;
}

}  // namespace pushrec
