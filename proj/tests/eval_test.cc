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


#include <cmath>
#include <cstring>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "pushrec/config.h"
#include "pushrec/csv.h"
#include "pushrec/eval.h"
#include "test_util.h"

namespace pushrec {
namespace {

using testing::TinyConfig;

// Policy whose action mean is exactly zero, i.e. it holds the default pose.
PolicySnapshot HoldingPolicy(const Config& c) {
  PolicySnapshot s;
  s.net = c.net;
  s.params = InitParams<float>(c.net, 1);
  s.params.w_dec3.setZero();
  s.params.b_dec3.setZero();
  s.norm = RunningNorm(c.net.frame_dim);
  s.tau = 0.1;
  return s;
}

PolicySnapshot RandomPolicy(const Config& c, std::uint64_t seed) {
  PolicySnapshot s;
  s.net = c.net;
  s.params = InitParams<float>(c.net, seed);
  s.params.w_dec3 *= 100.0f;
  s.norm = RunningNorm(c.net.frame_dim);
  return s;
}

std::vector<EpisodeResult> Fake(int successes, int total) {
  std::vector<EpisodeResult> out(total);
  for (int i = 0; i < total; ++i) out[i].success = i < successes;
  return out;
}

TEST(RsrTest, Ratio) {
  EXPECT_EQ(RecoverySuccessRate(Fake(150, 200)), 0.75);
  EXPECT_EQ(RecoverySuccessRate(Fake(7, 7)), 1.0);
  EXPECT_EQ(RecoverySuccessRate(Fake(0, 3)), 0.0);
  EXPECT_THROW(RecoverySuccessRate({}), std::invalid_argument);
}

TEST(EpisodeTest, UnpushedHoldingPolicySucceeds) {
  Config c = TinyConfig();
  // The default gains cannot hold the default pose open loop; stiffer
  // joints can, which isolates the success criterion from control quality.
  c.env.kp.setConstant(150.0);
  const PolicySnapshot policy = HoldingPolicy(c);
  PushEvent none;
  const EpisodeResult r = RunEpisode(policy, c.env, c.reward, none, 5,
                                     EpisodeOptions{}, c.eval);
  EXPECT_TRUE(r.success);
  EXPECT_EQ(r.outcome, Outcome::kSuccess);
  EXPECT_EQ(r.steps, 500);
  EXPECT_LT(r.peak_tilt, 0.087);
}

TEST(EpisodeTest, HardPushFailsOnTilt) {
  const Config c = TinyConfig();
  const PolicySnapshot policy = HoldingPolicy(c);
  const PushEvent push = EvalPush(400.0, 1.0, 3, c.push);
  const EpisodeResult r = RunEpisode(policy, c.env, c.reward, push, 3,
                                     EpisodeOptions{}, c.eval);
  EXPECT_FALSE(r.success);
  EXPECT_EQ(r.outcome, Outcome::kFailTilt);
  EXPECT_GT(r.peak_tilt, 0.785);
  EXPECT_LT(r.steps, 500);
  EXPECT_EQ(OutcomeName(r.outcome), "fail_tilt");
}

void ExpectSameResult(const EpisodeResult& a, const EpisodeResult& b) {
  EXPECT_EQ(a.success, b.success);
  EXPECT_EQ(a.outcome, b.outcome);
  EXPECT_EQ(a.steps, b.steps);
  EXPECT_EQ(std::memcmp(&a.peak_tilt, &b.peak_tilt, sizeof(double)), 0);
  EXPECT_EQ(std::memcmp(&a.episode_return, &b.episode_return, sizeof(double)), 0);
  EXPECT_EQ(a.time_to_stabilize, b.time_to_stabilize);
  EXPECT_EQ(a.mode_mean, b.mode_mean);
  EXPECT_EQ(a.mode_occupancy, b.mode_occupancy);
  EXPECT_EQ(a.affordance_mean, b.affordance_mean);
  ASSERT_EQ(a.actions.size(), b.actions.size());
  for (std::size_t i = 0; i < a.actions.size(); ++i) {
    EXPECT_EQ(a.actions[i], b.actions[i]) << "step " << i;
  }
}

TEST(EpisodeTest, SameSeedIsReproducible) {
  const Config c = TinyConfig();
  const PolicySnapshot policy = RandomPolicy(c, 9);
  const PushEvent push = EvalPush(15.0, 0.0, 21, c.push);
  for (bool deterministic : {true, false}) {
    EpisodeOptions opt;
    opt.deterministic = deterministic;
    opt.record_actions = true;
    const EpisodeResult a = RunEpisode(policy, c.env, c.reward, push, 21, opt, c.eval);
    const EpisodeResult b = RunEpisode(policy, c.env, c.reward, push, 21, opt, c.eval);
    ExpectSameResult(a, b);
    EXPECT_FALSE(a.actions.empty());
  }
}

TEST(EpisodeTest, ModeSummariesOnSimplex) {
  const Config c = TinyConfig();
  const PolicySnapshot policy = RandomPolicy(c, 10);
  const PushEvent push = EvalPush(20.0, -1.0, 4, c.push);
  const EpisodeResult r = RunEpisode(policy, c.env, c.reward, push, 4,
                                     EpisodeOptions{}, c.eval);
  EXPECT_NEAR(r.mode_mean.sum(), 1.0, 1e-9);
  EXPECT_NEAR(r.mode_occupancy.sum(), 1.0, 1e-9);
  EXPECT_TRUE((r.affordance_mean.array() > 0.0).all());
  EXPECT_TRUE((r.affordance_mean.array() < 1.0).all());
}

TEST(EpisodeTest, DistantWallIsInvisible) {
  const Config c = TinyConfig();
  const PolicySnapshot policy = RandomPolicy(c, 11);
  const double reach = c.env.link_length.sum() + c.env.step_length;
  for (int i = 0; i < 5; ++i) {
    const std::uint64_t seed = EpisodeSeed(c.eval.seed, i);
    const PushEvent push = EvalPush(25.0, 0.0, seed, c.push);
    EpisodeOptions open;
    open.record_actions = true;
    EpisodeOptions walled = open;
    walled.wall_distance = c.env.distance_ceiling + 2.0 * reach;
    const EpisodeResult a = RunEpisode(policy, c.env, c.reward, push, seed, open, c.eval);
    const EpisodeResult b = RunEpisode(policy, c.env, c.reward, push, seed, walled, c.eval);
    ExpectSameResult(a, b);
  }
}

TEST(EpisodeSeedTest, DistinctAndStable) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(EpisodeSeed(7, i));
  EXPECT_EQ(seen.size(), 1000u);
  EXPECT_EQ(EpisodeSeed(7, 3), EpisodeSeed(7, 3));
  EXPECT_NE(EpisodeSeed(7, 3), EpisodeSeed(8, 3));
}

TEST(EvalPushTest, ForceAndWindow) {
  PushRanges ranges;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const PushEvent p = EvalPush(10.0, 0.0, s, ranges);
    EXPECT_EQ(p.magnitude, 10.0);
    EXPECT_GE(p.onset, ranges.onset_min);
    EXPECT_LE(p.onset, ranges.onset_max);
    EXPECT_EQ(p.duration, ranges.eval_duration);
    EXPECT_EQ(std::abs(p.direction), 1.0);
  }
  EXPECT_EQ(EvalPush(10.0, -3.0, 1, ranges).direction, -1.0);
}

TEST(SweepTest, MismatchHasFiveConditions) {
  Config c = TinyConfig();
  c.eval.episodes = 2;
  const PolicySnapshot policy = HoldingPolicy(c);
  const CsvTable t = RunSweep(SweepKind::kMismatch, policy, c);
  ASSERT_EQ(t.rows.size(), 5u);
  EXPECT_EQ(t.header, (std::vector<std::string>{"condition", "force", "n", "rsr",
                                                "mean_peak_tilt"}));
  const std::vector<std::string> names{"nominal", "friction", "latency", "mass",
                                       "compound"};
  for (int i = 0; i < 5; ++i) EXPECT_EQ(t.rows[i][0], names[i]);
  EXPECT_EQ(ParseCsv(FormatCsv(t)).rows, t.rows);
}

TEST(SweepTest, ForceAndWallLayouts) {
  Config c = TinyConfig();
  c.eval.episodes = 1;
  c.eval.force_grid = {5, 30};
  c.eval.wall_distances = {0.3, 0.6};
  const PolicySnapshot policy = HoldingPolicy(c);
  const CsvTable f = RunSweep(SweepKind::kForce, policy, c);
  EXPECT_EQ(f.header, (std::vector<std::string>{"force", "n", "rsr",
                                                "mean_peak_tilt"}));
  EXPECT_EQ(f.rows.size(), 2u);
  const CsvTable w = RunSweep(ParseSweepKind("wall"), policy, c);
  EXPECT_EQ(w.rows.size(), 4u);
  EXPECT_EQ(w.header[0], "wall_distance");
  EXPECT_THROW(ParseSweepKind("sideways"), std::exception);
}

TEST(SweepTest, EvaluationLeavesPolicyFrozen) {
  Config c = TinyConfig();
  c.eval.episodes = 2;
  PolicySnapshot policy = RandomPolicy(c, 12);
  Eigen::MatrixXd frames = Eigen::MatrixXd::Random(50, c.net.frame_dim);
  policy.norm.Update(frames);
  policy.tau = 0.37;
  const PolicySnapshot before = policy;
  RunSweep(SweepKind::kForce, policy, c);
  EXPECT_EQ(policy.norm.count(), before.norm.count());
  EXPECT_EQ(policy.norm.mean(), before.norm.mean());
  EXPECT_EQ(policy.norm.variance(), before.norm.variance());
  EXPECT_EQ(policy.tau, before.tau);
}

TEST(ModesTest, ThreeHundredRowsOnSimplex) {
  const Config c = TinyConfig();
  const PolicySnapshot policy = RandomPolicy(c, 13);
  const CsvTable t = ExportModes(policy, c, 300);
  ASSERT_EQ(t.rows.size(), 300u);
  const int k = c.net.modes;
  ASSERT_EQ(t.header.size(), 4u + 2u * k);
  EXPECT_EQ(t.header[4], "zbar_1");
  const std::set<std::string> outcomes{"success", "fail_tilt", "fail_height",
                                       "fail_diverged"};
  std::vector<int> per_force(c.eval.force_grid.size(), 0);
  for (const auto& row : t.rows) {
    double sum = 0.0;
    for (int j = 0; j < k; ++j) sum += std::stod(row[4 + j]);
    EXPECT_NEAR(sum, 1.0, 1e-9);
    EXPECT_TRUE(outcomes.count(row[3])) << row[3];
    for (std::size_t f = 0; f < per_force.size(); ++f) {
      if (std::stod(row[1]) == c.eval.force_grid[f]) ++per_force[f];
    }
  }
  for (int n : per_force) EXPECT_EQ(n, 50);
  EXPECT_EQ(ParseCsv(FormatCsv(t)).rows, t.rows);
}

}  // namespace
}  // namespace pushrec
