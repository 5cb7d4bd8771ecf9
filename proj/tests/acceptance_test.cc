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


// Acceptance checks for the recovery policy stack. Prints one PASS/FAIL
// line per criterion and exits nonzero if any criterion fails.
//
//   acceptance_test [--skip-training]

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.h"
#include "pushrec/checkpoint.h"
#include "pushrec/config.h"
#include "pushrec/csv.h"
#include "pushrec/dynamics.h"
#include "pushrec/env.h"
#include "pushrec/errors.h"
#include "pushrec/eval.h"
#include "pushrec/learn.h"
#include "pushrec/policy.h"
#include "test_util.h"

namespace pushrec {
namespace {

using testing::RandomMatrix;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string Fmt(const char* format, double a, double b = 0.0, double c = 0.0,
                double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), format, a, b, c, d);
  return buf;
}

template <typename S>
bool Bitwise(const Mat<S>& a, const Mat<S>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(S) * a.size()) == 0;
}

Verdict GradientCorrectness() {
  const auto start = std::chrono::steady_clock::now();
  const NetConfig cfg = testing::SmallNet();
  double worst = 0.0;
  std::string worst_tensor;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed * 7919);
    PolicyParams<double> params = InitParams<double>(cfg, seed);
    params.w_dec3 *= 100.0;
    params.log_std = RandomMatrix(cfg.action_dim, 1, rng, 0.3);
    const Minibatch<double> mb = testing::RandomMinibatch(params, cfg, 8, 0.2, rng);
    const LossWeights w = testing::HingeWeights(params, cfg, mb, 0.6);
    const auto r = testing::CheckGradients(params, cfg, mb, w, 0.6, seed, 1e-4);
    if (r.worst > worst) {
      worst = r.worst;
      worst_tensor = r.worst_tensor;
    }
  }
  const double secs = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - start).count();
  return {worst < 1e-3 && secs < 120.0,
          Fmt("max rel err %.2e", worst) + " (" + worst_tensor + ")" +
              Fmt(", %.1f s", secs)};
}

template <typename S>
int CausalityViolations(const NetConfig& cfg, std::uint64_t seed) {
  const PolicyParams<S> params = InitParams<S>(cfg, seed);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pos(0, cfg.history - 2);
  int bad = 0;
  for (int pair = 0; pair < 20; ++pair) {
    const Mat<S> a = RandomMatrix(cfg.history, cfg.frame_dim, rng).cast<S>();
    const int i = pos(rng);
    Mat<S> b = a;
    const int future = cfg.history - i - 1;
    b.bottomRows(future) = RandomMatrix(future, cfg.frame_dim, rng, 3.0).cast<S>();
    const Mat<S> ea = EncodeSequence(params, cfg, a);
    const Mat<S> eb = EncodeSequence(params, cfg, b);
    if (!Bitwise(Mat<S>(ea.topRows(i + 1)), Mat<S>(eb.topRows(i + 1)))) ++bad;
  }
  return bad;
}

Verdict ExactCausality() {
  const NetConfig desk;
  const int f = CausalityViolations<float>(desk, 21);
  const int d = CausalityViolations<double>(desk, 22);
  return {f == 0 && d == 0,
          Fmt("20 pairs each in float and double, %.0f violations", f + d)};
}

Verdict GaeOracle() {
  std::mt19937_64 rng(33);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit;
  double worst = 0.0;
  int dones = 0;
  for (int seq = 0; seq < 1000; ++seq) {
    const int n = 50;
    std::vector<double> r(n), v(n + 1), trunc(n);
    std::vector<StepEnd> ends(n, StepEnd::kNone);
    for (int t = 0; t < n; ++t) {
      r[t] = normal(rng);
      v[t] = normal(rng);
      trunc[t] = normal(rng);
      const double u = unit(rng);
      if (u < 0.05) ends[t] = StepEnd::kTerminated;
      else if (u < 0.08) ends[t] = StepEnd::kTruncated;
      dones += ends[t] != StepEnd::kNone;
    }
    v[n] = normal(rng);
    const GaeResult g = ComputeGae(r, v, ends, 0.99, 0.95, trunc);
    const auto oracle = testing::BruteForceGae(r, v, ends, trunc, 0.99, 0.95);
    for (int t = 0; t < n; ++t) {
      worst = std::max(worst, std::abs(g.advantages[t] - oracle[t]) /
                                  std::max(1.0, std::abs(oracle[t])));
    }
  }
  return {worst < 1e-10,
          Fmt("1000 sequences, %.0f dones, max rel err %.2e", dones, worst)};
}

Verdict PpoIdentities() {
  const NetConfig cfg = testing::SmallNet();
  const PolicyParams<double> params = InitParams<double>(cfg, 4);
  std::mt19937_64 rng(44);
  Minibatch<double> mb;
  const int n = 64;
  mb.histories = RandomMatrix(n * cfg.history, cfg.frame_dim, rng);
  ForwardCache<double> cache;
  Forward(params, cfg, mb.histories, 0.8, ModeSelect::kSoft, cache);
  mb.pre_actions = cache.mean + RandomMatrix(n, cfg.action_dim, rng, 0.6);
  mb.old_log_prob = GaussianLogProb(mb.pre_actions, cache.mean, params.log_std);
  mb.advantages = RandomMatrix(n, 1, rng).col(0).array() + 0.2;
  mb.returns = RandomMatrix(n, 1, rng).col(0);
  const LossStats s = LossAndGradient<double>(params, cfg, mb, LossWeights{}, 0.8, nullptr);
  const double surrogate_err = std::abs(s.surrogate + mb.advantages.mean());
  const double a = -ClippedObjective(1.5, 1.0, 0.2);
  const double b = -ClippedObjective(0.5, -1.0, 0.2);
  const bool ok = std::abs(s.ratio_mean - 1.0) < 1e-9 && s.clip_fraction == 0.0 &&
                  surrogate_err < 1e-9 && std::abs(a + 1.2) < 1e-15 &&
                  std::abs(b - 0.8) < 1e-15;
  return {ok, Fmt("ratio %.12f clip %.1f surrogate err %.1e", s.ratio_mean,
                  s.clip_fraction, surrogate_err) +
                  Fmt(", clip cases %.15g and %.15g", a, b)};
}

Verdict ModeLossValues() {
  const Mat<double> uniform = Mat<double>::Constant(64, 4, 0.25);
  Mat<double> collapsed = Mat<double>::Zero(64, 4);
  collapsed.col(0).setOnes();
  const auto u = ModeLoss<double>(uniform, 0.1);
  const auto c = ModeLoss<double>(collapsed, 0.1);
  const bool ok = std::abs(u.value - std::log(4.0)) < 1e-9 && u.penalty == 0.0 &&
                  std::abs(c.penalty - 0.3) < 1e-9 && c.entropy == 0.0;
  return {ok, Fmt("uniform %.12f (penalty %.1f), collapsed penalty %.12f",
                  u.value, u.penalty, c.penalty)};
}

double PassiveDrift(const EnvParams& params, const Eigen::Vector3d& q0,
                    double seconds) {
  EnvState state;
  state.q = q0;
  const std::array<Eigen::Vector2d, 3> none = {
      Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero()};
  const double e0 = testing::ChainEnergy(params, state.q, state.dq);
  double drift = 0.0;
  const int substeps = static_cast<int>(std::lround(seconds / params.dt_phys));
  for (int k = 0; k < substeps; ++k) {
    DynamicsSubstep(state, params, Eigen::Vector3d::Zero(), none, params.dt_phys);
    drift = std::max(drift, std::abs(testing::ChainEnergy(params, state.q, state.dq) - e0) /
                                std::abs(e0));
  }
  return drift;
}

Verdict PhysicsSanity() {
  EnvParams params;
  // Free swing released 0.6 rad from hanging. The tumble from upright is
  // reported for reference only.
  const double drift = PassiveDrift(params, Eigen::Vector3d(M_PI - 0.6, 0.3, -0.3), 2.0);
  const double tumble = PassiveDrift(params, Eigen::Vector3d(0.1, -0.05, -0.3), 2.0);
  const ChainModel<double> model = params.Chain();
  std::mt19937_64 rng(66);
  std::uniform_real_distribution<double> angle(-3.0, 3.0);
  double grav = 0.0;
  const double h = 1e-6;
  for (int t = 0; t < 200; ++t) {
    const Eigen::Vector3d th(angle(rng), angle(rng), angle(rng));
    const Eigen::Vector3d g = GravityVector(model, th);
    for (int i = 0; i < 3; ++i) {
      Eigen::Vector3d up = th, down = th;
      up[i] += h;
      down[i] -= h;
      const double fd = (testing::OraclePotential(model, up) -
                         testing::OraclePotential(model, down)) / (2 * h);
      grav = std::max(grav, std::abs(g[i] - fd) / std::max(std::abs(fd), 1e-3));
    }
  }
  return {drift < 0.005 && grav < 1e-6,
          Fmt("swing energy drift %.3f%% over 2 s (upright tumble %.1f%%), "
              "gravity rel err %.2e", 100 * drift, 100 * tumble, grav)};
}

Verdict DeterminismAndRoundTrip() {
  const Config config;
  std::vector<std::string> notes;
  auto train10 = [&]() {
    TrainerState state = InitTrainer(config, 5);
    auto workers = MakeWorkers(config, 5);
    std::vector<EpisodeSummary> recent;
    for (int u = 0; u < 10; ++u) TrainUpdate(state, workers, config, recent);
    return state;
  };
  const TrainerState a = train10();
  const TrainerState b = train10();
  bool train_ok = a.global_step == b.global_step && a.tau == b.tau;
  const auto ta = a.params.Tensors();
  const auto tb = b.params.Tensors();
  for (std::size_t i = 0; i < ta.size(); ++i) {
    train_ok &= Bitwise(*ta[i].tensor, *tb[i].tensor);
  }
  train_ok &= a.norm.mean() == b.norm.mean() && a.norm.variance() == b.norm.variance();

  const Checkpoint ck = ParseCheckpoint(SerializeCheckpoint(config, a));
  std::mt19937_64 rng(77);
  const Mat<float> hist =
      RandomMatrix(8 * config.net.history, config.net.frame_dim, rng).cast<float>();
  ForwardCache<float> c1, c2;
  Forward(a.params, config.net, hist, 0.3f, ModeSelect::kSoft, c1);
  Forward(ck.state.params, ck.config.net, hist, 0.3f, ModeSelect::kSoft, c2);
  const bool ckpt_ok = Bitwise(c1.mean, c2.mean) && Bitwise(c1.value, c2.value) &&
                       Bitwise(c1.probs, c2.probs) &&
                       Bitwise(c1.affordance, c2.affordance);

  // Latency below half a physics step leaves the delay queue empty.
  EnvParams plain;
  EnvParams tiny = plain;
  tiny.latency = 0.4 * plain.dt_phys;
  PushEvent push;
  push.magnitude = 20.0;
  push.onset = 0.3;
  auto [sa, fa] = EnvReset(plain, push, 9);
  auto [sb, fb] = EnvReset(tiny, push, 9);
  bool latency_ok = sb.torque_queue.empty() && fa == fb;
  for (int k = 0; k < 200 && latency_ok; ++k) {
    const Action act = Action::Constant(std::sin(0.07 * k));
    try {
      latency_ok = EnvStep(sa, plain, act, {}).frame == EnvStep(sb, tiny, act, {}).frame;
    } catch (const SimulationDiverged&) {
      break;
    }
    if (sa.terminated) break;
  }

  PolicySnapshot snap = SnapshotFrom(a);
  const EnvParams env = config.env;
  const double far = env.distance_ceiling + 2.0 * (env.link_length.sum() + env.step_length);
  bool sentinel_ok = true;
  for (int i = 0; i < 10; ++i) {
    const std::uint64_t seed = EpisodeSeed(config.eval.seed, i);
    const PushEvent p = EvalPush(config.eval.force_grid.back(), 0.0, seed, config.push);
    EpisodeOptions open;
    open.record_actions = true;
    EpisodeOptions walled = open;
    walled.wall_distance = far;
    const EpisodeResult ra = RunEpisode(snap, env, config.reward, p, seed, open, config.eval);
    const EpisodeResult rb = RunEpisode(snap, env, config.reward, p, seed, walled, config.eval);
    sentinel_ok &= ra.actions.size() == rb.actions.size();
    for (std::size_t k = 0; sentinel_ok && k < ra.actions.size(); ++k) {
      sentinel_ok &= std::memcmp(ra.actions[k].data(), rb.actions[k].data(),
                                 sizeof(double) * kActionDim) == 0;
    }
  }
  std::ostringstream out;
  out << "10-update repro " << (train_ok ? "ok" : "MISMATCH") << ", checkpoint "
      << (ckpt_ok ? "ok" : "MISMATCH") << ", latency-0 " << (latency_ok ? "ok" : "MISMATCH")
      << ", wall sentinel " << (sentinel_ok ? "ok" : "MISMATCH");
  return {train_ok && ckpt_ok && latency_ok && sentinel_ok, out.str()};
}

struct TrainingOutcome {
  Verdict verdict;
  std::optional<PolicySnapshot> policy;
  std::string metrics_csv;
};

TrainingOutcome DeskTraining(const Config& config) {
  TrainingOutcome outcome;
  const auto start = std::chrono::steady_clock::now();
  TrainOptions options;
  options.verbose = false;
  std::ostringstream metrics;
  metrics << MetricsHeader(config.net.modes) << '\n';
  options.on_update = [&](const UpdateMetrics& m) {
    metrics << MetricsRow(m) << '\n';
    if (m.update % 50 == 0) {
      std::fprintf(stderr, "  training update %lld step %lld return %.1f\n",
                   static_cast<long long>(m.update), static_cast<long long>(m.step),
                   m.mean_return);
    }
  };
  const TrainResult result = Train(config, config.run.seed, options);
  const double minutes = std::chrono::duration<double>(
                             std::chrono::steady_clock::now() - start).count() / 60.0;
  const UpdateMetrics& last = result.metrics.back();

  const ReturnSummary baseline =
      MeasureReturn(nullptr, config, 100, config.eval.seed + 1, true, false);
  PolicySnapshot policy = SnapshotFrom(result.state);
  const double force = config.eval.force_grid.front();
  std::vector<EpisodeResult> results;
  EpisodeOptions opt;
  for (int i = 0; i < 100; ++i) {
    const std::uint64_t seed = EpisodeSeed(config.eval.seed, i);
    results.push_back(RunEpisode(policy, config.env, config.reward,
                                 EvalPush(force, 0.0, seed, config.push), seed,
                                 opt, config.eval));
  }
  const double rsr = RecoverySuccessRate(results);
  const double min_usage = last.loss.usage.minCoeff();
  const bool a = last.mean_return >= 3.0 * baseline.mean_return && baseline.mean_return > 0.0;
  const bool b = rsr >= 0.8;
  const bool c = min_usage >= 0.05;
  std::ostringstream out;
  out << "(a) return " << Fmt("%.1f vs 3 x random %.1f", last.mean_return,
                              baseline.mean_return)
      << (a ? " ok" : " FAIL") << "; (b) RSR at " << force << " N "
      << Fmt("%.2f", rsr) << (b ? " ok" : " FAIL") << "; (c) min usage "
      << Fmt("%.3f", min_usage) << (c ? " ok" : " FAIL") << Fmt("; %.1f min", minutes);
  outcome.verdict = {a && b && c, out.str()};
  outcome.policy = std::move(policy);
  outcome.metrics_csv = metrics.str();
  return outcome;
}

bool Lossless(const CsvTable& t) {
  const CsvTable back = ParseCsv(FormatCsv(t));
  if (back.header != t.header || back.rows != t.rows) return false;
  for (const auto& row : back.rows) {
    for (const auto& cell : row) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end != cell.c_str() && *end == '\0' && FormatNumber(v) != cell &&
          std::to_string(static_cast<long long>(v)) != cell) {
        return false;
      }
    }
  }
  return true;
}

Verdict HarnessParity(const PolicySnapshot& policy, const std::string& metrics_csv) {
  Config config;
  config.eval.episodes = 10;
  const CsvTable mismatch = RunSweep(SweepKind::kMismatch, policy, config);
  const std::vector<std::string> names{"nominal", "friction", "latency", "mass", "compound"};
  bool rows_ok = mismatch.rows.size() == 5;
  for (std::size_t i = 0; rows_ok && i < 5; ++i) rows_ok &= mismatch.rows[i][0] == names[i];
  const CsvTable modes = ExportModes(policy, config, 300);
  bool modes_ok = modes.rows.size() == 300;
  for (const auto& row : modes.rows) {
    double sum = 0.0;
    for (int k = 0; k < policy.net.modes; ++k) sum += std::stod(row[4 + k]);
    modes_ok &= std::abs(sum - 1.0) < 1e-9;
  }
  std::vector<CsvTable> tables = {mismatch, modes, ParseCsv(metrics_csv)};
  tables.push_back(RunSweep(SweepKind::kForce, policy, config));
  tables.push_back(RunSweep(SweepKind::kWallDistance, policy, config));
  tables.push_back(RunSweep(SweepKind::kPushDirection, policy, config));
  bool lossless = true;
  for (const auto& t : tables) lossless &= Lossless(t);
  std::ostringstream out;
  out << "mismatch rows " << mismatch.rows.size() << ", modes rows " << modes.rows.size()
      << (modes_ok ? "" : " (zbar off simplex)") << ", " << tables.size()
      << " CSVs re-parse " << (lossless ? "losslessly" : "WITH LOSS");
  return {rows_ok && modes_ok && lossless, out.str()};
}

void Report(int id, const char* name, const Verdict& v, int& failures) {
  std::printf("%s criterion %d: %s: %s\n", v.pass ? "PASS" : "FAIL", id, name,
              v.detail.c_str());
  std::fflush(stdout);
  failures += v.pass ? 0 : 1;
}

}  // namespace
}  // namespace pushrec

int main(int argc, char** argv) {
  using namespace pushrec;
  const bool skip_training = argc > 1 && std::strcmp(argv[1], "--skip-training") == 0;
  int failures = 0;
  Report(1, "gradient correctness", GradientCorrectness(), failures);
  Report(2, "exact causality", ExactCausality(), failures);
  Report(3, "GAE oracle", GaeOracle(), failures);
  Report(4, "PPO identities", PpoIdentities(), failures);
  Report(5, "mode-loss values", ModeLossValues(), failures);
  Report(6, "physics sanity", PhysicsSanity(), failures);
  Report(7, "determinism and round trip", DeterminismAndRoundTrip(), failures);
  if (skip_training) {
    std::printf("SKIP criterion 8: desk-scale training\n");
    std::printf("SKIP criterion 9: harness parity\n");
    return failures == 0 ? 0 : 1;
  }
  const Config config;
  TrainingOutcome trained = DeskTraining(config);
  Report(8, "desk-scale training outcome", trained.verdict, failures);
  Report(9, "harness parity", HarnessParity(*trained.policy, trained.metrics_csv), failures);
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
