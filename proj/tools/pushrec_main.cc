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

// Command-line driver: train, eval, sweep, modes, inspect.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "pushrec/checkpoint.h"
#include "pushrec/config.h"
#include "pushrec/csv.h"
#include "pushrec/errors.h"
#include "pushrec/eval.h"
#include "pushrec/learn.h"
#include "pushrec/policy.h"

namespace {

using pushrec::Checkpoint;
using pushrec::Config;

struct Args {
  std::string config_path;
  std::string out;
  std::string ckpt;
  std::optional<std::uint64_t> seed;
  std::int64_t steps = 0;
  int episodes = 0;
  std::optional<double> force;
  std::optional<double> wall;
  std::string mismatch;
  std::string sweep_kind;
  bool stochastic = false;
  bool soft_modes = false;
  bool quiet = false;
};

Config ConfigFrom(const Args& args) {
  return args.config_path.empty() ? Config{}
                                  : pushrec::LoadConfigFile(args.config_path);
}

pushrec::PolicySnapshot Snapshot(const Checkpoint& ckpt) {
  return pushrec::SnapshotFrom(ckpt.state);
}

// Applies the flags shared by the evaluation commands.
void ApplyEvalFlags(const Args& args, Config& config) {
  if (args.episodes > 0) config.eval.episodes = args.episodes;
  if (args.stochastic) config.eval.deterministic = false;
  if (args.soft_modes) config.eval.argmax_modes = false;
  config.eval.Validate();
}

int RunTrain(const Args& args) {
  const Config config = ConfigFrom(args);
  pushrec::TrainOptions options;
  options.out_dir = args.out;
  options.verbose = !args.quiet;
  options.total_steps = args.steps;
  const std::uint64_t seed = args.seed.value_or(config.run.seed);
  const pushrec::TrainResult result = pushrec::Train(config, seed, options);
  std::printf("trained %lld steps in %lld updates; checkpoint %s\n",
              static_cast<long long>(result.state.global_step),
              static_cast<long long>(result.state.update),
              (std::filesystem::path(args.out) / "final.bin").c_str());
  return 0;
}

int RunEval(const Args& args) {
  Checkpoint ckpt = pushrec::LoadCheckpoint(args.ckpt);
  Config& config = ckpt.config;
  ApplyEvalFlags(args, config);
  const pushrec::PolicySnapshot policy = Snapshot(ckpt);
  pushrec::EpisodeOptions options;
  options.deterministic = config.eval.deterministic;
  options.argmax_modes = config.eval.argmax_modes;
  options.wall_distance = args.wall;
  options.mismatch = pushrec::ParseMismatch(args.mismatch);
  const double force = args.force.value_or(config.eval.force_grid.front());

  std::vector<pushrec::EpisodeResult> results;
  std::map<std::string, int> outcomes;
  double peak = 0.0, ret = 0.0;
  for (int i = 0; i < config.eval.episodes; ++i) {
    const std::uint64_t seed = pushrec::EpisodeSeed(config.eval.seed, i);
    const pushrec::PushEvent push =
        pushrec::EvalPush(force, 0.0, seed, config.push);
    results.push_back(pushrec::RunEpisode(policy, config.env, config.reward,
                                          push, seed, options, config.eval));
    outcomes[pushrec::OutcomeName(results.back().outcome)] += 1;
    peak += results.back().peak_tilt;
    ret += results.back().episode_return;
  }
  const double n = static_cast<double>(results.size());
  std::printf("episodes %d force %g wall %s mismatch %s\n",
              config.eval.episodes, force,
              args.wall ? std::to_string(*args.wall).c_str() : "none",
              std::string(pushrec::MismatchName(options.mismatch)).c_str());
  std::printf("rsr %.4f mean_peak_tilt %.4f mean_return %.2f\n",
              pushrec::RecoverySuccessRate(results), peak / n, ret / n);
  for (const auto& [name, count] : outcomes) {
    std::printf("  %s %d\n", name.c_str(), count);
  }
  return 0;
}

int RunSweepCommand(const Args& args) {
  const pushrec::SweepKind kind = pushrec::ParseSweepKind(args.sweep_kind);
  Checkpoint ckpt = pushrec::LoadCheckpoint(args.ckpt);
  ApplyEvalFlags(args, ckpt.config);
  const pushrec::CsvTable table =
      pushrec::RunSweep(kind, Snapshot(ckpt), ckpt.config);
  pushrec::WriteCsv(table, args.out);
  std::cout << pushrec::FormatCsv(table);
  return 0;
}

int RunModes(const Args& args) {
  Checkpoint ckpt = pushrec::LoadCheckpoint(args.ckpt);
  ApplyEvalFlags(args, ckpt.config);
  const int episodes = args.episodes > 0 ? args.episodes : 300;
  const pushrec::CsvTable table =
      pushrec::ExportModes(Snapshot(ckpt), ckpt.config, episodes);
  pushrec::WriteCsv(table, args.out);
  std::printf("wrote %zu rows to %s\n", table.rows.size(), args.out.c_str());
  return 0;
}

int RunInspect(const Args& args) {
  Config config;
  std::optional<pushrec::TrainerState> state;
  if (!args.ckpt.empty()) {
    Checkpoint ckpt = pushrec::LoadCheckpoint(args.ckpt);
    config = ckpt.config;
    state = std::move(ckpt.state);
  } else {
    config = ConfigFrom(args);
  }
  std::int64_t total = 0;
  std::printf("%-24s %8s %8s %10s\n", "tensor", "rows", "cols", "count");
  for (const auto& t : pushrec::ParameterCensus(config.net)) {
    const std::int64_t count = static_cast<std::int64_t>(t.rows) * t.cols;
    total += count;
    std::printf("%-24s %8d %8d %10lld\n", t.name.c_str(), t.rows, t.cols,
                static_cast<long long>(count));
  }
  std::printf("total parameters %lld\n", static_cast<long long>(total));
  if (state) {
    std::printf("global_step %lld update %lld tau %.6g seed %llu\n",
                static_cast<long long>(state->global_step),
                static_cast<long long>(state->update), state->tau,
                static_cast<unsigned long long>(state->seed));
  }
  std::printf("\n# resolved config\n%s", pushrec::DumpConfig(config).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Push-recovery policy training and evaluation"};
  app.require_subcommand(1);
  Args args;

  auto* train = app.add_subcommand("train", "Train a policy with PPO");
  train->add_option("--config", args.config_path, "INI config file")
      ->check(CLI::ExistingFile);
  train->add_option("--out", args.out, "Output directory")->required();
  train->add_option("--seed", args.seed, "Training seed");
  train->add_option("--steps", args.steps, "Override ppo.total_steps");
  train->add_flag("--quiet", args.quiet, "No per-update progress lines");

  auto add_eval_flags = [&](CLI::App* cmd) {
    cmd->add_option("--ckpt", args.ckpt, "Checkpoint file")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_flag("--stochastic", args.stochastic, "Sample actions");
    cmd->add_flag("--soft-modes", args.soft_modes, "Soft mode mixture");
  };

  auto* eval = app.add_subcommand("eval", "Evaluate recovery success");
  add_eval_flags(eval);
  eval->add_option("--episodes", args.episodes, "Episode count")
      ->check(CLI::PositiveNumber);
  eval->add_option("--force", args.force, "Push force (N)");
  eval->add_option("--wall", args.wall, "Wall distance (m)");
  eval->add_option("--mismatch", args.mismatch,
                   "none, friction, latency, mass or compound");

  auto* sweep = app.add_subcommand("sweep", "Run an evaluation sweep");
  sweep->add_option("kind", args.sweep_kind, "force, wall, direction, mismatch")
      ->required()
      ->check(CLI::IsMember({"force", "wall", "direction", "mismatch"}));
  add_eval_flags(sweep);
  sweep->add_option("--out", args.out, "Output CSV")->required();
  sweep->add_option("--episodes", args.episodes, "Episodes per cell")
      ->check(CLI::PositiveNumber);

  auto* modes = app.add_subcommand("modes", "Export per-episode mode vectors");
  add_eval_flags(modes);
  modes->add_option("--episodes", args.episodes, "Total episodes")
      ->check(CLI::PositiveNumber);
  modes->add_option("--out", args.out, "Output CSV")->required();

  auto* inspect =
      app.add_subcommand("inspect", "Print tensor census and config");
  auto* ckpt_opt = inspect->add_option("--ckpt", args.ckpt, "Checkpoint file")
                       ->check(CLI::ExistingFile);
  inspect->add_option("--config", args.config_path, "INI config file")
      ->check(CLI::ExistingFile)
      ->excludes(ckpt_opt);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*train) return RunTrain(args);
    if (*eval) return RunEval(args);
    if (*sweep) return RunSweepCommand(args);
    if (*modes) return RunModes(args);
    if (*inspect) return RunInspect(args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
