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

#ifndef PUSHREC_CONFIG_H_
#define PUSHREC_CONFIG_H_

// INI-style configuration: "[section]" headers and "key = value" lines, or
// fully dotted "section.key = value" lines. '#' starts a comment. Every key
// has a default and unknown keys are rejected.

#include <cstdint>
#include <string>
#include <vector>

#include "pushrec/env.h"
#include "pushrec/eval.h"
#include "pushrec/learn.h"
#include "pushrec/policy.h"

namespace pushrec {

struct RunConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "run";
  int checkpoint_interval = 50;  // updates
  double friction_min = 0.5;     // training-time friction randomization
  double friction_max = 1.2;
};

struct Config {
  EnvParams env;
  RewardConfig reward;
  PushRanges push;
  NetConfig net;
  PpoConfig ppo;
  EvalConfig eval;
  RunConfig run;

  // Cross-section checks, e.g. frame size against net.frame_dim.
  void Validate() const;
};

// Throws ConfigError naming the key and line.
Config ParseConfig(const std::string& text);
Config LoadConfigFile(const std::string& path);

// Fully resolved config; ParseConfig(DumpConfig(c)) reproduces c.
std::string DumpConfig(const Config& config);

// All registered keys as "section.key".
std::vector<std::string> ConfigKeys();

bool operator==(const Config& a, const Config& b);

}  // namespace pushrec

#endif  // PUSHREC_CONFIG_H_
