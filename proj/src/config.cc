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

#include "pushrec/config.h"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "pushrec/errors.h"
#include "pushrec/features.h"

namespace pushrec {
namespace {

std::string Trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::string FormatDouble(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

bool ParseDouble(const std::string& text, double& out) {
  const std::string t = Trim(text);
  if (t.empty()) return false;
  const char* first = t.data();
  if (*first == '+') ++first;
  const auto res = std::from_chars(first, t.data() + t.size(), out);
  return res.ec == std::errc() && res.ptr == t.data() + t.size();
}

template <typename Int>
bool ParseInt(const std::string& text, Int& out) {
  const std::string t = Trim(text);
  if (t.empty()) return false;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), out);
  return res.ec == std::errc() && res.ptr == t.data() + t.size();
}

std::vector<std::string> SplitList(const std::string& text) {
  std::vector<std::string> items;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) items.push_back(Trim(item));
  if (items.size() == 1 && items[0].empty()) items.clear();
  return items;
}

struct KeySpec {
  std::string name;
  std::function<bool(Config&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

template <typename Access>
KeySpec DoubleKey(std::string name, Access access) {
  return {std::move(name),
          [access](Config& c, const std::string& v) {
            return ParseDouble(v, access(c));
          },
          [access](const Config& c) {
            return FormatDouble(access(const_cast<Config&>(c)));
          }};
}

template <typename Access>
KeySpec IntKey(std::string name, Access access) {
  return {std::move(name),
          [access](Config& c, const std::string& v) {
            return ParseInt(v, access(c));
          },
          [access](const Config& c) {
            return std::to_string(access(const_cast<Config&>(c)));
          }};
}

template <typename Access>
KeySpec BoolKey(std::string name, Access access) {
  return {std::move(name),
          [access](Config& c, const std::string& v) {
            const std::string t = Trim(v);
            if (t == "true" || t == "1") {
              access(c) = true;
            } else if (t == "false" || t == "0") {
              access(c) = false;
            } else {
              return false;
            }
            return true;
          },
          [access](const Config& c) {
            return std::string(access(const_cast<Config&>(c)) ? "true"
                                                              : "false");
          }};
}

template <typename Access>
KeySpec StringKey(std::string name, Access access) {
  return {std::move(name),
          [access](Config& c, const std::string& v) {
            access(c) = Trim(v);
            return true;
          },
          [access](const Config& c) {
            return access(const_cast<Config&>(c));
          }};
}

template <typename Access>
KeySpec Vec3Key(std::string name, Access access) {
  return {std::move(name),
          [access](Config& c, const std::string& v) {
            const auto items = SplitList(v);
            if (items.size() != 3) return false;
            Eigen::Vector3d out;
            for (int i = 0; i < 3; ++i) {
              if (!ParseDouble(items[i], out[i])) return false;
            }
            access(c) = out;
            return true;
          },
          [access](const Config& c) {
            const Eigen::Vector3d& v = access(const_cast<Config&>(c));
            return FormatDouble(v[0]) + ", " + FormatDouble(v[1]) + ", " +
                   FormatDouble(v[2]);
          }};
}

template <typename Access>
KeySpec ListKey(std::string name, Access access) {
  return {std::move(name),
          [access](Config& c, const std::string& v) {
            std::vector<double> out;
            for (const auto& item : SplitList(v)) {
              double x;
              if (!ParseDouble(item, x)) return false;
              out.push_back(x);
            }
            access(c) = out;
            return true;
          },
          [access](const Config& c) {
            std::string s;
            for (double x : access(const_cast<Config&>(c))) {
              if (!s.empty()) s += ", ";
              s += FormatDouble(x);
            }
            return s;
          }};
}

#define PR_ACCESS(expr) [](Config& c) -> auto& { return c.expr; }

const std::vector<KeySpec>& Registry() {
  static const std::vector<KeySpec> keys = {
      Vec3Key("env.link_length", PR_ACCESS(env.link_length)),
      Vec3Key("env.mass", PR_ACCESS(env.mass)),
      DoubleKey("env.gravity", PR_ACCESS(env.gravity)),
      DoubleKey("env.dt_phys", PR_ACCESS(env.dt_phys)),
      DoubleKey("env.dt_ctrl", PR_ACCESS(env.dt_ctrl)),
      Vec3Key("env.kp", PR_ACCESS(env.kp)),
      Vec3Key("env.kd", PR_ACCESS(env.kd)),
      DoubleKey("env.torque_limit", PR_ACCESS(env.torque_limit)),
      Vec3Key("env.q_default", PR_ACCESS(env.q_default)),
      DoubleKey("env.action_scale", PR_ACCESS(env.action_scale)),
      DoubleKey("env.reset_noise", PR_ACCESS(env.reset_noise)),
      BoolKey("env.wall_present", PR_ACCESS(env.wall_present)),
      DoubleKey("env.wall_x", PR_ACCESS(env.wall_x)),
      DoubleKey("env.wall_stiffness", PR_ACCESS(env.wall_stiffness)),
      DoubleKey("env.wall_damping", PR_ACCESS(env.wall_damping)),
      DoubleKey("env.wall_skin", PR_ACCESS(env.wall_skin)),
      DoubleKey("env.friction", PR_ACCESS(env.friction)),
      DoubleKey("env.friction_slip_speed", PR_ACCESS(env.friction_slip_speed)),
      DoubleKey("env.torso_mass_scale", PR_ACCESS(env.torso_mass_scale)),
      DoubleKey("env.latency", PR_ACCESS(env.latency)),
      ListKey("env.contact_heights", PR_ACCESS(env.contact_heights)),
      DoubleKey("env.distance_ceiling", PR_ACCESS(env.distance_ceiling)),
      DoubleKey("env.step_length", PR_ACCESS(env.step_length)),
      DoubleKey("env.step_tilt", PR_ACCESS(env.step_tilt)),
      DoubleKey("env.step_swing", PR_ACCESS(env.step_swing)),
      DoubleKey("env.step_cooldown", PR_ACCESS(env.step_cooldown)),
      DoubleKey("env.swing_rate", PR_ACCESS(env.swing_rate)),
      DoubleKey("env.foot_lift_time", PR_ACCESS(env.foot_lift_time)),
      DoubleKey("env.fall_tilt", PR_ACCESS(env.fall_tilt)),
      DoubleKey("env.fall_height", PR_ACCESS(env.fall_height)),
      DoubleKey("env.episode_time", PR_ACCESS(env.episode_time)),
      DoubleKey("env.contact_upright_band",
                PR_ACCESS(env.contact_upright_band)),

      DoubleKey("env.upright_weight", PR_ACCESS(reward.upright_weight)),
      DoubleKey("env.upright_width", PR_ACCESS(reward.upright_width)),
      DoubleKey("env.height_weight", PR_ACCESS(reward.height_weight)),
      DoubleKey("env.height_width", PR_ACCESS(reward.height_width)),
      DoubleKey("env.alive_bonus", PR_ACCESS(reward.alive_bonus)),
      DoubleKey("env.useful_weight", PR_ACCESS(reward.useful_weight)),
      DoubleKey("env.harmful_weight", PR_ACCESS(reward.harmful_weight)),
      DoubleKey("env.action_penalty", PR_ACCESS(reward.action_penalty)),
      DoubleKey("env.action_rate_penalty",
                PR_ACCESS(reward.action_rate_penalty)),
      DoubleKey("env.termination_penalty",
                PR_ACCESS(reward.termination_penalty)),

      DoubleKey("env.push_force_min", PR_ACCESS(push.force_min)),
      DoubleKey("env.push_force_max", PR_ACCESS(push.force_max)),
      DoubleKey("env.push_onset_min", PR_ACCESS(push.onset_min)),
      DoubleKey("env.push_onset_max", PR_ACCESS(push.onset_max)),
      DoubleKey("env.push_eval_duration", PR_ACCESS(push.eval_duration)),

      IntKey("net.frame_dim", PR_ACCESS(net.frame_dim)),
      IntKey("net.d", PR_ACCESS(net.embed_dim)),
      IntKey("net.layers", PR_ACCESS(net.layers)),
      IntKey("net.heads", PR_ACCESS(net.heads)),
      IntKey("net.ff_dim", PR_ACCESS(net.ff_dim)),
      IntKey("net.history", PR_ACCESS(net.history)),
      IntKey("net.modes", PR_ACCESS(net.modes)),
      IntKey("net.mode_dim", PR_ACCESS(net.mode_dim)),
      IntKey("net.contacts", PR_ACCESS(net.contacts)),
      IntKey("net.action_dim", PR_ACCESS(net.action_dim)),
      IntKey("net.decoder_hidden1", PR_ACCESS(net.decoder_hidden1)),
      IntKey("net.decoder_hidden2", PR_ACCESS(net.decoder_hidden2)),
      DoubleKey("net.tau_start", PR_ACCESS(net.tau_start)),
      DoubleKey("net.tau_end", PR_ACCESS(net.tau_end)),

      DoubleKey("ppo.gamma", PR_ACCESS(ppo.gamma)),
      DoubleKey("ppo.lambda", PR_ACCESS(ppo.gae_lambda)),
      DoubleKey("ppo.clip", PR_ACCESS(ppo.clip)),
      DoubleKey("ppo.value_coef", PR_ACCESS(ppo.value_coef)),
      DoubleKey("ppo.entropy_coef", PR_ACCESS(ppo.entropy_coef)),
      DoubleKey("ppo.mode_coef", PR_ACCESS(ppo.mode_coef)),
      DoubleKey("ppo.learning_rate", PR_ACCESS(ppo.learning_rate)),
      IntKey("ppo.epochs", PR_ACCESS(ppo.epochs)),
      IntKey("ppo.minibatch", PR_ACCESS(ppo.minibatch)),
      IntKey("ppo.rollout_length", PR_ACCESS(ppo.rollout_length)),
      IntKey("ppo.num_envs", PR_ACCESS(ppo.num_envs)),
      IntKey("ppo.total_steps", PR_ACCESS(ppo.total_steps)),
      DoubleKey("ppo.max_grad_norm", PR_ACCESS(ppo.max_grad_norm)),
      DoubleKey("ppo.util_fraction", PR_ACCESS(ppo.util_fraction)),
      DoubleKey("ppo.adam_beta1", PR_ACCESS(ppo.adam_beta1)),
      DoubleKey("ppo.adam_beta2", PR_ACCESS(ppo.adam_beta2)),
      DoubleKey("ppo.adam_eps", PR_ACCESS(ppo.adam_eps)),
      IntKey("ppo.threads", PR_ACCESS(ppo.threads)),

      ListKey("eval.force_grid", PR_ACCESS(eval.force_grid)),
      ListKey("eval.wall_distances", PR_ACCESS(eval.wall_distances)),
      DoubleKey("eval.wall_force", PR_ACCESS(eval.wall_force)),
      DoubleKey("eval.mismatch_force", PR_ACCESS(eval.mismatch_force)),
      DoubleKey("eval.direction_wall", PR_ACCESS(eval.direction_wall)),
      IntKey("eval.episodes", PR_ACCESS(eval.episodes)),
      BoolKey("eval.deterministic", PR_ACCESS(eval.deterministic)),
      BoolKey("eval.argmax_modes", PR_ACCESS(eval.argmax_modes)),
      IntKey("eval.seed", PR_ACCESS(eval.seed)),
      DoubleKey("eval.settle_window", PR_ACCESS(eval.settle_window)),
      DoubleKey("eval.settle_tilt", PR_ACCESS(eval.settle_tilt)),
      DoubleKey("eval.settle_rate", PR_ACCESS(eval.settle_rate)),
      DoubleKey("eval.contact_free_window",
                PR_ACCESS(eval.contact_free_window)),

      IntKey("run.seed", PR_ACCESS(run.seed)),
      StringKey("run.output_dir", PR_ACCESS(run.output_dir)),
      IntKey("run.checkpoint_interval", PR_ACCESS(run.checkpoint_interval)),
      DoubleKey("run.friction_min", PR_ACCESS(run.friction_min)),
      DoubleKey("run.friction_max", PR_ACCESS(run.friction_max)),
  };
  return keys;
}

#undef PR_ACCESS

const KeySpec* FindKey(const std::string& name) {
  for (const auto& key : Registry()) {
    if (key.name == name) return &key;
  }
  return nullptr;
}

std::string SectionOf(const std::string& key) {
  return key.substr(0, key.find('.'));
}

void ValidateSection(const Config& c, const std::string& section) {
  if (section == "env") {
    c.env.Validate();
    c.reward.Validate();
    c.push.Validate();
  } else if (section == "net") {
    c.net.Validate();
  } else if (section == "ppo") {
    c.ppo.Validate(c.net.modes);
  } else if (section == "eval") {
    c.eval.Validate();
  } else if (section == "run") {
    if (c.run.checkpoint_interval < 1) {
      throw ConfigError("run.checkpoint_interval must be >= 1");
    }
    if (!(c.run.friction_min >= 0.0) ||
        !(c.run.friction_max >= c.run.friction_min)) {
      throw ConfigError("run friction range is empty or negative");
    }
  }
}

}  // namespace

void Config::Validate() const {
  for (const char* section : {"env", "net", "ppo", "eval", "run"}) {
    ValidateSection(*this, section);
  }
  const FrameLayout layout{env.contact_count()};
  if (net.frame_dim != layout.size()) {
    throw ConfigError("net.frame_dim must equal 18 + number of contact "
                      "regions (" + std::to_string(layout.size()) + ")");
  }
  if (net.contacts != env.contact_count()) {
    throw ConfigError("net.contacts must equal the number of contact regions");
  }
  if (net.action_dim != kActionDim) {
    throw ConfigError("net.action_dim must be 4");
  }
}

Config ParseConfig(const std::string& text) {
  Config config;
  std::map<std::string, int> set_at;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = Trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("line " + std::to_string(line_no) +
                          ": malformed section header");
      }
      section = Trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) +
                        ": expected 'key = value'");
    }
    std::string key = Trim(line.substr(0, eq));
    const std::string value = Trim(line.substr(eq + 1));
    if (key.find('.') == std::string::npos && !section.empty()) {
      key = section + "." + key;
    }
    const KeySpec* spec = FindKey(key);
    if (spec == nullptr) {
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" +
                        key + "'");
    }
    if (!spec->set(config, value)) {
      throw ConfigError("line " + std::to_string(line_no) + ": key '" + key +
                        "': cannot parse value '" + value + "'");
    }
    set_at[key] = line_no;
  }

  auto last_key_in = [&](const std::string& sec) {
    std::pair<std::string, int> best{"", 0};
    for (const auto& [key, ln] : set_at) {
      if (SectionOf(key) == sec && ln > best.second) best = {key, ln};
    }
    return best;
  };
  for (const char* sec : {"env", "net", "ppo", "eval", "run"}) {
    try {
      ValidateSection(config, sec);
    } catch (const ConfigError& e) {
      const auto [key, ln] = last_key_in(sec);
      if (key.empty()) throw;
      throw ConfigError("line " + std::to_string(ln) + " (" + key +
                        "): " + e.what());
    }
  }
  try {
    config.Validate();
  } catch (const ConfigError& e) {
    const auto [key, ln] = last_key_in("net");
    if (key.empty()) throw;
    throw ConfigError("line " + std::to_string(ln) + " (" + key +
                      "): " + e.what());
  }
  return config;
}

Config LoadConfigFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ParseConfig(ss.str());
}

std::string DumpConfig(const Config& config) {
  std::string out;
  std::string section;
  for (const auto& key : Registry()) {
    const std::string sec = SectionOf(key.name);
    if (sec != section) {
      if (!section.empty()) out += "\n";
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += key.name.substr(sec.size() + 1) + " = " + key.get(config) + "\n";
  }
  return out;
}

std::vector<std::string> ConfigKeys() {
  std::vector<std::string> names;
  for (const auto& key : Registry()) names.push_back(key.name);
  return names;
}

bool operator==(const Config& a, const Config& b) {
  for (const auto& key : Registry()) {
    if (key.get(a) != key.get(b)) return false;
  }
  return true;
}

}  // namespace pushrec
