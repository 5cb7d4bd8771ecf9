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


#ifndef PUSHREC_CHECKPOINT_H_
#define PUSHREC_CHECKPOINT_H_

#include <cstdint>
#include <string>
#include <string_view>

#include "pushrec/config.h"
#include "pushrec/learn.h"

namespace pushrec {

inline constexpr char kCheckpointMagic[4] = {'R', 'C', 'V', 'F'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Config config;
  TrainerState state;
};

std::string SerializeCheckpoint(const Config& config,
                                const TrainerState& state);
// Throws CheckpointError; never returns a partially filled state.
Checkpoint ParseCheckpoint(std::string_view bytes);

// Writes to path + ".tmp" and renames over path.
void SaveCheckpoint(const Config& config, const TrainerState& state,
                    const std::string& path);
Checkpoint LoadCheckpoint(const std::string& path);

}  // namespace pushrec

#endif  // PUSHREC_CHECKPOINT_H_
