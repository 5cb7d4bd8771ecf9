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


#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <gtest/gtest.h>

#include "pushrec/checkpoint.h"
#include "pushrec/config.h"
#include "pushrec/csv.h"
#include "pushrec/errors.h"
#include "test_util.h"

namespace pushrec {
namespace {

using testing::TinyConfig;

std::string ErrorOf(const std::string& text) {
  try {
    ParseConfig(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(ConfigTest, EmptyTextGivesDefaults) {
  const Config c = ParseConfig("");
  EXPECT_TRUE(c == Config{});
  EXPECT_EQ(c.ppo.gamma, 0.99);
  EXPECT_EQ(c.net.embed_dim, 64);
  EXPECT_EQ(c.net.heads, 2);
  EXPECT_EQ(c.ppo.num_envs, 16);
}

TEST(ConfigTest, SectionsAndDottedKeys) {
  const Config a = ParseConfig("[ppo]\ngamma = 0.95  # shorter horizon\n");
  EXPECT_EQ(a.ppo.gamma, 0.95);
  const Config b = ParseConfig("ppo.gamma=0.95\nenv.kp = 50,55,60\n");
  EXPECT_EQ(b.ppo.gamma, 0.95);
  EXPECT_EQ(b.env.kp, Eigen::Vector3d(50, 55, 60));
  const Config d = ParseConfig("eval.force_grid = 1, 2.5, 4\neval.deterministic = false\n");
  EXPECT_EQ(d.eval.force_grid, (std::vector<double>{1, 2.5, 4}));
  EXPECT_FALSE(d.eval.deterministic);
}

TEST(ConfigTest, IndivisibleHeadsNamesKeyAndLine) {
  const std::string msg = ErrorOf("[net]\nd = 30\nheads = 4\n");
  EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("divisible"), std::string::npos) << msg;
}

TEST(ConfigTest, UnknownKeyAndBadValue) {
  std::string msg = ErrorOf("ppo.gamma = 0.9\nppo.gama = 0.9\n");
  EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
  EXPECT_NE(msg.find("ppo.gama"), std::string::npos) << msg;
  msg = ErrorOf("net.layers = two\n");
  EXPECT_NE(msg.find("net.layers"), std::string::npos) << msg;
  EXPECT_NE(msg.find("two"), std::string::npos) << msg;
  EXPECT_FALSE(ErrorOf("[net\n").empty());
  EXPECT_FALSE(ErrorOf("just words\n").empty());
  EXPECT_FALSE(ErrorOf("net.contacts = 3\n").empty());
}

TEST(ConfigTest, DumpParsesBackToSameConfig) {
  Config c = TinyConfig();
  c.ppo.learning_rate = 1.0 / 3.0;
  c.env.contact_heights = {0.25, 0.5};
  c.net.contacts = 2;
  c.net.frame_dim = 20;
  c.eval.wall_distances = {0.1, 0.2};
  c.run.output_dir = "some/dir";
  c.run.seed = 123456789012345ULL;
  const std::string dumped = DumpConfig(c);
  const Config back = ParseConfig(dumped);
  EXPECT_TRUE(back == c);
  EXPECT_EQ(back.ppo.learning_rate, 1.0 / 3.0);
  EXPECT_EQ(DumpConfig(back), dumped);
  for (const std::string& key : ConfigKeys()) {
    EXPECT_NE(dumped.find(key.substr(key.find('.') + 1)), std::string::npos) << key;
  }
}

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    config_ = TinyConfig();
    state_ = InitTrainer(config_, 31);
    auto workers = MakeWorkers(config_, 31);
    std::vector<EpisodeSummary> recent;
    TrainUpdate(state_, workers, config_, recent);
    bytes_ = SerializeCheckpoint(config_, state_);
  }

  Config config_;
  TrainerState state_;
  std::string bytes_;
};

TEST_F(CheckpointTest, RoundTripIsBitwise) {
  const Checkpoint ck = ParseCheckpoint(bytes_);
  EXPECT_TRUE(ck.config == config_);
  EXPECT_EQ(ck.state.global_step, state_.global_step);
  EXPECT_EQ(ck.state.update, state_.update);
  EXPECT_EQ(ck.state.tau, state_.tau);
  EXPECT_EQ(ck.state.adam.step, state_.adam.step);
  EXPECT_EQ(ck.state.norm.count(), state_.norm.count());
  EXPECT_EQ(ck.state.norm.mean(), state_.norm.mean());
  const auto a = state_.params.Tensors();
  const auto b = ck.state.params.Tensors();
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(*a[i].tensor, *b[i].tensor) << a[i].name;
  }
  EXPECT_EQ(ck.state.adam.v.w_dec1, state_.adam.v.w_dec1);
  std::mt19937_64 r1 = state_.rng, r2 = ck.state.rng;
  EXPECT_EQ(r1(), r2());

  std::mt19937_64 rng(3);
  const Mat<float> hist =
      testing::RandomMatrix(5 * config_.net.history, config_.net.frame_dim, rng)
          .cast<float>();
  ForwardCache<float> c1, c2;
  Forward(state_.params, config_.net, hist, 0.4f, ModeSelect::kSoft, c1);
  Forward(ck.state.params, ck.config.net, hist, 0.4f, ModeSelect::kSoft, c2);
  EXPECT_EQ(c1.mean, c2.mean);
  EXPECT_EQ(c1.value, c2.value);
  EXPECT_EQ(c1.probs, c2.probs);
  const Mat<float> h1 = hist.topRows(config_.net.history);
  EXPECT_EQ(EncodeSequence(state_.params, config_.net, h1),
            EncodeSequence(ck.state.params, ck.config.net, h1));
  EXPECT_EQ(SerializeCheckpoint(ck.config, ck.state), bytes_);
}

TEST_F(CheckpointTest, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "pushrec_ck_test.bin";
  SaveCheckpoint(config_, state_, path.string());
  EXPECT_FALSE(std::filesystem::exists(path.string() + ".tmp"));
  const Checkpoint ck = LoadCheckpoint(path.string());
  EXPECT_EQ(ck.state.params.w_in, state_.params.w_in);
  std::filesystem::remove(path);
  EXPECT_THROW(LoadCheckpoint(path.string()), std::exception);
}

std::string MessageOf(std::string_view bytes) {
  try {
    ParseCheckpoint(bytes);
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

TEST_F(CheckpointTest, TruncatedPayloadIsRejected) {
  const std::string msg = MessageOf(std::string_view(bytes_).substr(0, bytes_.size() - 10));
  EXPECT_NE(msg.find("payload mismatch"), std::string::npos) << msg;
  EXPECT_FALSE(MessageOf(std::string_view(bytes_).substr(0, 6)).empty());
  EXPECT_FALSE(MessageOf(bytes_ + "x").empty());
}

TEST_F(CheckpointTest, NewerVersionIsRefused) {
  std::string bumped = bytes_;
  const std::uint32_t v = kCheckpointVersion + 1;
  std::memcpy(bumped.data() + 4, &v, sizeof v);
  const std::string msg = MessageOf(bumped);
  EXPECT_NE(msg.find("version"), std::string::npos) << msg;
  std::string bad_magic = bytes_;
  bad_magic[0] = 'X';
  EXPECT_NE(MessageOf(bad_magic).find("magic"), std::string::npos);
}

TEST(CsvTest, ReparsesLosslessly) {
  CsvTable t;
  t.header = {"name", "value", "note"};
  t.rows = {{"a", FormatNumber(0.1), "plain"},
            {"b", FormatNumber(1.0 / 3.0), "with, comma"},
            {"c", FormatNumber(-2.5e-300), "quote \"inside\""},
            {"d", FormatNumber(12345678.0), "line\nbreak"}};
  const CsvTable back = ParseCsv(FormatCsv(t));
  EXPECT_EQ(back.header, t.header);
  EXPECT_EQ(back.rows, t.rows);
  EXPECT_EQ(std::stod(back.rows[1][1]), 1.0 / 3.0);
  EXPECT_EQ(std::stod(back.rows[2][1]), -2.5e-300);
  EXPECT_EQ(back.Column("note"), 2);
}

TEST(CsvTest, RejectsMalformed) {
  EXPECT_THROW(ParseCsv("a,b\n1\n"), std::runtime_error);
  EXPECT_THROW(ParseCsv("a,b\n\"1,2\n"), std::runtime_error);
}

TEST(CsvTest, FileRoundTrip) {
  CsvTable t;
  t.header = {"x"};
  t.rows = {{"1"}, {"2"}};
  const auto path = std::filesystem::temp_directory_path() / "pushrec_csv_test.csv";
  WriteCsv(t, path.string());
  EXPECT_EQ(ReadCsv(path.string()).rows, t.rows);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace pushrec
