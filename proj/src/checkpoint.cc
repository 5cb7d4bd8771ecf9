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

#include "pushrec/checkpoint.h"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "pushrec/errors.h"

namespace pushrec {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1 };

class Writer {
 public:
  template <typename T>
  void Put(T value) {
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void PutString(std::string_view s) {
    Put<std::uint64_t>(s.size());
    out_.append(s.data(), s.size());
  }
  void PutRaw(const void* data, std::size_t n) {
    out_.append(static_cast<const char*>(data), n);
  }
  template <typename S>
  void PutTensor(const std::string& name, const Mat<S>& m) {
    PutString(name);
    Put<std::uint8_t>(static_cast<std::uint8_t>(
        sizeof(S) == 4 ? DType::kF32 : DType::kF64));
    Put<std::int64_t>(m.rows());
    Put<std::int64_t>(m.cols());
    const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>
        row_major = m;
    Put<std::uint64_t>(row_major.size() * sizeof(S));
    PutRaw(row_major.data(), row_major.size() * sizeof(S));
  }
  std::string& bytes() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  void Need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError("checkpoint payload mismatch: file truncated");
    }
  }
  template <typename T>
  T Get() {
    Need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string GetString() {
    const auto n = Get<std::uint64_t>();
    Need(n);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::string_view GetRaw(std::size_t n) {
    Need(n);
    auto view = bytes_.substr(pos_, n);
    pos_ += n;
    return view;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

struct RawTensor {
  DType dtype;
  std::int64_t rows;
  std::int64_t cols;
  std::string_view payload;
};

template <typename S>
void FillTensor(const std::string& name, const RawTensor& raw, Mat<S>& out) {
  const DType want = sizeof(S) == 4 ? DType::kF32 : DType::kF64;
  if (raw.dtype != want) {
    throw CheckpointError("checkpoint tensor '" + name + "' has wrong dtype");
  }
  if (raw.rows != out.rows() || raw.cols != out.cols()) {
    throw CheckpointError(
        "checkpoint shape mismatch for '" + name + "': file has " +
        std::to_string(raw.rows) + "x" + std::to_string(raw.cols) +
        ", config expects " + std::to_string(out.rows()) + "x" +
        std::to_string(out.cols()));
  }
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> row_major(
      out.rows(), out.cols());
  std::memcpy(row_major.data(), raw.payload.data(), raw.payload.size());
  out = row_major;
}

}  // namespace

std::string SerializeCheckpoint(const Config& config,
                                const TrainerState& state) {
  Writer w;
  w.PutRaw(kCheckpointMagic, 4);
  w.Put<std::uint32_t>(kCheckpointVersion);
  w.PutString(DumpConfig(config));
  std::ostringstream rng_text;
  rng_text << state.rng;
  w.PutString(rng_text.str());
  w.Put<std::int64_t>(state.global_step);
  w.Put<std::int64_t>(state.update);
  w.Put<std::int64_t>(state.adam.step);
  w.Put<double>(state.tau);
  w.Put<std::uint64_t>(state.seed);
  w.Put<double>(state.norm.count());

  const auto params = state.params.Tensors();
  const auto m = state.adam.m.Tensors();
  const auto v = state.adam.v.Tensors();
  w.Put<std::uint32_t>(static_cast<std::uint32_t>(3 * params.size() + 2));
  for (const auto& t : params) w.PutTensor("param/" + t.name, *t.tensor);
  for (const auto& t : m) w.PutTensor("adam_m/" + t.name, *t.tensor);
  for (const auto& t : v) w.PutTensor("adam_v/" + t.name, *t.tensor);
  w.PutTensor<double>("norm/mean", state.norm.mean());
  w.PutTensor<double>("norm/m2", state.norm.sum_sq_dev());
  return std::move(w.bytes());
}

Checkpoint ParseCheckpoint(std::string_view bytes) {
  Reader r(bytes);
  const std::string_view magic = r.GetRaw(4);
  if (magic != std::string_view(kCheckpointMagic, 4)) {
    throw CheckpointError("not a checkpoint: bad magic");
  }
  const auto version = r.Get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint format version " +
                          std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ckpt;
  try {
    ckpt.config = ParseConfig(r.GetString());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint config echo: ") + e.what());
  }
  TrainerState& s = ckpt.state;
  s.net = ckpt.config.net;
  std::istringstream rng_text(r.GetString());
  rng_text >> s.rng;
  if (!rng_text) throw CheckpointError("checkpoint rng state is corrupt");
  s.global_step = r.Get<std::int64_t>();
  s.update = r.Get<std::int64_t>();
  const auto adam_step = r.Get<std::int64_t>();
  s.tau = r.Get<double>();
  s.seed = r.Get<std::uint64_t>();
  const double norm_count = r.Get<double>();

  std::map<std::string, RawTensor> table;
  const auto count = r.Get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.GetString();
    RawTensor raw;
    raw.dtype = static_cast<DType>(r.Get<std::uint8_t>());
    raw.rows = r.Get<std::int64_t>();
    raw.cols = r.Get<std::int64_t>();
    const auto declared = r.Get<std::uint64_t>();
    const std::size_t elem = raw.dtype == DType::kF32 ? 4 : 8;
    if (raw.rows < 0 || raw.cols < 0 ||
        declared != static_cast<std::uint64_t>(raw.rows * raw.cols) * elem) {
      throw CheckpointError("checkpoint payload mismatch for '" + name +
                            "': declared length disagrees with shape");
    }
    raw.payload = r.GetRaw(declared);
    table[name] = raw;
  }
  if (!r.done()) {
    throw CheckpointError("checkpoint payload mismatch: trailing bytes");
  }

  auto take = [&table](const std::string& name) -> const RawTensor& {
    auto it = table.find(name);
    if (it == table.end()) {
      throw CheckpointError("checkpoint is missing tensor '" + name + "'");
    }
    return it->second;
  };
  s.params = PolicyParams<float>::Zeros(s.net);
  s.adam = MakeAdamState(s.net);
  s.adam.step = adam_step;
  for (auto& t : s.params.Tensors()) {
    FillTensor("param/" + t.name, take("param/" + t.name), *t.tensor);
  }
  for (auto& t : s.adam.m.Tensors()) {
    FillTensor("adam_m/" + t.name, take("adam_m/" + t.name), *t.tensor);
  }
  for (auto& t : s.adam.v.Tensors()) {
    FillTensor("adam_v/" + t.name, take("adam_v/" + t.name), *t.tensor);
  }
  Mat<double> mean(s.net.frame_dim, 1);
  Mat<double> m2(s.net.frame_dim, 1);
  FillTensor("norm/mean", take("norm/mean"), mean);
  FillTensor("norm/m2", take("norm/m2"), m2);
  s.norm = RunningNorm(s.net.frame_dim);
  s.norm.SetState(norm_count, mean, m2);
  if (table.size() != 3 * s.params.Tensors().size() + 2) {
    throw CheckpointError("checkpoint has unexpected extra tensors");
  }
  return ckpt;
}

void SaveCheckpoint(const Config& config, const TrainerState& state,
                    const std::string& path) {
  const std::string bytes = SerializeCheckpoint(config, state);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open '" + tmp + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw CheckpointError("write failed for '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw CheckpointError("cannot rename '" + tmp + "' to '" + path +
                          "': " + ec.message());
  }
}

Checkpoint LoadCheckpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ParseCheckpoint(ss.str());
}

}  // namespace pushrec
