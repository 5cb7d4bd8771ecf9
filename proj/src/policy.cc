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

#include "pushrec/policy.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "pushrec/errors.h"

namespace pushrec {
namespace {

constexpr double kLayerNormEps = 1e-5;

template <typename S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

template <typename S>
Mat<S> Linear(const Mat<S>& x, const Mat<S>& w, const Mat<S>& b) {
  Mat<S> y = x * w.transpose();
  y.rowwise() += b.col(0).transpose();
  return y;
}

// Accumulates dW, db and returns dX.
template <typename S>
Mat<S> LinearBackward(const Mat<S>& x, const Mat<S>& w, const Mat<S>& dy,
                      Mat<S>& dw, Mat<S>& db) {
  dw.noalias() += dy.transpose() * x;
  db.col(0) += dy.colwise().sum().transpose();
  return dy * w;
}

template <typename S>
void LinearBackwardNoInput(const Mat<S>& x, const Mat<S>& dy, Mat<S>& dw,
                           Mat<S>& db) {
  dw.noalias() += dy.transpose() * x;
  db.col(0) += dy.colwise().sum().transpose();
}

template <typename S>
void LayerNormForward(const Mat<S>& x, const Mat<S>& gain, const Mat<S>& bias,
                      Mat<S>& hat, Mat<S>& rstd, Mat<S>& y) {
  const Eigen::Matrix<S, Eigen::Dynamic, 1> mean = x.rowwise().mean();
  hat = x.colwise() - mean;
  const Eigen::Matrix<S, Eigen::Dynamic, 1> var =
      hat.array().square().rowwise().mean();
  rstd = (var.array() + S(kLayerNormEps)).rsqrt().matrix();
  hat.array().colwise() *= rstd.col(0).array();
  y = hat * gain.col(0).asDiagonal();
  y.rowwise() += bias.col(0).transpose();
}

template <typename S>
Mat<S> LayerNormBackward(const Mat<S>& dy, const Mat<S>& hat,
                         const Mat<S>& rstd, const Mat<S>& gain, Mat<S>& dgain,
                         Mat<S>& dbias) {
  dgain.col(0) += dy.cwiseProduct(hat).colwise().sum().transpose();
  dbias.col(0) += dy.colwise().sum().transpose();
  const Mat<S> dhat = dy * gain.col(0).asDiagonal();
  const Eigen::Matrix<S, Eigen::Dynamic, 1> mean_dhat = dhat.rowwise().mean();
  const Eigen::Matrix<S, Eigen::Dynamic, 1> mean_dhat_hat =
      dhat.cwiseProduct(hat).rowwise().mean();
  Mat<S> dx = dhat;
  dx.colwise() -= mean_dhat;
  dx -= Mat<S>(hat.array().colwise() * mean_dhat_hat.array());
  dx.array().colwise() *= rstd.col(0).array();
  return dx;
}

template <typename S>
S GeluScalar(S x) {
  using std::erf;
  return S(0.5) * x * (S(1) + erf(x * S(std::numbers::sqrt2 / 2)));
}

template <typename S>
S GeluGradScalar(S x) {
  using std::erf;
  using std::exp;
  const S cdf = S(0.5) * (S(1) + erf(x * S(std::numbers::sqrt2 / 2)));
  const S pdf = exp(S(-0.5) * x * x) * S(0.5 * std::numbers::inv_sqrtpi *
                                        std::numbers::sqrt2);
  return cdf + x * pdf;
}

template <typename S>
Mat<S> Gelu(const Mat<S>& x) {
  return x.unaryExpr([](S v) { return GeluScalar(v); });
}

template <typename S>
Mat<S> GeluGrad(const Mat<S>& x) {
  return x.unaryExpr([](S v) { return GeluGradScalar(v); });
}

// Causal softmax of one H x H score block, in place.
template <typename S>
void CausalSoftmaxInPlace(Mat<S>& scores) {
  const int h = static_cast<int>(scores.rows());
  for (int i = 0; i < h; ++i) {
    S max_score = scores(i, 0);
    for (int j = 1; j <= i; ++j) max_score = std::max(max_score, scores(i, j));
    S total(0);
    for (int j = 0; j <= i; ++j) {
      using std::exp;
      scores(i, j) = exp(scores(i, j) - max_score);
      total += scores(i, j);
    }
    const S inv = S(1) / total;
    for (int j = 0; j <= i; ++j) scores(i, j) *= inv;
    for (int j = i + 1; j < h; ++j) scores(i, j) = S(0);
  }
}

template <typename S>
void BlockForward(const BlockParams<S>& bp, const NetConfig& cfg, int batch,
                  const Mat<S>& x, BlockCache<S>& c, Mat<S>& out) {
  const int h = cfg.history;
  const int dk = cfg.head_dim();
  const S scale = S(1) / std::sqrt(S(dk));
  c.x_in = x;
  LayerNormForward(x, bp.ln1_gain, bp.ln1_bias, c.ln1_hat, c.ln1_rstd, c.y1);
  c.q = Linear(c.y1, bp.w_query, bp.b_query);
  c.k = Linear(c.y1, bp.w_key, bp.b_key);
  c.v = Linear(c.y1, bp.w_value, bp.b_value);
  c.o.setZero(x.rows(), x.cols());
  c.attn.resize(static_cast<Eigen::Index>(batch) * cfg.heads * h, h);
  Mat<S> scores(h, h);
  for (int n = 0; n < batch; ++n) {
    for (int head = 0; head < cfg.heads; ++head) {
      const auto qh = c.q.block(n * h, head * dk, h, dk);
      const auto kh = c.k.block(n * h, head * dk, h, dk);
      const auto vh = c.v.block(n * h, head * dk, h, dk);
      scores.noalias() = (qh * kh.transpose()) * scale;
      CausalSoftmaxInPlace(scores);
      c.attn.block((n * cfg.heads + head) * h, 0, h, h) = scores;
      c.o.block(n * h, head * dk, h, dk).noalias() =
          scores.template triangularView<Eigen::Lower>() * vh;
    }
  }
  c.x_mid = x + Linear(c.o, bp.w_out, bp.b_out);
  LayerNormForward(c.x_mid, bp.ln2_gain, bp.ln2_bias, c.ln2_hat, c.ln2_rstd,
                   c.y2);
  c.u = Linear(c.y2, bp.w_ff1, bp.b_ff1);
  c.g = Gelu(c.u);
  out = c.x_mid + Linear(c.g, bp.w_ff2, bp.b_ff2);
}

template <typename S>
Mat<S> BlockBackward(const BlockParams<S>& bp, const NetConfig& cfg, int batch,
                     const BlockCache<S>& c, const Mat<S>& d_out,
                     BlockParams<S>& gp) {
  const int h = cfg.history;
  const int dk = cfg.head_dim();
  const S scale = S(1) / std::sqrt(S(dk));

  Mat<S> d_mid = d_out;
  Mat<S> dg = LinearBackward(c.g, bp.w_ff2, d_out, gp.w_ff2, gp.b_ff2);
  const Mat<S> du = dg.cwiseProduct(GeluGrad(c.u));
  const Mat<S> dy2 = LinearBackward(c.y2, bp.w_ff1, du, gp.w_ff1, gp.b_ff1);
  d_mid += LayerNormBackward(dy2, c.ln2_hat, c.ln2_rstd, bp.ln2_gain,
                             gp.ln2_gain, gp.ln2_bias);

  const Mat<S> d_o = LinearBackward(c.o, bp.w_out, d_mid, gp.w_out, gp.b_out);
  Mat<S> dq = Mat<S>::Zero(c.q.rows(), c.q.cols());
  Mat<S> dk_mat = Mat<S>::Zero(c.k.rows(), c.k.cols());
  Mat<S> dv = Mat<S>::Zero(c.v.rows(), c.v.cols());
  Mat<S> d_attn(h, h);
  for (int n = 0; n < batch; ++n) {
    for (int head = 0; head < cfg.heads; ++head) {
      const auto a = c.attn.block((n * cfg.heads + head) * h, 0, h, h);
      const auto qh = c.q.block(n * h, head * dk, h, dk);
      const auto kh = c.k.block(n * h, head * dk, h, dk);
      const auto vh = c.v.block(n * h, head * dk, h, dk);
      const auto doh = d_o.block(n * h, head * dk, h, dk);
      d_attn.noalias() = doh * vh.transpose();
      dv.block(n * h, head * dk, h, dk).noalias() += a.transpose() * doh;
      // Softmax backward; entries above the diagonal have a == 0.
      const Eigen::Matrix<S, Eigen::Dynamic, 1> row_dot =
          a.cwiseProduct(d_attn).rowwise().sum();
      Mat<S> d_scores = a.cwiseProduct(d_attn.colwise() - row_dot) * scale;
      dq.block(n * h, head * dk, h, dk).noalias() += d_scores * kh;
      dk_mat.block(n * h, head * dk, h, dk).noalias() +=
          d_scores.transpose() * qh;
    }
  }
  Mat<S> dy1 = LinearBackward(c.y1, bp.w_query, dq, gp.w_query, gp.b_query);
  dy1 += LinearBackward(c.y1, bp.w_key, dk_mat, gp.w_key, gp.b_key);
  dy1 += LinearBackward(c.y1, bp.w_value, dv, gp.w_value, gp.b_value);
  return d_mid + LayerNormBackward(dy1, c.ln1_hat, c.ln1_rstd, bp.ln1_gain,
                                   gp.ln1_gain, gp.ln1_bias);
}

template <typename S>
Mat<S> EmbedInputs(const PolicyParams<S>& params, const NetConfig& cfg,
                   const Mat<S>& histories, int batch) {
  Mat<S> x = Linear(histories, params.w_in, params.b_in);
  for (int n = 0; n < batch; ++n) {
    x.middleRows(n * cfg.history, cfg.history) += params.pos;
  }
  return x;
}

// Kept strictly inside (0, 1) even where the logistic rounds to 0 or 1.
template <typename S>
Mat<S> Logistic(const Mat<S>& x) {
  static constexpr S kEps = std::numeric_limits<S>::epsilon();
  return x.unaryExpr([](S v) {
    using std::exp;
    return std::clamp(S(1) / (S(1) + exp(-v)), kEps, S(1) - kEps);
  });
}

template <typename S>
void Resize(Mat<S>& m, int rows, int cols) {
  m = Mat<S>::Zero(rows, cols);
}

}  // namespace

void NetConfig::Validate() const {
  auto require = [](bool ok, const char* msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(frame_dim >= 1, "net.frame_dim must be >= 1");
  require(embed_dim >= 1, "net.d must be >= 1");
  require(layers >= 1, "net.layers must be >= 1");
  require(heads >= 1, "net.heads must be >= 1");
  require(embed_dim % std::max(heads, 1) == 0, "d not divisible by H_h");
  require(ff_dim >= 0, "net.ff_dim must be >= 0");
  require(history >= 1, "net.history must be >= 1");
  require(modes >= 2, "net.modes must be >= 2");
  require(mode_dim >= 1, "net.mode_dim must be >= 1");
  require(contacts >= 1, "net.contacts must be >= 1");
  require(action_dim >= 1, "net.action_dim must be >= 1");
  require(decoder_hidden1 >= 1 && decoder_hidden2 >= 1,
          "net decoder hidden sizes must be >= 1");
  require(tau_start > 0.0 && tau_end > 0.0, "net tau endpoints must be > 0");
}

std::vector<TensorShape> ParameterCensus(const NetConfig& cfg) {
  const int d = cfg.embed_dim;
  const int ff = cfg.ffn();
  std::vector<TensorShape> shapes = {
      {"w_in", d, cfg.frame_dim}, {"b_in", d, 1}, {"pos", cfg.history, d}};
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    const std::vector<TensorShape> block = {
        {p + "ln1_gain", d, 1}, {p + "ln1_bias", d, 1},
        {p + "w_query", d, d},  {p + "b_query", d, 1},
        {p + "w_key", d, d},    {p + "b_key", d, 1},
        {p + "w_value", d, d},  {p + "b_value", d, 1},
        {p + "w_out", d, d},    {p + "b_out", d, 1},
        {p + "ln2_gain", d, 1}, {p + "ln2_bias", d, 1},
        {p + "w_ff1", ff, d},   {p + "b_ff1", ff, 1},
        {p + "w_ff2", d, ff},   {p + "b_ff2", d, 1}};
    shapes.insert(shapes.end(), block.begin(), block.end());
  }
  const std::vector<TensorShape> heads = {
      {"w_mode", cfg.modes, d},
      {"b_mode", cfg.modes, 1},
      {"mode_embed", cfg.modes, cfg.mode_dim},
      {"w_aff", cfg.contacts, d},
      {"b_aff", cfg.contacts, 1},
      {"w_dec1", cfg.decoder_hidden1, cfg.decoder_input()},
      {"b_dec1", cfg.decoder_hidden1, 1},
      {"w_dec2", cfg.decoder_hidden2, cfg.decoder_hidden1},
      {"b_dec2", cfg.decoder_hidden2, 1},
      {"w_dec3", cfg.action_dim, cfg.decoder_hidden2},
      {"b_dec3", cfg.action_dim, 1},
      {"w_value", 1, d},
      {"b_value", 1, 1},
      {"log_std", cfg.action_dim, 1}};
  shapes.insert(shapes.end(), heads.begin(), heads.end());
  return shapes;
}

namespace {

// One place that lists tensors in order; Fn gets (name, tensor&).
template <typename P, typename Fn>
void VisitTensors(P& p, Fn&& fn) {
  fn("w_in", p.w_in);
  fn("b_in", p.b_in);
  fn("pos", p.pos);
  for (std::size_t l = 0; l < p.blocks.size(); ++l) {
    auto& b = p.blocks[l];
    const std::string pre = "block" + std::to_string(l) + ".";
    fn(pre + "ln1_gain", b.ln1_gain);
    fn(pre + "ln1_bias", b.ln1_bias);
    fn(pre + "w_query", b.w_query);
    fn(pre + "b_query", b.b_query);
    fn(pre + "w_key", b.w_key);
    fn(pre + "b_key", b.b_key);
    fn(pre + "w_value", b.w_value);
    fn(pre + "b_value", b.b_value);
    fn(pre + "w_out", b.w_out);
    fn(pre + "b_out", b.b_out);
    fn(pre + "ln2_gain", b.ln2_gain);
    fn(pre + "ln2_bias", b.ln2_bias);
    fn(pre + "w_ff1", b.w_ff1);
    fn(pre + "b_ff1", b.b_ff1);
    fn(pre + "w_ff2", b.w_ff2);
    fn(pre + "b_ff2", b.b_ff2);
  }
  fn("w_mode", p.w_mode);
  fn("b_mode", p.b_mode);
  fn("mode_embed", p.mode_embed);
  fn("w_aff", p.w_aff);
  fn("b_aff", p.b_aff);
  fn("w_dec1", p.w_dec1);
  fn("b_dec1", p.b_dec1);
  fn("w_dec2", p.w_dec2);
  fn("b_dec2", p.b_dec2);
  fn("w_dec3", p.w_dec3);
  fn("b_dec3", p.b_dec3);
  fn("w_value", p.w_value);
  fn("b_value", p.b_value);
  fn("log_std", p.log_std);
}

}  // namespace

template <typename Scalar>
PolicyParams<Scalar> PolicyParams<Scalar>::Zeros(const NetConfig& cfg) {
  cfg.Validate();
  PolicyParams<Scalar> p;
  p.blocks.resize(cfg.layers);
  const std::vector<TensorShape> census = ParameterCensus(cfg);
  std::size_t i = 0;
  VisitTensors(p, [&](const std::string&, Mat<Scalar>& t) {
    Resize(t, census[i].rows, census[i].cols);
    ++i;
  });
  return p;
}

template <typename Scalar>
std::vector<NamedTensor<Scalar>> PolicyParams<Scalar>::Tensors() {
  std::vector<NamedTensor<Scalar>> out;
  VisitTensors(*this, [&](const std::string& name, Mat<Scalar>& t) {
    out.push_back({name, &t});
  });
  return out;
}

template <typename Scalar>
std::vector<ConstNamedTensor<Scalar>> PolicyParams<Scalar>::Tensors() const {
  std::vector<ConstNamedTensor<Scalar>> out;
  auto& self = const_cast<PolicyParams<Scalar>&>(*this);
  VisitTensors(self, [&](const std::string& name, Mat<Scalar>& t) {
    out.push_back({name, &t});
  });
  return out;
}

template <typename Scalar>
std::int64_t PolicyParams<Scalar>::ParameterCount() const {
  std::int64_t total = 0;
  auto& self = const_cast<PolicyParams<Scalar>&>(*this);
  VisitTensors(self, [&](const std::string&, Mat<Scalar>& t) {
    total += t.size();
  });
  return total;
}

template <typename Scalar>
void PolicyParams<Scalar>::SetZero() {
  VisitTensors(*this, [](const std::string&, Mat<Scalar>& t) { t.setZero(); });
}

template <typename Scalar>
bool PolicyParams<Scalar>::AllFinite() const {
  bool ok = true;
  auto& self = const_cast<PolicyParams<Scalar>&>(*this);
  VisitTensors(self, [&](const std::string&, Mat<Scalar>& t) {
    ok = ok && t.allFinite();
  });
  return ok;
}

template <typename Scalar>
template <typename Other>
PolicyParams<Other> PolicyParams<Scalar>::Cast() const {
  PolicyParams<Other> out;
  out.blocks.resize(blocks.size());
  std::vector<Mat<Other>*> dst;
  VisitTensors(out, [&](const std::string&, Mat<Other>& t) {
    dst.push_back(&t);
  });
  std::size_t i = 0;
  auto& self = const_cast<PolicyParams<Scalar>&>(*this);
  VisitTensors(self, [&](const std::string&, Mat<Scalar>& t) {
    *dst[i++] = t.template cast<Other>();
  });
  return out;
}

template <typename Scalar>
PolicyParams<Scalar> InitParams(const NetConfig& cfg, std::uint64_t seed) {
  PolicyParams<double> p = PolicyParams<double>::Zeros(cfg);
  std::mt19937_64 rng(seed);
  auto fill_uniform = [&](Mat<double>& t, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index j = 0; j < t.cols(); ++j) {
      for (Eigen::Index i = 0; i < t.rows(); ++i) t(i, j) = u(rng);
    }
  };
  auto fan_in = [&](Mat<double>& w) {
    fill_uniform(w, 1.0 / std::sqrt(static_cast<double>(w.cols())));
  };
  fan_in(p.w_in);
  fill_uniform(p.pos, 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim)));
  for (auto& b : p.blocks) {
    b.ln1_gain.setOnes();
    b.ln2_gain.setOnes();
    fan_in(b.w_query);
    fan_in(b.w_key);
    fan_in(b.w_value);
    fan_in(b.w_out);
    fan_in(b.w_ff1);
    fan_in(b.w_ff2);
  }
  fan_in(p.w_mode);
  fill_uniform(p.mode_embed, 1.0);
  fan_in(p.w_aff);
  fan_in(p.w_dec1);
  fan_in(p.w_dec2);
  fan_in(p.w_dec3);
  p.w_dec3 *= 0.01;
  fan_in(p.w_value);
  p.log_std.setConstant(-0.5);
  if constexpr (std::is_same_v<Scalar, double>) {
    return p;
  } else {
    return p.template Cast<Scalar>();
  }
}

template <typename Scalar>
Mat<Scalar> AttentionWeights(const Mat<Scalar>& q, const Mat<Scalar>& k) {
  Mat<Scalar> scores =
      (q * k.transpose()) * (Scalar(1) / std::sqrt(Scalar(q.cols())));
  CausalSoftmaxInPlace(scores);
  return scores;
}

template <typename Scalar>
Mat<Scalar> AttentionBlock(const BlockParams<Scalar>& block,
                           const NetConfig& cfg, const Mat<Scalar>& x) {
  NetConfig single = cfg;
  single.history = static_cast<int>(x.rows());
  BlockCache<Scalar> cache;
  Mat<Scalar> out;
  BlockForward(block, single, 1, x, cache, out);
  return out;
}

template <typename Scalar>
Mat<Scalar> EncodeSequence(const PolicyParams<Scalar>& params,
                           const NetConfig& cfg, const Mat<Scalar>& history) {
  if (history.rows() != cfg.history || history.cols() != cfg.frame_dim) {
    throw std::invalid_argument("history shape does not match NetConfig");
  }
  Mat<Scalar> x = EmbedInputs(params, cfg, history, 1);
  Mat<Scalar> out;
  BlockCache<Scalar> cache;
  for (const auto& block : params.blocks) {
    BlockForward(block, cfg, 1, x, cache, out);
    x.swap(out);
  }
  return x;
}

template <typename Scalar>
Mat<Scalar> ModePosterior(const Mat<Scalar>& logits, Scalar tau) {
  if (!(tau > Scalar(0))) {
    throw std::invalid_argument("mode temperature must be > 0");
  }
  Mat<Scalar> p(logits.rows(), logits.cols());
  for (Eigen::Index n = 0; n < logits.rows(); ++n) {
    const Scalar max_logit = logits.row(n).maxCoeff();
    Scalar total(0);
    for (Eigen::Index k = 0; k < logits.cols(); ++k) {
      using std::exp;
      p(n, k) = exp((logits(n, k) - max_logit) / tau);
      total += p(n, k);
    }
    p.row(n) /= total;
  }
  return p;
}

template <typename Scalar>
int ArgmaxMode(
    const Eigen::Ref<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>& p) {
  int best = 0;
  for (int k = 1; k < p.size(); ++k) {
    if (p[k] > p[best]) best = k;
  }
  return best;
}

template <typename Scalar>
Mat<Scalar> OneHotModes(const Mat<Scalar>& probs) {
  Mat<Scalar> onehot = Mat<Scalar>::Zero(probs.rows(), probs.cols());
  for (Eigen::Index n = 0; n < probs.rows(); ++n) {
    const RowVec<Scalar> row = probs.row(n);
    onehot(n, ArgmaxMode<Scalar>(row)) = Scalar(1);
  }
  return onehot;
}

template <typename Scalar>
void Forward(const PolicyParams<Scalar>& params, const NetConfig& cfg,
             const Mat<Scalar>& histories, Scalar tau, ModeSelect select,
             ForwardCache<Scalar>& c) {
  if (histories.cols() != cfg.frame_dim ||
      histories.rows() % cfg.history != 0) {
    throw std::invalid_argument("stacked histories do not match NetConfig");
  }
  const int batch = static_cast<int>(histories.rows() / cfg.history);
  const int d = cfg.embed_dim;
  c.batch = batch;
  c.select = select;
  c.tau = tau;
  c.blocks.resize(cfg.layers);

  Mat<Scalar> x = EmbedInputs(params, cfg, histories, batch);
  for (int l = 0; l < cfg.layers; ++l) {
    BlockForward(params.blocks[l], cfg, batch, x, c.blocks[l], c.final_out);
    x = c.final_out;
  }
  c.encoding.resize(batch, d);
  for (int n = 0; n < batch; ++n) {
    c.encoding.row(n) = c.final_out.row(n * cfg.history + cfg.history - 1);
  }

  c.logits = Linear(c.encoding, params.w_mode, params.b_mode);
  c.probs = ModePosterior(c.logits, tau);
  if (select == ModeSelect::kSoft) {
    c.mixture = c.probs * params.mode_embed;
  } else {
    c.mixture = OneHotModes(c.probs) * params.mode_embed;
  }
  c.affordance = Logistic(Linear(c.encoding, params.w_aff, params.b_aff));

  c.dec_in.resize(batch, cfg.decoder_input());
  c.dec_in << c.encoding, c.mixture, c.affordance;
  c.h1_pre = Linear(c.dec_in, params.w_dec1, params.b_dec1);
  c.h1 = Gelu(c.h1_pre);
  c.h2_pre = Linear(c.h1, params.w_dec2, params.b_dec2);
  c.h2 = Gelu(c.h2_pre);
  c.mean = Linear(c.h2, params.w_dec3, params.b_dec3)
               .array()
               .tanh()
               .cwiseMax(Scalar(-1))
               .cwiseMin(Scalar(1))
               .matrix();
  c.value = Linear(c.encoding, params.w_value, params.b_value);
}

template <typename Scalar>
void Backward(const PolicyParams<Scalar>& params, const NetConfig& cfg,
              const ForwardCache<Scalar>& c, const Mat<Scalar>& histories,
              const OutputGrads<Scalar>& up, PolicyParams<Scalar>& g) {
  if (c.select != ModeSelect::kSoft) {
    throw std::logic_error("backward requires the soft mode mixture");
  }
  const int batch = c.batch;
  const int d = cfg.embed_dim;

  // Decoder. tanh' = 1 - mean^2; the clip after tanh is inactive.
  const Mat<Scalar> d_out_pre =
      up.mean.cwiseProduct((Scalar(1) - c.mean.array().square()).matrix());
  Mat<Scalar> dh2 =
      LinearBackward(c.h2, params.w_dec3, d_out_pre, g.w_dec3, g.b_dec3);
  const Mat<Scalar> dh2_pre = dh2.cwiseProduct(GeluGrad(c.h2_pre));
  Mat<Scalar> dh1 =
      LinearBackward(c.h1, params.w_dec2, dh2_pre, g.w_dec2, g.b_dec2);
  const Mat<Scalar> dh1_pre = dh1.cwiseProduct(GeluGrad(c.h1_pre));
  const Mat<Scalar> d_dec_in =
      LinearBackward(c.dec_in, params.w_dec1, dh1_pre, g.w_dec1, g.b_dec1);

  Mat<Scalar> d_enc = d_dec_in.leftCols(d);
  const Mat<Scalar> d_mix = d_dec_in.middleCols(d, cfg.mode_dim);
  const Mat<Scalar> d_aff = d_dec_in.rightCols(cfg.contacts);

  // Affordance head.
  const Mat<Scalar> d_aff_pre = d_aff.cwiseProduct(
      (c.affordance.array() * (Scalar(1) - c.affordance.array())).matrix());
  d_enc += LinearBackward(c.encoding, params.w_aff, d_aff_pre, g.w_aff,
                          g.b_aff);

  // Mode mixture and posterior.
  g.mode_embed.noalias() += c.probs.transpose() * d_mix;
  Mat<Scalar> d_probs = d_mix * params.mode_embed.transpose();
  if (up.probs.size() > 0) d_probs += up.probs;
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dot =
      c.probs.cwiseProduct(d_probs).rowwise().sum();
  const Mat<Scalar> d_logits =
      c.probs.cwiseProduct(d_probs.colwise() - dot) / c.tau;
  d_enc += LinearBackward(c.encoding, params.w_mode, d_logits, g.w_mode,
                          g.b_mode);

  // Value head.
  if (up.value.size() > 0) {
    d_enc += LinearBackward(c.encoding, params.w_value, up.value, g.w_value,
                            g.b_value);
  }

  Mat<Scalar> dx = Mat<Scalar>::Zero(c.final_out.rows(), d);
  for (int n = 0; n < batch; ++n) {
    dx.row(n * cfg.history + cfg.history - 1) = d_enc.row(n);
  }
  for (int l = cfg.layers - 1; l >= 0; --l) {
    dx = BlockBackward(params.blocks[l], cfg, batch, c.blocks[l], dx,
                       g.blocks[l]);
  }
  for (int n = 0; n < batch; ++n) {
    g.pos += dx.middleRows(n * cfg.history, cfg.history);
  }
  LinearBackwardNoInput(histories, dx, g.w_in, g.b_in);
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> GaussianLogProb(
    const Mat<Scalar>& sample, const Mat<Scalar>& mean,
    const Mat<Scalar>& log_std) {
  const Scalar half_log_2pi = Scalar(0.5 * std::log(2.0 * std::numbers::pi));
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out(sample.rows());
  for (Eigen::Index n = 0; n < sample.rows(); ++n) {
    Scalar total(0);
    for (Eigen::Index i = 0; i < sample.cols(); ++i) {
      using std::exp;
      const Scalar z = (sample(n, i) - mean(n, i)) * exp(-log_std(i, 0));
      total += Scalar(-0.5) * z * z - log_std(i, 0) - half_log_2pi;
    }
    out[n] = total;
  }
  return out;
}

template <typename Scalar>
Scalar GaussianEntropy(const Mat<Scalar>& log_std) {
  const Scalar c = Scalar(0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e));
  return log_std.sum() + c * Scalar(log_std.size());
}

template <typename Scalar>
SampledAction<Scalar> SampleAction(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& mean,
    const Mat<Scalar>& log_std, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  SampledAction<Scalar> out;
  out.pre_clip.resize(mean.size());
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    using std::exp;
    out.pre_clip[i] =
        mean[i] + exp(log_std(i, 0)) * static_cast<Scalar>(normal(rng));
  }
  out.action = out.pre_clip.cwiseMax(Scalar(-1)).cwiseMin(Scalar(1));
  out.log_prob = GaussianLogProb<Scalar>(out.pre_clip.transpose(),
                                         mean.transpose(), log_std)[0];
  return out;
}

#define PUSHREC_INSTANTIATE(S)                                              \
  template struct PolicyParams<S>;                                          \
  template PolicyParams<S> InitParams<S>(const NetConfig&, std::uint64_t);  \
  template void Forward<S>(const PolicyParams<S>&, const NetConfig&,        \
                           const Mat<S>&, S, ModeSelect, ForwardCache<S>&); \
  template void Backward<S>(const PolicyParams<S>&, const NetConfig&,       \
                            const ForwardCache<S>&, const Mat<S>&,          \
                            const OutputGrads<S>&, PolicyParams<S>&);       \
  template Mat<S> AttentionWeights<S>(const Mat<S>&, const Mat<S>&);        \
  template Mat<S> AttentionBlock<S>(const BlockParams<S>&, const NetConfig&, \
                                    const Mat<S>&);                         \
  template Mat<S> EncodeSequence<S>(const PolicyParams<S>&,                 \
                                    const NetConfig&, const Mat<S>&);       \
  template Mat<S> ModePosterior<S>(const Mat<S>&, S);                       \
  template int ArgmaxMode<S>(                                               \
      const Eigen::Ref<const Eigen::Matrix<S, 1, Eigen::Dynamic>>&);        \
  template Mat<S> OneHotModes<S>(const Mat<S>&);                            \
  template Eigen::Matrix<S, Eigen::Dynamic, 1> GaussianLogProb<S>(          \
      const Mat<S>&, const Mat<S>&, const Mat<S>&);                         \
  template S GaussianEntropy<S>(const Mat<S>&);                            \
  template SampledAction<S> SampleAction<S>(                                \
      const Eigen::Matrix<S, Eigen::Dynamic, 1>&, const Mat<S>&,            \
      std::mt19937_64&);

PUSHREC_INSTANTIATE(float)
PUSHREC_INSTANTIATE(double)
#undef PUSHREC_INSTANTIATE

template PolicyParams<double> PolicyParams<float>::Cast<double>() const;
template PolicyParams<float> PolicyParams<double>::Cast<float>() const;
template PolicyParams<float> PolicyParams<float>::Cast<float>() const;
template PolicyParams<double> PolicyParams<double>::Cast<double>() const;

}  // namespace pushrec
