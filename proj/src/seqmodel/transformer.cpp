#include "rlp/seqmodel/transformer.hpp"

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>

#include "rlp/common/error.hpp"
#include "rlp/common/rng.hpp"
#include "rlp/numerics/ops.hpp"

namespace rlp::seq {

using num::Tensor;
using num::Var;

void TransformerConfig::validate() const {
  if (vocab < 2 || context < 2 || width < 1 || heads < 1 || blocks < 1 || mlp_hidden < 1)
    throw ConfigError("transformer: dimensions must be positive");
  if (width % heads != 0) throw ConfigError("transformer: width must be divisible by heads");
}

Transformer::Transformer(TransformerConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t V = static_cast<std::size_t>(cfg_.vocab), C = static_cast<std::size_t>(cfg_.context),
                    D = static_cast<std::size_t>(cfg_.width), H = static_cast<std::size_t>(cfg_.mlp_hidden);
  token_embedding_ = Tensor::matrix(V, D);
  position_embedding_ = Tensor::matrix(C, D);
  blocks_.resize(static_cast<std::size_t>(cfg_.blocks));
  for (Block& b : blocks_) {
    b.ln1_gain = Tensor::matrix(1, D, 1.0);
    b.ln1_bias = Tensor::matrix(1, D);
    b.w_qkv = Tensor::matrix(D, 3 * D);
    b.b_qkv = Tensor::matrix(1, 3 * D);
    b.w_out = Tensor::matrix(D, D);
    b.b_out = Tensor::matrix(1, D);
    b.ln2_gain = Tensor::matrix(1, D, 1.0);
    b.ln2_bias = Tensor::matrix(1, D);
    b.w_fc = Tensor::matrix(D, H);
    b.b_fc = Tensor::matrix(1, H);
    b.w_proj = Tensor::matrix(H, D);
    b.b_proj = Tensor::matrix(1, D);
  }
  lnf_gain_ = Tensor::matrix(1, D, 1.0);
  lnf_bias_ = Tensor::matrix(1, D);
  w_vocab_ = Tensor::matrix(D, V);
}

void Transformer::init(std::uint64_t seed) {
  Rng rng(derive_seed({seed, 0x7f0a}));
  auto fill = [&](Tensor& t, double sd) {
    for (double& v : t.values()) v = sd * rng.normal();
  };
  const double D = cfg_.width, H = cfg_.mlp_hidden;
  const double residual = 1.0 / std::sqrt(2.0 * cfg_.blocks);
  fill(token_embedding_, 0.5);
  fill(position_embedding_, 0.5);
  for (Block& b : blocks_) {
    fill(b.w_qkv, 1.0 / std::sqrt(D));
    fill(b.w_out, residual / std::sqrt(D));
    fill(b.w_fc, 1.0 / std::sqrt(D));
    fill(b.w_proj, residual / std::sqrt(H));
    for (Tensor* t : {&b.ln1_gain, &b.ln2_gain})
      for (double& v : t->values()) v = 1.0;
    for (Tensor* t : {&b.ln1_bias, &b.ln2_bias, &b.b_qkv, &b.b_out, &b.b_fc, &b.b_proj})
      for (double& v : t->values()) v = 0.0;
  }
  for (double& v : lnf_gain_.values()) v = 1.0;
  for (double& v : lnf_bias_.values()) v = 0.0;
  for (double& v : w_vocab_.values()) v = 0.0;
}

Var Transformer::hidden(num::Tape& tape, std::span<const int> tokens) {
  const std::size_t T = tokens.size();
  if (T == 0) throw std::invalid_argument("transformer: empty input");
  if (T > static_cast<std::size_t>(cfg_.context))
    throw std::invalid_argument("transformer: input of " + std::to_string(T) + " tokens exceeds context " +
                                std::to_string(cfg_.context));
  const std::size_t D = static_cast<std::size_t>(cfg_.width);
  const std::size_t heads = static_cast<std::size_t>(cfg_.heads);
  const std::size_t dh = D / heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Var x = num::add(num::gather_rows(tape.parameter(token_embedding_), tokens),
                   num::slice_rows(tape.parameter(position_embedding_), 0, T));
  for (Block& b : blocks_) {
    Var h = num::layer_norm(x, tape.parameter(b.ln1_gain), tape.parameter(b.ln1_bias));
    Var qkv = num::add_bias(num::matmul(h, tape.parameter(b.w_qkv)), tape.parameter(b.b_qkv));
    std::vector<Var> outs;
    outs.reserve(heads);
    for (std::size_t i = 0; i < heads; ++i) {
      Var q = num::slice_cols(qkv, i * dh, dh);
      Var k = num::slice_cols(qkv, D + i * dh, dh);
      Var v = num::slice_cols(qkv, 2 * D + i * dh, dh);
      Var att = num::causal_softmax(num::scale(num::matmul_nt(q, k), att_scale));
      outs.push_back(num::matmul(att, v));
    }
    Var o = heads == 1 ? outs.front() : num::concat_cols(outs);
    x = num::add(x, num::add_bias(num::matmul(o, tape.parameter(b.w_out)), tape.parameter(b.b_out)));
    Var h2 = num::layer_norm(x, tape.parameter(b.ln2_gain), tape.parameter(b.ln2_bias));
    Var m = num::gelu(num::add_bias(num::matmul(h2, tape.parameter(b.w_fc)), tape.parameter(b.b_fc)));
    x = num::add(x, num::add_bias(num::matmul(m, tape.parameter(b.w_proj)), tape.parameter(b.b_proj)));
  }
  return num::layer_norm(x, tape.parameter(lnf_gain_), tape.parameter(lnf_bias_));
}

Var Transformer::logits(num::Tape& tape, Var hidden) { return num::matmul(hidden, tape.parameter(w_vocab_)); }

std::vector<Tensor*> Transformer::parameters() {
  std::vector<Tensor*> out{&token_embedding_, &position_embedding_};
  for (Block& b : blocks_) {
    for (Tensor* t : {&b.ln1_gain, &b.ln1_bias, &b.w_qkv, &b.b_qkv, &b.w_out, &b.b_out, &b.ln2_gain, &b.ln2_bias,
                      &b.w_fc, &b.b_fc, &b.w_proj, &b.b_proj})
      out.push_back(t);
  }
  out.push_back(&lnf_gain_);
  out.push_back(&lnf_bias_);
  out.push_back(&w_vocab_);
  return out;
}

std::vector<const Tensor*> Transformer::parameters() const {
  auto mut = const_cast<Transformer*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::vector<std::string> Transformer::parameter_names() const {
  std::vector<std::string> out{"token_embedding", "position_embedding"};
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = "block" + std::to_string(i) + ".";
    for (const char* n : {"ln1_gain", "ln1_bias", "w_qkv", "b_qkv", "w_out", "b_out", "ln2_gain", "ln2_bias", "w_fc",
                          "b_fc", "w_proj", "b_proj"})
      out.push_back(p + n);
  }
  out.push_back("lnf_gain");
  out.push_back("lnf_bias");
  out.push_back("w_vocab");
  return out;
}

std::size_t Transformer::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* t : parameters()) n += t->size();
  return n;
}

bool operator==(const Transformer& a, const Transformer& b) {
  if (!(a.cfg_ == b.cfg_)) return false;
  auto pa = a.parameters();
  auto pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (!(*pa[i] == *pb[i])) return false;
  return true;
}

// ---------------------------------------------------------------------------

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatView = Eigen::Map<const RowMat>;
using Vec = Eigen::Map<Eigen::RowVectorXd>;
using ConstVec = Eigen::Map<const Eigen::RowVectorXd>;

ConstMatView mat(const Tensor& t) {
  return ConstMatView(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

void layer_norm_row(const double* x, const Tensor& gain, const Tensor& bias, double* out, std::size_t n) {
  double mu = 0.0;
  for (std::size_t c = 0; c < n; ++c) mu += x[c];
  mu /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t c = 0; c < n; ++c) var += (x[c] - mu) * (x[c] - mu);
  var /= static_cast<double>(n);
  const double inv = 1.0 / std::sqrt(var + 1e-5);
  for (std::size_t c = 0; c < n; ++c) out[c] = (x[c] - mu) * inv * gain[c] + bias[c];
}

double gelu(double x) {
  constexpr double k = 0.7978845608028654;
  return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
}

}  // namespace

Transformer::Decoder::Decoder(const Transformer& model) : model_(&model) {
  const auto& c = model.cfg_;
  const std::size_t D = static_cast<std::size_t>(c.width), C = static_cast<std::size_t>(c.context);
  keys_.assign(model.blocks_.size(), num::AlignedVector(C * D));
  values_.assign(model.blocks_.size(), num::AlignedVector(C * D));
  x_.resize(D);
  h_.resize(D);
  qkv_.resize(3 * D);
  attn_.resize(D);
  tmp_.resize(D);
  mlp_.resize(static_cast<std::size_t>(c.mlp_hidden));
  logits_.resize(static_cast<std::size_t>(c.vocab));
  scores_.resize(C);
}

std::span<const double> Transformer::Decoder::step(int token) {
  const Transformer& m = *model_;
  const auto& c = m.cfg_;
  if (pos_ >= c.context) throw std::invalid_argument("decoder: context exhausted");
  if (token < 0 || token >= c.vocab) throw std::invalid_argument("decoder: token out of range");
  const std::size_t D = static_cast<std::size_t>(c.width), H = static_cast<std::size_t>(c.mlp_hidden);
  const std::size_t heads = static_cast<std::size_t>(c.heads), dh = D / heads;
  const std::size_t pos = static_cast<std::size_t>(pos_);
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  for (std::size_t i = 0; i < D; ++i)
    x_[i] = m.token_embedding_.at(static_cast<std::size_t>(token), i) + m.position_embedding_.at(pos, i);

  for (std::size_t bi = 0; bi < m.blocks_.size(); ++bi) {
    const Block& b = m.blocks_[bi];
    layer_norm_row(x_.data(), b.ln1_gain, b.ln1_bias, h_.data(), D);
    Vec qkv(qkv_.data(), static_cast<Eigen::Index>(3 * D));
    qkv.noalias() = ConstVec(h_.data(), static_cast<Eigen::Index>(D)) * mat(b.w_qkv);
    qkv += ConstVec(b.b_qkv.data(), static_cast<Eigen::Index>(3 * D));
    double* K = keys_[bi].data();
    double* Vv = values_[bi].data();
    std::copy_n(qkv_.data() + D, D, K + pos * D);
    std::copy_n(qkv_.data() + 2 * D, D, Vv + pos * D);
    for (std::size_t hd = 0; hd < heads; ++hd) {
      const double* q = qkv_.data() + hd * dh;
      double mx = -INFINITY;
      for (std::size_t j = 0; j <= pos; ++j) {
        double s = 0.0;
        const double* k = K + j * D + hd * dh;
        for (std::size_t e = 0; e < dh; ++e) s += q[e] * k[e];
        scores_[j] = s * att_scale;
        mx = std::max(mx, scores_[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j <= pos; ++j) {
        scores_[j] = std::exp(scores_[j] - mx);
        z += scores_[j];
      }
      double* o = attn_.data() + hd * dh;
      std::fill(o, o + dh, 0.0);
      for (std::size_t j = 0; j <= pos; ++j) {
        const double a = scores_[j] / z;
        const double* v = Vv + j * D + hd * dh;
        for (std::size_t e = 0; e < dh; ++e) o[e] += a * v[e];
      }
    }
    Vec tmp(tmp_.data(), static_cast<Eigen::Index>(D));
    tmp.noalias() = ConstVec(attn_.data(), static_cast<Eigen::Index>(D)) * mat(b.w_out);
    for (std::size_t i = 0; i < D; ++i) x_[i] += tmp_[i] + b.b_out[i];
    layer_norm_row(x_.data(), b.ln2_gain, b.ln2_bias, h_.data(), D);
    Vec mlp(mlp_.data(), static_cast<Eigen::Index>(H));
    mlp.noalias() = ConstVec(h_.data(), static_cast<Eigen::Index>(D)) * mat(b.w_fc);
    for (std::size_t i = 0; i < H; ++i) mlp_[i] = gelu(mlp_[i] + b.b_fc[i]);
    tmp.noalias() = ConstVec(mlp_.data(), static_cast<Eigen::Index>(H)) * mat(b.w_proj);
    for (std::size_t i = 0; i < D; ++i) x_[i] += tmp_[i] + b.b_proj[i];
  }
  layer_norm_row(x_.data(), m.lnf_gain_, m.lnf_bias_, h_.data(), D);
  Vec logits(logits_.data(), static_cast<Eigen::Index>(c.vocab));
  logits.noalias() = ConstVec(h_.data(), static_cast<Eigen::Index>(D)) * mat(m.w_vocab_);
  ++pos_;
  return logits_;
}

}  // namespace rlp::seq
