#include "rlp/rewardmodel/mib.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "rlp/common/error.hpp"
#include "rlp/common/rng.hpp"
#include "rlp/numerics/ops.hpp"

namespace rlp::rm {

using num::Tape;
using num::Var;

GaussianRepresentation GaussianRepresentation::from_pre_dev(std::vector<double> mean, const std::vector<double>& pre_dev) {
  if (mean.size() != pre_dev.size()) throw std::invalid_argument("gaussian: mean and deviation sizes differ");
  GaussianRepresentation g;
  g.mean = std::move(mean);
  for (double p : pre_dev) g.dev.push_back(std::exp(p));
  return g;
}

double skl_divergence(const GaussianRepresentation& g1, const GaussianRepresentation& g2) {
  if (g1.dim() != g2.dim() || g1.dev.size() != g1.dim() || g2.dev.size() != g2.dim())
    throw std::invalid_argument("skl_divergence: dimension mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < g1.dim(); ++i) {
    const double v1 = g1.dev[i] * g1.dev[i], v2 = g2.dev[i] * g2.dev[i];
    const double d2 = (g1.mean[i] - g2.mean[i]) * (g1.mean[i] - g2.mean[i]);
    total += 0.25 * ((v1 + d2) / v2 + (v2 + d2) / v1) - 0.5;
  }
  return total;
}

Var skl_divergence(Var mu1, Var pre_dev1, Var mu2, Var pre_dev2) {
  Var d2 = num::square(num::sub(mu1, mu2));
  Var ratio = num::exp(num::scale(num::sub(pre_dev1, pre_dev2), 2.0));
  Var inv_ratio = num::exp(num::scale(num::sub(pre_dev2, pre_dev1), 2.0));
  Var inv_vars = num::add(num::exp(num::scale(pre_dev1, -2.0)), num::exp(num::scale(pre_dev2, -2.0)));
  Var per_dim = num::add(num::add(ratio, inv_ratio), num::mul(d2, inv_vars));
  const double d = static_cast<double>(mu1.cols());
  return num::add_scalar(num::scale(num::sum_cols(per_dim), 0.25), -0.5 * d);
}

Var js_bound(Tape& tape, num::Mlp3& critic, Var a, Var b) {
  (void)tape;
  const std::size_t n = a.rows();
  if (n < 2 || b.rows() != n) throw std::invalid_argument("js_bound: need at least two paired rows");
  Var shifted = num::concat_rows({num::slice_rows(b, 1, n - 1), num::slice_rows(b, 0, 1)});
  Var t_pos = critic.forward(tape, num::concat_cols({a, b}));
  Var t_neg = critic.forward(tape, num::concat_cols({a, shifted}));
  return num::sub(num::neg(num::mean(num::softplus(num::neg(t_pos)))), num::mean(num::softplus(t_neg)));
}

Var js_mi_estimate(Tape& tape, num::Mlp3& critic, Var a, Var b) {
  return num::add_scalar(js_bound(tape, critic, a, b), 2.0 * std::numbers::ln2);
}

const char* representation_loss_name(RepresentationLoss l) {
  switch (l) {
    case RepresentationLoss::Mib: return "mib";
    case RepresentationLoss::InfoMax: return "infomax";
    case RepresentationLoss::Mvi: return "mvi";
    case RepresentationLoss::Cl: return "cl";
  }
  return "?";
}

RepresentationLoss parse_representation_loss(const std::string& name) {
  for (auto l : {RepresentationLoss::Mib, RepresentationLoss::InfoMax, RepresentationLoss::Mvi, RepresentationLoss::Cl})
    if (name == representation_loss_name(l)) return l;
  throw ConfigError("unknown representation loss '" + name + "' (expected mib, infomax, mvi or cl)");
}

MIBHead::MIBHead(MibConfig cfg) : cfg_(cfg) {
  if (cfg.feature_dim < 1 || cfg.latent < 1 || cfg.hidden < 1 || cfg.critic_hidden < 1)
    throw ConfigError("mib head: dimensions must be positive");
  const auto f = static_cast<std::size_t>(cfg.feature_dim), d = static_cast<std::size_t>(cfg.latent),
             h = static_cast<std::size_t>(cfg.hidden), c = static_cast<std::size_t>(cfg.critic_hidden);
  mu = num::Mlp3(f, h, d);
  pre_dev = num::Mlp3(f, h, d);
  critic = num::Mlp3(2 * d, c, 1);
  infomax_critic = num::Mlp3(f + d, c, 1);
}

void MIBHead::init(std::uint64_t seed) {
  Rng rng(derive_seed({seed, 0x3b1d}));
  mu.init(rng, 1.0);
  pre_dev.init(rng, 0.1);
  critic.init(rng, 1.0);
  infomax_critic.init(rng, 1.0);
}

std::vector<num::Tensor*> MIBHead::parameters() {
  std::vector<num::Tensor*> out;
  mu.collect(out);
  pre_dev.collect(out);
  critic.collect(out);
  infomax_critic.collect(out);
  return out;
}

std::vector<std::string> MIBHead::parameter_names() const {
  std::vector<std::string> out;
  for (const char* net : {"mu", "pre_dev", "critic", "infomax_critic"})
    for (const char* layer : {"l1", "l2", "l3"})
      for (const char* part : {"weight", "bias"}) out.push_back(std::string("mib.") + net + "." + layer + "." + part);
  return out;
}

EncodedViews encode_views(Tape& tape, MIBHead& head, Var v1, Var v2, std::uint64_t seed) {
  if (v1.rows() != v2.rows()) throw std::invalid_argument("encode_views: view batches differ in size");
  Rng rng(seed);
  const std::size_t n = v1.rows(), d = static_cast<std::size_t>(head.config().latent);
  auto noise = [&] {
    num::Tensor t = num::Tensor::matrix(n, d);
    for (double& e : t.values()) e = rng.normal();
    return tape.constant(std::move(t));
  };
  EncodedViews e;
  e.mu1 = head.mu.forward(tape, v1);
  e.pre_dev1 = head.pre_dev.forward(tape, v1);
  e.mu2 = head.mu.forward(tape, v2);
  e.pre_dev2 = head.pre_dev.forward(tape, v2);
  e.z1 = num::add(e.mu1, num::mul(num::exp(e.pre_dev1), noise()));
  e.z2 = num::add(e.mu2, num::mul(num::exp(e.pre_dev2), noise()));
  return e;
}

RepresentationTerms representation_loss(Tape& tape, MIBHead& head, RepresentationLoss kind, Var v1, Var v2,
                                        std::uint64_t seed) {
  EncodedViews e = encode_views(tape, head, v1, v2, seed);
  RepresentationTerms out;
  switch (kind) {
    case RepresentationLoss::Mib: {
      Var mi = js_bound(tape, head.critic, e.z1, e.z2);
      Var skl = num::mean(skl_divergence(e.mu1, e.pre_dev1, e.mu2, e.pre_dev2));
      out.loss = num::add(num::neg(mi), skl);
      out.mi = mi.item();
      out.skl = skl.item();
      break;
    }
    case RepresentationLoss::Mvi: {
      Var mi = js_bound(tape, head.critic, e.z1, e.z2);
      out.loss = num::neg(mi);
      out.mi = mi.item();
      break;
    }
    case RepresentationLoss::InfoMax: {
      Var mi = num::scale(num::add(js_bound(tape, head.infomax_critic, v1, e.z1),
                                   js_bound(tape, head.infomax_critic, v2, e.z2)), 0.5);
      out.loss = num::neg(mi);
      out.mi = mi.item();
      break;
    }
    case RepresentationLoss::Cl: {
      const std::size_t n = e.z1.rows();
      if (n < 2) throw std::invalid_argument("contrastive loss: need at least two view pairs");
      const double s = 1.0 / (std::sqrt(static_cast<double>(head.config().latent)) * head.config().cl_temperature);
      std::vector<int> diag(n);
      std::iota(diag.begin(), diag.end(), 0);
      Var fwd = num::mean(num::pick(num::log_softmax(num::scale(num::matmul_nt(e.z1, e.z2), s)), diag));
      Var bwd = num::mean(num::pick(num::log_softmax(num::scale(num::matmul_nt(e.z2, e.z1), s)), diag));
      out.loss = num::scale(num::add(fwd, bwd), -0.5);
      out.mi = std::log(static_cast<double>(n)) - out.loss.item();
      break;
    }
  }
  return out;
}

}  // namespace rlp::rm
