#pragma once

#include <cstdint>
#include <vector>

#include "rlp/numerics/layers.hpp"
#include "rlp/numerics/tape.hpp"

namespace rlp::rm {

// Factorised Gaussian; dev = exp(pre_dev) elementwise.
struct GaussianRepresentation {
  std::vector<double> mean;
  std::vector<double> dev;

  std::size_t dim() const { return mean.size(); }
  static GaussianRepresentation from_pre_dev(std::vector<double> mean, const std::vector<double>& pre_dev);
};

// Symmetrised KL, 0.5 * (KL(g1||g2) + KL(g2||g1)), closed form.
// Throws std::invalid_argument on a dimension mismatch.
double skl_divergence(const GaussianRepresentation& g1, const GaussianRepresentation& g2);
// Row-wise version on the tape: inputs [B, d], result [B, 1].
num::Var skl_divergence(num::Var mu1, num::Var pre_dev1, num::Var mu2, num::Var pre_dev2);

// Jensen-Shannon bound E_pos[-softplus(-T)] - E_neg[softplus(T)]. Row i of
// `a` is paired with row i of `b` for positives and with row (i+1) mod B for
// negatives. T is the critic applied to the column concatenation. Throws
// std::invalid_argument for fewer than two rows.
num::Var js_bound(num::Tape& tape, num::Mlp3& critic, num::Var a, num::Var b);
// js_bound + 2 ln 2, so an independent pair with an optimal critic reads 0.
num::Var js_mi_estimate(num::Tape& tape, num::Mlp3& critic, num::Var a, num::Var b);

enum class RepresentationLoss { Mib, InfoMax, Mvi, Cl };
const char* representation_loss_name(RepresentationLoss l);
RepresentationLoss parse_representation_loss(const std::string& name);

struct MibConfig {
  int feature_dim = 64;
  int latent = 16;
  int hidden = 64;
  int critic_hidden = 64;
  double cl_temperature = 1.0;
};

// Gaussian encoders mu(v) and pre_dev(v), the JS critic over (z1, z2), and
// the critic over (v, z) used by the InfoMax variant.
class MIBHead {
 public:
  MIBHead() : MIBHead(MibConfig{}) {}
  explicit MIBHead(MibConfig cfg);
  void init(std::uint64_t seed);

  const MibConfig& config() const { return cfg_; }
  num::Mlp3 mu, pre_dev, critic, infomax_critic;

  std::vector<num::Tensor*> parameters();
  std::vector<std::string> parameter_names() const;

 private:
  MibConfig cfg_;
};

struct EncodedViews {
  num::Var mu1, pre_dev1, z1;
  num::Var mu2, pre_dev2, z2;
};

// Reparameterised draws z = mu + dev * eps with eps ~ N(0, I) from `seed`.
// Features are [B, feature_dim].
EncodedViews encode_views(num::Tape& tape, MIBHead& head, num::Var v1, num::Var v2, std::uint64_t seed);

struct RepresentationTerms {
  num::Var loss;        // the value that is minimised
  double mi = 0.0;      // MI bound entering the loss (raw JS bound, or InfoNCE for CL)
  double skl = 0.0;     // mean SKL; 0 for variants without it
};

// MIB: -js_bound(z1, z2) + mean SKL. Other variants:
//   InfoMax: -(js_bound(v1, z1) + js_bound(v2, z2)) / 2
//   MVI:     -js_bound(z1, z2)
//   CL:      InfoNCE over z1 z2^T / (sqrt(d) * temperature), both directions
RepresentationTerms representation_loss(num::Tape& tape, MIBHead& head, RepresentationLoss kind, num::Var v1,
                                        num::Var v2, std::uint64_t seed);

inline RepresentationTerms mib_loss(num::Tape& tape, MIBHead& head, num::Var v1, num::Var v2, std::uint64_t seed) {
  return representation_loss(tape, head, RepresentationLoss::Mib, v1, v2, seed);
}

}  // namespace rlp::rm
