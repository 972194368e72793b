#include "rlp/numerics/layers.hpp"

#include <cmath>

#include "rlp/numerics/ops.hpp"

namespace rlp::num {

void Linear::init(Rng& rng, double gain) {
  const double sd = gain / std::sqrt(static_cast<double>(weight.rows()));
  for (double& w : weight.values()) w = sd * rng.normal();
  for (double& b : bias.values()) b = 0.0;
}

Var Linear::forward(Tape& tape, Var x) {
  return add_bias(matmul(x, tape.parameter(weight)), tape.parameter(bias));
}

void Mlp3::init(Rng& rng, double out_gain) {
  l1.init(rng);
  l2.init(rng);
  l3.init(rng, out_gain);
}

Var Mlp3::forward(Tape& tape, Var x) {
  Var h = gelu(l1.forward(tape, x));
  h = gelu(l2.forward(tape, h));
  return l3.forward(tape, h);
}

void Mlp3::collect(std::vector<Tensor*>& out) {
  l1.collect(out);
  l2.collect(out);
  l3.collect(out);
}

}  // namespace rlp::num
