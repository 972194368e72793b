#pragma once

#include <cstddef>
#include <vector>

#include "rlp/common/rng.hpp"
#include "rlp/numerics/tape.hpp"
#include "rlp/numerics/tensor.hpp"

namespace rlp::num {

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [1, out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out) : weight(Tensor::matrix(in, out)), bias(Tensor::matrix(1, out)) {}

  // Gaussian weights with std = gain / sqrt(in); zero bias.
  void init(Rng& rng, double gain = 1.0);
  Var forward(Tape& tape, Var x);
  void collect(std::vector<Tensor*>& out) { out.push_back(&weight); out.push_back(&bias); }
  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }
};

// Three linear layers with GELU between them.
struct Mlp3 {
  Linear l1, l2, l3;

  Mlp3() = default;
  Mlp3(std::size_t in, std::size_t hidden, std::size_t out) : l1(in, hidden), l2(hidden, hidden), l3(hidden, out) {}

  void init(Rng& rng, double out_gain = 1.0);
  Var forward(Tape& tape, Var x);
  void collect(std::vector<Tensor*>& out);
};

}  // namespace rlp::num
