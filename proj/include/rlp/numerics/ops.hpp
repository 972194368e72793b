#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rlp/numerics/tape.hpp"

// Differentiable primitives on rank <= 2 values. Vectors behave as 1xN rows,
// scalars as 1x1. Every op checks shapes and throws std::invalid_argument on
// mismatch.
namespace rlp::num {

double logistic(double u) noexcept;
double softplus(double u) noexcept;  // log(1 + e^u), overflow-free
double log_logistic(double u) noexcept;

Var matmul(Var a, Var b);     // [m,k] x [k,n]
Var matmul_nt(Var a, Var b);  // [m,k] x [n,k]^T
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);        // elementwise
Var add_bias(Var a, Var bias);  // [m,n] + [1,n] broadcast over rows
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var neg(Var a);

Var gelu(Var a);  // tanh approximation
Var tanh(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var softplus(Var a);
Var logistic(Var a);
Var log_logistic(Var a);
Var minimum(Var a, Var b);
Var clamp(Var a, double lo, double hi);

Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);  // per row
Var gather_rows(Var table, std::span<const int> ids);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);

// Row-wise softmax with key j masked out for j > i (square input).
Var causal_softmax(Var scores);
Var log_softmax(Var a);  // per row
// out[r] = a[r, index[r]]; result is [rows, 1].
Var pick(Var a, std::span<const int> index);

Var sum(Var a);
Var mean(Var a);
Var mean_rows(Var a);  // [m,n] -> [1,n]
Var sum_cols(Var a);   // [m,n] -> [m,1]

}  // namespace rlp::num
