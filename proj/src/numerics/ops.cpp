#include "rlp/numerics/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace rlp::num {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatView = Eigen::Map<RowMat>;
using ConstMatView = Eigen::Map<const RowMat>;

ConstMatView view(const Tensor& t) {
  return ConstMatView(t.data(), static_cast<Eigen::Index>(t.rows()),
                      static_cast<Eigen::Index>(t.cols()));
}
ConstMatView view(std::span<const double> s, std::size_t rows, std::size_t cols) {
  return ConstMatView(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
MatView view(std::span<double> s, std::size_t rows, std::size_t cols) {
  return MatView(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

Tape& tape_of(Var a) {
  if (!a.valid()) throw std::invalid_argument("op on an empty variable");
  return *a.tape();
}

Tape& tape_of(Var a, Var b) {
  Tape& t = tape_of(a);
  t.check_owns(b);
  return t;
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + a.shape_string() +
                              " and " + b.shape_string());
}

std::vector<std::size_t> matrix_shape(std::size_t r, std::size_t c) { return {r, c}; }

template <class F, class D>
Var unary(Var a, F f, D df) {
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return t.record(std::move(out), {a}, [a, df](Tape& tp, std::uint32_t self) {
    if (!tp.requires_grad(a)) return;
    auto g = tp.grad(self);
    const Tensor& x = tp.value(a.id());
    const Tensor& y = tp.value(self);
    auto ga = tp.grad_accum(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
  });
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.size() != b.size() || a.rows() != b.rows()) shape_error(op, a, b);
}

}  // namespace

double logistic(double u) noexcept {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

double softplus(double u) noexcept { return std::max(u, 0.0) + std::log1p(std::exp(-std::abs(u))); }

double log_logistic(double u) noexcept { return -softplus(-u); }

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.rows()) shape_error("matmul", A, B);
  Tensor out(matrix_shape(A.rows(), B.cols()));
  view(out.values(), out.rows(), out.cols()).noalias() = view(A) * view(B);
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, std::uint32_t self) {
    const Tensor& A = tp.value(a.id());
    const Tensor& B = tp.value(b.id());
    auto G = view(tp.grad(self), A.rows(), B.cols());
    if (tp.requires_grad(a)) view(tp.grad_accum(a), A.rows(), A.cols()).noalias() += G * view(B).transpose();
    if (tp.requires_grad(b)) view(tp.grad_accum(b), B.rows(), B.cols()).noalias() += view(A).transpose() * G;
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.cols()) shape_error("matmul_nt", A, B);
  Tensor out(matrix_shape(A.rows(), B.rows()));
  view(out.values(), out.rows(), out.cols()).noalias() = view(A) * view(B).transpose();
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, std::uint32_t self) {
    const Tensor& A = tp.value(a.id());
    const Tensor& B = tp.value(b.id());
    auto G = view(tp.grad(self), A.rows(), B.rows());
    if (tp.requires_grad(a)) view(tp.grad_accum(a), A.rows(), A.cols()).noalias() += G * view(B);
    if (tp.requires_grad(b)) view(tp.grad_accum(b), B.rows(), B.cols()).noalias() += G.transpose() * view(A);
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same("add", a.value(), b.value());
  Tensor out = a.value();
  out.drop_grad();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, std::uint32_t self) {
    auto g = tp.grad(self);
    for (Var v : {a, b}) {
      if (!tp.requires_grad(v)) continue;
      auto gv = tp.grad_accum(v);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same("sub", a.value(), b.value());
  Tensor out = a.value();
  out.drop_grad();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, std::uint32_t self) {
    auto g = tp.grad(self);
    if (tp.requires_grad(a)) {
      auto ga = tp.grad_accum(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.requires_grad(b)) {
      auto gb = tp.grad_accum(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same("mul", a.value(), b.value());
  Tensor out = a.value();
  out.drop_grad();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, std::uint32_t self) {
    auto g = tp.grad(self);
    const Tensor& A = tp.value(a.id());
    const Tensor& B = tp.value(b.id());
    if (tp.requires_grad(a)) {
      auto ga = tp.grad_accum(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
    }
    if (tp.requires_grad(b)) {
      auto gb = tp.grad_accum(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
    }
  });
}

Var add_bias(Var a, Var bias) {
  Tape& t = tape_of(a, bias);
  const Tensor& A = a.value();
  const Tensor& B = bias.value();
  if (B.size() != A.cols()) shape_error("add_bias", A, B);
  Tensor out(matrix_shape(A.rows(), A.cols()));
  view(out.values(), out.rows(), out.cols()) =
      view(A).rowwise() + view(B.values(), 1, B.size()).row(0);
  return t.record(std::move(out), {a, bias}, [a, bias](Tape& tp, std::uint32_t self) {
    const Tensor& A = tp.value(a.id());
    auto G = view(tp.grad(self), A.rows(), A.cols());
    if (tp.requires_grad(a)) view(tp.grad_accum(a), A.rows(), A.cols()) += G;
    if (tp.requires_grad(bias)) view(tp.grad_accum(bias), 1, A.cols()) += G.colwise().sum();
  });
}

Var scale(Var a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var neg(Var a) { return scale(a, -1.0); }

Var gelu(Var a) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c = 0.044715;
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::tanh(k * (x + c * x * x * x))); },
      [](double x, double) {
        const double th = std::tanh(k * (x + c * x * x * x));
        return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * k * (1.0 + 3.0 * c * x * x);
      });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var softplus(Var a) {
  return unary(a, [](double x) { return softplus(x); }, [](double x, double) { return logistic(x); });
}

Var logistic(Var a) {
  return unary(a, [](double x) { return logistic(x); }, [](double, double y) { return y * (1.0 - y); });
}

Var log_logistic(Var a) {
  return unary(a, [](double x) { return log_logistic(x); }, [](double x, double) { return logistic(-x); });
}

Var minimum(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same("minimum", a.value(), b.value());
  Tensor out = a.value();
  out.drop_grad();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(out[i], B[i]);
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, std::uint32_t self) {
    auto g = tp.grad(self);
    const Tensor& A = tp.value(a.id());
    const Tensor& B = tp.value(b.id());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const bool take_a = A[i] <= B[i];
      Var v = take_a ? a : b;
      if (tp.requires_grad(v)) tp.grad_accum(v)[i] += g[i];
    }
  });
}

Var clamp(Var a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& t = tape_of(x, gain);
  t.check_owns(bias);
  const Tensor& X = x.value();
  const std::size_t m = X.rows(), n = X.cols();
  if (gain.value().size() != n || bias.value().size() != n) shape_error("layer_norm", X, gain.value());
  const Tensor& G = gain.value();
  const Tensor& B = bias.value();
  Tensor out(matrix_shape(m, n));
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = X.data() + r * n;
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += row[c];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) out.at(r, c) = (row[c] - mu) * inv * G[c] + B[c];
  }
  return t.record(std::move(out), {x, gain, bias}, [x, gain, bias, eps](Tape& tp, std::uint32_t self) {
    const Tensor& X = tp.value(x.id());
    const Tensor& G = tp.value(gain.id());
    const std::size_t m = X.rows(), n = X.cols();
    auto dy = tp.grad(self);
    AlignedVector xhat(n), dxhat(n);
    std::span<double> gx, gg, gb;
    if (tp.requires_grad(x)) gx = tp.grad_accum(x);
    if (tp.requires_grad(gain)) gg = tp.grad_accum(gain);
    if (tp.requires_grad(bias)) gb = tp.grad_accum(bias);
    for (std::size_t r = 0; r < m; ++r) {
      const double* row = X.data() + r * n;
      double mu = 0.0;
      for (std::size_t c = 0; c < n; ++c) mu += row[c];
      mu /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t c = 0; c < n; ++c) var += (row[c] - mu) * (row[c] - mu);
      var /= static_cast<double>(n);
      const double inv = 1.0 / std::sqrt(var + eps);
      double mean_d = 0.0, mean_dx = 0.0;
      for (std::size_t c = 0; c < n; ++c) {
        xhat[c] = (row[c] - mu) * inv;
        const double d = dy[r * n + c];
        dxhat[c] = d * G[c];
        mean_d += dxhat[c];
        mean_dx += dxhat[c] * xhat[c];
        if (!gg.empty()) gg[c] += d * xhat[c];
        if (!gb.empty()) gb[c] += d;
      }
      if (gx.empty()) continue;
      mean_d /= static_cast<double>(n);
      mean_dx /= static_cast<double>(n);
      for (std::size_t c = 0; c < n; ++c)
        gx[r * n + c] += inv * (dxhat[c] - mean_d - xhat[c] * mean_dx);
    }
  });
}

Var gather_rows(Var table, std::span<const int> ids) {
  Tape& t = tape_of(table);
  const Tensor& T = table.value();
  const std::size_t n = T.cols();
  Tensor out(matrix_shape(ids.size(), n));
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= T.rows())
      throw std::invalid_argument("gather_rows: index " + std::to_string(ids[r]) + " out of range");
    std::copy_n(T.data() + static_cast<std::size_t>(ids[r]) * n, n, out.data() + r * n);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return t.record(std::move(out), {table}, [table, idx = std::move(idx), n](Tape& tp, std::uint32_t self) {
    auto g = tp.grad(self);
    auto gt = tp.grad_accum(table);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      double* dst = gt.data() + static_cast<std::size_t>(idx[r]) * n;
      for (std::size_t c = 0; c < n; ++c) dst[c] += g[r * n + c];
    }
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  Tape& t = tape_of(a);
  const Tensor& A = a.value();
  if (begin + count > A.rows()) throw std::invalid_argument("slice_rows: range exceeds " + A.shape_string());
  const std::size_t n = A.cols();
  Tensor out(matrix_shape(count, n));
  std::copy_n(A.data() + begin * n, count * n, out.data());
  return t.record(std::move(out), {a}, [a, begin, n](Tape& tp, std::uint32_t self) {
    auto g = tp.grad(self);
    auto ga = tp.grad_accum(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[begin * n + i] += g[i];
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  Tape& t = tape_of(a);
  const Tensor& A = a.value();
  if (begin + count > A.cols()) throw std::invalid_argument("slice_cols: range exceeds " + A.shape_string());
  const std::size_t m = A.rows(), n = A.cols();
  Tensor out(matrix_shape(m, count));
  for (std::size_t r = 0; r < m; ++r) std::copy_n(A.data() + r * n + begin, count, out.data() + r * count);
  return t.record(std::move(out), {a}, [a, begin, count, m, n](Tape& tp, std::uint32_t self) {
    auto g = tp.grad(self);
    auto ga = tp.grad_accum(a);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < count; ++c) ga[r * n + begin + c] += g[r * count + c];
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Tape& t = tape_of(parts.front());
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  for (Var p : parts) {
    t.check_owns(p);
    if (p.cols() != n) shape_error("concat_rows", parts.front().value(), p.value());
    m += p.rows();
  }
  Tensor out(matrix_shape(m, n));
  std::size_t off = 0;
  for (Var p : parts) {
    std::copy_n(p.value().data(), p.value().size(), out.data() + off);
    off += p.value().size();
  }
  return t.record(std::move(out), parts, [parts](Tape& tp, std::uint32_t self) {
    auto g = tp.grad(self);
    std::size_t off = 0;
    for (Var p : parts) {
      const std::size_t sz = tp.value(p.id()).size();
      if (tp.requires_grad(p)) {
        auto gp = tp.grad_accum(p);
        for (std::size_t i = 0; i < sz; ++i) gp[i] += g[off + i];
      }
      off += sz;
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Tape& t = tape_of(parts.front());
  const std::size_t m = parts.front().rows();
  std::size_t n = 0;
  for (Var p : parts) {
    t.check_owns(p);
    if (p.rows() != m) shape_error("concat_cols", parts.front().value(), p.value());
    n += p.cols();
  }
  Tensor out(matrix_shape(m, n));
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& P = p.value();
    for (std::size_t r = 0; r < m; ++r) std::copy_n(P.data() + r * P.cols(), P.cols(), out.data() + r * n + off);
    off += P.cols();
  }
  return t.record(std::move(out), parts, [parts, m, n](Tape& tp, std::uint32_t self) {
    auto g = tp.grad(self);
    std::size_t off = 0;
    for (Var p : parts) {
      const std::size_t w = tp.value(p.id()).cols();
      if (tp.requires_grad(p)) {
        auto gp = tp.grad_accum(p);
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < w; ++c) gp[r * w + c] += g[r * n + off + c];
      }
      off += w;
    }
  });
}

Var causal_softmax(Var scores) {
  Tape& t = tape_of(scores);
  const Tensor& S = scores.value();
  const std::size_t m = S.rows(), n = S.cols();
  if (m != n) throw std::invalid_argument("causal_softmax: expected square scores, got " + S.shape_string());
  Tensor out(matrix_shape(m, n));
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = S.data() + r * n;
    double mx = row[0];
    for (std::size_t c = 1; c <= r; ++c) mx = std::max(mx, row[c]);
    double z = 0.0;
    for (std::size_t c = 0; c <= r; ++c) {
      out.at(r, c) = std::exp(row[c] - mx);
      z += out.at(r, c);
    }
    for (std::size_t c = 0; c <= r; ++c) out.at(r, c) /= z;
  }
  return t.record(std::move(out), {scores}, [scores, m, n](Tape& tp, std::uint32_t self) {
    auto g = tp.grad(self);
    const Tensor& Y = tp.value(self);
    auto gs = tp.grad_accum(scores);
    for (std::size_t r = 0; r < m; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c <= r; ++c) dot += g[r * n + c] * Y.at(r, c);
      for (std::size_t c = 0; c <= r; ++c) gs[r * n + c] += Y.at(r, c) * (g[r * n + c] - dot);
    }
  });
}

Var log_softmax(Var a) {
  Tape& t = tape_of(a);
  const Tensor& A = a.value();
  const std::size_t m = A.rows(), n = A.cols();
  Tensor out(matrix_shape(m, n));
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = A.data() + r * n;
    double mx = row[0];
    for (std::size_t c = 1; c < n; ++c) mx = std::max(mx, row[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) z += std::exp(row[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < n; ++c) out.at(r, c) = row[c] - lse;
  }
  return t.record(std::move(out), {a}, [a, m, n](Tape& tp, std::uint32_t self) {
    auto g = tp.grad(self);
    const Tensor& Y = tp.value(self);
    auto ga = tp.grad_accum(a);
    for (std::size_t r = 0; r < m; ++r) {
      double gsum = 0.0;
      for (std::size_t c = 0; c < n; ++c) gsum += g[r * n + c];
      for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += g[r * n + c] - std::exp(Y.at(r, c)) * gsum;
    }
  });
}

Var pick(Var a, std::span<const int> index) {
  Tape& t = tape_of(a);
  const Tensor& A = a.value();
  const std::size_t m = A.rows(), n = A.cols();
  if (index.size() != m) throw std::invalid_argument("pick: need one index per row of " + A.shape_string());
  Tensor out(matrix_shape(m, 1));
  for (std::size_t r = 0; r < m; ++r) {
    if (index[r] < 0 || static_cast<std::size_t>(index[r]) >= n)
      throw std::invalid_argument("pick: index " + std::to_string(index[r]) + " out of range");
    out[r] = A.at(r, static_cast<std::size_t>(index[r]));
  }
  std::vector<int> idx(index.begin(), index.end());
  return t.record(std::move(out), {a}, [a, idx = std::move(idx), n](Tape& tp, std::uint32_t self) {
    auto g = tp.grad(self);
    auto ga = tp.grad_accum(a);
    for (std::size_t r = 0; r < idx.size(); ++r) ga[r * n + static_cast<std::size_t>(idx[r])] += g[r];
  });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return t.record(Tensor::scalar(s), {a}, [a](Tape& tp, std::uint32_t self) {
    const double g = tp.grad(self)[0];
    for (double& v : tp.grad_accum(a)) v += g;
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw std::invalid_argument("mean: empty input");
  return scale(sum(a), 1.0 / n);
}

Var mean_rows(Var a) {
  Tape& t = tape_of(a);
  const Tensor& A = a.value();
  const std::size_t m = A.rows(), n = A.cols();
  if (m == 0) throw std::invalid_argument("mean_rows: no rows");
  Tensor out(matrix_shape(1, n));
  view(out.values(), 1, n) = view(A).colwise().mean();
  return t.record(std::move(out), {a}, [a, m, n](Tape& tp, std::uint32_t self) {
    auto g = view(tp.grad(self), 1, n);
    view(tp.grad_accum(a), m, n).rowwise() += g.row(0) / static_cast<double>(m);
  });
}

Var sum_cols(Var a) {
  Tape& t = tape_of(a);
  const Tensor& A = a.value();
  const std::size_t m = A.rows(), n = A.cols();
  Tensor out(matrix_shape(m, 1));
  view(out.values(), m, 1) = view(A).rowwise().sum();
  return t.record(std::move(out), {a}, [a, m, n](Tape& tp, std::uint32_t self) {
    auto g = view(tp.grad(self), m, 1);
    view(tp.grad_accum(a), m, n).colwise() += g.col(0);
  });
}

}  // namespace rlp::num
