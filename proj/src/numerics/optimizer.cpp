#include "rlp/numerics/optimizer.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

#include "rlp/common/error.hpp"

namespace rlp::num {

Adam::Adam(std::vector<Tensor*> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  for (Tensor* p : params_) {
    state_.first_moment.emplace_back(p->size(), 0.0);
    state_.second_moment.emplace_back(p->size(), 0.0);
  }
}

double global_grad_norm(const std::vector<Tensor*>& params) {
  double sq = 0.0;
  for (Tensor* p : params)
    for (double g : std::as_const(*p).grad()) sq += g * g;
  return std::sqrt(sq);
}

StepReport Adam::step() {
  StepReport report;
  for (Tensor* p : params_)
    for (double g : std::as_const(*p).grad())
      if (!std::isfinite(g)) throw NumericError("adam: non-finite gradient");
  report.grad_norm = global_grad_norm(params_);
  double factor = 1.0;
  if (config_.clip_norm > 0.0 && report.grad_norm > config_.clip_norm) {
    factor = config_.clip_norm / report.grad_norm;
    report.clipped = true;
  }

  ++state_.step;
  const double t = static_cast<double>(state_.step);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = *params_[k];
    if (!p.has_grad()) continue;
    auto g = std::as_const(p).grad();
    auto& m = state_.first_moment[k];
    auto& v = state_.second_moment[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i] * factor;
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * gi;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
  }
  zero_grad();
  return report;
}

void Adam::zero_grad() {
  for (Tensor* p : params_) p->zero_grad();
}

}  // namespace rlp::num
