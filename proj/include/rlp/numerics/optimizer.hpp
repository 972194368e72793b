#pragma once

#include <cstdint>
#include <vector>

#include "rlp/numerics/tensor.hpp"

namespace rlp::num {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 1.0;  // global gradient-norm bound; <= 0 disables clipping
};

// Moment accumulators for one parameter list, in the list's order.
struct OptimizerState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step = 0;
};

struct StepReport {
  double grad_norm = 0.0;  // before clipping
  bool clipped = false;
};

// Adaptive-moment optimizer with bias correction and global-norm clipping.
// Reads gradients from each parameter's gradient buffer and zeroes them after
// the update.
class Adam {
 public:
  Adam(std::vector<Tensor*> params, AdamConfig config);

  StepReport step();
  void zero_grad();

  const AdamConfig& config() const noexcept { return config_; }
  void set_learning_rate(double lr) noexcept { config_.learning_rate = lr; }
  const OptimizerState& state() const noexcept { return state_; }
  const std::vector<Tensor*>& params() const noexcept { return params_; }

 private:
  std::vector<Tensor*> params_;
  AdamConfig config_;
  OptimizerState state_;
};

double global_grad_norm(const std::vector<Tensor*>& params);

}  // namespace rlp::num
