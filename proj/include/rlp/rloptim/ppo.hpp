#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rlp/numerics/optimizer.hpp"
#include "rlp/rewardmodel/reward.hpp"
#include "rlp/seqmodel/policy.hpp"

namespace rlp::rl {

struct PPOConfig {
  double clip = 0.2;        // epsilon, in (0, 1) for training; tests may pass a huge value
  double beta = 0.05;       // KL coefficient
  int epochs = 4;           // passes over each rollout batch
  double gamma = 1.0;
  double gae_lambda = 0.95;
  int rollouts = 64;        // responses per iteration
  int minibatch = 16;       // responses per gradient step
  int iterations = 40;      // collect + update rounds
  double value_coef = 0.5;
  double kl_stop = 0.02;    // mean token KL(new || old) that ends the update early; <= 0 disables
  double std_floor = 1e-8;  // floor on the advantage std when whitening
  double temperature = 1.0;
  int max_new_tokens = 10;
  num::AdamConfig policy_adam{3e-4};
  num::AdamConfig value_adam{1e-2};
  std::uint64_t seed = 0;

  void validate() const;
};

// Linear value estimate over the policy's final-layer features. The features
// are read detached, so value regression never moves the policy.
struct ValueHead {
  num::Tensor weight;  // [width, 1]
  num::Tensor bias;    // [1, 1]

  ValueHead() = default;
  explicit ValueHead(int width) : weight(num::Tensor::matrix(static_cast<std::size_t>(width), 1)), bias(num::Tensor::matrix(1, 1)) {}

  num::Var forward(num::Tape& tape, num::Tensor states);  // [T, 1]
  std::vector<num::Tensor*> parameters() { return {&weight, &bias}; }
};

struct Rollout {
  world::Instruction x;
  world::Response y;
  double score = 0.0;                // reward-model score of (x, y)
  std::vector<double> logp;          // acting policy, per token
  std::vector<double> ref_logp;      // reference policy, per token
  std::vector<double> rewards;       // shaped per-token reward
  std::vector<double> values;
  std::vector<double> advantages;    // whitened
  std::vector<double> returns;
  num::Tensor old_log_probs;         // [T, vocab] acting-policy log-softmax rows

  double log_ratio_sum() const;      // sum_t logp - ref_logp
};

struct RolloutBatch {
  std::vector<Rollout> items;
  bool std_floor_hit = false;

  std::size_t token_count() const;
};

// Samples one response per instruction at cfg.temperature and fills every
// per-token array. Instruction i uses the seed derive_seed({seed, i}).
RolloutBatch collect_rollouts(const seq::PolicyModel& policy, ValueHead& value, const seq::PolicyModel& reference,
                              const rm::RewardModel& reward, std::span<const world::Instruction> xs,
                              const PPOConfig& cfg, std::uint64_t seed);

// GAE over one rollout's shaped rewards and values (bootstrap value 0 after
// the last token). Returns {advantages, returns} before whitening.
std::pair<std::vector<double>, std::vector<double>> gae(std::span<const double> rewards, std::span<const double> values,
                                                        double gamma, double lambda);

// Whitens advantages across every token of the batch in place.
void whiten_advantages(RolloutBatch& batch, double std_floor);

struct PPOOptimizers {
  num::Adam policy;
  num::Adam value;
  PPOOptimizers(seq::PolicyModel& p, ValueHead& v, const PPOConfig& cfg);
};

struct UpdateStats {
  double policy_loss = 0.0;    // mean over gradient steps
  double value_loss = 0.0;
  double clip_fraction = 0.0;  // tokens whose ratio left [1 - eps, 1 + eps]
  double approx_kl = 0.0;      // last measured mean token KL(new || old)
  double first_surrogate = 0.0;
  int steps = 0;
  bool early_stopped = false;
};

struct SurrogateTerms {
  num::Var policy_loss;  // mean over tokens of -min(rho A, clip(rho) A)
  num::Var value_loss;   // mean over tokens of (V - return)^2
  double kl = 0.0;       // mean token KL(current || acting policy)
  std::size_t clipped = 0;
  std::size_t tokens = 0;
};

// Losses for a set of rollouts under the current parameters.
SurrogateTerms surrogate(num::Tape& tape, seq::PolicyModel& policy, ValueHead& value,
                         std::span<const Rollout* const> rollouts, double clip);

// Clipped-surrogate update plus value regression over cfg.epochs passes.
// Throws DivergenceError on a non-finite loss.
UpdateStats ppo_update(seq::PolicyModel& policy, ValueHead& value, const RolloutBatch& batch, const PPOConfig& cfg,
                       PPOOptimizers& opt);

struct IterationLog {
  int iteration = 0;
  double mean_score = 0.0;
  double mean_kl = 0.0;  // mean over responses of sum_t (logp - ref_logp)
  double mean_length = 0.0;
  UpdateStats update;
};

struct TrainResult {
  seq::PolicyModel policy;
  std::vector<IterationLog> log;
};

// Repeated collect_rollouts + ppo_update from `init`; the reference is a
// frozen copy of `init`.
TrainResult train_policy(const seq::PolicyModel& init, const rm::RewardModel& reward,
                         std::span<const world::Instruction> prompts, const PPOConfig& cfg,
                         const std::function<void(const IterationLog&)>& on_iteration = {});

// Monte Carlo estimate of E_x E_{y~policy} sum_t KL(policy || reference) at
// each visited prefix, exact over the vocabulary at each step.
double sequence_kl(const seq::PolicyModel& policy, const seq::PolicyModel& reference,
                   std::span<const world::Instruction> xs, int samples_per_prompt, std::uint64_t seed,
                   double temperature = 1.0);

}  // namespace rlp::rl
