#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rlp/numerics/tape.hpp"
#include "rlp/seqmodel/policy.hpp"
#include "rlp/taskworld/taskworld.hpp"

namespace rlp::rm {

// Transformer backbone with a scalar head on mean-pooled final-layer
// features of the response positions. Role: initial | retrained.
struct RewardModel {
  seq::Transformer backbone;
  num::Tensor head_weight;  // [width, 1]
  num::Tensor head_bias;    // [1, 1]
  std::string role = "initial";

  RewardModel() : RewardModel(seq::TransformerConfig{}) {}
  explicit RewardModel(seq::TransformerConfig cfg, std::string role_tag = "initial");

  // Backbone copied from the policy, scalar head set to zero.
  static RewardModel from_policy(const seq::PolicyModel& policy, std::string role_tag = "initial");

  std::vector<num::Tensor*> parameters();          // backbone then head
  std::vector<num::Tensor*> head_parameters();
  std::size_t feature_dim() const { return head_weight.rows(); }
};

// Mean of the final-layer states at the positions of y inside x ++ y. An
// empty y pools the last prompt position instead. Result is [1, width].
num::Var pooled_features(num::Tape& tape, seq::Transformer& net, const world::Instruction& x,
                         const world::Response& y);

num::Var score(num::Tape& tape, RewardModel& model, const world::Instruction& x, const world::Response& y);
double score(const RewardModel& model, const world::Instruction& x, const world::Response& y);

// mean over pairs of -log sigmoid(gap)
double pairwise_loss_from_gaps(std::span<const double> gaps);
num::Var pairwise_loss(num::Tape& tape, RewardModel& model, std::span<const world::PreferencePair> batch);
double pairwise_loss(const RewardModel& model, std::span<const world::PreferencePair> batch);

// Fraction of pairs with score(chosen) > score(rejected).
double preference_accuracy(const RewardModel& model, std::span<const world::PreferencePair> pairs);

struct ScoreStats {
  double mean = 0.0;
  double stddev = 0.0;
};

// Rescales the scalar head so scores over both responses of every pair have
// zero mean and unit variance. Ranking is unchanged. Returns the statistics
// before rescaling; a zero spread only shifts the mean.
ScoreStats normalize_scores(RewardModel& model, std::span<const world::PreferencePair> pairs);

}  // namespace rlp::rm
