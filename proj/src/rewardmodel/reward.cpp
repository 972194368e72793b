#include "rlp/rewardmodel/reward.hpp"

#include <cmath>
#include <stdexcept>

#include "rlp/numerics/ops.hpp"

namespace rlp::rm {

using num::Tape;
using num::Var;

RewardModel::RewardModel(seq::TransformerConfig cfg, std::string role_tag)
    : backbone(cfg),
      head_weight(num::Tensor::matrix(static_cast<std::size_t>(cfg.width), 1)),
      head_bias(num::Tensor::matrix(1, 1)),
      role(std::move(role_tag)) {}

RewardModel RewardModel::from_policy(const seq::PolicyModel& policy, std::string role_tag) {
  RewardModel m(policy.net.config(), std::move(role_tag));
  m.backbone = policy.net;
  return m;
}

std::vector<num::Tensor*> RewardModel::parameters() {
  auto out = backbone.parameters();
  out.push_back(&head_weight);
  out.push_back(&head_bias);
  return out;
}

std::vector<num::Tensor*> RewardModel::head_parameters() { return {&head_weight, &head_bias}; }

Var pooled_features(Tape& tape, seq::Transformer& net, const world::Instruction& x, const world::Response& y) {
  world::Tokens tokens = x.rendered();
  const std::size_t prompt = tokens.size();
  tokens.insert(tokens.end(), y.tokens.begin(), y.tokens.end());
  if (static_cast<int>(tokens.size()) > net.config().context)
    throw std::invalid_argument("pooled_features: instruction and response exceed the context");
  Var h = net.hidden(tape, tokens);
  if (y.tokens.empty()) return num::slice_rows(h, prompt - 1, 1);
  return num::mean_rows(num::slice_rows(h, prompt, y.tokens.size()));
}

Var score(Tape& tape, RewardModel& model, const world::Instruction& x, const world::Response& y) {
  Var v = pooled_features(tape, model.backbone, x, y);
  return num::add(num::matmul(v, tape.parameter(model.head_weight)), tape.parameter(model.head_bias));
}

double score(const RewardModel& model, const world::Instruction& x, const world::Response& y) {
  Tape tape(false);
  return score(tape, const_cast<RewardModel&>(model), x, y).item();
}

double pairwise_loss_from_gaps(std::span<const double> gaps) {
  if (gaps.empty()) throw std::invalid_argument("pairwise_loss: empty batch");
  double total = 0.0;
  for (double g : gaps) total -= num::log_logistic(g);
  return total / static_cast<double>(gaps.size());
}

Var pairwise_loss(Tape& tape, RewardModel& model, std::span<const world::PreferencePair> batch) {
  if (batch.empty()) throw std::invalid_argument("pairwise_loss: empty batch");
  std::vector<Var> gaps;
  gaps.reserve(batch.size());
  for (const auto& p : batch) gaps.push_back(num::sub(score(tape, model, p.x, p.chosen), score(tape, model, p.x, p.rejected)));
  return num::neg(num::mean(num::log_logistic(num::concat_rows(gaps))));
}

double pairwise_loss(const RewardModel& model, std::span<const world::PreferencePair> batch) {
  std::vector<double> gaps;
  for (const auto& p : batch) gaps.push_back(score(model, p.x, p.chosen) - score(model, p.x, p.rejected));
  return pairwise_loss_from_gaps(gaps);
}

double preference_accuracy(const RewardModel& model, std::span<const world::PreferencePair> pairs) {
  if (pairs.empty()) return 0.0;
  std::size_t right = 0;
  for (const auto& p : pairs) right += score(model, p.x, p.chosen) > score(model, p.x, p.rejected);
  return static_cast<double>(right) / static_cast<double>(pairs.size());
}

ScoreStats normalize_scores(RewardModel& model, std::span<const world::PreferencePair> pairs) {
  if (pairs.empty()) throw std::invalid_argument("normalize_scores: no pairs");
  std::vector<double> v;
  v.reserve(2 * pairs.size());
  for (const auto& p : pairs) {
    v.push_back(score(model, p.x, p.chosen));
    v.push_back(score(model, p.x, p.rejected));
  }
  ScoreStats st;
  for (double s : v) st.mean += s / static_cast<double>(v.size());
  for (double s : v) st.stddev += (s - st.mean) * (s - st.mean) / static_cast<double>(v.size());
  st.stddev = std::sqrt(st.stddev);
  const double scale = st.stddev > 1e-12 ? 1.0 / st.stddev : 1.0;
  for (std::size_t i = 0; i < model.head_weight.size(); ++i) model.head_weight.data()[i] *= scale;
  model.head_bias.data()[0] = (model.head_bias.data()[0] - st.mean) * scale;
  return st;
}

}  // namespace rlp::rm
