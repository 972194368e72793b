#include "rlp/rloptim/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rlp/common/error.hpp"
#include "rlp/common/rng.hpp"
#include "rlp/numerics/ops.hpp"

namespace rlp::rl {

using num::Tape;
using num::Tensor;
using num::Var;

void PPOConfig::validate() const {
  if (!(clip > 0.0)) throw ConfigError("ppo: clip ratio must be > 0");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("ppo: beta must be >= 0");
  if (epochs < 1 || rollouts < 1 || minibatch < 1 || iterations < 0) throw ConfigError("ppo: counts must be positive");
  if (gamma < 0.0 || gamma > 1.0 || gae_lambda < 0.0 || gae_lambda > 1.0)
    throw ConfigError("ppo: gamma and gae_lambda must lie in [0, 1]");
  if (!(temperature > 0.0)) throw ConfigError("ppo: temperature must be > 0");
}

Var ValueHead::forward(Tape& tape, Tensor states) {
  return num::add_bias(num::matmul(tape.constant(std::move(states)), tape.parameter(weight)), tape.parameter(bias));
}

double Rollout::log_ratio_sum() const {
  double s = 0.0;
  for (std::size_t t = 0; t < logp.size(); ++t) s += logp[t] - ref_logp[t];
  return s;
}

std::size_t RolloutBatch::token_count() const {
  std::size_t n = 0;
  for (const auto& r : items) n += r.y.tokens.size();
  return n;
}

std::pair<std::vector<double>, std::vector<double>> gae(std::span<const double> rewards, std::span<const double> values,
                                                        double gamma, double lambda) {
  if (rewards.size() != values.size()) throw std::invalid_argument("gae: rewards and values differ in length");
  const std::size_t n = rewards.size();
  std::vector<double> adv(n), ret(n);
  double running = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double next = i + 1 < n ? values[i + 1] : 0.0;
    const double delta = rewards[i] + gamma * next - values[i];
    running = delta + gamma * lambda * running;
    adv[i] = running;
    ret[i] = running + values[i];
  }
  return {adv, ret};
}

void whiten_advantages(RolloutBatch& batch, double std_floor) {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto& r : batch.items)
    for (double a : r.advantages) {
      sum += a;
      ++n;
    }
  if (n == 0) return;
  const double mean = sum / static_cast<double>(n);
  for (const auto& r : batch.items)
    for (double a : r.advantages) sq += (a - mean) * (a - mean);
  const double sd = std::sqrt(sq / static_cast<double>(n));
  batch.std_floor_hit = sd < std_floor;
  const double denom = std::max(sd, std_floor);
  for (auto& r : batch.items)
    for (double& a : r.advantages) a = (a - mean) / denom;
}

RolloutBatch collect_rollouts(const seq::PolicyModel& policy, ValueHead& value, const seq::PolicyModel& reference,
                              const rm::RewardModel& reward, std::span<const world::Instruction> xs,
                              const PPOConfig& cfg, std::uint64_t seed) {
  RolloutBatch batch;
  batch.items.reserve(xs.size());
  seq::SamplingConfig sc;
  sc.temperature = cfg.temperature;
  sc.max_new_tokens = cfg.max_new_tokens;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    Rollout r;
    r.x = xs[i];
    sc.seed = derive_seed({seed, static_cast<std::uint64_t>(i)});
    r.y = seq::sample(policy, r.x, sc);
    r.y.producer = policy.role;
    {
      Tape tape(false);
      auto f = seq::forward_response(tape, const_cast<seq::Transformer&>(policy.net), r.x.rendered(), r.y.tokens);
      const auto lp = f.token_logprobs.value().values();
      r.logp.assign(lp.begin(), lp.end());
      r.old_log_probs = f.log_probs.value();
      const auto v = value.forward(tape, f.states.value()).value().values();
      r.values.assign(v.begin(), v.end());
    }
    r.ref_logp = seq::sequence_logprob(reference, r.x, r.y).per_token;
    r.score = rm::score(reward, r.x, r.y);
    r.rewards.resize(r.logp.size());
    for (std::size_t t = 0; t < r.logp.size(); ++t) r.rewards[t] = -cfg.beta * (r.logp[t] - r.ref_logp[t]);
    r.rewards.back() += r.score;
    std::tie(r.advantages, r.returns) = gae(r.rewards, r.values, cfg.gamma, cfg.gae_lambda);
    batch.items.push_back(std::move(r));
  }
  whiten_advantages(batch, cfg.std_floor);
  return batch;
}

PPOOptimizers::PPOOptimizers(seq::PolicyModel& p, ValueHead& v, const PPOConfig& cfg)
    : policy(p.net.parameters(), cfg.policy_adam), value(v.parameters(), cfg.value_adam) {
  policy.zero_grad();
  value.zero_grad();
}

namespace {

Tensor column(const std::vector<double>& v) { return Tensor({v.size(), 1}, std::vector<double>(v)); }

// Exact mean over tokens of KL(new || old) from full log-softmax rows.
double token_kl(const Tensor& new_rows, const Tensor& old_rows, double& total) {
  double kl = 0.0;
  for (std::size_t r = 0; r < new_rows.rows(); ++r)
    for (std::size_t c = 0; c < new_rows.cols(); ++c) {
      const double ln = new_rows.at(r, c);
      kl += std::exp(ln) * (ln - old_rows.at(r, c));
    }
  total += kl;
  return kl;
}

}  // namespace

SurrogateTerms surrogate(Tape& tape, seq::PolicyModel& policy, ValueHead& value,
                         std::span<const Rollout* const> rollouts, double clip) {
  if (rollouts.empty()) throw std::invalid_argument("surrogate: no rollouts");
  SurrogateTerms out;
  for (const Rollout* r : rollouts) out.tokens += r->y.tokens.size();
  const double inv = 1.0 / static_cast<double>(out.tokens);
  std::vector<Var> policy_terms, value_terms;
  double kl_total = 0.0;
  for (const Rollout* r : rollouts) {
    auto f = seq::forward_response(tape, policy.net, r->x.rendered(), r->y.tokens);
    token_kl(f.log_probs.value(), r->old_log_probs, kl_total);
    Var ratio = num::exp(num::sub(f.token_logprobs, tape.constant(column(r->logp))));
    Var adv = tape.constant(column(r->advantages));
    Var unclipped = num::mul(ratio, adv);
    Var clipped = num::mul(num::clamp(ratio, 1.0 - clip, 1.0 + clip), adv);
    policy_terms.push_back(num::sum(num::minimum(unclipped, clipped)));
    for (double rho : ratio.value().values()) out.clipped += std::abs(rho - 1.0) > clip;
    Var v = value.forward(tape, f.states.value());
    value_terms.push_back(num::sum(num::square(num::sub(v, tape.constant(column(r->returns))))));
  }
  out.kl = kl_total * inv;
  out.policy_loss = num::scale(num::sum(num::concat_rows(policy_terms)), -inv);
  out.value_loss = num::scale(num::sum(num::concat_rows(value_terms)), inv);
  return out;
}

UpdateStats ppo_update(seq::PolicyModel& policy, ValueHead& value, const RolloutBatch& batch, const PPOConfig& cfg,
                       PPOOptimizers& opt) {
  cfg.validate();
  UpdateStats stats;
  if (batch.items.empty()) return stats;
  Rng rng(derive_seed({cfg.seed, 0x990}));
  std::vector<std::size_t> order(batch.items.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t mb = static_cast<std::size_t>(cfg.minibatch);
  std::size_t clipped = 0, seen = 0;
  for (int epoch = 0; epoch < cfg.epochs && !stats.early_stopped; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += mb) {
      std::vector<const Rollout*> members;
      for (std::size_t i = start; i < std::min(order.size(), start + mb); ++i) members.push_back(&batch.items[order[i]]);
      Tape tape;
      SurrogateTerms terms = surrogate(tape, policy, value, members, cfg.clip);
      stats.approx_kl = terms.kl;
      if (cfg.kl_stop > 0.0 && terms.kl > cfg.kl_stop && stats.steps > 0) {
        stats.early_stopped = true;
        break;
      }
      Var loss = num::add(terms.policy_loss, num::scale(terms.value_loss, cfg.value_coef));
      if (!std::isfinite(loss.item())) throw DivergenceError("ppo_update: non-finite loss");
      if (stats.steps == 0) stats.first_surrogate = terms.policy_loss.item();
      tape.backward(loss);
      opt.policy.step();
      opt.value.step();
      stats.policy_loss += terms.policy_loss.item();
      stats.value_loss += terms.value_loss.item();
      clipped += terms.clipped;
      seen += terms.tokens;
      ++stats.steps;
    }
  }
  if (stats.steps > 0) {
    stats.policy_loss /= stats.steps;
    stats.value_loss /= stats.steps;
    stats.clip_fraction = static_cast<double>(clipped) / static_cast<double>(seen);
  }
  return stats;
}

TrainResult train_policy(const seq::PolicyModel& init, const rm::RewardModel& reward,
                         std::span<const world::Instruction> prompts, const PPOConfig& cfg,
                         const std::function<void(const IterationLog&)>& on_iteration) {
  cfg.validate();
  if (prompts.empty()) throw ConfigError("train_policy: no prompts");
  TrainResult out{init, {}};
  const seq::PolicyModel reference = init;
  ValueHead value(init.net.config().width);
  PPOOptimizers opt(out.policy, value, cfg);

  Rng rng(derive_seed({cfg.seed, 0x7a11}));
  std::vector<std::size_t> order(prompts.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  for (int it = 0; it < cfg.iterations; ++it) {
    std::vector<world::Instruction> xs;
    while (xs.size() < static_cast<std::size_t>(cfg.rollouts)) {
      if (cursor == order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      xs.push_back(prompts[order[cursor++]]);
    }
    const std::uint64_t it_seed = derive_seed({cfg.seed, 0x7a12, static_cast<std::uint64_t>(it)});
    RolloutBatch batch = collect_rollouts(out.policy, value, reference, reward, xs, cfg, it_seed);
    IterationLog log;
    log.iteration = it + 1;
    for (const auto& r : batch.items) {
      log.mean_score += r.score;
      log.mean_kl += r.log_ratio_sum();
      log.mean_length += static_cast<double>(r.y.length());
    }
    const double n = static_cast<double>(batch.items.size());
    log.mean_score /= n;
    log.mean_kl /= n;
    log.mean_length /= n;
    PPOConfig step_cfg = cfg;
    step_cfg.seed = it_seed;
    log.update = ppo_update(out.policy, value, batch, step_cfg, opt);
    out.log.push_back(log);
    if (on_iteration) on_iteration(log);
  }
  return out;
}

double sequence_kl(const seq::PolicyModel& policy, const seq::PolicyModel& reference,
                   std::span<const world::Instruction> xs, int samples_per_prompt, std::uint64_t seed,
                   double temperature) {
  if (xs.empty() || samples_per_prompt < 1) throw std::invalid_argument("sequence_kl: nothing to sample");
  seq::SamplingConfig sc;
  sc.temperature = temperature;
  sc.seed = seed;
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& x : xs) {
    for (const auto& y : seq::sample_set(policy, x, samples_per_prompt, sc)) {
      Tape tape(false);
      auto fp = seq::forward_response(tape, const_cast<seq::Transformer&>(policy.net), x.rendered(), y.tokens);
      auto fr = seq::forward_response(tape, const_cast<seq::Transformer&>(reference.net), x.rendered(), y.tokens);
      token_kl(fp.log_probs.value(), fr.log_probs.value(), total);
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

}  // namespace rlp::rl
