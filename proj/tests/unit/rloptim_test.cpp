#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "rlp/common/error.hpp"
#include "rlp/numerics/ops.hpp"
#include "rlp/rloptim/ppo.hpp"

using namespace rlp;
using namespace rlp::rl;
using world::Instruction;

namespace {

seq::TransformerConfig small_arch() {
  seq::TransformerConfig c;
  c.width = 16;
  c.heads = 2;
  c.blocks = 1;
  c.mlp_hidden = 16;
  return c;
}

seq::PolicyModel random_policy(std::uint64_t seed, double out_scale = 0.5) {
  seq::PolicyModel p(small_arch(), "policy");
  p.net.init(seed);
  Rng rng(seed + 100);
  for (double& v : p.net.parameters().back()->values()) v = out_scale * rng.normal();
  return p;
}

rm::RewardModel random_reward(std::uint64_t seed) {
  rm::RewardModel m(small_arch());
  m.backbone.init(seed);
  Rng rng(seed + 1);
  for (double& v : m.head_weight.values()) v = rng.normal();
  return m;
}

std::vector<Instruction> prompts(std::size_t n, std::uint64_t seed = 1) {
  return world::generate_splits(seed, {n, 6, 6, 6}).sft.items;
}

}  // namespace

TEST_CASE("gae: matches the discounted sum of TD errors") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.below(8);
    std::vector<double> r(n), v(n);
    for (std::size_t i = 0; i < n; ++i) {
      r[i] = rng.normal();
      v[i] = rng.normal();
    }
    const double gamma = rng.uniform(), lambda = rng.uniform();
    auto [adv, ret] = gae(r, v, gamma, lambda);
    for (std::size_t t = 0; t < n; ++t) {
      double expect = 0.0, w = 1.0;
      for (std::size_t l = t; l < n; ++l) {
        const double next = l + 1 < n ? v[l + 1] : 0.0;
        expect += w * (r[l] + gamma * next - v[l]);
        w *= gamma * lambda;
      }
      CHECK(adv[t] == doctest::Approx(expect).epsilon(1e-12));
      CHECK(ret[t] == doctest::Approx(adv[t] + v[t]).epsilon(1e-12));
    }
  }
  // Discount 1 and lambda 1 give reward-to-go minus value.
  auto [adv, ret] = gae(std::vector<double>{1, 2, 3}, std::vector<double>{0, 0, 0}, 1.0, 1.0);
  CHECK(adv == std::vector<double>{6, 5, 3});
}

TEST_CASE("collect_rollouts: shaped rewards, KL terms, whitening") {
  const auto policy = random_policy(1);
  const auto reference = random_policy(2);
  const auto reward = random_reward(3);
  ValueHead value(16);
  const auto xs = prompts(24);
  PPOConfig cfg;

  SUBCASE("beta zero leaves only the terminal score") {
    cfg.beta = 0.0;
    auto batch = collect_rollouts(policy, value, reference, reward, xs, cfg, 7);
    for (const auto& r : batch.items) {
      for (std::size_t t = 0; t + 1 < r.rewards.size(); ++t) CHECK(r.rewards[t] == 0.0);
      CHECK(r.rewards.back() == r.score);
      CHECK(r.score == rm::score(reward, r.x, r.y));
    }
  }
  SUBCASE("policy equal to reference has zero penalty") {
    auto batch = collect_rollouts(policy, value, policy, reward, xs, cfg, 7);
    for (const auto& r : batch.items)
      for (std::size_t t = 0; t < r.logp.size(); ++t) CHECK(r.logp[t] - r.ref_logp[t] == 0.0);
  }
  SUBCASE("penalty is -beta times the log-ratio, recomputed independently") {
    auto batch = collect_rollouts(policy, value, reference, reward, xs, cfg, 7);
    double penalty = 0.0, ratio = 0.0;
    std::size_t n = 0;
    for (const auto& r : batch.items) {
      const auto lp = seq::sequence_logprob(policy, r.x, r.y).per_token;
      const auto lr = seq::sequence_logprob(reference, r.x, r.y).per_token;
      REQUIRE(lp.size() == r.y.tokens.size());
      for (std::size_t t = 0; t < lp.size(); ++t) {
        penalty += r.rewards[t] - (t + 1 == lp.size() ? r.score : 0.0);
        ratio += lp[t] - lr[t];
        ++n;
      }
    }
    CHECK(ratio != 0.0);
    CHECK(penalty / n == doctest::Approx(-0.05 * ratio / n).epsilon(1e-9));
  }
  SUBCASE("whitened advantages have zero mean and unit std") {
    auto batch = collect_rollouts(policy, value, reference, reward, xs, cfg, 7);
    CHECK_FALSE(batch.std_floor_hit);
    double s = 0.0, sq = 0.0;
    const double n = static_cast<double>(batch.token_count());
    for (const auto& r : batch.items)
      for (double a : r.advantages) s += a;
    for (const auto& r : batch.items)
      for (double a : r.advantages) sq += (a - s / n) * (a - s / n);
    CHECK(std::abs(s / n) < 1e-6);
    CHECK(std::abs(std::sqrt(sq / n) - 1.0) < 1e-6);
  }
}

TEST_CASE("whitening guard: identical advantages stay finite") {
  RolloutBatch batch;
  for (int i = 0; i < 3; ++i) {
    Rollout r;
    r.advantages = {0.7, 0.7};
    batch.items.push_back(r);
  }
  whiten_advantages(batch, 1e-8);
  CHECK(batch.std_floor_hit);
  for (const auto& r : batch.items)
    for (double a : r.advantages) CHECK(std::abs(a) < 1e-6);
}

TEST_CASE("ppo_update: ratio-one surrogate, early stop, non-finite guard") {
  auto policy = random_policy(11);
  const auto reference = random_policy(11);
  const auto reward = random_reward(12);
  ValueHead value(16);
  const auto xs = prompts(16);
  PPOConfig cfg;
  cfg.minibatch = 16;
  cfg.epochs = 2;
  auto batch = collect_rollouts(policy, value, reference, reward, xs, cfg, 3);
  PPOOptimizers opt(policy, value, cfg);
  const auto stats = ppo_update(policy, value, batch, cfg, opt);
  CHECK(std::abs(stats.first_surrogate) < 1e-9);
  CHECK(stats.steps == 2);

  PPOConfig tight = cfg;
  tight.kl_stop = 1e-12;
  tight.epochs = 4;
  auto p2 = random_policy(11);
  PPOOptimizers opt2(p2, value, tight);
  const auto s2 = ppo_update(p2, value, batch, tight, opt2);
  CHECK(s2.early_stopped);
  CHECK(s2.steps == 1);

  auto bad = batch;
  bad.items[0].advantages[0] = std::nan("");
  auto p3 = random_policy(11);
  PPOOptimizers opt3(p3, value, cfg);
  CHECK_THROWS_AS(ppo_update(p3, value, bad, cfg, opt3), DivergenceError);
}

TEST_CASE("ppo_update: positive advantage raises that token's probability") {
  auto policy = random_policy(21);
  const auto reference = policy;
  const auto reward = random_reward(22);
  ValueHead value(16);
  const auto xs = prompts(1);
  PPOConfig cfg;
  cfg.epochs = 1;
  cfg.minibatch = 1;
  auto batch = collect_rollouts(policy, value, reference, reward, xs, cfg, 5);
  Rollout& r = batch.items[0];
  REQUIRE(r.y.tokens.size() >= 1);
  std::fill(r.advantages.begin(), r.advantages.end(), 0.0);
  const std::size_t k = r.advantages.size() - 1;
  r.advantages[k] = 1.0;
  cfg.policy_adam.learning_rate = 1e-3;
  PPOOptimizers opt(policy, value, cfg);
  ppo_update(policy, value, batch, cfg, opt);
  const double after = seq::sequence_logprob(policy, r.x, r.y).per_token[k];
  CHECK(after > r.logp[k]);
}

TEST_CASE("ppo gradient equals REINFORCE with beta 0, no clipping, one epoch") {
  auto policy = random_policy(31);
  const auto reward = random_reward(32);
  ValueHead value(16);
  const auto xs = prompts(1);
  PPOConfig cfg;
  cfg.beta = 0.0;
  cfg.clip = 1e12;
  auto batch = collect_rollouts(policy, value, policy, reward, xs, cfg, 9);
  const Rollout& r = batch.items[0];
  const Rollout* members[] = {&r};

  auto params = policy.net.parameters();
  for (auto* p : params) p->zero_grad();
  {
    num::Tape tape;
    auto terms = surrogate(tape, policy, value, members, cfg.clip);
    tape.backward(terms.policy_loss);
  }
  std::vector<std::vector<double>> ppo_grad;
  for (auto* p : params) ppo_grad.emplace_back(std::as_const(*p).grad().begin(), std::as_const(*p).grad().end());

  for (auto* p : params) p->zero_grad();
  {
    num::Tape tape;
    auto f = seq::forward_response(tape, policy.net, r.x.rendered(), r.y.tokens);
    num::Tensor adv({r.advantages.size(), 1}, std::vector<double>(r.advantages));
    num::Var loss = num::scale(num::sum(num::mul(f.token_logprobs, tape.constant(adv))),
                               -1.0 / static_cast<double>(r.advantages.size()));
    tape.backward(loss);
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto g = std::as_const(*params[i]).grad();
    for (std::size_t j = 0; j < g.size(); ++j) worst = std::max(worst, testing::relative_error(ppo_grad[i][j], g[j], 1e-9));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("train_policy: zero iterations, frozen reference, score improves, beta controls KL") {
  const auto init = random_policy(41, 0.3);
  const auto reward = random_reward(42);
  const auto xs = prompts(48);
  PPOConfig cfg;
  cfg.iterations = 0;
  const auto none = train_policy(init, reward, xs, cfg);
  CHECK(none.policy.net == init.net);
  CHECK(none.log.empty());

  const auto init_copy = init;
  cfg.iterations = 25;
  cfg.rollouts = 32;
  cfg.minibatch = 8;
  cfg.beta = 0.05;
  cfg.seed = 4;
  const auto trained = train_policy(init, reward, xs, cfg);
  CHECK(init.net == init_copy.net);
  REQUIRE(trained.log.size() == 25);

  auto mean_score = [&](const seq::PolicyModel& p) {
    double s = 0.0;
    int n = 0;
    seq::SamplingConfig sc;
    sc.seed = 77;
    for (const auto& x : xs)
      for (const auto& y : seq::sample_set(p, x, 4, sc)) {
        s += rm::score(reward, x, y);
        ++n;
      }
    return s / n;
  };
  const double before = mean_score(init), after = mean_score(trained.policy);
  MESSAGE("probe score " << before << " -> " << after);
  CHECK(after > before);

  PPOConfig strong = cfg;
  strong.beta = 0.5;
  const auto leashed = train_policy(init, reward, xs, strong);
  const double kl_weak = sequence_kl(trained.policy, init, xs, 4, 5);
  const double kl_strong = sequence_kl(leashed.policy, init, xs, 4, 5);
  MESSAGE("sequence KL beta=0.05: " << kl_weak << "  beta=0.5: " << kl_strong);
  CHECK(kl_strong < kl_weak);
  CHECK(sequence_kl(init, init, xs, 2, 5) == 0.0);
}
