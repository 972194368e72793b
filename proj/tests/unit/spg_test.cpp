#include <algorithm>
#include <set>
#include <sstream>

#include "clustering.hpp"
#include "doctest.h"
#include "rlp/common/error.hpp"
#include "rlp/spg/spg.hpp"

using namespace rlp;
using namespace rlp::spg;
using world::Response;
using world::Tokens;

namespace {

Response resp(Tokens t) {
  Response r;
  r.tokens = std::move(t);
  r.producer = "ppo";
  return r;
}

PolicySampleSet set_of(std::vector<Response> ys, std::uint64_t id = 5) {
  PolicySampleSet s;
  s.x.id = id;
  s.x.family = world::TaskFamily::Copy;
  s.x.args = {11, 12};
  s.ys = std::move(ys);
  return s;
}

seq::TransformerConfig small_arch() {
  seq::TransformerConfig c;
  c.width = 16;
  c.heads = 2;
  c.blocks = 1;
  c.mlp_hidden = 16;
  return c;
}

rm::RewardModel random_reward(std::uint64_t seed) {
  rm::RewardModel m(small_arch());
  m.backbone.init(seed);
  Rng rng(seed + 1);
  for (double& v : m.head_weight.values()) v = rng.normal();
  return m;
}

seq::PolicyModel random_policy(std::uint64_t seed) {
  seq::PolicyModel p(small_arch(), "ppo");
  p.net.init(seed);
  Rng rng(seed + 1);
  for (double& v : p.net.parameters().back()->values()) v = 0.7 * rng.normal();
  return p;
}

// {A x5, B x3, C x2} with A-members differing only in fillers.
PolicySampleSet five_three_two() {
  const int f = world::vocab::kFiller, e = world::vocab::kEos;
  return set_of({resp({11, 12, e}), resp({13, e}), resp({11, f, 12, e}), resp({14, 14, e}), resp({13, e}),
                 resp({f, 11, 12, e}), resp({11, 12, f, e}), resp({13, f, e}), resp({14, f, 14, e}),
                 resp({11, 12, f, f, e})});
}

}  // namespace

TEST_CASE("cluster: identical, all distinct, and 5/3/2 sets") {
  const ExactCanonicalOracle oracle;
  const auto same = set_of(std::vector<Response>(10, resp({11, 0})));
  const auto c1 = cluster(same, oracle);
  CHECK(c1.groups.size() == 1);
  CHECK(c1.confidence == 1.0);

  std::vector<Response> distinct;
  for (int i = 0; i < 10; ++i) distinct.push_back(resp({11 + i, 0}));
  const auto c2 = cluster(set_of(distinct), oracle);
  CHECK(c2.groups.size() == 10);
  CHECK(c2.confidence == doctest::Approx(0.1));
  CHECK(c2.largest == 0);

  const auto s = five_three_two();
  const auto c3 = cluster(s, oracle);
  CHECK(c3.sizes() == std::vector<std::size_t>{5, 3, 2});
  CHECK(c3.largest_group() == std::vector<std::size_t>{0, 2, 5, 6, 9});
  CHECK(c3.confidence == 0.5);
  CHECK(c3.groups == testing::components(s, oracle));
}

TEST_CASE("cluster: ties for the largest group go to the earliest representative") {
  const ExactCanonicalOracle oracle;
  const auto s = set_of({resp({13, 0}), resp({11, 0}), resp({11, 0}), resp({13, 0})});
  const auto c = cluster(s, oracle);
  CHECK(c.largest == 0);
  CHECK(c.largest_group() == std::vector<std::size_t>{0, 3});
}

TEST_CASE("cluster: greedy equals brute-force components; partition invariants") {
  const ExactCanonicalOracle oracle;
  Rng rng(2024);
  for (int trial = 0; trial < 300; ++trial) {
    const auto s = testing::random_sample_set(rng);
    const auto c = cluster(s, oracle);
    REQUIRE(c.groups == testing::components(s, oracle));
    std::vector<int> seen(s.ys.size(), 0);
    std::size_t total = 0;
    for (const auto& g : c.groups) {
      total += g.size();
      CHECK(g.size() <= c.largest_group().size());
      for (auto i : g) seen[i]++;
    }
    CHECK(total == s.ys.size());
    CHECK(std::all_of(seen.begin(), seen.end(), [](int v) { return v == 1; }));
    CHECK(c.confidence > 0.0);
    CHECK(c.confidence <= 1.0);
  }
}

TEST_CASE("oracle: failure is distinct from a negative verdict") {
  const auto s = five_three_two();
  ClassifierOracle never("never", [](const auto&, const auto&, const auto&) { return std::optional<bool>(false); });
  CHECK(cluster(s, never).groups.size() == 10);
  ClassifierOracle broken("broken", [](const auto&, const auto&, const auto&) { return std::optional<bool>(); });
  CHECK_THROWS_AS(cluster(s, broken), OracleFailure);
  ClassifierOracle missing("missing", nullptr);
  CHECK_THROWS_AS(cluster(s, missing), OracleFailure);
  // A one-directional classifier never merges.
  ClassifierOracle oneway("oneway", [](const auto&, const Response& a, const Response& b) {
    return std::optional<bool>(a.tokens.size() >= b.tokens.size());
  });
  const auto c = cluster(set_of({resp({11, 0}), resp({11, 12, 0})}), oneway);
  CHECK(c.groups.size() == 2);
}

TEST_CASE("synthetic preferences: thresholds, complement rule, reward argmax") {
  const ExactCanonicalOracle oracle;
  const auto s = five_three_two();
  const auto rm = random_reward(3);
  const std::vector<PolicySampleSet> P{s};

  const auto at_half = generate_synthetic_preferences(P, rm, oracle, 0.5, 1);
  REQUIRE(at_half.report.size() == 1);
  CHECK(at_half.report[0].accepted);
  CHECK(at_half.dataset.size() == 1);
  CHECK(at_half.dataset.split() == "D-hat");
  CHECK(at_half.dataset.pairs()[0].source == world::PairSource::SyntheticSpg);
  CHECK_FALSE(generate_synthetic_preferences(P, rm, oracle, 0.6, 1).report[0].accepted);
  CHECK(generate_synthetic_preferences(P, rm, oracle, 0.6, 1).report[0].reason == "below-threshold");

  const auto all_same = set_of(std::vector<Response>(10, resp({11, 0})));
  const std::vector<PolicySampleSet> Q{all_same};
  const auto r = generate_synthetic_preferences(Q, rm, oracle, 0.5, 1);
  CHECK_FALSE(r.report[0].accepted);
  CHECK(r.report[0].reason == "no-complement");
  CHECK(ablation_select_all(Q, rm, oracle, 1).dataset.empty());
  CHECK_THROWS_AS(generate_synthetic_preferences(P, rm, oracle, 1.5, 1), ConfigError);

  // Find a reward model under which the third member of the largest group
  // scores highest, then check the winner is exactly that member.
  const auto group = cluster(s, oracle).largest_group();
  bool found = false;
  for (std::uint64_t seed = 10; seed < 200 && !found; ++seed) {
    const auto m = random_reward(seed);
    std::vector<double> scores;
    for (auto i : group) scores.push_back(rm::score(m, s.x, s.ys[i]));
    const auto best = static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
    if (best != 2) continue;
    found = true;
    const auto out = generate_synthetic_preferences(P, m, oracle, 0.5, 7);
    CHECK(*out.report[0].winner == group[2]);
    CHECK(std::find(group.begin(), group.end(), *out.report[0].loser) == group.end());
    const auto& pair = out.dataset.pairs()[0];
    for (auto i : group) CHECK(rm::score(m, s.x, pair.chosen) >= rm::score(m, s.x, s.ys[i]));
  }
  CHECK(found);

  const auto uniform = generate_synthetic_preferences(P, rm, oracle, 0.5, 7, WinnerRule::Uniform);
  CHECK(std::find(group.begin(), group.end(), *uniform.report[0].winner) != group.end());
}

TEST_CASE("synthetic preferences: acceptance is monotone in gamma") {
  const ExactCanonicalOracle oracle;
  const auto rm = random_reward(5);
  Rng rng(6);
  std::vector<PolicySampleSet> P;
  for (int i = 0; i < 60; ++i) {
    auto s = testing::random_sample_set(rng);
    s.x.id = static_cast<std::uint64_t>(i);
    P.push_back(s);
  }
  std::vector<std::set<std::uint64_t>> accepted;
  for (double g : {0.0, 0.2, 0.4, 0.5, 0.7, 1.0}) {
    const auto out = generate_synthetic_preferences(P, rm, oracle, g, 3);
    std::set<std::uint64_t> ids;
    for (const auto& d : out.report) {
      if (!d.accepted) continue;
      ids.insert(d.instruction_id);
      CHECK(d.confidence >= g);
      const auto c = cluster(P[d.instruction_id], oracle);
      const auto& top = c.largest_group();
      CHECK(std::find(top.begin(), top.end(), *d.winner) != top.end());
      CHECK(std::find(top.begin(), top.end(), *d.loser) == top.end());
    }
    CHECK(ids.size() == out.dataset.size());
    accepted.push_back(ids);
  }
  for (std::size_t i = 1; i < accepted.size(); ++i)
    CHECK(std::includes(accepted[i - 1].begin(), accepted[i - 1].end(), accepted[i].begin(), accepted[i].end()));
  CHECK(ablation_select_all(P, rm, oracle, 3).dataset.size() == accepted[0].size());

  std::ostringstream os;
  write_decisions(os, generate_synthetic_preferences(P, rm, oracle, 0.5, 3).report);
  const std::string text = os.str();
  CHECK(text.rfind("#rlp spg-decisions v1\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 61);
}

TEST_CASE("policy samples and ablation generators") {
  const auto policy = random_policy(9);
  const auto splits = world::generate_splits(4, {6, 6, 30, 6});
  seq::SamplingConfig sc;
  sc.seed = 11;
  const auto P = build_policy_samples(policy, splits.unlabeled, 10, sc);
  REQUIRE(P.size() == 30);
  for (const auto& s : P) CHECK(s.ys.size() == 10);
  CHECK(P[0].producer == "ppo");
  const auto again = build_policy_samples(policy, splits.unlabeled, 10, sc);
  for (std::size_t i = 0; i < P.size(); ++i)
    for (std::size_t j = 0; j < 10; ++j) CHECK(P[i].ys[j].tokens == again[i].ys[j].tokens);
  CHECK(build_policy_samples(policy, splits.unlabeled, 2, sc)[0].ys.size() == 2);
  CHECK_THROWS_AS(build_policy_samples(policy, splits.unlabeled, 1, sc), ConfigError);

  const auto rlaif = ablation_rlaif(policy, splits.unlabeled, sc);
  CHECK(rlaif.size() > 0);
  for (const auto& p : rlaif.pairs()) {
    CHECK(p.chosen.tokens != p.rejected.tokens);
    const auto a = seq::sequence_logprob(policy, p.x, p.chosen), b = seq::sequence_logprob(policy, p.x, p.rejected);
    CHECK(a.total / a.per_token.size() > b.total / b.per_token.size());
    CHECK(p.source == world::PairSource::AblationVariant);
  }
  const auto rm = random_reward(12);
  const auto ranked = ablation_reward_rank(policy, rm, splits.unlabeled, sc);
  for (const auto& p : ranked.pairs()) CHECK(rm::score(rm, p.x, p.chosen) > rm::score(rm, p.x, p.rejected));
  rm::RewardModel flat(small_arch());
  CHECK(ablation_reward_rank(policy, flat, splits.unlabeled, sc).empty());

  world::PreferenceDataset d;
  const world::Instruction x{1, world::TaskFamily::Copy, 0, {11, 12}};
  d.add({x, world::gold_answer(x), resp({11, 0}), world::PairSource::AblationVariant});
  d.add({x, resp({13, 0}), world::gold_answer(x), world::PairSource::AblationVariant});
  d.add({x, resp({13, 0}), resp({14, 0}), world::PairSource::AblationVariant});
  CHECK(true_preference_accuracy(d, {}) == doctest::Approx(0.5));
}
