#include "rlp/spg/spg.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>

#include "rlp/common/error.hpp"
#include "rlp/common/rng.hpp"

namespace rlp::spg {

using world::Instruction;
using world::Response;

std::vector<PolicySampleSet> build_policy_samples(const seq::PolicyModel& policy, const world::InstructionSet& prompts,
                                                  int n, const seq::SamplingConfig& cfg) {
  if (n < 2) throw ConfigError("build_policy_samples: n must be >= 2");
  std::vector<PolicySampleSet> out;
  out.reserve(prompts.size());
  for (const auto& x : prompts.items) {
    PolicySampleSet s;
    s.x = x;
    s.ys = seq::sample_set(policy, x, n, cfg);
    s.producer = policy.role;
    out.push_back(std::move(s));
  }
  return out;
}

bool ClassifierOracle::entails(const Instruction& x, const Response& a, const Response& b) const {
  if (!fn_) throw OracleFailure("equivalence oracle '" + name_ + "' has no classifier");
  const auto verdict = fn_(x, a, b);
  if (!verdict) throw OracleFailure("equivalence oracle '" + name_ + "' returned no verdict");
  return *verdict;
}

std::vector<std::size_t> ClusterSet::sizes() const {
  std::vector<std::size_t> out;
  for (const auto& g : groups) out.push_back(g.size());
  return out;
}

ClusterSet cluster(const PolicySampleSet& samples, const EquivalenceOracle& oracle) {
  if (samples.ys.empty()) throw std::invalid_argument("cluster: empty sample set");
  ClusterSet c;
  for (std::size_t i = 0; i < samples.ys.size(); ++i) {
    bool placed = false;
    for (auto& g : c.groups) {
      if (oracle.equivalent(samples.x, samples.ys[g.front()], samples.ys[i])) {
        g.push_back(i);
        placed = true;
        break;
      }
    }
    if (!placed) c.groups.push_back({i});
  }
  for (std::size_t g = 1; g < c.groups.size(); ++g)
    if (c.groups[g].size() > c.groups[c.largest].size()) c.largest = g;
  c.confidence = static_cast<double>(c.groups[c.largest].size()) / static_cast<double>(samples.ys.size());
  return c;
}

SpgResult generate_synthetic_preferences(std::span<const PolicySampleSet> samples, const rm::RewardModel& reward,
                                         const EquivalenceOracle& oracle, double gamma, std::uint64_t seed,
                                         WinnerRule rule) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("spg: gamma must lie in [0, 1]");
  SpgResult result;
  for (const auto& s : samples) {
    const ClusterSet c = cluster(s, oracle);
    SpgDecision d;
    d.instruction_id = s.x.id;
    d.confidence = c.confidence;
    d.group_sizes = c.sizes();
    const auto& top = c.largest_group();
    if (c.confidence < gamma) {
      d.reason = "below-threshold";
    } else if (top.size() == s.ys.size()) {
      d.reason = "no-complement";
    } else {
      Rng rng(derive_seed({seed, s.x.id}));
      std::size_t winner = top.front();
      if (rule == WinnerRule::RewardArgmax) {
        double best = rm::score(reward, s.x, s.ys[winner]);
        for (std::size_t k = 1; k < top.size(); ++k) {
          const double sc = rm::score(reward, s.x, s.ys[top[k]]);
          if (sc > best) {
            best = sc;
            winner = top[k];
          }
        }
      } else {
        winner = top[rng.below(top.size())];
      }
      std::vector<std::size_t> rest;
      for (std::size_t g = 0; g < c.groups.size(); ++g)
        if (g != c.largest) rest.insert(rest.end(), c.groups[g].begin(), c.groups[g].end());
      std::sort(rest.begin(), rest.end());
      const std::size_t loser = rest[rng.below(rest.size())];
      d.accepted = true;
      d.reason = "accepted";
      d.winner = winner;
      d.loser = loser;
      result.dataset.add({s.x, s.ys[winner], s.ys[loser], world::PairSource::SyntheticSpg});
    }
    result.report.push_back(std::move(d));
  }
  return result;
}

SpgResult ablation_select_all(std::span<const PolicySampleSet> samples, const rm::RewardModel& reward,
                              const EquivalenceOracle& oracle, std::uint64_t seed) {
  return generate_synthetic_preferences(samples, reward, oracle, 0.0, seed);
}

namespace {

template <typename Judge>
world::PreferenceDataset label_pairs(const seq::PolicyModel& policy, const world::InstructionSet& prompts,
                                     const seq::SamplingConfig& cfg, Judge judge) {
  world::PreferenceDataset out("D-hat");
  for (const auto& x : prompts.items) {
    const auto ys = seq::sample_set(policy, x, 2, cfg);
    if (ys[0].tokens == ys[1].tokens) continue;
    const double a = judge(x, ys[0]), b = judge(x, ys[1]);
    if (a == b) continue;
    const bool first = a > b;
    out.add({x, first ? ys[0] : ys[1], first ? ys[1] : ys[0], world::PairSource::AblationVariant});
  }
  return out;
}

}  // namespace

world::PreferenceDataset ablation_rlaif(const seq::PolicyModel& policy, const world::InstructionSet& prompts,
                                        const seq::SamplingConfig& cfg) {
  return label_pairs(policy, prompts, cfg, [&](const Instruction& x, const Response& y) {
    const auto lp = seq::sequence_logprob(policy, x, y);
    return lp.total / static_cast<double>(std::max<std::size_t>(1, lp.per_token.size()));
  });
}

world::PreferenceDataset ablation_reward_rank(const seq::PolicyModel& policy, const rm::RewardModel& reward,
                                              const world::InstructionSet& prompts, const seq::SamplingConfig& cfg) {
  return label_pairs(policy, prompts, cfg, [&](const Instruction& x, const Response& y) { return rm::score(reward, x, y); });
}

double true_preference_accuracy(const world::PreferenceDataset& data, const world::TrueRewardSpec& spec) {
  if (data.empty()) return 0.0;
  double right = 0.0;
  for (const auto& p : data.pairs()) {
    const double w = world::true_reward(p.x, p.chosen, spec), l = world::true_reward(p.x, p.rejected, spec);
    right += w > l ? 1.0 : (w == l ? 0.5 : 0.0);
  }
  return right / static_cast<double>(data.size());
}

void write_decisions(std::ostream& out, std::span<const SpgDecision> report) {
  out << "#rlp spg-decisions v1\n";
  for (const auto& d : report) {
    out << "id=" << d.instruction_id << "\tconfidence=" << std::setprecision(6) << d.confidence
        << "\tdecision=" << d.reason << "\tsizes=";
    for (std::size_t i = 0; i < d.group_sizes.size(); ++i) out << (i ? "," : "") << d.group_sizes[i];
    if (d.winner) out << "\twinner=" << *d.winner << "\tloser=" << *d.loser;
    out << '\n';
  }
}

}  // namespace rlp::spg
