#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rlp/rewardmodel/reward.hpp"
#include "rlp/seqmodel/policy.hpp"
#include "rlp/spg/sample_set.hpp"

namespace rlp::spg {

// One sample set per instruction, n draws at cfg's temperature. Draw i for
// instruction x uses derive_seed({cfg.seed, x.id, i}).
std::vector<PolicySampleSet> build_policy_samples(const seq::PolicyModel& policy, const world::InstructionSet& prompts,
                                                  int n, const seq::SamplingConfig& cfg);

// The oracle could not reach a verdict (as opposed to "not equivalent").
class OracleFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EquivalenceOracle {
 public:
  virtual ~EquivalenceOracle() = default;
  virtual std::string name() const = 0;
  // Does a entail b in the context of x? Throws OracleFailure when no verdict.
  virtual bool entails(const world::Instruction& x, const world::Response& a, const world::Response& b) const = 0;

  bool equivalent(const world::Instruction& x, const world::Response& a, const world::Response& b) const {
    return entails(x, a, b) && entails(x, b, a);
  }
};

// Equal canonical forms (content without fillers).
class ExactCanonicalOracle final : public EquivalenceOracle {
 public:
  std::string name() const override { return "exact-canonical"; }
  bool entails(const world::Instruction&, const world::Response& a, const world::Response& b) const override {
    return a.canonical() == b.canonical();
  }
};

// Wraps an external classifier; std::nullopt from the classifier is a failure.
class ClassifierOracle final : public EquivalenceOracle {
 public:
  using Classifier =
      std::function<std::optional<bool>(const world::Instruction&, const world::Response&, const world::Response&)>;
  ClassifierOracle(std::string name, Classifier fn) : name_(std::move(name)), fn_(std::move(fn)) {}

  std::string name() const override { return name_; }
  bool entails(const world::Instruction& x, const world::Response& a, const world::Response& b) const override;

 private:
  std::string name_;
  Classifier fn_;
};

struct ClusterSet {
  std::vector<std::vector<std::size_t>> groups;  // indices into ys; groups[g][0] is the representative
  std::size_t largest = 0;                       // index into groups
  double confidence = 0.0;                       // |largest group| / n

  std::vector<std::size_t> sizes() const;
  const std::vector<std::size_t>& largest_group() const { return groups.at(largest); }
};

// Greedy agglomeration against group representatives, in sample order.
// Largest-group ties go to the group whose representative comes first.
ClusterSet cluster(const PolicySampleSet& samples, const EquivalenceOracle& oracle);

enum class WinnerRule { RewardArgmax, Uniform };

struct SpgDecision {
  std::uint64_t instruction_id = 0;
  double confidence = 0.0;
  bool accepted = false;
  std::string reason;  // accepted | below-threshold | no-complement
  std::vector<std::size_t> group_sizes;
  std::optional<std::size_t> winner, loser;  // indices into ys
};

struct SpgResult {
  world::PreferenceDataset dataset{"D-hat"};
  std::vector<SpgDecision> report;
};

// Accepts a set when confidence >= gamma and the largest group leaves a
// complement; the winner is the largest-group member with the highest reward
// score (ties by index) or a uniform draw, the loser a uniform draw from the
// complement. Random draws use derive_seed({seed, x.id}).
SpgResult generate_synthetic_preferences(std::span<const PolicySampleSet> samples, const rm::RewardModel& reward,
                                         const EquivalenceOracle& oracle, double gamma, std::uint64_t seed,
                                         WinnerRule rule = WinnerRule::RewardArgmax);

// gamma = 0.
SpgResult ablation_select_all(std::span<const PolicySampleSet> samples, const rm::RewardModel& reward,
                              const EquivalenceOracle& oracle, std::uint64_t seed);

// Two samples per instruction; the one with the higher length-normalised
// policy log-probability wins. Identical pairs and exact ties are skipped.
world::PreferenceDataset ablation_rlaif(const seq::PolicyModel& policy, const world::InstructionSet& prompts,
                                        const seq::SamplingConfig& cfg);

// Two samples per instruction labelled by reward score; ties are skipped.
world::PreferenceDataset ablation_reward_rank(const seq::PolicyModel& policy, const rm::RewardModel& reward,
                                              const world::InstructionSet& prompts, const seq::SamplingConfig& cfg);

// Fraction of pairs whose chosen response has the higher noiseless r*;
// r* ties count one half. Empty data gives 0.
double true_preference_accuracy(const world::PreferenceDataset& data, const world::TrueRewardSpec& spec);

// One tab-separated line per instruction: id, confidence, decision, sizes.
void write_decisions(std::ostream& out, std::span<const SpgDecision> report);

}  // namespace rlp::spg
