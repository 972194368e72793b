#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rlp/pipeline/config.hpp"
#include "rlp/rewardmodel/train.hpp"
#include "rlp/rloptim/ppo.hpp"
#include "rlp/spg/spg.hpp"

// In-memory versions of the pipeline stages. Each stage draws its randomness
// from derive_seed({cfg.seed, <stage tag>}), so a stage's output depends only
// on the config and its inputs.
namespace rlp::pipe {

namespace stage_tag {
inline constexpr std::uint64_t kSplits = 0xd47a;
inline constexpr std::uint64_t kSftInit = 0x5f71;
inline constexpr std::uint64_t kDemos = 0xde70;
inline constexpr std::uint64_t kPreferences = 0x9f3e;
inline constexpr std::uint64_t kReward = 0x4e3d;
inline constexpr std::uint64_t kMibInit = 0x3b11;
inline constexpr std::uint64_t kPolicySamples = 0x5a3b;
inline constexpr std::uint64_t kSynthetic = 0x5e9a;
inline constexpr std::uint64_t kEval = 0xe7a1;
}  // namespace stage_tag

world::Splits make_splits(const ExperimentConfig& cfg);

// SFT on gold demonstrations of the sft split, from a fresh initialisation.
seq::PolicyModel train_sft_model(const ExperimentConfig& cfg, const world::InstructionSet& sft,
                                 seq::SftReport* report = nullptr);

world::Sampler policy_sampler(const seq::PolicyModel& policy, double temperature, int max_new_tokens);

// Annotated pairs D from SFT samples on the preference split.
world::CollectionResult collect_annotated(const ExperimentConfig& cfg, const seq::PolicyModel& sft,
                                          const world::InstructionSet& preference);

// Initial reward model r_phi from the SFT backbone with a zero scalar head.
rm::RewardModel train_initial_reward(const ExperimentConfig& cfg, const seq::PolicyModel& sft,
                                     const world::PreferenceDataset& annotated, rm::RewardTrainReport* report = nullptr,
                                     std::span<const world::PreferencePair> heldout = {});

// PPO from the SFT policy against `reward`. The baseline and every retrained
// reward model go through the same config and seed.
rl::TrainResult train_rl_policy(const ExperimentConfig& cfg, const seq::PolicyModel& sft, const rm::RewardModel& reward,
                                const world::InstructionSet& unlabeled, const std::string& role,
                                const std::function<void(const rl::IterationLog&)>& on_iteration = {});

// P: n samples per unlabeled instruction from the trained policy.
std::vector<spg::PolicySampleSet> sample_policy(const ExperimentConfig& cfg, const seq::PolicyModel& policy,
                                                const world::InstructionSet& unlabeled);

struct RetrainOutput {
  rm::RewardModel reward;
  std::optional<rm::MIBHead> head;
  std::optional<world::PreferenceDataset> synthetic;
  std::vector<spg::SpgDecision> decisions;
  rm::RewardTrainReport log;
};

// Reward-model retraining for every method that has one.
RetrainOutput retrain_reward(const ExperimentConfig& cfg, Method method, const seq::PolicyModel& sft,
                             const rm::RewardModel& initial, const seq::PolicyModel& policy,
                             const world::PreferenceDataset& annotated, std::span<const spg::PolicySampleSet> samples,
                             const world::InstructionSet& unlabeled);

// Argmax of reward over n samples; ties go to the earliest sample.
world::Response best_of_n_decode(const seq::PolicyModel& model, const rm::RewardModel& reward,
                                 const world::Instruction& x, int n, const seq::SamplingConfig& cfg);

// A response generator taking part in a win-rate comparison. `stream` keys its
// sampling seeds, so a player produces the same outputs whichever side it is on.
struct Player {
  std::string name;
  world::Sampler sample;
  std::uint64_t stream = 0;
};

Player policy_player(const std::string& name, const seq::PolicyModel& policy, double temperature, int max_new_tokens);
Player best_of_n_player(const std::string& name, const seq::PolicyModel& policy, const rm::RewardModel& reward, int n,
                        double temperature, int max_new_tokens);
// Always answers with the gold solution.
Player gold_player();

struct Tally {
  int wins = 0, ties = 0, losses = 0;
  int total() const { return wins + ties + losses; }
  double win_rate() const;  // percent, ties count half
};

struct WinRateReport {
  std::string method;
  std::string opponent;
  Tally overall;
  std::vector<std::pair<std::uint64_t, Tally>> per_seed;
  std::vector<std::pair<world::TaskFamily, Tally>> per_family;
  double mean = 0.0;    // mean of per-seed win rates
  double stddev = 0.0;  // sample std of per-seed win rates (0 for one seed)
};

// Each instruction: both players sample, identical outputs tie, otherwise the
// simulated annotator judges with a seed shared by every comparison.
WinRateReport evaluate_winrate(const Player& model, const Player& reference, const world::InstructionSet& eval,
                               const world::TrueRewardSpec& spec, std::span<const std::uint64_t> seeds);

std::vector<std::uint64_t> eval_seeds(const ExperimentConfig& cfg);

}  // namespace rlp::pipe
