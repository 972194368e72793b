#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "rlp/numerics/optimizer.hpp"
#include "rlp/rewardmodel/mib.hpp"
#include "rlp/rewardmodel/reward.hpp"
#include "rlp/spg/sample_set.hpp"

namespace rlp::rm {

// Two responses to the same instruction, taken from one sample set.
struct ViewPair {
  world::Instruction x;
  world::Response y1, y2;
};

// One pair per sample set; the two indices are distinct draws from the set
// (the responses themselves may be identical).
std::vector<ViewPair> draw_view_pairs(std::span<const spg::PolicySampleSet> samples, Rng& rng);

// Pooled features for a batch of view pairs, [B, width] each.
std::pair<num::Var, num::Var> view_features(num::Tape& tape, seq::Transformer& net, std::span<const ViewPair> views);

struct RewardTrainConfig {
  int epochs = 12;
  int batch_size = 32;
  num::AdamConfig adam{};
  double lambda = 0.0;
  RepresentationLoss representation = RepresentationLoss::Mib;
  int view_batch = 32;
  bool backbone_flow = true;  // representation gradients reach the backbone
  // Backbone learning rate relative to adam.learning_rate; 0 freezes it.
  double backbone_lr_scale = 1.0;
  std::uint64_t seed = 0;
};

struct RewardStepRecord {
  int epoch = 0;
  double pairwise = 0.0;
  double representation = 0.0;  // unweighted representation loss, 0 when lambda = 0
  double total = 0.0;           // pairwise + lambda * representation
  double mi = 0.0;
  double skl = 0.0;
};

struct RewardEpochRecord {
  int epoch = 0;
  double pairwise = 0.0;
  double representation = 0.0;
  double mi = 0.0;
  double skl = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> heldout_accuracy;
};

struct RewardTrainReport {
  std::vector<RewardStepRecord> steps;
  std::vector<RewardEpochRecord> epochs;
};

// Minimises the mean pairwise loss over the shuffled union of `annotated`
// and `synthetic`, plus lambda times the representation loss on a batch of
// view pairs from `samples` at every step. Throws ConfigError when lambda > 0
// without a head or samples, DivergenceError on a non-finite loss.
RewardTrainReport train_reward(RewardModel& model, const world::PreferenceDataset& annotated,
                               const world::PreferenceDataset* synthetic, MIBHead* head,
                               std::span<const spg::PolicySampleSet> samples, const RewardTrainConfig& cfg,
                               std::span<const world::PreferencePair> heldout = {});

// Reward checkpoints: the policy format plus scalar-head sections and, when a
// head is given, the MIB head sections.
void save_reward(const RewardModel& model, const MIBHead* head, const std::filesystem::path& path);
RewardModel load_reward(const std::filesystem::path& path, MIBHead* head = nullptr);

}  // namespace rlp::rm
