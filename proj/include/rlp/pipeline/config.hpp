#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "rlp/rewardmodel/mib.hpp"
#include "rlp/rewardmodel/train.hpp"
#include "rlp/rloptim/ppo.hpp"
#include "rlp/seqmodel/policy.hpp"
#include "rlp/taskworld/taskworld.hpp"

namespace rlp::pipe {

// Method selector. The rlp-* variants after rlp-spg are the ablations.
enum class Method {
  Sft,
  BestOfN,
  Ppo,
  RlpUml,
  RlpSpg,
  UmlInfoMax,
  UmlMvi,
  UmlCl,
  SpgRlaif,
  SpgReward,
  SpgSelectAll,
};

const char* method_name(Method m);
Method parse_method(const std::string& name);
bool retrains_reward(Method m);  // methods that retrain the reward model and rerun PPO
bool uses_view_loss(Method m);   // UML family
bool uses_synthetic_pairs(Method m);
std::vector<Method> main_methods();        // SFT, Best-of-n, PPO, RLP-UML, RLP-SPG
std::vector<Method> representation_ablations();  // MIB (RLP-UML), InfoMax, MVI, CL
std::vector<Method> synthesis_ablations();       // RLAIF, Reward, Select-All, RLP-SPG

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "runs/default";
  std::string method = "rlp-spg";

  world::SplitCounts counts{};
  world::WorldConfig world{.demo_filler_rate = 0.2};
  world::TrueRewardSpec annotator{};

  seq::TransformerConfig arch{};
  int sft_epochs = 40;
  int sft_batch = 16;
  double sft_lr = 2e-3;

  int rm_epochs = 12;
  int rm_batch = 32;
  double rm_lr = 5e-4;
  double rm_backbone_lr_scale = 1.0;
  bool rm_normalize = true;  // standardise scores on D before PPO

  int ppo_iterations = 40;
  int ppo_rollouts = 64;
  int ppo_minibatch = 16;
  int ppo_epochs = 4;
  double ppo_beta = 0.05;
  double ppo_clip = 0.2;
  double ppo_lr = 3e-4;
  double ppo_value_lr = 1e-2;
  double ppo_kl_stop = 0.02;
  double ppo_gae_lambda = 0.95;
  double ppo_value_coef = 0.5;

  int rlp_n = 10;
  double rlp_gamma = 0.5;
  double rlp_lambda = 0.5;
  int rlp_latent = 16;
  int rlp_hidden = 64;
  int rlp_view_batch = 32;
  bool rlp_backbone_flow = true;
  bool rlp_warm_start = false;
  std::string rlp_winner = "argmax";  // argmax | uniform

  double train_temperature = 1.0;
  double eval_temperature = 0.7;
  int eval_seeds = 8;
  int best_of_n = 16;

  void validate() const;

  // Flat `key = value` text, '#' comments. Unknown keys, malformed values
  // and out-of-range settings raise ConfigError.
  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);
  // Every key with its current value, in a fixed order.
  std::vector<std::pair<std::string, std::string>> entries() const;
  std::string to_text() const;
  // Applies a `key=value` override and revalidates.
  void set(const std::string& key, const std::string& value);

  seq::SftConfig sft_config() const;
  rm::RewardTrainConfig reward_config(std::uint64_t stage_seed) const;
  rl::PPOConfig ppo_config() const;
  rm::MibConfig mib_config() const;
};

// Keys whose values differ between two configs.
std::vector<std::string> config_diff(const ExperimentConfig& a, const ExperimentConfig& b);

}  // namespace rlp::pipe
