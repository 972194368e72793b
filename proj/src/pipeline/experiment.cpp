#include "rlp/pipeline/experiment.hpp"

#include <cmath>
#include <functional>
#include <map>

#include "rlp/common/error.hpp"
#include "rlp/common/rng.hpp"

namespace rlp::pipe {

using world::Instruction;
using world::Response;

world::Splits make_splits(const ExperimentConfig& cfg) {
  return world::generate_splits(derive_seed({cfg.seed, stage_tag::kSplits}), cfg.counts, cfg.world);
}

seq::PolicyModel train_sft_model(const ExperimentConfig& cfg, const world::InstructionSet& sft, seq::SftReport* report) {
  seq::PolicyModel model(cfg.arch, "sft");
  model.net.init(derive_seed({cfg.seed, stage_tag::kSftInit}));
  std::vector<seq::Demo> demos;
  for (const auto& x : sft.items)
    demos.emplace_back(x, world::demonstration(x, cfg.world, derive_seed({cfg.seed, stage_tag::kDemos, x.id})));
  auto r = seq::sft_train(model, demos, cfg.sft_config());
  if (report) *report = std::move(r);
  return model;
}

world::Sampler policy_sampler(const seq::PolicyModel& policy, double temperature, int max_new_tokens) {
  return [&policy, temperature, max_new_tokens](const Instruction& x, std::uint64_t seed) {
    seq::SamplingConfig sc;
    sc.temperature = temperature;
    sc.max_new_tokens = max_new_tokens;
    sc.seed = seed;
    return seq::sample(policy, x, sc);
  };
}

world::CollectionResult collect_annotated(const ExperimentConfig& cfg, const seq::PolicyModel& sft,
                                          const world::InstructionSet& preference) {
  return world::collect_preferences(policy_sampler(sft, cfg.train_temperature, cfg.world.max_response), preference,
                                    cfg.annotator, derive_seed({cfg.seed, stage_tag::kPreferences}));
}

rm::RewardModel train_initial_reward(const ExperimentConfig& cfg, const seq::PolicyModel& sft,
                                     const world::PreferenceDataset& annotated, rm::RewardTrainReport* report,
                                     std::span<const world::PreferencePair> heldout) {
  rm::RewardModel reward = rm::RewardModel::from_policy(sft, "initial");
  auto r = rm::train_reward(reward, annotated, nullptr, nullptr, {}, cfg.reward_config(derive_seed({cfg.seed, stage_tag::kReward})),
                            heldout);
  if (report) *report = std::move(r);
  if (cfg.rm_normalize) rm::normalize_scores(reward, annotated.pairs());
  return reward;
}

rl::TrainResult train_rl_policy(const ExperimentConfig& cfg, const seq::PolicyModel& sft, const rm::RewardModel& reward,
                                const world::InstructionSet& unlabeled, const std::string& role,
                                const std::function<void(const rl::IterationLog&)>& on_iteration) {
  auto result = rl::train_policy(sft, reward, unlabeled.items, cfg.ppo_config(), on_iteration);
  result.policy.role = role;
  return result;
}

std::vector<spg::PolicySampleSet> sample_policy(const ExperimentConfig& cfg, const seq::PolicyModel& policy,
                                                const world::InstructionSet& unlabeled) {
  seq::SamplingConfig sc;
  sc.temperature = cfg.train_temperature;
  sc.max_new_tokens = cfg.world.max_response;
  sc.seed = derive_seed({cfg.seed, stage_tag::kPolicySamples});
  return spg::build_policy_samples(policy, unlabeled, cfg.rlp_n, sc);
}

RetrainOutput retrain_reward(const ExperimentConfig& cfg, Method method, const seq::PolicyModel& sft,
                             const rm::RewardModel& initial, const seq::PolicyModel& policy,
                             const world::PreferenceDataset& annotated, std::span<const spg::PolicySampleSet> samples,
                             const world::InstructionSet& unlabeled) {
  if (!retrains_reward(method)) throw ConfigError(std::string("method ") + method_name(method) + " does not retrain the reward model");
  RetrainOutput out{cfg.rlp_warm_start ? initial : rm::RewardModel::from_policy(sft), {}, {}, {}, {}};
  out.reward.role = "retrained";
  rm::RewardTrainConfig rc = cfg.reward_config(derive_seed({cfg.seed, stage_tag::kReward}));
  const std::uint64_t syn_seed = derive_seed({cfg.seed, stage_tag::kSynthetic});
  const spg::ExactCanonicalOracle oracle;
  seq::SamplingConfig sc;
  sc.temperature = cfg.train_temperature;
  sc.max_new_tokens = cfg.world.max_response;
  sc.seed = syn_seed;

  switch (method) {
    case Method::RlpUml:
    case Method::UmlInfoMax:
    case Method::UmlMvi:
    case Method::UmlCl: {
      rc.lambda = cfg.rlp_lambda;
      rc.representation = method == Method::RlpUml       ? rm::RepresentationLoss::Mib
                          : method == Method::UmlInfoMax ? rm::RepresentationLoss::InfoMax
                          : method == Method::UmlMvi     ? rm::RepresentationLoss::Mvi
                                                         : rm::RepresentationLoss::Cl;
      out.head.emplace(cfg.mib_config());
      out.head->init(derive_seed({cfg.seed, stage_tag::kMibInit}));
      break;
    }
    case Method::RlpSpg:
    case Method::SpgSelectAll: {
      const double gamma = method == Method::RlpSpg ? cfg.rlp_gamma : 0.0;
      const auto rule = cfg.rlp_winner == "uniform" ? spg::WinnerRule::Uniform : spg::WinnerRule::RewardArgmax;
      auto syn = spg::generate_synthetic_preferences(samples, initial, oracle, gamma, syn_seed, rule);
      out.synthetic = std::move(syn.dataset);
      out.decisions = std::move(syn.report);
      break;
    }
    case Method::SpgRlaif:
      out.synthetic = spg::ablation_rlaif(policy, unlabeled, sc);
      break;
    case Method::SpgReward:
      out.synthetic = spg::ablation_reward_rank(policy, initial, unlabeled, sc);
      break;
    default:
      break;
  }
  out.log = rm::train_reward(out.reward, annotated, out.synthetic ? &*out.synthetic : nullptr,
                             out.head ? &*out.head : nullptr, samples, rc);
  if (cfg.rm_normalize) rm::normalize_scores(out.reward, annotated.pairs());
  return out;
}

Response best_of_n_decode(const seq::PolicyModel& model, const rm::RewardModel& reward, const Instruction& x, int n,
                          const seq::SamplingConfig& cfg) {
  if (n < 1) throw std::invalid_argument("best_of_n_decode: n must be >= 1");
  if (n == 1) return seq::sample(model, x, cfg);
  const auto ys = seq::sample_set(model, x, n, cfg);
  std::size_t best = 0;
  double best_score = rm::score(reward, x, ys[0]);
  for (std::size_t i = 1; i < ys.size(); ++i) {
    const double s = rm::score(reward, x, ys[i]);
    if (s > best_score) {
      best_score = s;
      best = i;
    }
  }
  return ys[best];
}

namespace {
std::uint64_t name_stream(const std::string& name) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : name) h = (h ^ c) * 0x100000001b3ull;
  return mix64(h);
}
}  // namespace

Player policy_player(const std::string& name, const seq::PolicyModel& policy, double temperature, int max_new_tokens) {
  return {name, policy_sampler(policy, temperature, max_new_tokens), name_stream(name)};
}

Player best_of_n_player(const std::string& name, const seq::PolicyModel& policy, const rm::RewardModel& reward, int n,
                        double temperature, int max_new_tokens) {
  auto fn = [&policy, &reward, n, temperature, max_new_tokens](const Instruction& x, std::uint64_t seed) {
    seq::SamplingConfig sc;
    sc.temperature = temperature;
    sc.max_new_tokens = max_new_tokens;
    sc.seed = seed;
    return best_of_n_decode(policy, reward, x, n, sc);
  };
  return {name, fn, name_stream(name)};
}

Player gold_player() {
  return {"gold", [](const Instruction& x, std::uint64_t) { return world::gold_answer(x); }, name_stream("gold")};
}

double Tally::win_rate() const {
  const int n = total();
  return n == 0 ? 0.0 : 100.0 * (wins + 0.5 * ties) / n;
}

WinRateReport evaluate_winrate(const Player& model, const Player& reference, const world::InstructionSet& eval,
                               const world::TrueRewardSpec& spec, std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw std::invalid_argument("evaluate_winrate: no seeds");
  WinRateReport r;
  r.method = model.name;
  r.opponent = reference.name;
  std::map<world::TaskFamily, Tally> families;
  for (std::uint64_t s : seeds) {
    Tally t;
    for (const auto& x : eval.items) {
      const Response a = model.sample(x, derive_seed({s, x.id, model.stream}));
      const Response b = reference.sample(x, derive_seed({s, x.id, reference.stream}));
      Tally& fam = families[x.family];
      if (a.tokens == b.tokens) {
        ++t.ties;
        ++fam.ties;
        continue;
      }
      const auto judged = world::annotate(x, a, b, spec, derive_seed({s, x.id, 0x1d6e}));
      const bool won = judged.chosen.tokens == a.tokens;
      (won ? t.wins : t.losses)++;
      (won ? fam.wins : fam.losses)++;
    }
    r.overall.wins += t.wins;
    r.overall.ties += t.ties;
    r.overall.losses += t.losses;
    r.per_seed.emplace_back(s, t);
  }
  for (const auto& [f, t] : families) r.per_family.emplace_back(f, t);
  for (const auto& [s, t] : r.per_seed) r.mean += t.win_rate() / static_cast<double>(r.per_seed.size());
  if (r.per_seed.size() > 1) {
    double ss = 0.0;
    for (const auto& [s, t] : r.per_seed) ss += (t.win_rate() - r.mean) * (t.win_rate() - r.mean);
    r.stddev = std::sqrt(ss / static_cast<double>(r.per_seed.size() - 1));
  }
  return r;
}

std::vector<std::uint64_t> eval_seeds(const ExperimentConfig& cfg) {
  std::vector<std::uint64_t> out;
  for (int i = 0; i < cfg.eval_seeds; ++i) out.push_back(derive_seed({cfg.seed, stage_tag::kEval, static_cast<std::uint64_t>(i)}));
  return out;
}

}  // namespace rlp::pipe
