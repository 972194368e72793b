#include "rlp/pipeline/config.hpp"

#include <boost/program_options.hpp>
#include <charconv>
#include <fstream>
#include <sstream>

#include "rlp/common/error.hpp"
#include "rlp/common/rng.hpp"

namespace rlp::pipe {

namespace po = boost::program_options;

namespace {

constexpr std::pair<Method, const char*> kMethods[] = {
    {Method::Sft, "sft"},
    {Method::BestOfN, "best-of-n"},
    {Method::Ppo, "ppo"},
    {Method::RlpUml, "rlp-uml"},
    {Method::RlpSpg, "rlp-spg"},
    {Method::UmlInfoMax, "rlp-uml-infomax"},
    {Method::UmlMvi, "rlp-uml-mvi"},
    {Method::UmlCl, "rlp-uml-cl"},
    {Method::SpgRlaif, "rlp-rlaif"},
    {Method::SpgReward, "rlp-reward"},
    {Method::SpgSelectAll, "rlp-select-all"},
};

// One table drives parsing, printing and diffing.
template <typename Cfg, typename F>
void for_each_field(Cfg& c, F&& f) {
  f("seed", c.seed);
  f("out_dir", c.out_dir);
  f("method", c.method);
  f("data.sft", c.counts.sft);
  f("data.preference", c.counts.preference);
  f("data.unlabeled", c.counts.unlabeled);
  f("data.eval", c.counts.eval);
  f("world.alphabet", c.world.alphabet);
  f("world.min_args", c.world.min_args);
  f("world.max_args", c.world.max_args);
  f("world.max_repeat_args", c.world.max_repeat_args);
  f("world.max_response", c.world.max_response);
  f("world.demo_filler_rate", c.world.demo_filler_rate);
  f("annotator.tau", c.annotator.temperature);
  f("annotator.verbosity_bias", c.annotator.verbosity_bias);
  f("reward.correctness", c.annotator.correctness_weight);
  f("reward.brevity", c.annotator.brevity_weight);
  f("reward.format", c.annotator.format_weight);
  f("model.width", c.arch.width);
  f("model.heads", c.arch.heads);
  f("model.blocks", c.arch.blocks);
  f("model.mlp_hidden", c.arch.mlp_hidden);
  f("sft.epochs", c.sft_epochs);
  f("sft.batch", c.sft_batch);
  f("sft.lr", c.sft_lr);
  f("rm.epochs", c.rm_epochs);
  f("rm.batch", c.rm_batch);
  f("rm.lr", c.rm_lr);
  f("rm.backbone_lr_scale", c.rm_backbone_lr_scale);
  f("rm.normalize", c.rm_normalize);
  f("ppo.iterations", c.ppo_iterations);
  f("ppo.rollouts", c.ppo_rollouts);
  f("ppo.minibatch", c.ppo_minibatch);
  f("ppo.epochs", c.ppo_epochs);
  f("ppo.beta", c.ppo_beta);
  f("ppo.clip", c.ppo_clip);
  f("ppo.lr", c.ppo_lr);
  f("ppo.value_lr", c.ppo_value_lr);
  f("ppo.kl_stop", c.ppo_kl_stop);
  f("ppo.gae_lambda", c.ppo_gae_lambda);
  f("ppo.value_coef", c.ppo_value_coef);
  f("rlp.n", c.rlp_n);
  f("rlp.gamma", c.rlp_gamma);
  f("rlp.lambda", c.rlp_lambda);
  f("rlp.latent", c.rlp_latent);
  f("rlp.hidden", c.rlp_hidden);
  f("rlp.view_batch", c.rlp_view_batch);
  f("rlp.backbone_flow", c.rlp_backbone_flow);
  f("rlp.warm_start", c.rlp_warm_start);
  f("rlp.winner", c.rlp_winner);
  f("sampling.train_temperature", c.train_temperature);
  f("sampling.eval_temperature", c.eval_temperature);
  f("eval.seeds", c.eval_seeds);
  f("eval.best_of_n", c.best_of_n);
}

template <typename T>
std::string format_value(const T& v) {
  if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
  }
}

void parse_into(ExperimentConfig& cfg, std::istream& in) {
  po::options_description desc;
  for_each_field(cfg, [&](const char* key, auto& ref) {
    using T = std::remove_reference_t<decltype(ref)>;
    desc.add_options()(key, po::value<T>(&ref));
  });
  try {
    po::variables_map vm;
    po::store(po::parse_config_file(in, desc, false), vm);
    po::notify(vm);
  } catch (const po::error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

}  // namespace

const char* method_name(Method m) {
  for (const auto& [k, name] : kMethods)
    if (k == m) return name;
  return "?";
}

Method parse_method(const std::string& name) {
  for (const auto& [k, n] : kMethods)
    if (name == n) return k;
  throw ConfigError("unknown method '" + name + "'");
}

bool retrains_reward(Method m) { return m != Method::Sft && m != Method::BestOfN && m != Method::Ppo; }
bool uses_view_loss(Method m) {
  return m == Method::RlpUml || m == Method::UmlInfoMax || m == Method::UmlMvi || m == Method::UmlCl;
}
bool uses_synthetic_pairs(Method m) {
  return m == Method::RlpSpg || m == Method::SpgRlaif || m == Method::SpgReward || m == Method::SpgSelectAll;
}
std::vector<Method> main_methods() { return {Method::Sft, Method::BestOfN, Method::Ppo, Method::RlpUml, Method::RlpSpg}; }
std::vector<Method> representation_ablations() {
  return {Method::RlpUml, Method::UmlInfoMax, Method::UmlMvi, Method::UmlCl};
}
std::vector<Method> synthesis_ablations() {
  return {Method::SpgRlaif, Method::SpgReward, Method::SpgSelectAll, Method::RlpSpg};
}

void ExperimentConfig::validate() const {
  parse_method(method);
  if (out_dir.empty()) throw ConfigError("config: out_dir is empty");
  arch.validate();
  annotator.validate();
  if (!(world.demo_filler_rate >= 0.0 && world.demo_filler_rate <= 1.0))
    throw ConfigError("config: world.demo_filler_rate must lie in [0, 1]");
  if (arch.context < world.context()) throw ConfigError("config: model context shorter than prompt + response");
  if (sft_epochs < 0 || sft_batch < 1 || rm_epochs < 0 || rm_batch < 1) throw ConfigError("config: bad SFT/RM schedule");
  if (!(sft_lr > 0) || !(rm_lr > 0) || !(ppo_lr > 0) || !(ppo_value_lr > 0)) throw ConfigError("config: learning rates must be > 0");
  ppo_config().validate();
  if (ppo_clip >= 1.0) throw ConfigError("config: ppo.clip must lie in (0, 1)");
  if (rlp_n < 2) throw ConfigError("config: rlp.n must be >= 2");
  if (rlp_gamma < 0.0 || rlp_gamma > 1.0) throw ConfigError("config: rlp.gamma must lie in [0, 1]");
  if (rlp_lambda < 0.0) throw ConfigError("config: rlp.lambda must be >= 0");
  if (rlp_view_batch < 2) throw ConfigError("config: rlp.view_batch must be >= 2");
  if (rlp_winner != "argmax" && rlp_winner != "uniform") throw ConfigError("config: rlp.winner must be argmax or uniform");
  if (!(train_temperature > 0) || !(eval_temperature > 0)) throw ConfigError("config: temperatures must be > 0");
  if (eval_seeds < 1 || best_of_n < 1) throw ConfigError("config: eval.seeds and eval.best_of_n must be >= 1");
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  parse_into(cfg, in);
  cfg.arch.context = cfg.world.context();
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::vector<std::pair<std::string, std::string>> ExperimentConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  for_each_field(*this, [&](const char* key, const auto& ref) { out.emplace_back(key, format_value(ref)); });
  return out;
}

std::string ExperimentConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : entries()) out += k + " = " + v + "\n";
  return out;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  std::istringstream in(key + " = " + value + "\n");
  parse_into(*this, in);
  arch.context = world.context();
  validate();
}

seq::SftConfig ExperimentConfig::sft_config() const {
  seq::SftConfig c;
  c.epochs = sft_epochs;
  c.batch_size = sft_batch;
  c.adam.learning_rate = sft_lr;
  c.seed = derive_seed({seed, 0x5f7});
  return c;
}

rm::RewardTrainConfig ExperimentConfig::reward_config(std::uint64_t stage_seed) const {
  rm::RewardTrainConfig c;
  c.epochs = rm_epochs;
  c.batch_size = rm_batch;
  c.adam.learning_rate = rm_lr;
  c.backbone_lr_scale = rm_backbone_lr_scale;
  c.view_batch = rlp_view_batch;
  c.backbone_flow = rlp_backbone_flow;
  c.seed = stage_seed;
  return c;
}

rl::PPOConfig ExperimentConfig::ppo_config() const {
  rl::PPOConfig c;
  c.clip = ppo_clip;
  c.beta = ppo_beta;
  c.epochs = ppo_epochs;
  c.gae_lambda = ppo_gae_lambda;
  c.rollouts = ppo_rollouts;
  c.minibatch = ppo_minibatch;
  c.iterations = ppo_iterations;
  c.value_coef = ppo_value_coef;
  c.kl_stop = ppo_kl_stop;
  c.temperature = train_temperature;
  c.max_new_tokens = world.max_response;
  c.policy_adam.learning_rate = ppo_lr;
  c.value_adam.learning_rate = ppo_value_lr;
  c.seed = derive_seed({seed, 0x990});
  return c;
}

rm::MibConfig ExperimentConfig::mib_config() const {
  rm::MibConfig c;
  c.feature_dim = arch.width;
  c.latent = rlp_latent;
  c.hidden = rlp_hidden;
  c.critic_hidden = rlp_hidden;
  return c;
}

std::vector<std::string> config_diff(const ExperimentConfig& a, const ExperimentConfig& b) {
  const auto ea = a.entries(), eb = b.entries();
  std::vector<std::string> out;
  for (std::size_t i = 0; i < ea.size(); ++i)
    if (ea[i].second != eb[i].second) out.push_back(ea[i].first);
  return out;
}

}  // namespace rlp::pipe
