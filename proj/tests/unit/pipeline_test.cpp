#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "rlp/common/error.hpp"
#include "rlp/common/rng.hpp"
#include "rlp/pipeline/stages.hpp"

using namespace rlp;
using namespace rlp::pipe;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny(const std::string& out = "unused") {
  ExperimentConfig c;
  c.counts = {24, 24, 24, 12};
  c.arch.width = 16;
  c.arch.heads = 2;
  c.arch.blocks = 1;
  c.arch.mlp_hidden = 16;
  c.sft_epochs = 3;
  c.rm_epochs = 1;
  c.ppo_iterations = 1;
  c.ppo_rollouts = 8;
  c.ppo_minibatch = 4;
  c.rlp_n = 4;
  c.rlp_hidden = 16;
  c.rlp_latent = 4;
  c.rlp_view_batch = 8;
  c.eval_seeds = 2;
  c.best_of_n = 3;
  c.out_dir = out;
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("rlp_pipeline_test_" + name);
  fs::remove_all(p);
  return p;
}

seq::PolicyModel random_policy(std::uint64_t seed) {
  seq::PolicyModel m(tiny().arch);
  m.net.init(seed);
  return m;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config: text round trip, overrides, diff, rejection of bad input") {
  ExperimentConfig c = tiny();
  c.rlp_gamma = 0.25;
  c.ppo_beta = 0.1;
  c.world.demo_filler_rate = 0.35;
  const ExperimentConfig back = ExperimentConfig::parse(c.to_text());
  CHECK(config_diff(c, back).empty());
  CHECK(back.to_text() == c.to_text());

  ExperimentConfig d = c;
  d.set("ppo.beta", "0.2");
  d.set("rlp.warm_start", "true");
  const auto diff = config_diff(c, d);
  CHECK(diff == std::vector<std::string>{"ppo.beta", "rlp.warm_start"});

  const ExperimentConfig defaults;
  CHECK(defaults.rlp_n == 10);
  CHECK(defaults.rlp_gamma == 0.5);
  CHECK(defaults.rlp_lambda == 0.5);
  CHECK(defaults.train_temperature == 1.0);
  CHECK(defaults.eval_temperature == 0.7);
  CHECK(defaults.ppo_beta == 0.05);
  CHECK(defaults.arch.context == defaults.world.context());

  CHECK_THROWS_AS(ExperimentConfig::parse("nonsense.key = 1\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("ppo.beta = abc\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("rlp.gamma = 1.5\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("annotator.tau = 0\n"), ConfigError);
  CHECK_THROWS_AS(d.set("method", "not-a-method"), ConfigError);
  CHECK(ExperimentConfig::parse("# comment\nseed = 7\n").seed == 7);
}

TEST_CASE("methods: names round trip and groupings") {
  for (Method m : {Method::Sft, Method::BestOfN, Method::Ppo, Method::RlpUml, Method::RlpSpg, Method::UmlInfoMax,
                   Method::UmlMvi, Method::UmlCl, Method::SpgRlaif, Method::SpgReward, Method::SpgSelectAll})
    CHECK(parse_method(method_name(m)) == m);
  CHECK_THROWS_AS(parse_method("dpo"), ConfigError);
  CHECK(main_methods() == std::vector<Method>{Method::Sft, Method::BestOfN, Method::Ppo, Method::RlpUml, Method::RlpSpg});
  CHECK_FALSE(retrains_reward(Method::Ppo));
  CHECK(retrains_reward(Method::UmlCl));
  CHECK(uses_view_loss(Method::RlpUml));
  CHECK_FALSE(uses_view_loss(Method::RlpSpg));
  CHECK(uses_synthetic_pairs(Method::SpgSelectAll));
}

TEST_CASE("sign test and tallies") {
  CHECK(sign_test_p(5, 5) == doctest::Approx(1.0 / 32));
  CHECK(sign_test_p(4, 5) == doctest::Approx(6.0 / 32));
  CHECK(sign_test_p(0, 5) == doctest::Approx(1.0));
  CHECK_THROWS_AS(sign_test_p(6, 5), std::invalid_argument);
  Tally t;
  t.wins = 3;
  t.ties = 2;
  t.losses = 5;
  CHECK(t.win_rate() == doctest::Approx(40.0));
  CHECK(Tally{}.win_rate() == 0.0);
}

TEST_CASE("win-rate: self play ties, swapped sides sum to 100, gold beats noise") {
  const auto splits = world::generate_splits(3, {4, 4, 4, 30});
  const auto a = random_policy(1), b = random_policy(2);
  const Player pa = policy_player("a", a, 0.7, 10), pb = policy_player("b", b, 0.7, 10);
  const std::vector<std::uint64_t> seeds{11, 12, 13};
  const world::TrueRewardSpec spec;

  const auto self = evaluate_winrate(pa, pa, splits.eval, spec, seeds);
  CHECK(self.overall.ties == static_cast<int>(splits.eval.size() * seeds.size()));
  CHECK(self.mean == doctest::Approx(50.0));
  CHECK(self.stddev == 0.0);

  const auto ab = evaluate_winrate(pa, pb, splits.eval, spec, seeds);
  const auto ba = evaluate_winrate(pb, pa, splits.eval, spec, seeds);
  CHECK(ab.overall.win_rate() + ba.overall.win_rate() == doctest::Approx(100.0));
  CHECK(ab.overall.wins == ba.overall.losses);
  CHECK(ab.per_seed.size() == seeds.size());
  int fam_total = 0;
  for (const auto& [f, t] : ab.per_family) fam_total += t.total();
  CHECK(fam_total == ab.overall.total());

  const auto gold = evaluate_winrate(gold_player(), pa, splits.eval, spec, seeds);
  CHECK(gold.mean > 75.0);
  CHECK_THROWS_AS(evaluate_winrate(pa, pb, splits.eval, spec, {}), std::invalid_argument);
}

TEST_CASE("best-of-n: n=1 is plain sampling, larger n picks the top score") {
  const auto splits = world::generate_splits(4, {4, 4, 4, 6});
  const auto policy = random_policy(3);
  rm::RewardModel reward = rm::RewardModel::from_policy(policy);
  Rng rng(5);
  for (double& v : reward.head_weight.values()) v = rng.normal();
  seq::SamplingConfig sc;
  sc.seed = 99;
  for (const auto& x : splits.eval.items) {
    CHECK(best_of_n_decode(policy, reward, x, 1, sc).tokens == seq::sample(policy, x, sc).tokens);
    const auto best = best_of_n_decode(policy, reward, x, 6, sc);
    for (const auto& y : seq::sample_set(policy, x, 6, sc)) CHECK(rm::score(reward, x, best) >= rm::score(reward, x, y));
  }
  CHECK_THROWS_AS(best_of_n_decode(policy, reward, splits.eval.items[0], 0, sc), std::invalid_argument);
}

TEST_CASE("report: fixed row order, sections only when present, empty input rejected") {
  CHECK_THROWS_AS(emit_report({}), std::invalid_argument);
  std::vector<MethodSummary> rows;
  for (Method m : {Method::RlpSpg, Method::Ppo, Method::Sft}) {
    MethodSummary s;
    s.method = m;
    s.per_seed = {50.0, 52.0};
    s.mean = 51.0;
    s.stddev = 1.4;
    s.per_family = {{world::TaskFamily::Copy, 51.0}};
    rows.push_back(s);
  }
  const std::string text = emit_report(rows);
  CHECK(text.find("sft") < text.find("ppo"));
  CHECK(text.find("ppo") < text.find("rlp-spg"));
  CHECK(text.find("representation loss") == std::string::npos);
  CHECK(text.find("synthetic preference generation") != std::string::npos);
}

TEST_CASE("summarize: per-seed means and a missing method") {
  SeedRun a, b;
  a.seed = 1;
  b.seed = 2;
  MethodResult r;
  r.method = Method::Ppo;
  r.winrate.mean = 40.0;
  a.results.push_back(r);
  r.winrate.mean = 60.0;
  r.synthetic_accuracy = 0.7;
  b.results.push_back(r);
  const std::vector<SeedRun> runs{a, b};
  const auto s = summarize(runs);
  REQUIRE(s.size() == 1);
  CHECK(s[0].mean == doctest::Approx(50.0));
  CHECK(s[0].stddev == doctest::Approx(std::sqrt(200.0)));
  CHECK(*s[0].synthetic_accuracy == doctest::Approx(0.7));
  SeedRun c;
  const std::vector<SeedRun> broken{a, c};
  CHECK_THROWS_AS(summarize(broken), std::invalid_argument);
}

TEST_CASE("policy-sample records round trip") {
  const auto splits = world::generate_splits(6, {4, 4, 5, 4});
  const auto policy = random_policy(8);
  seq::SamplingConfig sc;
  sc.seed = 3;
  const auto P = spg::build_policy_samples(policy, splits.unlabeled, 4, sc);
  const fs::path dir = scratch("samples");
  save_policy_samples(dir / "P.tsv", P, "unlabeled");
  const auto back = load_policy_samples(dir / "P.tsv");
  REQUIRE(back.size() == P.size());
  for (std::size_t i = 0; i < P.size(); ++i) {
    CHECK(back[i].x == P[i].x);
    REQUIRE(back[i].ys.size() == P[i].ys.size());
    for (std::size_t j = 0; j < P[i].ys.size(); ++j) CHECK(back[i].ys[j].tokens == P[i].ys[j].tokens);
  }
  save_policy_samples(dir / "again.tsv", back, "unlabeled");
  CHECK(slurp(dir / "P.tsv") == slurp(dir / "again.tsv"));
  std::ofstream(dir / "bad.tsv") << "#rlp preferences v1 split=D\n";
  CHECK_THROWS_AS(load_policy_samples(dir / "bad.tsv"), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("run directory: stages resume, edits force a rerun, config changes are refused") {
  const fs::path dir = scratch("run");
  const ExperimentConfig cfg = tiny(dir.string());
  {
    Run run(cfg);
    CHECK_THROWS_AS(run.sft(), std::runtime_error);  // gen-data missing
    const std::vector<Method> methods{Method::Sft, Method::Ppo, Method::RlpSpg};
    const auto reports = run.run_methods(methods);
    REQUIRE(reports.size() == 3);
    CHECK(reports[0].mean == doctest::Approx(50.0));
    CHECK(run.manifest().up_to_date("retrain-policy:rlp-spg", dir));
    CHECK(fs::exists(dir / "data/Dhat-rlp-spg.tsv"));
    CHECK(run.report().find("rlp-spg") != std::string::npos);
  }
  const auto hash = sha256_file(dir / "models/ppo.ckpt");
  const auto stamp = RunManifest::load(dir / "manifest.json").stages.at("ppo").finished;
  {
    Run again(cfg);
    CHECK(again.manifest().up_to_date("ppo", dir));
    std::ofstream(dir / "data/P.tsv", std::ios::app) << "\n";
    CHECK_FALSE(again.manifest().up_to_date("sample-policy", dir));
    again.sample_policy();
    CHECK(again.manifest().up_to_date("sample-policy", dir));
    again.ppo();
  }
  CHECK(sha256_file(dir / "models/ppo.ckpt") == hash);
  CHECK(RunManifest::load(dir / "manifest.json").stages.at("ppo").finished == stamp);

  ExperimentConfig other = cfg;
  other.ppo_beta = 0.3;
  CHECK_THROWS_AS(Run{other}, ConfigError);
  ExperimentConfig renamed = cfg;
  renamed.method = "ppo";
  CHECK_NOTHROW(Run{renamed});
  fs::remove_all(dir);
}

TEST_CASE("file-backed and in-memory pipelines agree") {
  const fs::path dir = scratch("agree");
  const ExperimentConfig cfg = tiny(dir.string());
  const std::vector<Method> methods{Method::Ppo, Method::RlpUml};
  Run run(cfg);
  const auto files = run.run_methods(methods);
  const auto memory = run_seed(cfg, methods);
  REQUIRE(memory.results.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(files[i].overall.wins == memory.results[i].winrate.overall.wins);
    CHECK(files[i].overall.ties == memory.results[i].winrate.overall.ties);
    CHECK(files[i].mean == memory.results[i].winrate.mean);
  }
  fs::remove_all(dir);
}
