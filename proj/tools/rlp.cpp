// rlp: command-line driver for the pipeline stages.
#include <CLI11.hpp>

#include <iostream>

#include "rlp/common/error.hpp"
#include "rlp/pipeline/stages.hpp"

namespace {

using rlp::pipe::ExperimentConfig;
using rlp::pipe::Method;

constexpr int kConfigError = 2;
constexpr int kStageFailure = 3;
constexpr int kDivergence = 4;

Method method_arg(const std::string& s) {
  if (s == "uml") return Method::RlpUml;
  if (s == "spg") return Method::RlpSpg;
  return rlp::pipe::parse_method(s);
}

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  long long seed = -1;
  bool force = false;
  bool quiet = false;
};

ExperimentConfig resolve(const Options& o) {
  ExperimentConfig cfg = o.config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(o.config_path);
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw rlp::ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
  if (o.seed >= 0) cfg.seed = static_cast<std::uint64_t>(o.seed);
  cfg.validate();
  return cfg;
}

void print_winrate(const rlp::pipe::WinRateReport& r) {
  std::printf("%-18s vs %-4s  %5.1f%% +- %.1f  (W %d / T %d / L %d)\n", r.method.c_str(), r.opponent.c_str(), r.mean,
              r.stddev, r.overall.wins, r.overall.ties, r.overall.losses);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reward-learning-on-policy pipeline on a synthetic instruction world"};
  app.require_subcommand(1);
  Options o;
  app.add_option("-c,--config", o.config_path, "key = value config file")->check(CLI::ExistingFile);
  app.add_option("-s,--set", o.overrides, "override a config key (key=value), repeatable");
  app.add_option("-o,--out", o.out_dir, "run directory (overrides out_dir)");
  app.add_option("--seed", o.seed, "experiment seed (overrides seed)");
  app.add_flag("-f,--force", o.force, "rerun stages even when up to date");
  app.add_flag("-q,--quiet", o.quiet, "no stage progress on stderr");

  std::string method;
  auto with_method = [&](CLI::App* sub, bool required) {
    auto* opt = sub->add_option("-m,--method", method, "method, e.g. uml | spg | rlp-uml-cl | rlp-rlaif");
    if (required) opt->required();
    return sub;
  };
  int seeds = 5;
  std::vector<std::string> suite_methods;

  app.add_subcommand("gen-data", "draw the four instruction splits");
  app.add_subcommand("sft", "supervised fine-tuning on demonstrations");
  app.add_subcommand("collect-prefs", "sample and annotate the preference set D");
  app.add_subcommand("train-rm", "train the initial reward model on D");
  app.add_subcommand("ppo", "KL-regularised PPO against the initial reward model");
  app.add_subcommand("sample-policy", "draw n samples per unlabeled instruction from the PPO policy");
  with_method(app.add_subcommand("retrain-rm", "retrain the reward model (uml, spg or an ablation)"), true);
  with_method(app.add_subcommand("retrain-policy", "rerun PPO from SFT against a retrained reward model"), true);
  with_method(app.add_subcommand("eval", "win-rate of a method against the SFT reference"), true);
  auto* run_cmd = app.add_subcommand("run", "every stage for the given methods (default: main comparison)");
  run_cmd->add_option("-m,--method", suite_methods, "methods to run");
  app.add_subcommand("ablate", "representation-loss and synthetic-preference ablations in this run directory");
  app.add_subcommand("report", "tables from every evaluation in the run directory");
  auto* suite_cmd = app.add_subcommand("suite", "in-memory multi-seed comparison, printed as a report");
  suite_cmd->add_option("--seeds", seeds, "number of seeds starting at the configured one")->check(CLI::PositiveNumber);
  suite_cmd->add_option("-m,--method", suite_methods, "methods to run (default: all)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  try {
    const ExperimentConfig cfg = resolve(o);
    const std::string cmd = app.get_subcommands().front()->get_name();
    std::ostream* log = o.quiet ? nullptr : &std::cerr;

    if (cmd == "suite") {
      std::vector<Method> methods;
      for (const auto& m : suite_methods) methods.push_back(method_arg(m));
      if (methods.empty()) {
        methods = rlp::pipe::main_methods();
        for (Method m : rlp::pipe::representation_ablations())
          if (m != Method::RlpUml) methods.push_back(m);
        for (Method m : rlp::pipe::synthesis_ablations())
          if (m != Method::RlpSpg) methods.push_back(m);
      }
      std::vector<rlp::pipe::SeedRun> runs;
      for (int i = 0; i < seeds; ++i) {
        ExperimentConfig c = cfg;
        c.seed = cfg.seed + static_cast<std::uint64_t>(i);
        runs.push_back(rlp::pipe::run_seed(c, methods, [&](const std::string& s) {
          if (log) *log << "[seed " << c.seed << "] " << s << '\n';
        }));
      }
      std::cout << rlp::pipe::emit_report(rlp::pipe::summarize(runs));
      return 0;
    }

    rlp::pipe::Run run(cfg, log);
    run.set_force(o.force);
    if (cmd == "gen-data") run.gen_data();
    else if (cmd == "sft") run.sft();
    else if (cmd == "collect-prefs") run.collect_prefs();
    else if (cmd == "train-rm") run.train_rm();
    else if (cmd == "ppo") run.ppo();
    else if (cmd == "sample-policy") run.sample_policy();
    else if (cmd == "retrain-rm") run.retrain_rm(method_arg(method));
    else if (cmd == "retrain-policy") run.retrain_policy(method_arg(method));
    else if (cmd == "eval") print_winrate(run.eval(method_arg(method)));
    else if (cmd == "run" || cmd == "ablate") {
      std::vector<Method> methods;
      for (const auto& m : suite_methods) methods.push_back(method_arg(m));
      if (cmd == "ablate") {
        for (Method m : rlp::pipe::representation_ablations()) methods.push_back(m);
        for (Method m : rlp::pipe::synthesis_ablations())
          if (m != Method::RlpSpg) methods.push_back(m);
        methods.push_back(Method::RlpSpg);
      } else if (methods.empty()) {
        methods = rlp::pipe::main_methods();
      }
      for (const auto& r : run.run_methods(methods)) print_winrate(r);
    } else if (cmd == "report") {
      std::cout << run.report();
    }
    return 0;
  } catch (const rlp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const rlp::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << '\n';
    return kDivergence;
  } catch (const std::exception& e) {
    std::cerr << "stage failed: " << e.what() << '\n';
    return kStageFailure;
  }
}
