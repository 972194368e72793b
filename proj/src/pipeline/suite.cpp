#include "rlp/pipeline/suite.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

namespace rlp::pipe {

SeedRun run_seed(const ExperimentConfig& cfg, std::span<const Method> methods, const Progress& progress) {
  auto note = [&](const std::string& s) {
    if (progress) progress(s);
  };
  cfg.validate();
  const auto splits = make_splits(cfg);
  const int max_new = cfg.world.max_response;
  const auto seeds = eval_seeds(cfg);

  note("sft");
  const auto sft = train_sft_model(cfg, splits.sft);
  const Player reference = policy_player("sft", sft, cfg.eval_temperature, max_new);

  std::optional<world::PreferenceDataset> annotated;
  std::optional<rm::RewardModel> initial;
  std::optional<rl::TrainResult> ppo;
  std::optional<std::vector<spg::PolicySampleSet>> samples;
  auto need_reward = [&] {
    if (initial) return;
    note("collect-prefs");
    annotated = collect_annotated(cfg, sft, splits.preference).dataset;
    note("train-rm");
    initial = train_initial_reward(cfg, sft, *annotated);
  };
  auto need_ppo = [&] {
    if (ppo) return;
    need_reward();
    note("ppo");
    ppo = train_rl_policy(cfg, sft, *initial, splits.unlabeled, "ppo");
  };
  auto need_samples = [&] {
    if (samples) return;
    need_ppo();
    note("sample-policy");
    samples = sample_policy(cfg, ppo->policy, splits.unlabeled);
  };

  SeedRun run;
  run.seed = cfg.seed;
  for (Method m : methods) {
    const std::string name = method_name(m);
    MethodResult r;
    r.method = m;
    if (m == Method::Sft) {
      r.winrate = evaluate_winrate(reference, reference, splits.eval, cfg.annotator, seeds);
    } else if (m == Method::BestOfN) {
      need_reward();
      r.winrate = evaluate_winrate(best_of_n_player(name, sft, *initial, cfg.best_of_n, cfg.eval_temperature, max_new),
                                   reference, splits.eval, cfg.annotator, seeds);
    } else if (m == Method::Ppo) {
      need_ppo();
      r.winrate = evaluate_winrate(policy_player(name, ppo->policy, cfg.eval_temperature, max_new), reference,
                                   splits.eval, cfg.annotator, seeds);
    } else {
      need_samples();
      note("retrain-rm " + name);
      auto rt = retrain_reward(cfg, m, sft, *initial, ppo->policy, *annotated, *samples, splits.unlabeled);
      if (rt.synthetic) {
        r.synthetic_size = rt.synthetic->size();
        if (!rt.synthetic->empty()) r.synthetic_accuracy = spg::true_preference_accuracy(*rt.synthetic, cfg.annotator);
      }
      note("retrain-policy " + name);
      const auto policy = train_rl_policy(cfg, sft, rt.reward, splits.unlabeled, name);
      note("eval " + name);
      r.winrate = evaluate_winrate(policy_player(name, policy.policy, cfg.eval_temperature, max_new), reference,
                                   splits.eval, cfg.annotator, seeds);
    }
    run.results.push_back(std::move(r));
  }
  return run;
}

std::vector<MethodSummary> summarize(std::span<const SeedRun> runs) {
  std::vector<MethodSummary> out;
  if (runs.empty()) return out;
  for (const auto& r : runs.front().results) {
    MethodSummary s;
    s.method = r.method;
    std::map<world::TaskFamily, Tally> fam;
    double syn = 0.0;
    int syn_n = 0;
    for (const auto& run : runs) {
      auto it = std::find_if(run.results.begin(), run.results.end(), [&](const MethodResult& x) { return x.method == r.method; });
      if (it == run.results.end())
        throw std::invalid_argument(std::string("summarize: seed run lacks method ") + method_name(r.method));
      s.per_seed.push_back(it->winrate.mean);
      for (const auto& [f, t] : it->winrate.per_family) {
        fam[f].wins += t.wins;
        fam[f].ties += t.ties;
        fam[f].losses += t.losses;
      }
      if (it->synthetic_accuracy) {
        syn += *it->synthetic_accuracy;
        ++syn_n;
      }
    }
    const double n = static_cast<double>(s.per_seed.size());
    for (double v : s.per_seed) s.mean += v / n;
    if (s.per_seed.size() > 1) {
      double ss = 0.0;
      for (double v : s.per_seed) ss += (v - s.mean) * (v - s.mean);
      s.stddev = std::sqrt(ss / (n - 1.0));
    }
    if (syn_n > 0) s.synthetic_accuracy = syn / syn_n;
    for (const auto& [f, t] : fam) s.per_family.emplace_back(f, t.win_rate());
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

std::string fmt(const char* f, double a, double b = 0.0) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

const MethodSummary* find(std::span<const MethodSummary> s, Method m) {
  for (const auto& x : s)
    if (x.method == m) return &x;
  return nullptr;
}

void table(std::ostringstream& os, const std::string& title, std::span<const MethodSummary> s,
           std::span<const Method> rows, bool synthetic) {
  std::vector<const MethodSummary*> present;
  for (Method m : rows)
    if (const auto* p = find(s, m)) present.push_back(p);
  if (present.empty()) return;
  os << title << '\n';
  os << "  method               win-rate (%)";
  if (synthetic) os << "   synthetic acc";
  os << '\n';
  for (const auto* p : present) {
    char name[32];
    std::snprintf(name, sizeof name, "  %-20s", method_name(p->method));
    os << name << fmt("%6.1f +- %4.1f", p->mean, p->stddev);
    if (synthetic) os << (p->synthetic_accuracy ? fmt("   %13.3f", *p->synthetic_accuracy) : std::string("               -"));
    os << '\n';
  }
  os << '\n';
}

}  // namespace

std::string emit_report(std::span<const MethodSummary> summaries) {
  if (summaries.empty()) throw std::invalid_argument("emit_report: no method results");
  std::ostringstream os;
  os << "win-rate against the SFT reference, mean +- std over " << summaries.front().per_seed.size() << " seed(s)\n\n";
  const Method main_rows[] = {Method::Sft, Method::BestOfN, Method::Ppo, Method::RlpUml, Method::RlpSpg};
  table(os, "main comparison", summaries, main_rows, false);
  const auto rep = representation_ablations();
  table(os, "representation loss", summaries, rep, false);
  const auto syn = synthesis_ablations();
  table(os, "synthetic preference generation", summaries, syn, true);

  os << "per task family (win-rate %)\n  method              ";
  std::vector<world::TaskFamily> fams;
  for (const auto& [f, v] : summaries.front().per_family) fams.push_back(f);
  for (auto f : fams) {
    char h[16];
    std::snprintf(h, sizeof h, "%10s", std::string(world::family_name(f)).c_str());
    os << h;
  }
  os << '\n';
  for (const auto& s : summaries) {
    char name[32];
    std::snprintf(name, sizeof name, "  %-20s", method_name(s.method));
    os << name;
    for (auto f : fams) {
      auto it = std::find_if(s.per_family.begin(), s.per_family.end(), [&](const auto& p) { return p.first == f; });
      os << (it == s.per_family.end() ? std::string("         -") : fmt("%10.1f", it->second));
    }
    os << '\n';
  }
  return os.str();
}

double sign_test_p(int wins, int trials) {
  if (trials < 0 || wins < 0 || wins > trials) throw std::invalid_argument("sign_test_p: bad counts");
  double p = 0.0;
  for (int k = wins; k <= trials; ++k) {
    double c = 1.0;
    for (int i = 0; i < k; ++i) c = c * (trials - i) / (i + 1);
    p += c;
  }
  return p / std::pow(2.0, trials);
}

}  // namespace rlp::pipe
