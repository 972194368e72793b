// Acceptance checks. One line per criterion; exit status 1 when any fails.
// Usage: acceptance [criterion numbers...]   (default: all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <unistd.h>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "clustering.hpp"
#include "gradcheck.hpp"
#include "synthetic.hpp"
#include "rlp/numerics/ops.hpp"
#include "rlp/pipeline/stages.hpp"
#include "rlp/pipeline/suite.hpp"

using namespace rlp;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// ---- 1: gradients ----------------------------------------------------------

seq::TransformerConfig random_arch(Rng& rng) {
  seq::TransformerConfig c;
  const int widths[] = {8, 12, 16};
  c.width = widths[rng.below(3)];
  c.heads = c.width % 4 == 0 && rng.uniform() < 0.5 ? 4 : (rng.uniform() < 0.5 ? 2 : 1);
  c.blocks = 1 + static_cast<int>(rng.below(2));
  c.mlp_hidden = rng.uniform() < 0.5 ? 8 : 16;
  return c;
}

void perturb(std::vector<num::Tensor*> params, Rng& rng, double scale) {
  for (auto* p : params)
    for (double& v : p->values()) v += scale * rng.normal();
}

Outcome gradients() {
  const int configs = 20;
  double worst_exact = 0.0, worst_stochastic = 0.0;
  std::size_t checked = 0;
  for (int c = 0; c < configs; ++c) {
    Rng rng(derive_seed({0xacc1, static_cast<std::uint64_t>(c)}));
    const auto arch = random_arch(rng);
    const auto splits = world::generate_splits(rng.next_u64(), {4, 4, 4, 4});
    std::vector<world::Instruction> xs = splits.preference.items;
    std::vector<world::Response> ys;
    for (const auto& x : xs) ys.push_back(testing::noisy_response(x, rng.next_u64()));

    // Transformer log-likelihood; perturbed so layer norms and biases are off their init.
    seq::PolicyModel policy(arch);
    policy.net.init(rng.next_u64());
    perturb(policy.net.parameters(), rng, 0.1);
    auto r = testing::check_gradients(policy.net.parameters(), [&](num::Tape& tape) {
      return num::sum(seq::forward_response(tape, policy.net, xs[0].rendered(), ys[0].tokens).token_logprobs);
    }, 1e-4, 4, rng.next_u64());
    worst_exact = std::max(worst_exact, r.max_rel_error);
    checked += r.checked;

    // Reward model: backbone and scalar head through the pairwise loss.
    rm::RewardModel reward = rm::RewardModel::from_policy(policy);
    for (double& v : reward.head_weight.values()) v = rng.normal();
    std::vector<world::PreferencePair> pairs;
    for (std::size_t i = 0; i + 1 < xs.size(); ++i)
      pairs.push_back({xs[i], world::gold_answer(xs[i]), ys[i], world::PairSource::SimulatedAnnotator});
    r = testing::check_gradients(reward.parameters(), [&](num::Tape& tape) { return rm::pairwise_loss(tape, reward, pairs); },
                                 1e-4, 4, rng.next_u64());
    worst_exact = std::max(worst_exact, r.max_rel_error);
    checked += r.checked;

    // Encoders and critic on fixed features: exact path (MVI, deterministic given the noise seed)
    // and the full MIB loss with its SKL term.
    rm::MibConfig mc;
    mc.feature_dim = 6;
    mc.latent = 2 + static_cast<int>(rng.below(3));
    mc.hidden = 8;
    mc.critic_hidden = 8;
    rm::MIBHead head(mc);
    head.init(rng.next_u64());
    const auto f1 = testing::random_tensor(rng, 5, 6), f2 = testing::random_tensor(rng, 5, 6);
    const std::uint64_t noise = rng.next_u64();
    for (auto kind : {rm::RepresentationLoss::Mvi, rm::RepresentationLoss::InfoMax}) {
      r = testing::check_gradients(head.parameters(), [&](num::Tape& tape) {
        return rm::representation_loss(tape, head, kind, tape.constant(f1), tape.constant(f2), noise).loss;
      }, 1e-5, 6, rng.next_u64());
      worst_exact = std::max(worst_exact, r.max_rel_error);
      checked += r.checked;
    }
    auto params = head.parameters();
    r = testing::check_gradients(params, [&](num::Tape& tape) {
      return rm::mib_loss(tape, head, tape.constant(f1), tape.constant(f2), noise).loss;
    }, 1e-5, 6, rng.next_u64());
    worst_stochastic = std::max(worst_stochastic, r.max_rel_error);
    checked += r.checked;

    // JS critic alone.
    num::Mlp3 critic(4, 8, 1);
    critic.init(rng);
    std::vector<num::Tensor*> cp;
    critic.collect(cp);
    const auto a = testing::random_tensor(rng, 6, 2), b = testing::random_tensor(rng, 6, 2);
    r = testing::check_gradients(cp, [&](num::Tape& tape) {
      return rm::js_bound(tape, critic, tape.constant(a), tape.constant(b));
    }, 1e-5, 8, rng.next_u64());
    worst_exact = std::max(worst_exact, r.max_rel_error);
    checked += r.checked;

    // Value head regression on detached states.
    rl::ValueHead value(arch.width);
    for (auto* p : value.parameters())
      for (double& v : p->values()) v = 0.3 * rng.normal();
    const auto states = testing::random_tensor(rng, 7, static_cast<std::size_t>(arch.width));
    const auto target = testing::random_tensor(rng, 7, 1);
    r = testing::check_gradients(value.parameters(), [&](num::Tape& tape) {
      return num::mean(num::square(num::sub(value.forward(tape, states), tape.constant(target))));
    }, 1e-5, 16, rng.next_u64());
    worst_exact = std::max(worst_exact, r.max_rel_error);
    checked += r.checked;
  }
  return {worst_exact <= 1e-4 && worst_stochastic <= 1e-3,
          std::to_string(configs) + " configs, " + std::to_string(checked) + " entries, max rel " +
              fmt("%.2e", worst_exact) + " (<= 1e-4), MIB path " + fmt("%.2e", worst_stochastic) + " (<= 1e-3)"};
}

// ---- 2: closed forms -------------------------------------------------------

template <typename F>
double simpson(F f, double lo, double hi, int n) {
  const double h = (hi - lo) / n;
  double s = f(lo) + f(hi);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(lo + i * h);
  return s * h / 3.0;
}

Outcome closed_forms() {
  const double zero_gap[] = {0.0};
  const double loss0 = rm::pairwise_loss_from_gaps(zero_gap);
  const double e1 = std::abs(loss0 - std::numbers::ln2);

  Rng rng(0xacc2);
  double e2 = 0.0;
  for (int t = 0; t < 20; ++t) {
    std::vector<double> m(5), pd(5);
    for (int i = 0; i < 5; ++i) m[i] = rng.normal(), pd[i] = 0.5 * rng.normal();
    const auto g = rm::GaussianRepresentation::from_pre_dev(m, pd);
    e2 = std::max(e2, std::abs(rm::skl_divergence(g, g)));
  }

  auto pdf = [](double x, double mu) { return std::exp(-0.5 * (x - mu) * (x - mu)) / std::sqrt(2.0 * std::numbers::pi); };
  const double kl_pq = simpson([&](double x) { return pdf(x, 0) * (std::log(pdf(x, 0)) - std::log(pdf(x, 1))); }, -12, 13, 4000);
  const double kl_qp = simpson([&](double x) { return pdf(x, 1) * (std::log(pdf(x, 1)) - std::log(pdf(x, 0))); }, -12, 13, 4000);
  const auto p = rm::GaussianRepresentation::from_pre_dev({0.0}, {0.0});
  const auto q = rm::GaussianRepresentation::from_pre_dev({1.0}, {0.0});
  const double skl = rm::skl_divergence(p, q);
  const double e3 = std::max(std::abs(skl - 0.5 * (kl_pq + kl_qp)), std::abs(skl - 0.5));

  return {e1 <= 1e-9 && e2 <= 1e-12 && e3 <= 1e-6, "zero-gap loss err " + fmt("%.1e", e1) + ", SKL(g,g) " + fmt("%.1e", e2) +
                                                      ", SKL(N(0,1),N(1,1)) " + fmt("%.9f", skl) + " vs quadrature " +
                                                      fmt("%.9f", 0.5 * (kl_pq + kl_qp))};
}

// ---- 3: MI estimator -------------------------------------------------------

Outcome mi_estimator() {
  const int seeds = 10;
  int ordered = 0;
  double at_zero = 0.0, at_half = 0.0, at_high = 0.0;
  for (int s = 0; s < seeds; ++s) {
    const std::uint64_t seed = 0xacc3 + static_cast<std::uint64_t>(s);
    const double e0 = testing::trained_js_estimate(0.0, seed).estimate;
    const double e5 = testing::trained_js_estimate(0.5, seed).estimate;
    const double e9 = testing::trained_js_estimate(0.9, seed).estimate;
    ordered += e0 < e5 && e5 < e9;
    at_zero += e0 / seeds;
    at_half += e5 / seeds;
    at_high += e9 / seeds;
  }
  return {ordered >= 9 && std::abs(at_zero) <= 0.05,
          "increasing in " + std::to_string(ordered) + "/10 seeds; means " + fmt("%.4f", at_zero) + " / " +
              fmt("%.4f", at_half) + " / " + fmt("%.4f", at_high) + " at rho 0 / 0.5 / 0.9"};
}

// ---- 4: clustering ---------------------------------------------------------

Outcome clustering() {
  const spg::ExactCanonicalOracle oracle;
  Rng rng(0xacc4);
  int agree = 0, invariants = 0;
  const int sets = 1000;
  for (int t = 0; t < sets; ++t) {
    const auto s = testing::random_sample_set(rng, 2 + rng.below(12));
    const auto got = spg::cluster(s, oracle);
    agree += got.groups == testing::components(s, oracle);

    bool ok = !got.groups.empty();
    std::vector<int> seen(s.ys.size(), 0);
    std::size_t biggest = 0;
    for (const auto& g : got.groups) {
      ok = ok && !g.empty() && std::is_sorted(g.begin(), g.end());
      for (std::size_t i : g) {
        ++seen[i];
        ok = ok && oracle.equivalent(s.x, s.ys[g[0]], s.ys[i]);
      }
      biggest = std::max(biggest, g.size());
    }
    ok = ok && std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; });
    for (std::size_t g = 0; g < got.groups.size(); ++g)
      for (std::size_t h = g + 1; h < got.groups.size(); ++h)
        ok = ok && !oracle.equivalent(s.x, s.ys[got.groups[g][0]], s.ys[got.groups[h][0]]);
    ok = ok && got.groups[got.largest].size() == biggest;
    for (std::size_t g = 0; g < got.largest; ++g) ok = ok && got.groups[g].size() < biggest;
    ok = ok && got.confidence == static_cast<double>(biggest) / static_cast<double>(s.ys.size());
    invariants += ok;
  }
  return {agree == sets && invariants == sets, std::to_string(agree) + "/1000 match the brute-force components, " +
                                                   std::to_string(invariants) + "/1000 satisfy the partition invariants"};
}

// ---- 5-7: end-to-end runs --------------------------------------------------

struct EndToEnd {
  std::vector<pipe::SeedRun> runs;
  std::vector<pipe::MethodSummary> summaries;
  const pipe::MethodSummary& get(pipe::Method m) const {
    for (const auto& s : summaries)
      if (s.method == m) return s;
    throw std::logic_error("missing method");
  }
  const pipe::MethodResult& at(std::size_t seed, pipe::Method m) const {
    for (const auto& r : runs[seed].results)
      if (r.method == m) return r;
    throw std::logic_error("missing method");
  }
};

const EndToEnd& end_to_end() {
  static const EndToEnd e = [] {
    EndToEnd out;
    const std::vector<pipe::Method> methods = {pipe::Method::Ppo,        pipe::Method::RlpUml, pipe::Method::RlpSpg,
                                               pipe::Method::UmlInfoMax, pipe::Method::UmlMvi, pipe::Method::UmlCl,
                                               pipe::Method::SpgSelectAll};
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      pipe::ExperimentConfig cfg;
      cfg.seed = seed;
      const auto t0 = std::chrono::steady_clock::now();
      out.runs.push_back(pipe::run_seed(cfg, methods));
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::printf("  seed %llu:", static_cast<unsigned long long>(seed));
      for (const auto& r : out.runs.back().results) std::printf(" %s %.1f", pipe::method_name(r.method), r.winrate.mean);
      std::printf("  (%.0fs)\n", secs);
      std::fflush(stdout);
    }
    out.summaries = pipe::summarize(out.runs);
    std::printf("%s", pipe::emit_report(out.summaries).c_str());
    return out;
  }();
  return e;
}

Outcome selectivity() {
  const auto& e = end_to_end();
  int strict = 0;
  std::string per;
  for (std::size_t s = 0; s < e.runs.size(); ++s) {
    const double g5 = *e.at(s, pipe::Method::RlpSpg).synthetic_accuracy;
    const double g0 = *e.at(s, pipe::Method::SpgSelectAll).synthetic_accuracy;
    strict += g5 > g0;
    per += " " + fmt("%.3f", g5) + "/" + fmt("%.3f", g0);
  }
  const double m5 = *e.get(pipe::Method::RlpSpg).synthetic_accuracy;
  const double m0 = *e.get(pipe::Method::SpgSelectAll).synthetic_accuracy;
  return {m5 >= m0 && strict >= 3, "accuracy gamma 0.5 vs 0: mean " + fmt("%.3f", m5) + " vs " + fmt("%.3f", m0) +
                                       ", strict in " + std::to_string(strict) + "/5 seeds;" + per};
}

Outcome ordering() {
  const auto& e = end_to_end();
  const auto& ppo = e.get(pipe::Method::Ppo);
  const auto& spg = e.get(pipe::Method::RlpSpg);
  const auto& uml = e.get(pipe::Method::RlpUml);
  auto wins = [&](const pipe::MethodSummary& m) {
    int w = 0;
    for (std::size_t s = 0; s < m.per_seed.size(); ++s) w += m.per_seed[s] > ppo.per_seed[s];
    return w;
  };
  const int ws = wins(spg), wu = wins(uml);
  const double ps = pipe::sign_test_p(ws, 5), pu = pipe::sign_test_p(wu, 5);
  const bool pass = ppo.mean > 50.0 && spg.mean > ppo.mean && uml.mean > ppo.mean && ps < 0.1 && pu < 0.1;
  return {pass, "win rate vs SFT: PPO " + fmt("%.1f", ppo.mean) + ", RLP-UML " + fmt("%.1f", uml.mean) + ", RLP-SPG " +
                    fmt("%.1f", spg.mean) + "; sign test SPG>PPO " + std::to_string(ws) + "/5 p=" + fmt("%.3f", ps) +
                    ", UML>PPO " + std::to_string(wu) + "/5 p=" + fmt("%.3f", pu)};
}

Outcome representation() {
  const auto& e = end_to_end();
  const double mib = e.get(pipe::Method::RlpUml).mean;
  bool strictly_last = true;
  std::string detail = "MIB " + fmt("%.1f", mib);
  for (auto m : {pipe::Method::UmlInfoMax, pipe::Method::UmlMvi, pipe::Method::UmlCl}) {
    const double v = e.get(m).mean;
    strictly_last = strictly_last && mib < v;
    detail += std::string(", ") + pipe::method_name(m) + " " + fmt("%.1f", v);
  }
  return {!strictly_last, detail + (strictly_last ? "; MIB strictly last" : "; MIB not last")};
}

// ---- 8: KL contract ----------------------------------------------------------

Outcome kl_contract() {
  const std::vector<double> betas = {0.02, 0.04, 0.2, 0.4};
  std::vector<double> kl(betas.size(), 0.0);
  const int seeds = 3;
  for (int s = 1; s <= seeds; ++s) {
    pipe::ExperimentConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(s);
    const auto splits = pipe::make_splits(cfg);
    const auto sft = pipe::train_sft_model(cfg, splits.sft);
    const auto d = pipe::collect_annotated(cfg, sft, splits.preference);
    const auto reward = pipe::train_initial_reward(cfg, sft, d.dataset);
    for (std::size_t b = 0; b < betas.size(); ++b) {
      cfg.ppo_beta = betas[b];
      const auto trained = pipe::train_rl_policy(cfg, sft, reward, splits.unlabeled, "ppo");
      kl[b] += rl::sequence_kl(trained.policy, sft, splits.eval.items, 4, derive_seed({cfg.seed, 0xacc8}),
                               cfg.train_temperature) / seeds;
    }
  }
  std::string detail = "mean sequence KL";
  for (std::size_t b = 0; b < betas.size(); ++b) detail += " beta=" + fmt("%g", betas[b]) + ": " + fmt("%.4f", kl[b]);
  return {kl[1] < kl[0] && kl[3] < kl[2], detail};
}

// ---- 9: determinism ----------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const fs::path base = fs::temp_directory_path() / ("rlp-acceptance-" + std::to_string(::getpid()));
  fs::remove_all(base);
  const std::vector<pipe::Method> methods = {pipe::Method::Ppo, pipe::Method::RlpUml, pipe::Method::RlpSpg};
  std::vector<std::vector<pipe::WinRateReport>> reports;
  for (const char* name : {"a", "b"}) {
    auto cfg = pipe::ExperimentConfig::parse(
        "data.sft = 60\ndata.preference = 60\ndata.unlabeled = 60\ndata.eval = 30\n"
        "sft.epochs = 8\nrm.epochs = 4\nppo.iterations = 4\nppo.rollouts = 16\n"
        "rlp.n = 4\neval.seeds = 2\n");
    cfg.out_dir = (base / name).string();
    pipe::Run run(cfg);
    reports.push_back(run.run_methods(methods));
  }
  std::size_t files = 0, identical = 0;
  for (const char* dir : {"data", "models"})
    for (const auto& entry : fs::directory_iterator(base / "a" / dir)) {
      ++files;
      const fs::path other = base / "b" / dir / entry.path().filename();
      identical += fs::exists(other) && slurp(entry.path()) == slurp(other);
    }
  bool same_rates = reports[0].size() == reports[1].size();
  for (std::size_t i = 0; same_rates && i < reports[0].size(); ++i) {
    const auto &a = reports[0][i], &b = reports[1][i];
    same_rates = a.mean == b.mean && a.overall.wins == b.overall.wins && a.overall.ties == b.overall.ties &&
                 a.overall.losses == b.overall.losses;
  }
  fs::remove_all(base);
  return {files > 0 && identical == files && same_rates,
          std::to_string(identical) + "/" + std::to_string(files) + " data and model files byte-identical, win rates " +
              (same_rates ? "identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradients match finite differences", gradients},
      {"closed-form losses and divergences", closed_forms},
      {"JS mutual-information estimator", mi_estimator},
      {"clustering equals connected components", clustering},
      {"selective synthesis beats select-all", selectivity},
      {"end-to-end ordering over PPO", ordering},
      {"representation-loss ablation", representation},
      {"KL penalty contract", kl_contract},
      {"run determinism", determinism},
  };
  std::set<int> chosen;
  for (int i = 1; i < argc; ++i) chosen.insert(std::stoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!chosen.empty() && !chosen.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %d %s: %s (%s) [%.0fs]\n", id, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed ? 1 : 0;
}
