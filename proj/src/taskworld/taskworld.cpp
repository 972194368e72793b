#include "rlp/taskworld/taskworld.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <tuple>

#include "rlp/common/error.hpp"
#include "rlp/common/rng.hpp"
#include "rlp/numerics/ops.hpp"

namespace rlp::world {

Tokens Instruction::rendered() const {
  Tokens out;
  out.reserve(args.size() + 3);
  out.push_back(vocab::tag(family));
  if (family == TaskFamily::Repeat) out.push_back(vocab::kCountBase + (repeat - vocab::kMinRepeat));
  out.insert(out.end(), args.begin(), args.end());
  out.push_back(vocab::kSep);
  return out;
}

Tokens Response::content() const {
  auto end = std::find(tokens.begin(), tokens.end(), vocab::kEos);
  return Tokens(tokens.begin(), end);
}

Tokens Response::canonical() const {
  Tokens out;
  for (int t : content())
    if (t != vocab::kFiller) out.push_back(t);
  return out;
}

namespace {
constexpr std::array<std::string_view, 3> kSourceNames = {"simulated-annotator", "synthetic-spg", "ablation-variant"};
}

std::string_view source_name(PairSource s) { return kSourceNames[static_cast<std::size_t>(s)]; }

PairSource parse_source(std::string_view name) {
  for (std::size_t i = 0; i < kSourceNames.size(); ++i)
    if (kSourceNames[i] == name) return static_cast<PairSource>(i);
  throw FormatError("unknown pair source '" + std::string(name) + "'");
}

bool PreferenceDataset::add(PreferencePair pair) {
  if (pair.chosen.tokens == pair.rejected.tokens)
    throw std::invalid_argument("preference pair with identical responses");
  for (const auto& p : pairs_)
    if (p.x == pair.x && p.chosen.tokens == pair.chosen.tokens && p.rejected.tokens == pair.rejected.tokens)
      return false;
  pairs_.push_back(std::move(pair));
  return true;
}

namespace {

double template_space(TaskFamily f, const WorldConfig& cfg) {
  const int max_len = f == TaskFamily::Repeat ? std::min(cfg.max_repeat_args, cfg.max_args) : cfg.max_args;
  const int min_len = f == TaskFamily::Repeat ? 1 : cfg.min_args;
  double total = 0.0;
  for (int len = min_len; len <= max_len; ++len) total += std::pow(static_cast<double>(cfg.alphabet), len);
  if (f == TaskFamily::Repeat) total *= (vocab::kMaxRepeat - vocab::kMinRepeat + 1);
  return total;
}

Instruction draw_instruction(TaskFamily f, const WorldConfig& cfg, Rng& rng) {
  Instruction x;
  x.family = f;
  int len;
  if (f == TaskFamily::Repeat) {
    x.repeat = vocab::kMinRepeat + static_cast<int>(rng.below(vocab::kMaxRepeat - vocab::kMinRepeat + 1));
    const int hi = std::min(cfg.max_repeat_args, cfg.max_args);
    len = 1 + static_cast<int>(rng.below(static_cast<std::size_t>(hi)));
  } else {
    len = cfg.min_args + static_cast<int>(rng.below(static_cast<std::size_t>(cfg.max_args - cfg.min_args + 1)));
  }
  for (int i = 0; i < len; ++i) x.args.push_back(vocab::content(static_cast<int>(rng.below(static_cast<std::size_t>(cfg.alphabet)))));
  if (f == TaskFamily::Dedup && len >= 2) {
    // Make sure there is something to remove.
    const std::size_t src = rng.below(static_cast<std::size_t>(len));
    std::size_t dst = rng.below(static_cast<std::size_t>(len - 1));
    if (dst >= src) ++dst;
    x.args[dst] = x.args[src];
  }
  return x;
}

}  // namespace

Splits generate_splits(std::uint64_t seed, const SplitCounts& counts, const WorldConfig& cfg) {
  if (counts.sft == 0 || counts.preference == 0 || counts.unlabeled == 0 || counts.eval == 0)
    throw ConfigError("generate_splits: every split count must be positive");
  if (cfg.alphabet < 1 || cfg.alphabet > vocab::kContentCount || cfg.min_args < 1 || cfg.max_args < cfg.min_args ||
      cfg.max_repeat_args < 1)
    throw ConfigError("generate_splits: invalid world configuration");
  if (cfg.max_response < cfg.max_repeat_args * vocab::kMaxRepeat + 1 || cfg.max_response < cfg.max_args + 1)
    throw ConfigError("generate_splits: max_response cannot hold every gold answer");

  const std::size_t fam = kAllFamilies.size();
  // Round-robin puts ceil(total / fam) of each family in the worst case.
  const std::size_t per_family = (counts.sft + fam - 1) / fam + (counts.preference + fam - 1) / fam +
                                 (counts.unlabeled + fam - 1) / fam + (counts.eval + fam - 1) / fam;
  for (TaskFamily f : kAllFamilies)
    if (template_space(f, cfg) < static_cast<double>(per_family))
      throw ConfigError("generate_splits: vocabulary exhausted; family '" + std::string(family_name(f)) +
                        "' has fewer distinct instructions than requested");

  Rng rng(derive_seed({seed, 0x5e11u}));
  std::set<std::tuple<int, int, Tokens>> seen;
  std::uint64_t next_id = 0;
  auto fill = [&](InstructionSet& set, const char* name, std::size_t n) {
    set.split = name;
    for (std::size_t i = 0; i < n; ++i) {
      const TaskFamily f = kAllFamilies[i % fam];
      for (std::size_t attempt = 0;; ++attempt) {
        if (attempt > 100000)
          throw ConfigError("generate_splits: vocabulary exhausted while drawing '" + std::string(family_name(f)) + "'");
        Instruction x = draw_instruction(f, cfg, rng);
        if (!seen.emplace(static_cast<int>(x.family), x.repeat, x.args).second) continue;
        x.id = next_id++;
        set.items.push_back(std::move(x));
        break;
      }
    }
  };
  Splits s;
  fill(s.sft, "sft", counts.sft);
  fill(s.preference, "preference", counts.preference);
  fill(s.unlabeled, "unlabeled", counts.unlabeled);
  fill(s.eval, "eval", counts.eval);
  return s;
}

Response gold_answer(const Instruction& x) {
  Response r;
  r.producer = "reference";
  Tokens& out = r.tokens;
  switch (x.family) {
    case TaskFamily::Copy:
      out = x.args;
      break;
    case TaskFamily::Reverse:
      out.assign(x.args.rbegin(), x.args.rend());
      break;
    case TaskFamily::Sort:
      out = x.args;
      std::sort(out.begin(), out.end());
      break;
    case TaskFamily::Repeat:
      for (int i = 0; i < x.repeat; ++i) out.insert(out.end(), x.args.begin(), x.args.end());
      break;
    case TaskFamily::Dedup:
      for (int t : x.args)
        if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
      break;
    case TaskFamily::MaxToken:
      out.push_back(*std::max_element(x.args.begin(), x.args.end()));
      break;
  }
  out.push_back(vocab::kEos);
  return r;
}

Response demonstration(const Instruction& x, const WorldConfig& cfg, std::uint64_t seed) {
  if (!(cfg.demo_filler_rate >= 0.0 && cfg.demo_filler_rate <= 1.0))
    throw ConfigError("demonstration: demo_filler_rate must lie in [0, 1]");
  const Response gold = gold_answer(x);
  Response r;
  r.producer = "demonstration";
  Rng rng(seed);
  std::size_t room = static_cast<std::size_t>(std::max(0, cfg.max_response)) - std::min<std::size_t>(gold.tokens.size(), cfg.max_response);
  for (int t : gold.tokens) {
    if (room > 0 && rng.uniform() < cfg.demo_filler_rate) {
      r.tokens.push_back(vocab::kFiller);
      --room;
    }
    r.tokens.push_back(t);
  }
  return r;
}

void TrueRewardSpec::validate() const {
  for (double w : {correctness_weight, brevity_weight, format_weight, verbosity_bias})
    if (!std::isfinite(w)) throw ConfigError("true reward: weights must be finite");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("true reward: temperature must be > 0");
}

RewardBreakdown true_reward_breakdown(const Instruction& x, const Response& y, const TrueRewardSpec& spec) {
  const Tokens gold = gold_answer(x).content();
  const Tokens canon = y.canonical();
  const double glen = static_cast<double>(gold.size());
  RewardBreakdown b;
  std::size_t matched = 0;
  for (std::size_t i = 0; i < std::min(gold.size(), canon.size()); ++i) matched += (canon[i] == gold[i]);
  b.correctness = static_cast<double>(matched) / glen;
  const double len = static_cast<double>(y.content().size());
  b.excess_length = std::max(0.0, len - glen) / glen;
  b.format = y.terminated() ? 1.0 : 0.0;
  b.total = spec.correctness_weight * b.correctness - spec.brevity_weight * b.excess_length +
            spec.format_weight * b.format;
  return b;
}

double true_reward(const Instruction& x, const Response& y, const TrueRewardSpec& spec) {
  return true_reward_breakdown(x, y, spec).total;
}

namespace {
double annotator_utility(const Instruction& x, const Response& y, const TrueRewardSpec& spec) {
  return true_reward(x, y, spec) + spec.verbosity_bias * static_cast<double>(y.content().size());
}
}  // namespace

double preference_probability(const Instruction& x, const Response& y1, const Response& y2,
                              const TrueRewardSpec& spec) {
  const double gap = annotator_utility(x, y1, spec) - annotator_utility(x, y2, spec);
  return num::logistic(gap / spec.temperature);
}

PreferencePair annotate(const Instruction& x, const Response& y1, const Response& y2,
                        const TrueRewardSpec& spec, std::uint64_t seed) {
  if (y1.tokens == y2.tokens) throw std::invalid_argument("annotate: responses are identical");
  const bool y1_first = y1.tokens < y2.tokens;
  const Response& first = y1_first ? y1 : y2;
  const Response& second = y1_first ? y2 : y1;
  Rng rng(seed);
  const bool first_wins = rng.uniform() < preference_probability(x, first, second, spec);
  PreferencePair p;
  p.x = x;
  p.chosen = first_wins ? first : second;
  p.rejected = first_wins ? second : first;
  p.source = PairSource::SimulatedAnnotator;
  return p;
}

CollectionResult collect_preferences(const Sampler& sampler, const InstructionSet& split,
                                     const TrueRewardSpec& spec, std::uint64_t seed, int max_attempts) {
  spec.validate();
  CollectionResult result;
  for (const Instruction& x : split.items) {
    const Response y1 = sampler(x, derive_seed({seed, x.id, 0}));
    bool done = false;
    for (int attempt = 0; attempt < max_attempts && !done; ++attempt) {
      const Response y2 = sampler(x, derive_seed({seed, x.id, 1, static_cast<std::uint64_t>(attempt)}));
      if (y2.tokens == y1.tokens) continue;
      result.dataset.add(annotate(x, y1, y2, spec, derive_seed({seed, x.id, 2})));
      done = true;
    }
    if (!done) result.skipped.push_back(x.id);
  }
  return result;
}

}  // namespace rlp::world
