#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rlp/taskworld/vocab.hpp"

namespace rlp::world {

struct Instruction {
  std::uint64_t id = 0;
  TaskFamily family = TaskFamily::Copy;
  int repeat = 0;  // k for the repeat family, 0 otherwise
  Tokens args;

  // Tag, optional count token, arguments, separator.
  Tokens rendered() const;
  friend bool operator==(const Instruction&, const Instruction&) = default;
};

// A completion. `tokens` ends with vocab::kEos when the response terminated;
// a response cut at the length limit has no terminator.
struct Response {
  Tokens tokens;
  std::string producer = "reference";  // sft | ppo | rlp-uml | rlp-spg | reference | ...

  bool terminated() const { return !tokens.empty() && tokens.back() == vocab::kEos; }
  // Tokens before the terminator.
  Tokens content() const;
  // Content with filler tokens removed: the meaning of the response.
  Tokens canonical() const;
  std::size_t length() const { return tokens.size(); }
};

inline bool same_tokens(const Response& a, const Response& b) { return a.tokens == b.tokens; }

enum class PairSource { SimulatedAnnotator, SyntheticSpg, AblationVariant };
std::string_view source_name(PairSource s);
PairSource parse_source(std::string_view name);

struct PreferencePair {
  Instruction x;
  Response chosen;    // y_w
  Response rejected;  // y_l
  PairSource source = PairSource::SimulatedAnnotator;
};

// Pairs with no duplicate (x, y_w, y_l) triple. Split tag "D" for annotated
// data, "D-hat" for synthetic data.
class PreferenceDataset {
 public:
  explicit PreferenceDataset(std::string split = "D") : split_(std::move(split)) {}

  // Returns false (and keeps the dataset unchanged) for a duplicate triple.
  // Throws std::invalid_argument when y_w == y_l.
  bool add(PreferencePair pair);

  const std::vector<PreferencePair>& pairs() const noexcept { return pairs_; }
  std::size_t size() const noexcept { return pairs_.size(); }
  bool empty() const noexcept { return pairs_.empty(); }
  const std::string& split() const noexcept { return split_; }

 private:
  std::string split_;
  std::vector<PreferencePair> pairs_;
};

struct InstructionSet {
  std::string split;  // sft | preference | unlabeled | eval
  std::vector<Instruction> items;

  std::size_t size() const noexcept { return items.size(); }
  bool empty() const noexcept { return items.empty(); }
};

struct SplitCounts {
  std::size_t sft = 200;
  std::size_t preference = 200;
  std::size_t unlabeled = 400;
  std::size_t eval = 100;
};

struct WorldConfig {
  int alphabet = 12;        // content symbols in use, <= vocab::kContentCount
  int min_args = 2;
  int max_args = 4;
  int max_repeat_args = 2;  // argument length cap for repeat-k
  int max_response = 10;    // response token budget including the terminator
  double demo_filler_rate = 0.0;  // chance of a filler in each gap of a demonstration

  int max_prompt() const { return max_args + 3; }
  int context() const { return max_prompt() + max_response; }
};

struct Splits {
  InstructionSet sft, preference, unlabeled, eval;
};

// Deterministic in `seed`. Families are assigned round-robin inside each split
// and instruction ids are unique across all four splits. Throws ConfigError
// when a count is zero or the template space cannot supply enough distinct
// instructions.
Splits generate_splits(std::uint64_t seed, const SplitCounts& counts, const WorldConfig& cfg = {});

// The unique correct completion, terminator included.
Response gold_answer(const Instruction& x);

// A demonstration: the gold answer with a filler inserted into each gap
// (before every content token and before the terminator) with probability
// cfg.demo_filler_rate, never exceeding cfg.max_response tokens. Canonically
// equal to the gold answer.
Response demonstration(const Instruction& x, const WorldConfig& cfg, std::uint64_t seed);

struct TrueRewardSpec {
  double correctness_weight = 4.0;
  double brevity_weight = 1.0;
  double format_weight = 0.5;
  double temperature = 1.0;     // annotator noise tau, > 0
  double verbosity_bias = 0.0;  // annotator-only bonus per response token

  void validate() const;
};

// correctness: matched positions of the canonical content against gold,
//   divided by the gold length;
// brevity: tokens of content beyond the gold length, divided by gold length;
// format: 1 when the response terminated.
struct RewardBreakdown {
  double correctness = 0.0;
  double excess_length = 0.0;
  double format = 0.0;
  double total = 0.0;
};

RewardBreakdown true_reward_breakdown(const Instruction& x, const Response& y, const TrueRewardSpec& spec);
double true_reward(const Instruction& x, const Response& y, const TrueRewardSpec& spec);

// Probability that the simulated annotator prefers y1 over y2.
double preference_probability(const Instruction& x, const Response& y1, const Response& y2,
                              const TrueRewardSpec& spec);

// Bradley-Terry judgement. The draw is made on the canonically ordered pair,
// so annotate(x, a, b, s) and annotate(x, b, a, s) pick the same winner.
// Throws std::invalid_argument when y1 and y2 are identical.
PreferencePair annotate(const Instruction& x, const Response& y1, const Response& y2,
                        const TrueRewardSpec& spec, std::uint64_t seed);

// Draws one response for an instruction; must be deterministic in the seed.
using Sampler = std::function<Response(const Instruction&, std::uint64_t seed)>;

struct CollectionResult {
  PreferenceDataset dataset{"D"};
  std::vector<std::uint64_t> skipped;  // instruction ids with no distinct pair
};

// One annotated pair per instruction from two samples. When the samples
// collide the second one is redrawn up to `max_attempts` times before the
// instruction is skipped.
CollectionResult collect_preferences(const Sampler& sampler, const InstructionSet& split,
                                     const TrueRewardSpec& spec, std::uint64_t seed,
                                     int max_attempts = 8);

}  // namespace rlp::world
