#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rlp/pipeline/experiment.hpp"

namespace rlp::pipe {

struct MethodResult {
  Method method = Method::Sft;
  WinRateReport winrate;               // against the SFT reference
  std::optional<double> synthetic_accuracy;  // methods that build D-hat
  std::optional<std::size_t> synthetic_size;
};

struct SeedRun {
  std::uint64_t seed = 0;
  std::vector<MethodResult> results;
};

using Progress = std::function<void(const std::string&)>;

// SFT, D, r_phi, PPO and P once for cfg.seed, then every method on top of
// those shared artifacts.
SeedRun run_seed(const ExperimentConfig& cfg, std::span<const Method> methods, const Progress& progress = {});

struct MethodSummary {
  Method method = Method::Sft;
  std::vector<double> per_seed;  // mean win-rate of each seed
  double mean = 0.0;
  double stddev = 0.0;
  std::optional<double> synthetic_accuracy;  // mean over seeds
  std::vector<std::pair<world::TaskFamily, double>> per_family;  // pooled over seeds
};

// One summary per method, in order of first appearance. Throws
// std::invalid_argument when a method is missing from some seed.
std::vector<MethodSummary> summarize(std::span<const SeedRun> runs);

// Fixed-layout text tables: main comparison, representation-loss ablation,
// synthetic-preference ablation, per-family breakdown. Sections without
// rows are left out. Throws std::invalid_argument on empty input.
std::string emit_report(std::span<const MethodSummary> summaries);

// One-sided sign test: probability of at least `wins` successes out of
// `trials` fair coin flips.
double sign_test_p(int wins, int trials);

}  // namespace rlp::pipe
