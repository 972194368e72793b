#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rlp/numerics/optimizer.hpp"
#include "rlp/seqmodel/transformer.hpp"
#include "rlp/taskworld/taskworld.hpp"

namespace rlp::seq {

// Transformer used as a conditional language model over responses.
// Role: sft | policy | retrained-policy | reference.
struct PolicyModel {
  Transformer net;
  std::string role = "sft";

  PolicyModel() = default;
  explicit PolicyModel(TransformerConfig cfg, std::string role_tag = "sft") : net(cfg), role(std::move(role_tag)) {}
};

struct SamplingConfig {
  double temperature = 1.0;  // > 0
  int max_new_tokens = 10;
  int terminator = world::vocab::kEos;
  std::uint64_t seed = 0;
  bool greedy = false;  // argmax decoding, the temperature -> 0 limit

  void validate() const;
  static SamplingConfig argmax(int max_new_tokens = 10) {
    SamplingConfig c;
    c.greedy = true;
    c.max_new_tokens = max_new_tokens;
    return c;
  }
};

// Autoregressive sampling until the terminator or the token budget; the
// budget is also capped by the context length.
world::Response sample(const PolicyModel& model, const world::Instruction& x, const SamplingConfig& cfg);

// n draws with per-draw seeds derived from (cfg.seed, x.id, draw index).
// Duplicates are kept.
std::vector<world::Response> sample_set(const PolicyModel& model, const world::Instruction& x, int n,
                                        const SamplingConfig& cfg);

struct SequenceLogprob {
  double total = 0.0;
  std::vector<double> per_token;
};

// Exact log-probability of y given x at temperature 1.
SequenceLogprob sequence_logprob(const PolicyModel& model, const world::Instruction& x, const world::Response& y);

// Tape view of one (prompt, response) pass. Row t of `token_logprobs`,
// `log_probs` and `states` belongs to response token t; `states` are the
// final-layer features at the position that predicts that token.
struct ResponseForward {
  num::Var states;          // [|y|, width]
  num::Var log_probs;       // [|y|, vocab]
  num::Var token_logprobs;  // [|y|, 1]
};

// y must be non-empty and prompt ++ y must fit the context.
ResponseForward forward_response(num::Tape& tape, Transformer& net, const world::Tokens& prompt,
                                 const world::Tokens& response);

struct SftConfig {
  int epochs = 30;
  int batch_size = 16;
  num::AdamConfig adam{};
  std::uint64_t seed = 0;
};

struct SftReport {
  double initial_loss = 0.0;
  std::vector<double> epoch_loss;  // mean token cross-entropy over the demos after each epoch
};

using Demo = std::pair<world::Instruction, world::Response>;

// Token-level cross-entropy on response tokens; prompt tokens are context
// only. Throws DivergenceError on a non-finite loss.
SftReport sft_train(PolicyModel& model, const std::vector<Demo>& demos, const SftConfig& cfg);

// Mean token cross-entropy of the demos under the model.
double demo_cross_entropy(const PolicyModel& model, const std::vector<Demo>& demos);

}  // namespace rlp::seq
