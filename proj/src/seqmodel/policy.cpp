#include "rlp/seqmodel/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "rlp/common/error.hpp"
#include "rlp/common/rng.hpp"
#include "rlp/numerics/ops.hpp"

namespace rlp::seq {

using world::Instruction;
using world::Response;
using world::Tokens;

void SamplingConfig::validate() const {
  if (!greedy && !(temperature > 0.0)) throw ConfigError("sampling: temperature must be > 0");
  if (max_new_tokens < 1) throw ConfigError("sampling: max_new_tokens must be >= 1");
}

Response sample(const PolicyModel& model, const Instruction& x, const SamplingConfig& cfg) {
  cfg.validate();
  const Tokens prompt = x.rendered();
  const int context = model.net.config().context;
  if (static_cast<int>(prompt.size()) >= context) throw std::invalid_argument("sample: prompt does not fit context");
  const int budget = std::min(cfg.max_new_tokens, context - static_cast<int>(prompt.size()) + 1);

  Rng rng(cfg.seed);
  Transformer::Decoder dec(model.net);
  std::span<const double> logits;
  for (int t : prompt) logits = dec.step(t);

  Response out;
  out.producer = model.role;
  std::vector<double> probs(logits.size());
  for (int i = 0; i < budget; ++i) {
    int next;
    if (cfg.greedy) {
      next = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    } else {
      const double mx = *std::max_element(logits.begin(), logits.end());
      for (std::size_t v = 0; v < logits.size(); ++v) probs[v] = std::exp((logits[v] - mx) / cfg.temperature);
      next = static_cast<int>(rng.categorical(probs));
    }
    out.tokens.push_back(next);
    if (next == cfg.terminator || i + 1 == budget) break;
    logits = dec.step(next);
  }
  return out;
}

std::vector<Response> sample_set(const PolicyModel& model, const Instruction& x, int n, const SamplingConfig& cfg) {
  if (n < 1) throw std::invalid_argument("sample_set: n must be positive");
  std::vector<Response> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    SamplingConfig c = cfg;
    c.seed = derive_seed({cfg.seed, x.id, static_cast<std::uint64_t>(i)});
    out.push_back(sample(model, x, c));
  }
  return out;
}

ResponseForward forward_response(num::Tape& tape, Transformer& net, const Tokens& prompt, const Tokens& response) {
  if (prompt.empty() || response.empty()) throw std::invalid_argument("forward_response: empty prompt or response");
  Tokens input = prompt;
  input.insert(input.end(), response.begin(), response.end() - 1);
  num::Var h = net.hidden(tape, input);
  const std::size_t first = prompt.size() - 1;
  ResponseForward f;
  f.states = num::slice_rows(h, first, response.size());
  f.log_probs = num::log_softmax(net.logits(tape, f.states));
  f.token_logprobs = num::pick(f.log_probs, response);
  return f;
}

SequenceLogprob sequence_logprob(const PolicyModel& model, const Instruction& x, const Response& y) {
  SequenceLogprob out;
  if (y.tokens.empty()) return out;
  num::Tape tape(false);
  auto f = forward_response(tape, const_cast<Transformer&>(model.net), x.rendered(), y.tokens);
  const auto& v = f.token_logprobs.value();
  out.per_token.assign(v.values().begin(), v.values().end());
  out.total = std::accumulate(out.per_token.begin(), out.per_token.end(), 0.0);
  return out;
}

double demo_cross_entropy(const PolicyModel& model, const std::vector<Demo>& demos) {
  double nll = 0.0;
  std::size_t tokens = 0;
  for (const auto& [x, y] : demos) {
    const auto lp = sequence_logprob(model, x, y);
    nll -= lp.total;
    tokens += lp.per_token.size();
  }
  return tokens ? nll / static_cast<double>(tokens) : 0.0;
}

SftReport sft_train(PolicyModel& model, const std::vector<Demo>& demos, const SftConfig& cfg) {
  if (demos.empty()) throw std::invalid_argument("sft_train: no demonstrations");
  SftReport report;
  report.initial_loss = demo_cross_entropy(model, demos);
  if (cfg.epochs <= 0) return report;

  num::Adam opt(model.net.parameters(), cfg.adam);
  opt.zero_grad();
  Rng rng(derive_seed({cfg.seed, 0x5f7}));
  std::vector<std::size_t> order(demos.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = static_cast<std::size_t>(std::max(1, cfg.batch_size));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      std::size_t count = 0;
      for (std::size_t i = start; i < end; ++i) count += demos[order[i]].second.tokens.size();
      for (std::size_t i = start; i < end; ++i) {
        const auto& [x, y] = demos[order[i]];
        num::Tape tape;
        auto f = forward_response(tape, model.net, x.rendered(), y.tokens);
        num::Var loss = num::scale(num::sum(f.token_logprobs), -1.0 / static_cast<double>(count));
        if (!std::isfinite(loss.item())) throw DivergenceError("sft_train: non-finite loss");
        tape.backward(loss);
      }
      opt.step();
    }
    report.epoch_loss.push_back(demo_cross_entropy(model, demos));
    if (!std::isfinite(report.epoch_loss.back())) throw DivergenceError("sft_train: non-finite loss");
  }
  return report;
}

}  // namespace rlp::seq
