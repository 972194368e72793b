#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rlp/numerics/tape.hpp"
#include "rlp/numerics/tensor.hpp"

namespace rlp::seq {

struct TransformerConfig {
  int vocab = 32;
  int context = 17;
  int width = 64;
  int heads = 4;
  int blocks = 2;
  int mlp_hidden = 128;

  void validate() const;
  friend bool operator==(const TransformerConfig&, const TransformerConfig&) = default;
};

// Pre-norm causal transformer: token + position embeddings, `blocks` layers of
// multi-head self-attention and GELU MLP, final layer norm, untied output
// projection.
class Transformer {
 public:
  struct Block {
    num::Tensor ln1_gain, ln1_bias;
    num::Tensor w_qkv, b_qkv;  // [width, 3 width]: query | key | value
    num::Tensor w_out, b_out;
    num::Tensor ln2_gain, ln2_bias;
    num::Tensor w_fc, b_fc;
    num::Tensor w_proj, b_proj;
  };

  Transformer() : Transformer(TransformerConfig{}) {}
  explicit Transformer(TransformerConfig cfg);

  // Gaussian initialisation; the output projection starts at zero so an
  // untrained model predicts the uniform distribution.
  void init(std::uint64_t seed);

  const TransformerConfig& config() const noexcept { return cfg_; }

  // Final-layer (normalised) hidden states, one row per input position.
  num::Var hidden(num::Tape& tape, std::span<const int> tokens);
  // Next-token logits for every row of `hidden`.
  num::Var logits(num::Tape& tape, num::Var hidden);

  // Parameters in checkpoint order: token_embedding, position_embedding,
  // per block (ln1 gain/bias, qkv weight/bias, out weight/bias, ln2 gain/bias,
  // fc weight/bias, proj weight/bias), final ln gain/bias, output projection.
  std::vector<num::Tensor*> parameters();
  std::vector<const num::Tensor*> parameters() const;
  std::vector<std::string> parameter_names() const;
  std::size_t parameter_count() const;

  friend bool operator==(const Transformer& a, const Transformer& b);

  // Token-by-token decoding with cached keys and values; no tape. Produces the
  // same logits as the full forward pass up to rounding.
  class Decoder {
   public:
    explicit Decoder(const Transformer& model);
    // Feeds one token, returns logits for the next position.
    std::span<const double> step(int token);
    int position() const noexcept { return pos_; }

   private:
    const Transformer* model_;
    int pos_ = 0;
    std::vector<num::AlignedVector> keys_, values_;  // per block, [context, width]
    num::AlignedVector x_, h_, qkv_, attn_, tmp_, mlp_, logits_, scores_;
  };

 private:
  TransformerConfig cfg_;
  num::Tensor token_embedding_, position_embedding_;
  std::vector<Block> blocks_;
  num::Tensor lnf_gain_, lnf_bias_;
  num::Tensor w_vocab_;
};

}  // namespace rlp::seq
