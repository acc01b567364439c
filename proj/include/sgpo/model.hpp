#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sgpo/vocab.hpp"

namespace sgpo {

// Character-level autoregressive transformer: learned positional embeddings,
// pre-norm blocks (causal multi-head attention + GELU feed-forward), final
// layer norm, untied output projection. All arithmetic in double precision.
struct ModelConfig {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 256;
  int max_seq_len = 512;
  double init_scale = 0.08;
  double ln_epsilon = 1e-5;

  void validate() const;  // throws ConfigError
};

struct TensorInfo {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::size_t offset = 0;  // in doubles, within the flat buffer

  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

// Named views into one flat weight buffer; order is fixed and determines both
// the init draw order and the checkpoint manifest.
struct ParamLayout {
  std::vector<TensorInfo> tensors;
  std::size_t total = 0;

  static ParamLayout build(const ModelConfig& cfg, int vocab_size);
  const TensorInfo& find(std::string_view name) const;  // throws ConfigError
};

struct Parameters {
  ModelConfig config;
  int vocab_size = 0;
  ParamLayout layout;
  std::vector<double> data;

  std::span<double> tensor(std::string_view name) {
    const TensorInfo& t = layout.find(name);
    return {data.data() + t.offset, t.size()};
  }
  std::span<const double> tensor(std::string_view name) const {
    const TensorInfo& t = layout.find(name);
    return {data.data() + t.offset, t.size()};
  }
  bool all_finite() const;
};

// Weights i.i.d. Gaussian(0, init_scale^2); layer-norm gains 1, biases 0.
// Deterministic in (cfg, vocab_size, seed).
Parameters init_params(const ModelConfig& cfg, int vocab_size, std::uint64_t seed);

struct SamplingConfig {
  double temperature = 0.7;
  double top_p = 0.9;
  int max_new_tokens = 64;
  std::uint64_t rng_seed = 0;
};

// One logit row per input position (row-major T x vocab_size). Row t depends
// only on tokens 0..t.
std::vector<double> forward_logits(const Parameters& params, std::span<const Token> tokens);

// Sum over response positions of log p(response_t | prompt, response_<t).
double sequence_logprob(const Parameters& params, std::span<const Token> prompt,
                        std::span<const Token> response);

// exp(-sequence_logprob / len(response))
double perplexity(const Parameters& params, std::span<const Token> prompt,
                  std::span<const Token> response);

// Autoregressive decoding; stops after emitting stop_token or after
// max_new_tokens. temperature 0 is argmax with ties to the lowest id.
// Returns the generated tokens (stop token included when emitted).
TokenSeq sample(const Parameters& params, std::span<const Token> prompt,
                const SamplingConfig& cfg, Token stop_token);

// Nucleus choice from a categorical: smallest prefix of probabilities sorted
// descending (ties by ascending index) with cumulative mass >= top_p,
// renormalized, then inverse-CDF pick at u in [0,1). Exposed for tests.
int nucleus_pick(std::span<const double> probs, double top_p, double u);

}  // namespace sgpo
