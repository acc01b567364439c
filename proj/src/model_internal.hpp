#pragma once

// Internal forward/backward engine shared by model.cpp and train.cpp.
// Two paths exist: a batched full-sequence path that stores activations for
// the backward pass, and an incremental position-by-position path with a k/v
// cache for decoding and value-only scoring. Both are built from the same
// per-row kernels, so their outputs are bit-identical.

#include <span>
#include <vector>

#include "sgpo/model.hpp"

namespace sgpo::detail {

struct LayerView {
  const double *ln1_g, *ln1_b, *wq, *wk, *wv, *wo;
  const double *ln2_g, *ln2_b, *w1, *b1, *w2, *b2;
};

// Raw pointers into a Parameters buffer, resolved once per pass.
struct ParamView {
  int d, heads, ff, vocab, max_seq, n_layers;
  double eps;
  const double* tok_emb;
  const double* pos_emb;
  std::vector<LayerView> layers;
  const double *lnf_g, *lnf_b, *out_proj;

  explicit ParamView(const Parameters& p);
};

struct MutLayerView {
  double *ln1_g, *ln1_b, *wq, *wk, *wv, *wo;
  double *ln2_g, *ln2_b, *w1, *b1, *w2, *b2;
};

// Same structure over a flat gradient buffer (layout order of Parameters).
struct GradView {
  double* tok_emb;
  double* pos_emb;
  std::vector<MutLayerView> layers;
  double *lnf_g, *lnf_b, *out_proj;

  GradView(const Parameters& p, std::vector<double>& grads);
};

struct LayerActs {
  std::vector<double> ln1_xhat, ln1_out, ln1_istd;
  std::vector<double> q, k, v, probs, ctx;
  std::vector<double> x_mid;
  std::vector<double> ln2_xhat, ln2_out, ln2_istd;
  std::vector<double> ff_pre, ff_act;
  std::vector<double> x_out;
};

struct ForwardActs {
  int t_rows = 0;
  std::vector<double> x0;
  std::vector<LayerActs> layers;
  std::vector<double> lnf_xhat, lnf_out, lnf_istd;
  std::vector<double> logits;  // T x vocab
};

// Full-sequence forward storing everything the backward pass needs.
void forward_full(const Parameters& p, std::span<const Token> input, ForwardActs& acts);

// Accumulates d(sum of dlogits-weighted logits)/d(params) into grads.
void backward_full(const Parameters& p, std::span<const Token> input, const ForwardActs& acts,
                   const std::vector<double>& dlogits, std::vector<double>& grads);

// Returns sum_j weights[j] * log softmax(logits_j)[targets[j]] and, when
// grads is non-null, accumulates its exact gradient.
double weighted_ce(const Parameters& p, std::span<const Token> input,
                   std::span<const Token> targets, std::span<const double> weights,
                   std::vector<double>* grads);

// Incremental decoder with per-layer k/v caches.
class Decoder {
 public:
  explicit Decoder(const Parameters& p);

  // Feed one token; returns the logit row predicting the next token.
  const double* step(Token tok);
  int pos() const { return pos_; }

 private:
  ParamView pv_;
  int pos_ = 0;
  std::vector<std::vector<double>> kcache_, vcache_;  // per layer, T*d appended
  std::vector<double> x_, a_, q_, k_, v_, ctx_, tmp_, ff1_, ff2_, probs_, logits_;
};

// Value-only sum of response log-probabilities via the incremental path.
double logprob_response(const Parameters& p, std::span<const Token> prompt,
                        std::span<const Token> response);

void check_tokens(const Parameters& p, std::span<const Token> tokens);

}  // namespace sgpo::detail
