#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "sgpo/model.hpp"

namespace sgpo {

struct TrainConfig {
  double learning_rate = 3e-4;
  double dpo_beta = 0.5;
  int batch_size = 16;
  int epochs = 1;
  double grad_clip_norm = 1.0;  // <= 0 disables clipping
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t rng_seed = 0;

  void validate() const;  // throws ConfigError
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;

  static AdamState zeros(std::size_t n) { return {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0}; }
};

struct SftItem {
  TokenSeq prompt;
  TokenSeq target;
};

struct SftLossGrad {
  double loss = 0.0;
  std::vector<double> grads;
};

// loss = mean over batch of (-sequence_logprob / target length); loss terms
// only on target positions; exact analytic gradients.
SftLossGrad sft_loss_and_grad(const Parameters& params, std::span<const SftItem> batch);

struct DpoItem {
  TokenSeq prompt;
  TokenSeq chosen;
  TokenSeq rejected;
};

struct DpoLossGrad {
  double loss = 0.0;
  std::vector<double> grads;
  int degenerate_pairs = 0;  // chosen identical to rejected
  double mean_margin = 0.0;  // mean of beta * (delta logratio chosen - rejected)
};

// loss = mean over pairs of -log sigmoid(beta * [(logp(c)-logp_ref(c)) -
// (logp(r)-logp_ref(r))]); no gradient flows through ref_params.
DpoLossGrad dpo_loss_and_grad(const Parameters& params, const Parameters& ref_params,
                              std::span<const DpoItem> batch, double beta);

// Global-norm clipping to cfg.grad_clip_norm, then a bias-corrected Adam
// update in place. Throws StageError on non-finite gradients.
void adam_step(Parameters& params, std::span<const double> grads, AdamState& state,
               const TrainConfig& cfg);

// Central finite differences on uniformly sampled coordinates; returns the
// max over sampled coordinates of |analytic - numeric| / max(1e-12,
// |analytic| + |numeric|). loss_fn must be pure and deterministic; it may
// ignore the grads pointer when it is null.
using LossFn = std::function<double(const Parameters&, std::vector<double>* grads)>;
double finite_diff_check(const Parameters& params, const LossFn& loss_fn,
                         int coordinate_samples, double epsilon, std::uint64_t seed);

}  // namespace sgpo
