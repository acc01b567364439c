#include "sgpo/train.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "model_internal.hpp"
#include "sgpo/errors.hpp"
#include "sgpo/kernels.hpp"
#include "sgpo/parallel.hpp"
#include "sgpo/rng.hpp"

namespace sgpo {

void TrainConfig::validate() const {
  if (learning_rate <= 0) throw ConfigError("train.learning_rate must be > 0");
  if (dpo_beta <= 0) throw ConfigError("train.dpo_beta must be > 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (adam_beta1 < 0 || adam_beta1 >= 1) throw ConfigError("train.adam_beta1 must be in [0,1)");
  if (adam_beta2 < 0 || adam_beta2 >= 1) throw ConfigError("train.adam_beta2 must be in [0,1)");
  if (adam_epsilon <= 0) throw ConfigError("train.adam_epsilon must be > 0");
}

namespace {

// -log(sigmoid(z)) without overflow
double softplus_neg(double z) {
  if (z >= 0.0) return std::log1p(std::exp(-z));
  return -z + std::log1p(std::exp(z));
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void check_item(const Parameters& params, const TokenSeq& prompt, const TokenSeq& target,
                const char* what) {
  if (prompt.empty()) throw std::invalid_argument(std::string(what) + ": empty prompt");
  if (target.empty()) throw std::invalid_argument(std::string(what) + ": empty target");
  if (prompt.size() + target.size() > static_cast<std::size_t>(params.config.max_seq_len))
    throw std::invalid_argument(std::string(what) + ": sequence exceeds max_seq_len");
}

// input/target/weight rows for one (prompt, response) pair; the weight w is
// placed on every response-predicting position.
struct CeRows {
  TokenSeq input;
  TokenSeq targets;
  std::vector<double> weights;
};

CeRows make_rows(const TokenSeq& prompt, const TokenSeq& response, double w) {
  CeRows r;
  const std::size_t n = prompt.size() + response.size();
  r.input.reserve(n - 1);
  r.input.insert(r.input.end(), prompt.begin(), prompt.end());
  r.input.insert(r.input.end(), response.begin(), response.end() - 1);
  r.targets.reserve(n - 1);
  r.targets.insert(r.targets.end(), prompt.begin() + 1, prompt.end());
  r.targets.insert(r.targets.end(), response.begin(), response.end());
  r.weights.assign(n - 1, 0.0);
  for (std::size_t j = prompt.size() - 1; j < n - 1; ++j) r.weights[j] = w;
  return r;
}

}  // namespace

SftLossGrad sft_loss_and_grad(const Parameters& params, std::span<const SftItem> batch) {
  if (batch.empty()) throw std::invalid_argument("sft_loss_and_grad: empty batch");
  const int b = static_cast<int>(batch.size());
  for (const SftItem& item : batch) check_item(params, item.prompt, item.target, "sft item");

  std::vector<std::vector<double>> item_grads(static_cast<std::size_t>(b));
  std::vector<double> item_loss(static_cast<std::size_t>(b), 0.0);
  parallel_for_items(b, [&](int i) {
    const SftItem& item = batch[static_cast<std::size_t>(i)];
    const double w = -1.0 / (static_cast<double>(b) * static_cast<double>(item.target.size()));
    CeRows rows = make_rows(item.prompt, item.target, w);
    item_grads[static_cast<std::size_t>(i)].assign(params.layout.total, 0.0);
    item_loss[static_cast<std::size_t>(i)] = detail::weighted_ce(
        params, rows.input, rows.targets, rows.weights, &item_grads[static_cast<std::size_t>(i)]);
  });

  SftLossGrad out;
  for (int i = 0; i < b; ++i) out.loss += item_loss[static_cast<std::size_t>(i)];
  out.grads.assign(params.layout.total, 0.0);
  std::vector<const double*> ptrs(static_cast<std::size_t>(b));
  for (int i = 0; i < b; ++i) ptrs[static_cast<std::size_t>(i)] = item_grads[static_cast<std::size_t>(i)].data();
  kernels::reduce_rows(out.grads.data(), ptrs.data(), b, params.layout.total);
  return out;
}

DpoLossGrad dpo_loss_and_grad(const Parameters& params, const Parameters& ref_params,
                              std::span<const DpoItem> batch, double beta) {
  if (batch.empty()) throw std::invalid_argument("dpo_loss_and_grad: empty batch");
  if (beta <= 0) throw std::invalid_argument("dpo_loss_and_grad: beta must be > 0");
  if (ref_params.layout.total != params.layout.total)
    throw std::invalid_argument("dpo_loss_and_grad: reference shape mismatch");
  const int b = static_cast<int>(batch.size());
  for (const DpoItem& pair : batch) {
    check_item(params, pair.prompt, pair.chosen, "dpo pair (chosen)");
    check_item(params, pair.prompt, pair.rejected, "dpo pair (rejected)");
  }

  std::vector<std::vector<double>> item_grads(static_cast<std::size_t>(b));
  std::vector<double> item_loss(static_cast<std::size_t>(b), 0.0);
  std::vector<double> item_margin(static_cast<std::size_t>(b), 0.0);
  std::vector<int> item_degenerate(static_cast<std::size_t>(b), 0);
  parallel_for_items(b, [&](int i) {
    const DpoItem& pair = batch[static_cast<std::size_t>(i)];
    const double lp_c = detail::logprob_response(params, pair.prompt, pair.chosen);
    const double lp_r = detail::logprob_response(params, pair.prompt, pair.rejected);
    const double lpref_c = detail::logprob_response(ref_params, pair.prompt, pair.chosen);
    const double lpref_r = detail::logprob_response(ref_params, pair.prompt, pair.rejected);
    const double z = beta * ((lp_c - lpref_c) - (lp_r - lpref_r));
    item_loss[static_cast<std::size_t>(i)] = softplus_neg(z) / b;
    item_margin[static_cast<std::size_t>(i)] = z;
    item_degenerate[static_cast<std::size_t>(i)] = pair.chosen == pair.rejected ? 1 : 0;

    item_grads[static_cast<std::size_t>(i)].assign(params.layout.total, 0.0);
    if (item_degenerate[static_cast<std::size_t>(i)]) return;  // exact zero contribution
    const double s = sigmoid(-z);  // d(-log sigmoid(z))/dz = -s
    CeRows rows_c = make_rows(pair.prompt, pair.chosen, -beta * s / b);
    detail::weighted_ce(params, rows_c.input, rows_c.targets, rows_c.weights,
                        &item_grads[static_cast<std::size_t>(i)]);
    CeRows rows_r = make_rows(pair.prompt, pair.rejected, beta * s / b);
    detail::weighted_ce(params, rows_r.input, rows_r.targets, rows_r.weights,
                        &item_grads[static_cast<std::size_t>(i)]);
  });

  DpoLossGrad out;
  for (int i = 0; i < b; ++i) {
    out.loss += item_loss[static_cast<std::size_t>(i)];
    out.mean_margin += item_margin[static_cast<std::size_t>(i)];
    out.degenerate_pairs += item_degenerate[static_cast<std::size_t>(i)];
  }
  out.mean_margin /= b;
  out.grads.assign(params.layout.total, 0.0);
  std::vector<const double*> ptrs(static_cast<std::size_t>(b));
  for (int i = 0; i < b; ++i) ptrs[static_cast<std::size_t>(i)] = item_grads[static_cast<std::size_t>(i)].data();
  kernels::reduce_rows(out.grads.data(), ptrs.data(), b, params.layout.total);
  return out;
}

void adam_step(Parameters& params, std::span<const double> grads, AdamState& state,
               const TrainConfig& cfg) {
  if (grads.size() != params.data.size()) throw std::invalid_argument("adam_step: shape mismatch");
  if (state.m.size() != grads.size() || state.v.size() != grads.size())
    throw std::invalid_argument("adam_step: state shape mismatch");
  for (double g : grads) {
    if (!std::isfinite(g))
      throw StageError("adam_step: non-finite gradient (training diverged)");
  }
  const double* g = grads.data();
  std::vector<double> clipped;
  if (cfg.grad_clip_norm > 0) {
    const double norm = std::sqrt(kernels::sum_squares(grads.data(), grads.size()));
    if (norm > cfg.grad_clip_norm) {
      const double scale = cfg.grad_clip_norm / norm;
      clipped.resize(grads.size());
#pragma omp parallel for schedule(static)
      for (long long i = 0; i < static_cast<long long>(grads.size()); ++i)
        clipped[static_cast<std::size_t>(i)] = grads[static_cast<std::size_t>(i)] * scale;
      g = clipped.data();
    }
  }
  state.step += 1;
  kernels::adam_update(params.data.data(), g, state.m.data(), state.v.data(), state.step,
                       params.data.size(), cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
                       cfg.adam_epsilon);
}

double finite_diff_check(const Parameters& params, const LossFn& loss_fn,
                         int coordinate_samples, double epsilon, std::uint64_t seed) {
  std::vector<double> analytic(params.layout.total, 0.0);
  loss_fn(params, &analytic);

  Rng rng(seed);
  std::unordered_set<std::size_t> seen;
  std::vector<std::size_t> coords;
  coords.reserve(static_cast<std::size_t>(coordinate_samples));
  while (coords.size() < static_cast<std::size_t>(coordinate_samples) &&
         seen.size() < params.layout.total) {
    const std::size_t c = static_cast<std::size_t>(rng.below(params.layout.total));
    if (seen.insert(c).second) coords.push_back(c);
  }

  Parameters probe = params;
  double max_err = 0.0;
  for (std::size_t c : coords) {
    const double saved = probe.data[c];
    probe.data[c] = saved + epsilon;
    const double lp = loss_fn(probe, nullptr);
    probe.data[c] = saved - epsilon;
    const double lm = loss_fn(probe, nullptr);
    probe.data[c] = saved;
    const double numeric = (lp - lm) / (2.0 * epsilon);
    const double a = analytic[c];
    const double err = std::abs(a - numeric) / std::max(1e-12, std::abs(a) + std::abs(numeric));
    if (err > max_err) max_err = err;
  }
  return max_err;
}

}  // namespace sgpo
