#include <doctest.h>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "sgpo/model.hpp"
#include "sgpo/rng.hpp"
#include "sgpo/train.hpp"

using namespace sgpo;

namespace {

ModelConfig toy_config() {
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.max_seq_len = 32;
  cfg.init_scale = 0.08;
  return cfg;
}

TokenSeq random_tokens(Rng& rng, int len, int vocab) {
  TokenSeq t(static_cast<std::size_t>(len));
  for (Token& x : t) x = static_cast<Token>(rng.below(static_cast<std::uint64_t>(vocab)));
  return t;
}

std::vector<SftItem> toy_sft_batch(int vocab, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SftItem> batch;
  for (int i = 0; i < 3; ++i)
    batch.push_back({random_tokens(rng, 4, vocab), random_tokens(rng, 5 + i, vocab)});
  return batch;
}

std::vector<DpoItem> toy_dpo_batch(int vocab, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<DpoItem> batch;
  for (int i = 0; i < 3; ++i)
    batch.push_back({random_tokens(rng, 4, vocab), random_tokens(rng, 5, vocab),
                     random_tokens(rng, 6, vocab)});
  return batch;
}

}  // namespace

TEST_CASE("finite_diff_check is exact on a quadratic") {
  // support restricted to 64 coordinates so the sum's own rounding stays far
  // below the 1e-10 gate; untouched coordinates have exactly zero error
  Parameters p = init_params(toy_config(), 24, 33);
  LossFn quad = [](const Parameters& q, std::vector<double>* grads) {
    double loss = 0.0;
    for (std::size_t i = 0; i < 64; ++i) {
      const double c = 1.0 + static_cast<double>(i % 7);
      loss += 0.5 * c * q.data[i] * q.data[i];
      if (grads) (*grads)[i] += c * q.data[i];
    }
    return loss;
  };
  CHECK(finite_diff_check(p, quad, 200, 1e-5, 1) < 1e-10);
}

TEST_CASE("sft gradients pass central finite differences") {
  const int vocab = 24;
  Parameters p = init_params(toy_config(), vocab, 101);
  auto batch = toy_sft_batch(vocab, 5);
  LossFn loss = [&](const Parameters& q, std::vector<double>* grads) {
    SftLossGrad lg = sft_loss_and_grad(q, batch);
    if (grads) {
      for (std::size_t i = 0; i < grads->size(); ++i) (*grads)[i] += lg.grads[i];
    }
    return lg.loss;
  };
  CHECK(finite_diff_check(p, loss, 200, 1e-5, 2) < 1e-4);
}

TEST_CASE("dpo gradients pass central finite differences") {
  const int vocab = 24;
  Parameters p = init_params(toy_config(), vocab, 202);
  Parameters ref = init_params(toy_config(), vocab, 203);
  auto batch = toy_dpo_batch(vocab, 6);
  LossFn loss = [&](const Parameters& q, std::vector<double>* grads) {
    DpoLossGrad lg = dpo_loss_and_grad(q, ref, batch, 0.5);
    if (grads) {
      for (std::size_t i = 0; i < grads->size(); ++i) (*grads)[i] += lg.grads[i];
    }
    return lg.loss;
  };
  CHECK(finite_diff_check(p, loss, 200, 1e-5, 3) < 1e-4);
}

TEST_CASE("sft loss of the zero-initialized model is log(vocab)") {
  ModelConfig cfg = toy_config();
  cfg.init_scale = 0.0;
  const int vocab = 24;
  Parameters p = init_params(cfg, vocab, 0);
  auto batch = toy_sft_batch(vocab, 7);
  SftLossGrad lg = sft_loss_and_grad(p, batch);
  CHECK(lg.loss == doctest::Approx(std::log(static_cast<double>(vocab))).epsilon(1e-9));
}

TEST_CASE("duplicating every batch item leaves the sft loss unchanged") {
  const int vocab = 24;
  Parameters p = init_params(toy_config(), vocab, 11);
  auto batch = toy_sft_batch(vocab, 8);
  auto doubled = batch;
  doubled.insert(doubled.end(), batch.begin(), batch.end());
  const double a = sft_loss_and_grad(p, batch).loss;
  const double b = sft_loss_and_grad(p, doubled).loss;
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("dpo loss is ln 2 when the policy equals the reference") {
  const int vocab = 24;
  Parameters p = init_params(toy_config(), vocab, 55);
  auto batch = toy_dpo_batch(vocab, 9);
  for (double beta : {0.1, 0.5, 1.0}) {
    DpoLossGrad lg = dpo_loss_and_grad(p, p, batch, beta);
    CHECK(lg.loss == doctest::Approx(std::log(2.0)).epsilon(1e-9));
    CHECK(lg.mean_margin == doctest::Approx(0.0).epsilon(1e-12));
  }
  // swapping chosen and rejected keeps the zero-margin identity
  auto swapped = batch;
  for (DpoItem& item : swapped) std::swap(item.chosen, item.rejected);
  CHECK(dpo_loss_and_grad(p, p, swapped, 0.5).loss == doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("dpo counts degenerate pairs and gives them zero gradient") {
  const int vocab = 24;
  Parameters p = init_params(toy_config(), vocab, 77);
  Rng rng(10);
  TokenSeq prompt = random_tokens(rng, 4, vocab);
  TokenSeq resp = random_tokens(rng, 5, vocab);
  std::vector<DpoItem> batch{{prompt, resp, resp}};
  DpoLossGrad lg = dpo_loss_and_grad(p, p, batch, 0.5);
  CHECK(lg.degenerate_pairs == 1);
  CHECK(lg.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  for (double g : lg.grads) CHECK(g == 0.0);
}

TEST_CASE("dpo loss strictly decreases as the chosen margin grows") {
  // 0-layer 3-token models with constant logit rows (peak, 0, 0): raising the
  // peak raises logp(chosen=token 0) and lowers logp(rejected=token 1).
  ModelConfig cfg;
  cfg.d_model = 4;
  cfg.n_layers = 0;
  cfg.n_heads = 1;
  cfg.d_ff = 8;
  cfg.max_seq_len = 16;
  cfg.init_scale = 0.0;
  auto make = [&](double peak) {
    Parameters p = init_params(cfg, 3, 0);
    p.tensor("lnf.bias")[0] = 1.0;
    p.tensor("out_proj")[0] = peak;
    return p;
  };
  Parameters ref = make(0.0);
  std::vector<DpoItem> batch{{TokenSeq{2}, TokenSeq{0, 0}, TokenSeq{1, 1}}};
  double prev = dpo_loss_and_grad(make(0.0), ref, batch, 0.5).loss;
  CHECK(prev == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  for (double peak : {0.5, 1.0, 2.0, 4.0}) {
    const double cur = dpo_loss_and_grad(make(peak), ref, batch, 0.5).loss;
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("adam_step invariants") {
  Parameters p = init_params(toy_config(), 24, 1);
  const Parameters before = p;
  AdamState st = AdamState::zeros(p.data.size());
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;

  std::vector<double> zeros(p.data.size(), 0.0);
  adam_step(p, zeros, st, cfg);
  CHECK(p.data == before.data);
  CHECK(st.step == 1);

  // determinism: identical inputs give identical outputs
  Parameters p1 = before, p2 = before;
  AdamState s1 = AdamState::zeros(p1.data.size()), s2 = AdamState::zeros(p2.data.size());
  std::vector<double> g(p1.data.size(), 0.01);
  g[0] = -3.0;
  adam_step(p1, g, s1, cfg);
  adam_step(p2, g, s2, cfg);
  CHECK(p1.data == p2.data);
  CHECK(s1.m == s2.m);
  CHECK(s1.v == s2.v);

  // non-finite gradients abort
  g[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS(adam_step(p1, g, s1, cfg));
}
