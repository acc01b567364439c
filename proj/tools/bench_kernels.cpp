// Timing comparison of the OpenMP kernels against their serial references on
// training-step-sized shapes, plus a whole loss/gradient step. The two
// variants must agree bit-exactly; this binary checks that while timing.

#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "sgpo/kernels.hpp"
#include "sgpo/model.hpp"
#include "sgpo/rng.hpp"
#include "sgpo/train.hpp"

using namespace sgpo;
using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::vector<double> randn(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

template <typename F>
double time_best_of(int reps, F&& f) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = Clock::now();
    f();
    best = std::min(best, ms_since(t0));
  }
  return best;
}

void report(const char* name, double serial_ms, double parallel_ms, bool equal) {
  std::printf("%-28s serial %8.2f ms   openmp %8.2f ms   speedup %5.2fx   %s\n", name, serial_ms,
              parallel_ms, serial_ms / parallel_ms, equal ? "bitwise-equal" : "MISMATCH");
}

}  // namespace

int main() {
#ifdef _OPENMP
  std::printf("openmp threads: %d\n", omp_get_max_threads());
#else
  std::printf("built without openmp\n");
#endif
  Rng rng(7);
  const int t = 192, d = 64, ff = 256, heads = 4, vocab = 267;
  const int reps = 20;

  {
    auto x = randn(rng, static_cast<std::size_t>(t) * d);
    auto w = randn(rng, static_cast<std::size_t>(d) * ff);
    auto b = randn(rng, static_cast<std::size_t>(ff));
    std::vector<double> out_s(static_cast<std::size_t>(t) * ff), out_p(out_s.size());
    const double ts = time_best_of(reps, [&] {
      kernels::serial::linear_forward(out_s.data(), x.data(), w.data(), b.data(), t, d, ff);
    });
    const double tp = time_best_of(reps, [&] {
      kernels::linear_forward(out_p.data(), x.data(), w.data(), b.data(), t, d, ff);
    });
    report("linear_forward", ts, tp, out_s == out_p);
  }
  {
    auto q = randn(rng, static_cast<std::size_t>(t) * d);
    auto k = randn(rng, static_cast<std::size_t>(t) * d);
    auto v = randn(rng, static_cast<std::size_t>(t) * d);
    const std::size_t ptt = static_cast<std::size_t>(heads) * t * t;
    std::vector<double> ctx_s(q.size()), ctx_p(q.size()), probs_s(ptt, 0.0), probs_p(ptt, 0.0);
    const double ts = time_best_of(reps, [&] {
      kernels::serial::attention_forward(ctx_s.data(), probs_s.data(), q.data(), k.data(), v.data(),
                                         t, d, heads);
    });
    const double tp = time_best_of(reps, [&] {
      kernels::attention_forward(ctx_p.data(), probs_p.data(), q.data(), k.data(), v.data(), t, d,
                                 heads);
    });
    report("attention_forward", ts, tp, ctx_s == ctx_p && probs_s == probs_p);

    auto dctx = randn(rng, q.size());
    std::vector<double> dq_s(q.size()), dq_p(q.size()), dk_s(q.size()), dk_p(q.size());
    std::vector<double> dv_s(q.size()), dv_p(q.size()), sc_s(ptt, 0.0), sc_p(ptt, 0.0);
    const double tbs = time_best_of(reps, [&] {
      kernels::serial::attention_backward(dq_s.data(), dk_s.data(), dv_s.data(), sc_s.data(),
                                          dctx.data(), probs_s.data(), q.data(), k.data(), v.data(),
                                          t, d, heads);
    });
    const double tbp = time_best_of(reps, [&] {
      kernels::attention_backward(dq_p.data(), dk_p.data(), dv_p.data(), sc_p.data(), dctx.data(),
                                  probs_p.data(), q.data(), k.data(), v.data(), t, d, heads);
    });
    report("attention_backward", tbs, tbp, dq_s == dq_p && dk_s == dk_p && dv_s == dv_p);
  }
  {
    auto x = randn(rng, static_cast<std::size_t>(t) * ff);
    auto dout = randn(rng, static_cast<std::size_t>(t) * d);
    std::vector<double> dw_s(static_cast<std::size_t>(ff) * d, 0.0), dw_p(dw_s);
    std::vector<double> db_s(static_cast<std::size_t>(d), 0.0), db_p(db_s);
    const double ts = time_best_of(reps, [&] {
      kernels::serial::linear_backward_params(dw_s.data(), db_s.data(), x.data(), dout.data(), t,
                                              ff, d);
    });
    const double tp = time_best_of(reps, [&] {
      kernels::linear_backward_params(dw_p.data(), db_p.data(), x.data(), dout.data(), t, ff, d);
    });
    report("linear_backward_params", ts, tp, dw_s == dw_p && db_s == db_p);
  }
  {
    // whole loss+gradient step on a default-sized model; the batch-level
    // parallelism is the one the training loop actually exercises
    ModelConfig cfg;
    Parameters params = init_params(cfg, vocab, 11);
    Rng trng(9);
    std::vector<SftItem> batch;
    for (int i = 0; i < 8; ++i) {
      TokenSeq prompt(40), target(40);
      for (Token& tok : prompt) tok = static_cast<Token>(trng.below(vocab));
      for (Token& tok : target) tok = static_cast<Token>(trng.below(vocab));
      batch.push_back({std::move(prompt), std::move(target)});
    }
    SftLossGrad a, b;
    const double tp = time_best_of(3, [&] { a = sft_loss_and_grad(params, batch); });
#ifdef _OPENMP
    const int saved = omp_get_max_threads();
    omp_set_num_threads(1);
    const double ts = time_best_of(3, [&] { b = sft_loss_and_grad(params, batch); });
    omp_set_num_threads(saved);
#else
    const double ts = time_best_of(3, [&] { b = sft_loss_and_grad(params, batch); });
#endif
    report("sft_loss_and_grad (batch 8)", ts, tp, a.loss == b.loss && a.grads == b.grads);
  }
  return 0;
}
