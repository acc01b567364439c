#include <doctest.h>

#include <vector>

#include "sgpo/kernels.hpp"
#include "sgpo/rng.hpp"

using namespace sgpo;

namespace {

std::vector<double> randn(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal() * scale;
  return v;
}

}  // namespace

// The OpenMP kernels must be bit-identical to the serial references: each
// output element is computed by one thread with a fixed summation order.

TEST_CASE("linear kernels match serial reference exactly") {
  Rng rng(42);
  const int t = 37, m = 24, n = 31;
  auto x = randn(rng, static_cast<std::size_t>(t) * m);
  auto w = randn(rng, static_cast<std::size_t>(m) * n);
  auto bias = randn(rng, static_cast<std::size_t>(n));
  auto dout = randn(rng, static_cast<std::size_t>(t) * n);

  std::vector<double> out_p(static_cast<std::size_t>(t) * n), out_s(out_p.size());
  kernels::linear_forward(out_p.data(), x.data(), w.data(), bias.data(), t, m, n);
  kernels::serial::linear_forward(out_s.data(), x.data(), w.data(), bias.data(), t, m, n);
  CHECK(out_p == out_s);

  std::vector<double> dx_p(static_cast<std::size_t>(t) * m), dx_s(dx_p.size());
  kernels::linear_backward_input(dx_p.data(), dout.data(), w.data(), t, m, n);
  kernels::serial::linear_backward_input(dx_s.data(), dout.data(), w.data(), t, m, n);
  CHECK(dx_p == dx_s);

  std::vector<double> dw_p(static_cast<std::size_t>(m) * n, 0.5), dw_s(dw_p);
  std::vector<double> db_p(static_cast<std::size_t>(n), -0.25), db_s(db_p);
  kernels::linear_backward_params(dw_p.data(), db_p.data(), x.data(), dout.data(), t, m, n);
  kernels::serial::linear_backward_params(dw_s.data(), db_s.data(), x.data(), dout.data(), t, m, n);
  CHECK(dw_p == dw_s);
  CHECK(db_p == db_s);
}

TEST_CASE("layernorm kernels match serial reference exactly") {
  Rng rng(7);
  const int t = 19, d = 16;
  auto x = randn(rng, static_cast<std::size_t>(t) * d);
  auto gain = randn(rng, static_cast<std::size_t>(d));
  auto bias = randn(rng, static_cast<std::size_t>(d));
  auto dy = randn(rng, static_cast<std::size_t>(t) * d);

  std::vector<double> y_p(x.size()), y_s(x.size()), xh_p(x.size()), xh_s(x.size());
  std::vector<double> istd_p(static_cast<std::size_t>(t)), istd_s(istd_p);
  kernels::layernorm_forward(y_p.data(), xh_p.data(), istd_p.data(), x.data(), gain.data(),
                             bias.data(), t, d, 1e-5);
  kernels::serial::layernorm_forward(y_s.data(), xh_s.data(), istd_s.data(), x.data(), gain.data(),
                                     bias.data(), t, d, 1e-5);
  CHECK(y_p == y_s);
  CHECK(xh_p == xh_s);
  CHECK(istd_p == istd_s);

  std::vector<double> dx_p(x.size()), dx_s(x.size());
  std::vector<double> dg_p(static_cast<std::size_t>(d), 0.0), dg_s(dg_p), db_p(dg_p), db_s(dg_p);
  kernels::layernorm_backward(dx_p.data(), dg_p.data(), db_p.data(), dy.data(), xh_p.data(),
                              istd_p.data(), gain.data(), t, d);
  kernels::serial::layernorm_backward(dx_s.data(), dg_s.data(), db_s.data(), dy.data(), xh_s.data(),
                                      istd_s.data(), gain.data(), t, d);
  CHECK(dx_p == dx_s);
  CHECK(dg_p == dg_s);
  CHECK(db_p == db_s);
}

TEST_CASE("attention kernels match serial reference exactly") {
  Rng rng(99);
  const int t = 23, d = 12, heads = 3;
  auto q = randn(rng, static_cast<std::size_t>(t) * d);
  auto k = randn(rng, static_cast<std::size_t>(t) * d);
  auto v = randn(rng, static_cast<std::size_t>(t) * d);
  auto dctx = randn(rng, static_cast<std::size_t>(t) * d);
  const std::size_t ptt = static_cast<std::size_t>(heads) * t * t;

  std::vector<double> ctx_p(q.size()), ctx_s(q.size()), probs_p(ptt, 0.0), probs_s(ptt, 0.0);
  kernels::attention_forward(ctx_p.data(), probs_p.data(), q.data(), k.data(), v.data(), t, d, heads);
  kernels::serial::attention_forward(ctx_s.data(), probs_s.data(), q.data(), k.data(), v.data(), t,
                                     d, heads);
  CHECK(ctx_p == ctx_s);
  CHECK(probs_p == probs_s);

  std::vector<double> dq_p(q.size()), dq_s(q.size()), dk_p(q.size()), dk_s(q.size());
  std::vector<double> dv_p(q.size()), dv_s(q.size()), ds_p(ptt, 0.0), ds_s(ptt, 0.0);
  kernels::attention_backward(dq_p.data(), dk_p.data(), dv_p.data(), ds_p.data(), dctx.data(),
                              probs_p.data(), q.data(), k.data(), v.data(), t, d, heads);
  kernels::serial::attention_backward(dq_s.data(), dk_s.data(), dv_s.data(), ds_s.data(),
                                      dctx.data(), probs_s.data(), q.data(), k.data(), v.data(), t,
                                      d, heads);
  CHECK(dq_p == dq_s);
  CHECK(dk_p == dk_s);
  CHECK(dv_p == dv_s);
}

TEST_CASE("sum_squares is chunk-deterministic and matches serial") {
  Rng rng(3);
  auto x = randn(rng, 10001);
  CHECK(kernels::sum_squares(x.data(), x.size()) == kernels::serial::sum_squares(x.data(), x.size()));
}

TEST_CASE("adam_update: zero gradient leaves parameters unchanged") {
  std::vector<double> p{1.0, -2.0, 3.0}, g{0.0, 0.0, 0.0}, m(3, 0.0), v(3, 0.0);
  const std::vector<double> before = p;
  kernels::adam_update(p.data(), g.data(), m.data(), v.data(), 1, 3, 0.1, 0.9, 0.999, 1e-8);
  CHECK(p == before);
}

TEST_CASE("adam_update: first step with unit gradient moves by about lr") {
  // m_hat / sqrt(v_hat) = 1 at step 1, so the update is lr/(1 + eps) ~ lr
  std::vector<double> p{0.0}, g{1.0}, m{0.0}, v{0.0};
  kernels::adam_update(p.data(), g.data(), m.data(), v.data(), 1, 1, 0.01, 0.9, 0.999, 1e-8);
  CHECK(p[0] == doctest::Approx(-0.01).epsilon(1e-6));
}
