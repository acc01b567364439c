#pragma once

#include <cmath>
#include <cstddef>

// Dense kernels for the transformer forward/backward passes. Two variants of
// every hot kernel: the OpenMP-parallel one used by the model, and a plain
// serial reference under kernels::serial used by tests and the benchmark.
//
// Parallel kernels only ever split work so that each output element is
// written by exactly one thread and inner summations run in a fixed order,
// so results are bit-identical to the serial reference for any thread count.

namespace sgpo::kernels {

// ---- shared per-row primitives ------------------------------------------
// Both the batched training path and the incremental decoding path go
// through these, so the two paths produce bit-identical values.

// out[n] = bias + x[m] * w[m x n]
inline void matvec_row(double* out, const double* x, const double* w, const double* bias,
                       int m, int n) {
  for (int j = 0; j < n; ++j) out[j] = bias ? bias[j] : 0.0;
  for (int i = 0; i < m; ++i) {
    const double xi = x[i];
    const double* wr = w + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) out[j] += xi * wr[j];
  }
}

// layer norm of one row (population variance)
inline void ln_row(double* y, double* xhat, double* istd_out, const double* x,
                   const double* gain, const double* bias, int d, double eps) {
  double mean = 0.0;
  for (int j = 0; j < d; ++j) mean += x[j];
  mean /= d;
  double var = 0.0;
  for (int j = 0; j < d; ++j) {
    const double c = x[j] - mean;
    var += c * c;
  }
  var /= d;
  const double is = 1.0 / std::sqrt(var + eps);
  *istd_out = is;
  for (int j = 0; j < d; ++j) {
    xhat[j] = (x[j] - mean) * is;
    y[j] = gain[j] * xhat[j] + bias[j];
  }
}

// causal attention for one (head, position): probs_row gets t+1 softmax
// weights, ctx_off gets the hd context values. k_off/v_off point at the head
// slice of row 0 and advance by d_stride per position.
inline void attention_row(double* ctx_off, double* probs_row, const double* q_off,
                          const double* k_off, const double* v_off, int t, int d_stride,
                          int hd) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  double mx = -1e300;
  for (int u = 0; u <= t; ++u) {
    const double* ku = k_off + static_cast<std::size_t>(u) * d_stride;
    double s = 0.0;
    for (int j = 0; j < hd; ++j) s += q_off[j] * ku[j];
    s *= scale;
    probs_row[u] = s;
    if (s > mx) mx = s;
  }
  double denom = 0.0;
  for (int u = 0; u <= t; ++u) {
    probs_row[u] = std::exp(probs_row[u] - mx);
    denom += probs_row[u];
  }
  for (int u = 0; u <= t; ++u) probs_row[u] /= denom;
  for (int j = 0; j < hd; ++j) ctx_off[j] = 0.0;
  for (int u = 0; u <= t; ++u) {
    const double* vu = v_off + static_cast<std::size_t>(u) * d_stride;
    const double p = probs_row[u];
    for (int j = 0; j < hd; ++j) ctx_off[j] += p * vu[j];
  }
}

// ---- batched kernels ------------------------------------------------------

// out[T x N] = x[T x M] * w[M x N] (+ bias[N]); row-major.
void linear_forward(double* out, const double* x, const double* w, const double* bias,
                    int t_rows, int m, int n);

// dx[T x M] = dout[T x N] * w^T
void linear_backward_input(double* dx, const double* dout, const double* w,
                           int t_rows, int m, int n);

// dw[M x N] += x^T * dout ; dbias[N] += column sums of dout
void linear_backward_params(double* dw, double* dbias, const double* x, const double* dout,
                            int t_rows, int m, int n);

// Pre-norm layer norm over rows of x[T x d]; population variance with eps.
// Outputs y = gain .* xhat + bias, plus xhat and istd kept for backward.
void layernorm_forward(double* y, double* xhat, double* istd, const double* x,
                       const double* gain, const double* bias, int t_rows, int d, double eps);

// dx written; dgain/dbias accumulated.
void layernorm_backward(double* dx, double* dgain, double* dbias, const double* dy,
                        const double* xhat, const double* istd, const double* gain,
                        int t_rows, int d);

// Causal multi-head attention on a single sequence.
// q,k,v,ctx are [T x d]; probs is [H x T x T] (rows past the diagonal zero).
void attention_forward(double* ctx, double* probs, const double* q, const double* k,
                       const double* v, int t_rows, int d, int n_heads);

// dq,dk,dv written; dscores[H x T x T] is caller-provided scratch.
void attention_backward(double* dq, double* dk, double* dv, double* dscores,
                        const double* dctx, const double* probs, const double* q,
                        const double* k, const double* v, int t_rows, int d, int n_heads);

// GELU (tanh approximation), elementwise over n values.
void gelu_forward(double* y, const double* x, std::size_t n);
void gelu_backward(double* dx, const double* dy, const double* x, std::size_t n);

double gelu_scalar(double x);
double gelu_grad_scalar(double x);

// Bias-corrected Adam update, elementwise; step is the 1-based step number
// after this update.
void adam_update(double* params, const double* grads, double* m, double* v, long step,
                 std::size_t n, double lr, double beta1, double beta2, double eps);

// Sum of squares with a fixed chunking scheme, deterministic for any thread
// count.
double sum_squares(const double* x, std::size_t n);

// total[i] = sum over items (in item order) of per_item[item][i].
void reduce_rows(double* total, const double* const* per_item, int items, std::size_t n);

namespace serial {
void linear_forward(double* out, const double* x, const double* w, const double* bias,
                    int t_rows, int m, int n);
void linear_backward_input(double* dx, const double* dout, const double* w,
                           int t_rows, int m, int n);
void linear_backward_params(double* dw, double* dbias, const double* x, const double* dout,
                            int t_rows, int m, int n);
void layernorm_forward(double* y, double* xhat, double* istd, const double* x,
                       const double* gain, const double* bias, int t_rows, int d, double eps);
void layernorm_backward(double* dx, double* dgain, double* dbias, const double* dy,
                        const double* xhat, const double* istd, const double* gain,
                        int t_rows, int d);
void attention_forward(double* ctx, double* probs, const double* q, const double* k,
                       const double* v, int t_rows, int d, int n_heads);
void attention_backward(double* dq, double* dk, double* dv, double* dscores,
                        const double* dctx, const double* probs, const double* q,
                        const double* k, const double* v, int t_rows, int d, int n_heads);
double sum_squares(const double* x, std::size_t n);
}  // namespace serial

}  // namespace sgpo::kernels
