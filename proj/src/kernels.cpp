#include "sgpo/kernels.hpp"

#include <cmath>
#include <cstring>
#include <vector>

namespace sgpo::kernels {

namespace {
constexpr double kGeluAlpha = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluCubic = 0.044715;
}  // namespace

double gelu_scalar(double x) {
  const double u = kGeluAlpha * (x + kGeluCubic * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_grad_scalar(double x) {
  const double u = kGeluAlpha * (x + kGeluCubic * x * x * x);
  const double th = std::tanh(u);
  const double du = kGeluAlpha * (1.0 + 3.0 * kGeluCubic * x * x);
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
}

void linear_forward(double* out, const double* x, const double* w, const double* bias,
                    int t_rows, int m, int n) {
#pragma omp parallel for schedule(static)
  for (int t = 0; t < t_rows; ++t) {
    matvec_row(out + static_cast<std::size_t>(t) * n, x + static_cast<std::size_t>(t) * m, w,
               bias, m, n);
  }
}

void linear_backward_input(double* dx, const double* dout, const double* w,
                           int t_rows, int m, int n) {
#pragma omp parallel for schedule(static)
  for (int t = 0; t < t_rows; ++t) {
    const double* dr = dout + static_cast<std::size_t>(t) * n;
    double* dxr = dx + static_cast<std::size_t>(t) * m;
    for (int i = 0; i < m; ++i) {
      const double* wr = w + static_cast<std::size_t>(i) * n;
      double acc = 0.0;
      for (int j = 0; j < n; ++j) acc += dr[j] * wr[j];
      dxr[i] = acc;
    }
  }
}

void linear_backward_params(double* dw, double* dbias, const double* x, const double* dout,
                            int t_rows, int m, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    double* dwr = dw + static_cast<std::size_t>(i) * n;
    for (int t = 0; t < t_rows; ++t) {
      const double xi = x[static_cast<std::size_t>(t) * m + i];
      const double* dr = dout + static_cast<std::size_t>(t) * n;
      for (int j = 0; j < n; ++j) dwr[j] += xi * dr[j];
    }
  }
  if (dbias) {
#pragma omp parallel for schedule(static)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int t = 0; t < t_rows; ++t) acc += dout[static_cast<std::size_t>(t) * n + j];
      dbias[j] += acc;
    }
  }
}

void layernorm_forward(double* y, double* xhat, double* istd, const double* x,
                       const double* gain, const double* bias, int t_rows, int d, double eps) {
#pragma omp parallel for schedule(static)
  for (int t = 0; t < t_rows; ++t) {
    ln_row(y + static_cast<std::size_t>(t) * d, xhat + static_cast<std::size_t>(t) * d, istd + t,
           x + static_cast<std::size_t>(t) * d, gain, bias, d, eps);
  }
}

void layernorm_backward(double* dx, double* dgain, double* dbias, const double* dy,
                        const double* xhat, const double* istd, const double* gain,
                        int t_rows, int d) {
#pragma omp parallel for schedule(static)
  for (int j = 0; j < d; ++j) {
    double dg = 0.0, db = 0.0;
    for (int t = 0; t < t_rows; ++t) {
      const std::size_t idx = static_cast<std::size_t>(t) * d + j;
      dg += dy[idx] * xhat[idx];
      db += dy[idx];
    }
    dgain[j] += dg;
    dbias[j] += db;
  }
#pragma omp parallel for schedule(static)
  for (int t = 0; t < t_rows; ++t) {
    const double* dyr = dy + static_cast<std::size_t>(t) * d;
    const double* xh = xhat + static_cast<std::size_t>(t) * d;
    double* dxr = dx + static_cast<std::size_t>(t) * d;
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (int j = 0; j < d; ++j) {
      const double dxh = dyr[j] * gain[j];
      mean_dxhat += dxh;
      mean_dxhat_xhat += dxh * xh[j];
    }
    mean_dxhat /= d;
    mean_dxhat_xhat /= d;
    for (int j = 0; j < d; ++j) {
      const double dxh = dyr[j] * gain[j];
      dxr[j] = istd[t] * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
    }
  }
}

void attention_forward(double* ctx, double* probs, const double* q, const double* k,
                       const double* v, int t_rows, int d, int n_heads) {
  const int hd = d / n_heads;
  const std::size_t tt = static_cast<std::size_t>(t_rows) * t_rows;
#pragma omp parallel for collapse(2) schedule(static)
  for (int h = 0; h < n_heads; ++h) {
    for (int t = 0; t < t_rows; ++t) {
      const int off = h * hd;
      double* pr = probs + static_cast<std::size_t>(h) * tt + static_cast<std::size_t>(t) * t_rows;
      attention_row(ctx + static_cast<std::size_t>(t) * d + off, pr,
                    q + static_cast<std::size_t>(t) * d + off, k + off, v + off, t, d, hd);
      for (int u = t + 1; u < t_rows; ++u) pr[u] = 0.0;
    }
  }
}

void attention_backward(double* dq, double* dk, double* dv, double* dscores,
                        const double* dctx, const double* probs, const double* q,
                        const double* k, const double* v, int t_rows, int d, int n_heads) {
  const int hd = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const std::size_t tt = static_cast<std::size_t>(t_rows) * t_rows;
  // per (h, t): dscores row and dq
#pragma omp parallel for collapse(2) schedule(static)
  for (int h = 0; h < n_heads; ++h) {
    for (int t = 0; t < t_rows; ++t) {
      const int off = h * hd;
      const double* dct = dctx + static_cast<std::size_t>(t) * d + off;
      const double* pr = probs + static_cast<std::size_t>(h) * tt + static_cast<std::size_t>(t) * t_rows;
      double* ds = dscores + static_cast<std::size_t>(h) * tt + static_cast<std::size_t>(t) * t_rows;
      double dot = 0.0;
      for (int u = 0; u <= t; ++u) {
        const double* vu = v + static_cast<std::size_t>(u) * d + off;
        double dp = 0.0;
        for (int j = 0; j < hd; ++j) dp += dct[j] * vu[j];
        ds[u] = dp;
        dot += pr[u] * dp;
      }
      for (int u = 0; u <= t; ++u) ds[u] = pr[u] * (ds[u] - dot);
      double* dqt = dq + static_cast<std::size_t>(t) * d + off;
      for (int j = 0; j < hd; ++j) dqt[j] = 0.0;
      for (int u = 0; u <= t; ++u) {
        const double* ku = k + static_cast<std::size_t>(u) * d + off;
        const double w = ds[u] * scale;
        for (int j = 0; j < hd; ++j) dqt[j] += w * ku[j];
      }
    }
  }
  // per (h, u): dk and dv columns
#pragma omp parallel for collapse(2) schedule(static)
  for (int h = 0; h < n_heads; ++h) {
    for (int u = 0; u < t_rows; ++u) {
      const int off = h * hd;
      double* dku = dk + static_cast<std::size_t>(u) * d + off;
      double* dvu = dv + static_cast<std::size_t>(u) * d + off;
      for (int j = 0; j < hd; ++j) {
        dku[j] = 0.0;
        dvu[j] = 0.0;
      }
      for (int t = u; t < t_rows; ++t) {
        const double p = probs[static_cast<std::size_t>(h) * tt + static_cast<std::size_t>(t) * t_rows + u];
        const double s = dscores[static_cast<std::size_t>(h) * tt + static_cast<std::size_t>(t) * t_rows + u] * scale;
        const double* qt = q + static_cast<std::size_t>(t) * d + off;
        const double* dct = dctx + static_cast<std::size_t>(t) * d + off;
        for (int j = 0; j < hd; ++j) {
          dku[j] += s * qt[j];
          dvu[j] += p * dct[j];
        }
      }
    }
  }
}

void gelu_forward(double* y, const double* x, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(n); ++i)
    y[i] = gelu_scalar(x[i]);
}

void gelu_backward(double* dx, const double* dy, const double* x, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(n); ++i)
    dx[i] = dy[i] * gelu_grad_scalar(x[i]);
}

void adam_update(double* params, const double* grads, double* m, double* v, long step,
                 std::size_t n, double lr, double beta1, double beta2, double eps) {
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(n); ++i) {
    const double g = grads[i];
    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

double sum_squares(const double* x, std::size_t n) {
  // fixed 4096-element chunks; chunk partials combined in order, so the
  // result does not depend on the thread count
  constexpr std::size_t kChunk = 4096;
  const std::size_t chunks = (n + kChunk - 1) / kChunk;
  std::vector<double> partial(chunks, 0.0);
#pragma omp parallel for schedule(static)
  for (long long c = 0; c < static_cast<long long>(chunks); ++c) {
    const std::size_t lo = static_cast<std::size_t>(c) * kChunk;
    const std::size_t hi = lo + kChunk < n ? lo + kChunk : n;
    double acc = 0.0;
    for (std::size_t i = lo; i < hi; ++i) acc += x[i] * x[i];
    partial[static_cast<std::size_t>(c)] = acc;
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

void reduce_rows(double* total, const double* const* per_item, int items, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(n); ++i) {
    double acc = 0.0;
    for (int it = 0; it < items; ++it) acc += per_item[it][i];
    total[i] = acc;
  }
}

namespace serial {

void linear_forward(double* out, const double* x, const double* w, const double* bias,
                    int t_rows, int m, int n) {
  for (int t = 0; t < t_rows; ++t) {
    double* o = out + static_cast<std::size_t>(t) * n;
    for (int j = 0; j < n; ++j) o[j] = bias ? bias[j] : 0.0;
    const double* xr = x + static_cast<std::size_t>(t) * m;
    for (int i = 0; i < m; ++i) {
      const double xi = xr[i];
      const double* wr = w + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) o[j] += xi * wr[j];
    }
  }
}

void linear_backward_input(double* dx, const double* dout, const double* w,
                           int t_rows, int m, int n) {
  for (int t = 0; t < t_rows; ++t) {
    for (int i = 0; i < m; ++i) {
      double acc = 0.0;
      for (int j = 0; j < n; ++j)
        acc += dout[static_cast<std::size_t>(t) * n + j] * w[static_cast<std::size_t>(i) * n + j];
      dx[static_cast<std::size_t>(t) * m + i] = acc;
    }
  }
}

void linear_backward_params(double* dw, double* dbias, const double* x, const double* dout,
                            int t_rows, int m, int n) {
  for (int i = 0; i < m; ++i) {
    for (int t = 0; t < t_rows; ++t) {
      const double xi = x[static_cast<std::size_t>(t) * m + i];
      for (int j = 0; j < n; ++j)
        dw[static_cast<std::size_t>(i) * n + j] += xi * dout[static_cast<std::size_t>(t) * n + j];
    }
  }
  if (dbias) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int t = 0; t < t_rows; ++t) acc += dout[static_cast<std::size_t>(t) * n + j];
      dbias[j] += acc;
    }
  }
}

void layernorm_forward(double* y, double* xhat, double* istd, const double* x,
                       const double* gain, const double* bias, int t_rows, int d, double eps) {
  for (int t = 0; t < t_rows; ++t) {
    const double* xr = x + static_cast<std::size_t>(t) * d;
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += xr[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= d;
    const double is = 1.0 / std::sqrt(var + eps);
    istd[t] = is;
    for (int j = 0; j < d; ++j) {
      xhat[static_cast<std::size_t>(t) * d + j] = (xr[j] - mean) * is;
      y[static_cast<std::size_t>(t) * d + j] = gain[j] * xhat[static_cast<std::size_t>(t) * d + j] + bias[j];
    }
  }
}

void layernorm_backward(double* dx, double* dgain, double* dbias, const double* dy,
                        const double* xhat, const double* istd, const double* gain,
                        int t_rows, int d) {
  for (int j = 0; j < d; ++j) {
    double dg = 0.0, db = 0.0;
    for (int t = 0; t < t_rows; ++t) {
      dg += dy[static_cast<std::size_t>(t) * d + j] * xhat[static_cast<std::size_t>(t) * d + j];
      db += dy[static_cast<std::size_t>(t) * d + j];
    }
    dgain[j] += dg;
    dbias[j] += db;
  }
  for (int t = 0; t < t_rows; ++t) {
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (int j = 0; j < d; ++j) {
      const double dxh = dy[static_cast<std::size_t>(t) * d + j] * gain[j];
      mean_dxhat += dxh;
      mean_dxhat_xhat += dxh * xhat[static_cast<std::size_t>(t) * d + j];
    }
    mean_dxhat /= d;
    mean_dxhat_xhat /= d;
    for (int j = 0; j < d; ++j) {
      const double dxh = dy[static_cast<std::size_t>(t) * d + j] * gain[j];
      dx[static_cast<std::size_t>(t) * d + j] =
          istd[t] * (dxh - mean_dxhat - xhat[static_cast<std::size_t>(t) * d + j] * mean_dxhat_xhat);
    }
  }
}

void attention_forward(double* ctx, double* probs, const double* q, const double* k,
                       const double* v, int t_rows, int d, int n_heads) {
  const int hd = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const std::size_t tt = static_cast<std::size_t>(t_rows) * t_rows;
  for (int h = 0; h < n_heads; ++h) {
    for (int t = 0; t < t_rows; ++t) {
      const int off = h * hd;
      double* pr = probs + static_cast<std::size_t>(h) * tt + static_cast<std::size_t>(t) * t_rows;
      double mx = -1e300;
      for (int u = 0; u <= t; ++u) {
        double s = 0.0;
        for (int j = 0; j < hd; ++j)
          s += q[static_cast<std::size_t>(t) * d + off + j] * k[static_cast<std::size_t>(u) * d + off + j];
        s *= scale;
        pr[u] = s;
        if (s > mx) mx = s;
      }
      double denom = 0.0;
      for (int u = 0; u <= t; ++u) {
        pr[u] = std::exp(pr[u] - mx);
        denom += pr[u];
      }
      for (int u = 0; u <= t; ++u) pr[u] /= denom;
      for (int u = t + 1; u < t_rows; ++u) pr[u] = 0.0;
      for (int j = 0; j < hd; ++j) {
        ctx[static_cast<std::size_t>(t) * d + off + j] = 0.0;
      }
      for (int u = 0; u <= t; ++u) {
        for (int j = 0; j < hd; ++j)
          ctx[static_cast<std::size_t>(t) * d + off + j] += pr[u] * v[static_cast<std::size_t>(u) * d + off + j];
      }
    }
  }
}

void attention_backward(double* dq, double* dk, double* dv, double* dscores,
                        const double* dctx, const double* probs, const double* q,
                        const double* k, const double* v, int t_rows, int d, int n_heads) {
  const int hd = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const std::size_t tt = static_cast<std::size_t>(t_rows) * t_rows;
  for (int h = 0; h < n_heads; ++h) {
    for (int t = 0; t < t_rows; ++t) {
      const int off = h * hd;
      const double* pr = probs + static_cast<std::size_t>(h) * tt + static_cast<std::size_t>(t) * t_rows;
      double* ds = dscores + static_cast<std::size_t>(h) * tt + static_cast<std::size_t>(t) * t_rows;
      double dot = 0.0;
      for (int u = 0; u <= t; ++u) {
        double dp = 0.0;
        for (int j = 0; j < hd; ++j)
          dp += dctx[static_cast<std::size_t>(t) * d + off + j] * v[static_cast<std::size_t>(u) * d + off + j];
        ds[u] = dp;
        dot += pr[u] * dp;
      }
      for (int u = 0; u <= t; ++u) ds[u] = pr[u] * (ds[u] - dot);
      for (int j = 0; j < hd; ++j) dq[static_cast<std::size_t>(t) * d + off + j] = 0.0;
      for (int u = 0; u <= t; ++u) {
        for (int j = 0; j < hd; ++j)
          dq[static_cast<std::size_t>(t) * d + off + j] +=
              ds[u] * scale * k[static_cast<std::size_t>(u) * d + off + j];
      }
    }
    for (int u = 0; u < t_rows; ++u) {
      const int off = h * hd;
      for (int j = 0; j < hd; ++j) {
        dk[static_cast<std::size_t>(u) * d + off + j] = 0.0;
        dv[static_cast<std::size_t>(u) * d + off + j] = 0.0;
      }
      for (int t = u; t < t_rows; ++t) {
        const double p = probs[static_cast<std::size_t>(h) * tt + static_cast<std::size_t>(t) * t_rows + u];
        const double s = dscores[static_cast<std::size_t>(h) * tt + static_cast<std::size_t>(t) * t_rows + u] * scale;
        for (int j = 0; j < hd; ++j) {
          dk[static_cast<std::size_t>(u) * d + off + j] += s * q[static_cast<std::size_t>(t) * d + off + j];
          dv[static_cast<std::size_t>(u) * d + off + j] += p * dctx[static_cast<std::size_t>(t) * d + off + j];
        }
      }
    }
  }
}

double sum_squares(const double* x, std::size_t n) {
  constexpr std::size_t kChunk = 4096;
  double total = 0.0;
  for (std::size_t lo = 0; lo < n; lo += kChunk) {
    const std::size_t hi = lo + kChunk < n ? lo + kChunk : n;
    double acc = 0.0;
    for (std::size_t i = lo; i < hi; ++i) acc += x[i] * x[i];
    total += acc;
  }
  return total;
}

}  // namespace serial

}  // namespace sgpo::kernels
