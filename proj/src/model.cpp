#include "sgpo/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

#include "model_internal.hpp"
#include "sgpo/errors.hpp"
#include "sgpo/kernels.hpp"
#include "sgpo/rng.hpp"

namespace sgpo {

void ModelConfig::validate() const {
  if (d_model <= 0) throw ConfigError("model.d_model must be positive");
  if (n_layers < 0) throw ConfigError("model.n_layers must be non-negative");
  if (n_heads <= 0) throw ConfigError("model.n_heads must be positive");
  if (d_model % n_heads != 0) throw ConfigError("model.d_model must be divisible by n_heads");
  if (d_ff <= 0) throw ConfigError("model.d_ff must be positive");
  if (max_seq_len <= 0) throw ConfigError("model.max_seq_len must be positive");
  if (init_scale < 0) throw ConfigError("model.init_scale must be non-negative");
  if (ln_epsilon <= 0) throw ConfigError("model.ln_epsilon must be positive");
}

ParamLayout ParamLayout::build(const ModelConfig& cfg, int vocab_size) {
  cfg.validate();
  if (vocab_size <= 0) throw ConfigError("vocab_size must be positive");
  ParamLayout layout;
  std::size_t off = 0;
  auto add = [&](std::string name, int rows, int cols) {
    layout.tensors.push_back({std::move(name), rows, cols, off});
    off += static_cast<std::size_t>(rows) * cols;
  };
  add("tok_emb", vocab_size, cfg.d_model);
  add("pos_emb", cfg.max_seq_len, cfg.d_model);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    add(pre + "ln1.gain", 1, cfg.d_model);
    add(pre + "ln1.bias", 1, cfg.d_model);
    add(pre + "attn.wq", cfg.d_model, cfg.d_model);
    add(pre + "attn.wk", cfg.d_model, cfg.d_model);
    add(pre + "attn.wv", cfg.d_model, cfg.d_model);
    add(pre + "attn.wo", cfg.d_model, cfg.d_model);
    add(pre + "ln2.gain", 1, cfg.d_model);
    add(pre + "ln2.bias", 1, cfg.d_model);
    add(pre + "ff.w1", cfg.d_model, cfg.d_ff);
    add(pre + "ff.b1", 1, cfg.d_ff);
    add(pre + "ff.w2", cfg.d_ff, cfg.d_model);
    add(pre + "ff.b2", 1, cfg.d_model);
  }
  add("lnf.gain", 1, cfg.d_model);
  add("lnf.bias", 1, cfg.d_model);
  add("out_proj", cfg.d_model, vocab_size);
  layout.total = off;
  return layout;
}

const TensorInfo& ParamLayout::find(std::string_view name) const {
  for (const TensorInfo& t : tensors) {
    if (t.name == name) return t;
  }
  throw ConfigError("unknown tensor: " + std::string(name));
}

bool Parameters::all_finite() const {
  for (double x : data) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

namespace {

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

Parameters init_params(const ModelConfig& cfg, int vocab_size, std::uint64_t seed) {
  Parameters p;
  p.config = cfg;
  p.vocab_size = vocab_size;
  p.layout = ParamLayout::build(cfg, vocab_size);
  p.data.assign(p.layout.total, 0.0);
  Rng rng(seed);
  for (const TensorInfo& t : p.layout.tensors) {
    double* dst = p.data.data() + t.offset;
    if (ends_with(t.name, ".gain")) {
      std::fill(dst, dst + t.size(), 1.0);
    } else if (ends_with(t.name, ".bias")) {
      // layer-norm biases stay zero
    } else {
      for (std::size_t i = 0; i < t.size(); ++i) dst[i] = rng.normal() * cfg.init_scale;
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// internal engine
// ---------------------------------------------------------------------------

namespace detail {

ParamView::ParamView(const Parameters& p)
    : d(p.config.d_model),
      heads(p.config.n_heads),
      ff(p.config.d_ff),
      vocab(p.vocab_size),
      max_seq(p.config.max_seq_len),
      n_layers(p.config.n_layers),
      eps(p.config.ln_epsilon) {
  tok_emb = p.tensor("tok_emb").data();
  pos_emb = p.tensor("pos_emb").data();
  layers.resize(static_cast<std::size_t>(n_layers));
  for (int l = 0; l < n_layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    LayerView& lv = layers[static_cast<std::size_t>(l)];
    lv.ln1_g = p.tensor(pre + "ln1.gain").data();
    lv.ln1_b = p.tensor(pre + "ln1.bias").data();
    lv.wq = p.tensor(pre + "attn.wq").data();
    lv.wk = p.tensor(pre + "attn.wk").data();
    lv.wv = p.tensor(pre + "attn.wv").data();
    lv.wo = p.tensor(pre + "attn.wo").data();
    lv.ln2_g = p.tensor(pre + "ln2.gain").data();
    lv.ln2_b = p.tensor(pre + "ln2.bias").data();
    lv.w1 = p.tensor(pre + "ff.w1").data();
    lv.b1 = p.tensor(pre + "ff.b1").data();
    lv.w2 = p.tensor(pre + "ff.w2").data();
    lv.b2 = p.tensor(pre + "ff.b2").data();
  }
  lnf_g = p.tensor("lnf.gain").data();
  lnf_b = p.tensor("lnf.bias").data();
  out_proj = p.tensor("out_proj").data();
}

GradView::GradView(const Parameters& p, std::vector<double>& grads) {
  if (grads.size() != p.layout.total) throw std::invalid_argument("gradient buffer size mismatch");
  auto at = [&](const std::string& name) { return grads.data() + p.layout.find(name).offset; };
  tok_emb = at("tok_emb");
  pos_emb = at("pos_emb");
  layers.resize(static_cast<std::size_t>(p.config.n_layers));
  for (int l = 0; l < p.config.n_layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    MutLayerView& lv = layers[static_cast<std::size_t>(l)];
    lv.ln1_g = at(pre + "ln1.gain");
    lv.ln1_b = at(pre + "ln1.bias");
    lv.wq = at(pre + "attn.wq");
    lv.wk = at(pre + "attn.wk");
    lv.wv = at(pre + "attn.wv");
    lv.wo = at(pre + "attn.wo");
    lv.ln2_g = at(pre + "ln2.gain");
    lv.ln2_b = at(pre + "ln2.bias");
    lv.w1 = at(pre + "ff.w1");
    lv.b1 = at(pre + "ff.b1");
    lv.w2 = at(pre + "ff.w2");
    lv.b2 = at(pre + "ff.b2");
  }
  lnf_g = at("lnf.gain");
  lnf_b = at("lnf.bias");
  out_proj = at("out_proj");
}

void check_tokens(const Parameters& p, std::span<const Token> tokens) {
  for (Token t : tokens) {
    if (t < 0 || t >= p.vocab_size) throw std::invalid_argument("token id out of range");
  }
}

void forward_full(const Parameters& p, std::span<const Token> input, ForwardActs& acts) {
  const ParamView pv(p);
  const int t_rows = static_cast<int>(input.size());
  if (t_rows == 0) throw std::invalid_argument("empty input sequence");
  if (t_rows > pv.max_seq) throw std::invalid_argument("sequence too long");
  check_tokens(p, input);
  const int d = pv.d;
  const std::size_t td = static_cast<std::size_t>(t_rows) * d;

  acts.t_rows = t_rows;
  acts.x0.resize(td);
#pragma omp parallel for schedule(static)
  for (int t = 0; t < t_rows; ++t) {
    const double* te = pv.tok_emb + static_cast<std::size_t>(input[static_cast<std::size_t>(t)]) * d;
    const double* pe = pv.pos_emb + static_cast<std::size_t>(t) * d;
    double* x = acts.x0.data() + static_cast<std::size_t>(t) * d;
    for (int j = 0; j < d; ++j) x[j] = te[j] + pe[j];
  }

  acts.layers.resize(static_cast<std::size_t>(pv.n_layers));
  const double* x_in = acts.x0.data();
  for (int l = 0; l < pv.n_layers; ++l) {
    LayerActs& la = acts.layers[static_cast<std::size_t>(l)];
    const LayerView& lv = pv.layers[static_cast<std::size_t>(l)];
    la.ln1_xhat.resize(td);
    la.ln1_out.resize(td);
    la.ln1_istd.resize(static_cast<std::size_t>(t_rows));
    kernels::layernorm_forward(la.ln1_out.data(), la.ln1_xhat.data(), la.ln1_istd.data(), x_in,
                               lv.ln1_g, lv.ln1_b, t_rows, d, pv.eps);
    la.q.resize(td);
    la.k.resize(td);
    la.v.resize(td);
    kernels::linear_forward(la.q.data(), la.ln1_out.data(), lv.wq, nullptr, t_rows, d, d);
    kernels::linear_forward(la.k.data(), la.ln1_out.data(), lv.wk, nullptr, t_rows, d, d);
    kernels::linear_forward(la.v.data(), la.ln1_out.data(), lv.wv, nullptr, t_rows, d, d);
    la.probs.assign(static_cast<std::size_t>(pv.heads) * t_rows * t_rows, 0.0);
    la.ctx.resize(td);
    kernels::attention_forward(la.ctx.data(), la.probs.data(), la.q.data(), la.k.data(),
                               la.v.data(), t_rows, d, pv.heads);
    la.x_mid.resize(td);
    kernels::linear_forward(la.x_mid.data(), la.ctx.data(), lv.wo, nullptr, t_rows, d, d);
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(td); ++i) la.x_mid[static_cast<std::size_t>(i)] += x_in[i];

    la.ln2_xhat.resize(td);
    la.ln2_out.resize(td);
    la.ln2_istd.resize(static_cast<std::size_t>(t_rows));
    kernels::layernorm_forward(la.ln2_out.data(), la.ln2_xhat.data(), la.ln2_istd.data(),
                               la.x_mid.data(), lv.ln2_g, lv.ln2_b, t_rows, d, pv.eps);
    const std::size_t tf = static_cast<std::size_t>(t_rows) * pv.ff;
    la.ff_pre.resize(tf);
    la.ff_act.resize(tf);
    kernels::linear_forward(la.ff_pre.data(), la.ln2_out.data(), lv.w1, lv.b1, t_rows, d, pv.ff);
    kernels::gelu_forward(la.ff_act.data(), la.ff_pre.data(), tf);
    la.x_out.resize(td);
    kernels::linear_forward(la.x_out.data(), la.ff_act.data(), lv.w2, lv.b2, t_rows, pv.ff, d);
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(td); ++i)
      la.x_out[static_cast<std::size_t>(i)] += la.x_mid[static_cast<std::size_t>(i)];
    x_in = la.x_out.data();
  }

  acts.lnf_xhat.resize(td);
  acts.lnf_out.resize(td);
  acts.lnf_istd.resize(static_cast<std::size_t>(t_rows));
  kernels::layernorm_forward(acts.lnf_out.data(), acts.lnf_xhat.data(), acts.lnf_istd.data(), x_in,
                             pv.lnf_g, pv.lnf_b, t_rows, d, pv.eps);
  acts.logits.resize(static_cast<std::size_t>(t_rows) * pv.vocab);
  kernels::linear_forward(acts.logits.data(), acts.lnf_out.data(), pv.out_proj, nullptr, t_rows, d,
                          pv.vocab);
}

namespace {

void add_inplace(double* a, const double* b, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(n); ++i) a[i] += b[i];
}

}  // namespace

void backward_full(const Parameters& p, std::span<const Token> input, const ForwardActs& acts,
                   const std::vector<double>& dlogits, std::vector<double>& grads) {
  const ParamView pv(p);
  GradView gv(p, grads);
  const int t_rows = acts.t_rows;
  const int d = pv.d;
  const std::size_t td = static_cast<std::size_t>(t_rows) * d;

  // output projection and final norm
  kernels::linear_backward_params(gv.out_proj, nullptr, acts.lnf_out.data(), dlogits.data(),
                                  t_rows, d, pv.vocab);
  std::vector<double> d_lnf_out(td);
  kernels::linear_backward_input(d_lnf_out.data(), dlogits.data(), pv.out_proj, t_rows, d,
                                 pv.vocab);
  std::vector<double> dx(td);
  kernels::layernorm_backward(dx.data(), gv.lnf_g, gv.lnf_b, d_lnf_out.data(),
                              acts.lnf_xhat.data(), acts.lnf_istd.data(), pv.lnf_g, t_rows, d);

  std::vector<double> d_ffact, d_ffpre, d_ln2out, d_from_ln, d_ctx, dq, dk, dv, dscores, d_lnout, tmp;
  for (int l = pv.n_layers - 1; l >= 0; --l) {
    const LayerActs& la = acts.layers[static_cast<std::size_t>(l)];
    const LayerView& lv = pv.layers[static_cast<std::size_t>(l)];
    const MutLayerView& gl = gv.layers[static_cast<std::size_t>(l)];
    const std::size_t tf = static_cast<std::size_t>(t_rows) * pv.ff;

    // feed-forward: x_out = x_mid + gelu(ln2(x_mid) W1 + b1) W2 + b2
    d_ffact.resize(tf);
    kernels::linear_backward_params(gl.w2, gl.b2, la.ff_act.data(), dx.data(), t_rows, pv.ff, d);
    kernels::linear_backward_input(d_ffact.data(), dx.data(), lv.w2, t_rows, pv.ff, d);
    d_ffpre.resize(tf);
    kernels::gelu_backward(d_ffpre.data(), d_ffact.data(), la.ff_pre.data(), tf);
    d_ln2out.resize(td);
    kernels::linear_backward_params(gl.w1, gl.b1, la.ln2_out.data(), d_ffpre.data(), t_rows, d,
                                    pv.ff);
    kernels::linear_backward_input(d_ln2out.data(), d_ffpre.data(), lv.w1, t_rows, d, pv.ff);
    d_from_ln.resize(td);
    kernels::layernorm_backward(d_from_ln.data(), gl.ln2_g, gl.ln2_b, d_ln2out.data(),
                                la.ln2_xhat.data(), la.ln2_istd.data(), lv.ln2_g, t_rows, d);
    add_inplace(dx.data(), d_from_ln.data(), td);  // dx now w.r.t. x_mid

    // attention: x_mid = x_in + attn(ln1(x_in)) Wo
    d_ctx.resize(td);
    kernels::linear_backward_params(gl.wo, nullptr, la.ctx.data(), dx.data(), t_rows, d, d);
    kernels::linear_backward_input(d_ctx.data(), dx.data(), lv.wo, t_rows, d, d);
    dq.resize(td);
    dk.resize(td);
    dv.resize(td);
    dscores.assign(static_cast<std::size_t>(pv.heads) * t_rows * t_rows, 0.0);
    kernels::attention_backward(dq.data(), dk.data(), dv.data(), dscores.data(), d_ctx.data(),
                                la.probs.data(), la.q.data(), la.k.data(), la.v.data(), t_rows, d,
                                pv.heads);
    d_lnout.resize(td);
    tmp.resize(td);
    kernels::linear_backward_params(gl.wq, nullptr, la.ln1_out.data(), dq.data(), t_rows, d, d);
    kernels::linear_backward_input(d_lnout.data(), dq.data(), lv.wq, t_rows, d, d);
    kernels::linear_backward_params(gl.wk, nullptr, la.ln1_out.data(), dk.data(), t_rows, d, d);
    kernels::linear_backward_input(tmp.data(), dk.data(), lv.wk, t_rows, d, d);
    add_inplace(d_lnout.data(), tmp.data(), td);
    kernels::linear_backward_params(gl.wv, nullptr, la.ln1_out.data(), dv.data(), t_rows, d, d);
    kernels::linear_backward_input(tmp.data(), dv.data(), lv.wv, t_rows, d, d);
    add_inplace(d_lnout.data(), tmp.data(), td);
    d_from_ln.resize(td);
    kernels::layernorm_backward(d_from_ln.data(), gl.ln1_g, gl.ln1_b, d_lnout.data(),
                                la.ln1_xhat.data(), la.ln1_istd.data(), lv.ln1_g, t_rows, d);
    add_inplace(dx.data(), d_from_ln.data(), td);  // dx now w.r.t. x_in of this layer
  }

  // embeddings
#pragma omp parallel for schedule(static)
  for (int t = 0; t < t_rows; ++t) {
    const double* dxr = dx.data() + static_cast<std::size_t>(t) * d;
    double* dpe = gv.pos_emb + static_cast<std::size_t>(t) * d;
    for (int j = 0; j < d; ++j) dpe[j] += dxr[j];
  }
  // token rows can repeat, so parallelize over the embedding dimension
#pragma omp parallel for schedule(static)
  for (int j = 0; j < d; ++j) {
    for (int t = 0; t < t_rows; ++t) {
      gv.tok_emb[static_cast<std::size_t>(input[static_cast<std::size_t>(t)]) * d + j] +=
          dx[static_cast<std::size_t>(t) * d + j];
    }
  }
}

double weighted_ce(const Parameters& p, std::span<const Token> input,
                   std::span<const Token> targets, std::span<const double> weights,
                   std::vector<double>* grads) {
  if (input.size() != targets.size() || input.size() != weights.size())
    throw std::invalid_argument("weighted_ce: length mismatch");
  check_tokens(p, targets);
  ForwardActs acts;
  forward_full(p, input, acts);
  const int t_rows = acts.t_rows;
  const int vocab = p.vocab_size;

  std::vector<double> dlogits;
  if (grads) dlogits.assign(static_cast<std::size_t>(t_rows) * vocab, 0.0);

  std::vector<double> row_values(static_cast<std::size_t>(t_rows), 0.0);
#pragma omp parallel for schedule(static)
  for (int j = 0; j < t_rows; ++j) {
    const double w = weights[static_cast<std::size_t>(j)];
    if (w == 0.0) continue;
    const double* row = acts.logits.data() + static_cast<std::size_t>(j) * vocab;
    double mx = row[0];
    for (int c = 1; c < vocab; ++c) {
      if (row[c] > mx) mx = row[c];
    }
    double denom = 0.0;
    for (int c = 0; c < vocab; ++c) denom += std::exp(row[c] - mx);
    const Token y = targets[static_cast<std::size_t>(j)];
    const double logp = row[y] - mx - std::log(denom);
    row_values[static_cast<std::size_t>(j)] = w * logp;
    if (grads) {
      double* dr = dlogits.data() + static_cast<std::size_t>(j) * vocab;
      for (int c = 0; c < vocab; ++c) {
        const double prob = std::exp(row[c] - mx) / denom;
        dr[c] = w * ((c == y ? 1.0 : 0.0) - prob);
      }
    }
  }
  double value = 0.0;
  for (int j = 0; j < t_rows; ++j) value += row_values[static_cast<std::size_t>(j)];

  if (grads) backward_full(p, input, acts, dlogits, *grads);
  return value;
}

Decoder::Decoder(const Parameters& p) : pv_(p) {
  kcache_.resize(static_cast<std::size_t>(pv_.n_layers));
  vcache_.resize(static_cast<std::size_t>(pv_.n_layers));
  for (int l = 0; l < pv_.n_layers; ++l) {
    kcache_[static_cast<std::size_t>(l)].reserve(static_cast<std::size_t>(pv_.max_seq) * pv_.d);
    vcache_[static_cast<std::size_t>(l)].reserve(static_cast<std::size_t>(pv_.max_seq) * pv_.d);
  }
  x_.resize(static_cast<std::size_t>(pv_.d));
  a_.resize(static_cast<std::size_t>(pv_.d));
  q_.resize(static_cast<std::size_t>(pv_.d));
  k_.resize(static_cast<std::size_t>(pv_.d));
  v_.resize(static_cast<std::size_t>(pv_.d));
  ctx_.resize(static_cast<std::size_t>(pv_.d));
  tmp_.resize(static_cast<std::size_t>(pv_.d));
  ff1_.resize(static_cast<std::size_t>(pv_.ff));
  ff2_.resize(static_cast<std::size_t>(pv_.ff));
  probs_.resize(static_cast<std::size_t>(pv_.max_seq));
  logits_.resize(static_cast<std::size_t>(pv_.vocab));
}

const double* Decoder::step(Token tok) {
  if (pos_ >= pv_.max_seq) throw std::invalid_argument("sequence too long");
  if (tok < 0 || tok >= pv_.vocab) throw std::invalid_argument("token id out of range");
  const int d = pv_.d;
  const int hd = d / pv_.heads;
  const double* te = pv_.tok_emb + static_cast<std::size_t>(tok) * d;
  const double* pe = pv_.pos_emb + static_cast<std::size_t>(pos_) * d;
  for (int j = 0; j < d; ++j) x_[static_cast<std::size_t>(j)] = te[j] + pe[j];

  double istd = 0.0;
  for (int l = 0; l < pv_.n_layers; ++l) {
    const LayerView& lv = pv_.layers[static_cast<std::size_t>(l)];
    kernels::ln_row(a_.data(), tmp_.data(), &istd, x_.data(), lv.ln1_g, lv.ln1_b, d, pv_.eps);
    kernels::matvec_row(q_.data(), a_.data(), lv.wq, nullptr, d, d);
    kernels::matvec_row(k_.data(), a_.data(), lv.wk, nullptr, d, d);
    kernels::matvec_row(v_.data(), a_.data(), lv.wv, nullptr, d, d);
    std::vector<double>& kc = kcache_[static_cast<std::size_t>(l)];
    std::vector<double>& vc = vcache_[static_cast<std::size_t>(l)];
    kc.insert(kc.end(), k_.begin(), k_.end());
    vc.insert(vc.end(), v_.begin(), v_.end());
    for (int h = 0; h < pv_.heads; ++h) {
      const int off = h * hd;
      kernels::attention_row(ctx_.data() + off, probs_.data(), q_.data() + off, kc.data() + off,
                             vc.data() + off, pos_, d, hd);
    }
    kernels::matvec_row(a_.data(), ctx_.data(), lv.wo, nullptr, d, d);
    for (int j = 0; j < d; ++j) x_[static_cast<std::size_t>(j)] += a_[static_cast<std::size_t>(j)];

    kernels::ln_row(a_.data(), tmp_.data(), &istd, x_.data(), lv.ln2_g, lv.ln2_b, d, pv_.eps);
    kernels::matvec_row(ff1_.data(), a_.data(), lv.w1, lv.b1, d, pv_.ff);
    for (int j = 0; j < pv_.ff; ++j)
      ff2_[static_cast<std::size_t>(j)] = kernels::gelu_scalar(ff1_[static_cast<std::size_t>(j)]);
    kernels::matvec_row(a_.data(), ff2_.data(), lv.w2, lv.b2, pv_.ff, d);
    for (int j = 0; j < d; ++j) x_[static_cast<std::size_t>(j)] += a_[static_cast<std::size_t>(j)];
  }
  kernels::ln_row(a_.data(), tmp_.data(), &istd, x_.data(), pv_.lnf_g, pv_.lnf_b, d, pv_.eps);
  kernels::matvec_row(logits_.data(), a_.data(), pv_.out_proj, nullptr, d, pv_.vocab);
  ++pos_;
  return logits_.data();
}

namespace {

double logsoftmax_at(const double* row, int vocab, Token y) {
  double mx = row[0];
  for (int c = 1; c < vocab; ++c) {
    if (row[c] > mx) mx = row[c];
  }
  double denom = 0.0;
  for (int c = 0; c < vocab; ++c) denom += std::exp(row[c] - mx);
  return row[y] - mx - std::log(denom);
}

}  // namespace

double logprob_response(const Parameters& p, std::span<const Token> prompt,
                        std::span<const Token> response) {
  if (response.empty()) throw std::invalid_argument("empty response");
  if (prompt.empty()) throw std::invalid_argument("empty prompt");
  if (prompt.size() + response.size() > static_cast<std::size_t>(p.config.max_seq_len))
    throw std::invalid_argument("sequence too long");
  check_tokens(p, prompt);
  check_tokens(p, response);

  TokenSeq full(prompt.begin(), prompt.end());
  full.insert(full.end(), response.begin(), response.end());
  const std::size_t plen = prompt.size();

  Decoder dec(p);
  double lp = 0.0;
  for (std::size_t i = 0; i + 1 < full.size(); ++i) {
    const double* row = dec.step(full[i]);
    if (i + 1 >= plen) lp += logsoftmax_at(row, p.vocab_size, full[i + 1]);
  }
  return lp;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// public operations
// ---------------------------------------------------------------------------

std::vector<double> forward_logits(const Parameters& params, std::span<const Token> tokens) {
  if (tokens.empty()) throw std::invalid_argument("empty input sequence");
  if (tokens.size() > static_cast<std::size_t>(params.config.max_seq_len))
    throw std::invalid_argument("sequence too long");
  detail::check_tokens(params, tokens);
  detail::Decoder dec(params);
  std::vector<double> out(tokens.size() * static_cast<std::size_t>(params.vocab_size));
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const double* row = dec.step(tokens[t]);
    std::memcpy(out.data() + t * static_cast<std::size_t>(params.vocab_size), row,
                sizeof(double) * static_cast<std::size_t>(params.vocab_size));
  }
  return out;
}

double sequence_logprob(const Parameters& params, std::span<const Token> prompt,
                        std::span<const Token> response) {
  return detail::logprob_response(params, prompt, response);
}

double perplexity(const Parameters& params, std::span<const Token> prompt,
                  std::span<const Token> response) {
  const double lp = sequence_logprob(params, prompt, response);
  return std::exp(-lp / static_cast<double>(response.size()));
}

int nucleus_pick(std::span<const double> probs, double top_p, double u) {
  const int n = static_cast<int>(probs.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (probs[static_cast<std::size_t>(a)] != probs[static_cast<std::size_t>(b)])
      return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)];
    return a < b;
  });
  // smallest prefix with cumulative mass >= top_p
  double mass = 0.0;
  int nucleus = 0;
  for (int i = 0; i < n; ++i) {
    mass += probs[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
    nucleus = i + 1;
    if (mass >= top_p) break;
  }
  const double target = u * mass;
  double acc = 0.0;
  for (int i = 0; i < nucleus; ++i) {
    acc += probs[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
    if (target < acc) return order[static_cast<std::size_t>(i)];
  }
  return order[static_cast<std::size_t>(nucleus - 1)];
}

TokenSeq sample(const Parameters& params, std::span<const Token> prompt,
                const SamplingConfig& cfg, Token stop_token) {
  if (prompt.empty()) throw std::invalid_argument("empty prompt");
  if (prompt.size() + static_cast<std::size_t>(std::max(cfg.max_new_tokens, 0)) >
      static_cast<std::size_t>(params.config.max_seq_len))
    throw std::invalid_argument("prompt plus max_new_tokens exceeds max_seq_len");
  detail::check_tokens(params, prompt);

  detail::Decoder dec(params);
  const double* row = nullptr;
  for (Token t : prompt) row = dec.step(t);

  const int vocab = params.vocab_size;
  Rng rng(cfg.rng_seed);
  TokenSeq out;
  std::vector<double> probs(static_cast<std::size_t>(vocab));
  for (int i = 0; i < cfg.max_new_tokens; ++i) {
    int next = 0;
    if (cfg.temperature == 0.0) {
      for (int c = 1; c < vocab; ++c) {
        if (row[c] > row[next]) next = c;  // ties keep the lowest id
      }
    } else {
      double mx = row[0] / cfg.temperature;
      for (int c = 1; c < vocab; ++c) mx = std::max(mx, row[c] / cfg.temperature);
      double denom = 0.0;
      for (int c = 0; c < vocab; ++c) {
        probs[static_cast<std::size_t>(c)] = std::exp(row[c] / cfg.temperature - mx);
        denom += probs[static_cast<std::size_t>(c)];
      }
      for (int c = 0; c < vocab; ++c) probs[static_cast<std::size_t>(c)] /= denom;
      next = nucleus_pick(probs, cfg.top_p, rng.uniform());
    }
    out.push_back(next);
    if (next == stop_token) break;
    if (i + 1 < cfg.max_new_tokens) row = dec.step(next);
  }
  return out;
}

}  // namespace sgpo
