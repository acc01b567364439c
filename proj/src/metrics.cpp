#include "sgpo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sgpo/editdist.hpp"
#include "sgpo/generate.hpp"
#include "sgpo/parallel.hpp"
#include "sgpo/rng.hpp"

namespace sgpo {

long long Histogram::total() const {
  long long t = 0;
  for (long long c : counts) t += c;
  return t;
}

Histogram histogram_from_values(std::span<const double> values, int bins, bool log10_scale) {
  if (values.empty()) throw std::invalid_argument("histogram: empty input");
  if (bins < 1) throw std::invalid_argument("histogram: bins must be >= 1");
  Histogram h;
  h.scale = log10_scale ? "log10" : "linear";
  std::vector<double> kept;
  kept.reserve(values.size());
  for (double v : values) {
    if (!std::isfinite(v) || (log10_scale && v <= 0.0)) {
      ++h.flagged_nonfinite;
      continue;
    }
    kept.push_back(log10_scale ? std::log10(v) : v);
  }
  if (kept.empty()) throw std::invalid_argument("histogram: no finite values");
  double lo = kept[0], hi = kept[0];
  for (double v : kept) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi == lo) hi = lo + 1.0;  // degenerate support still gets a real bin
  h.bin_edges.resize(static_cast<std::size_t>(bins) + 1);
  for (int i = 0; i <= bins; ++i)
    h.bin_edges[static_cast<std::size_t>(i)] = lo + (hi - lo) * static_cast<double>(i) / bins;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (double v : kept) {
    int idx = static_cast<int>(static_cast<double>(bins) * (v - lo) / (hi - lo));
    idx = std::clamp(idx, 0, bins - 1);
    h.counts[static_cast<std::size_t>(idx)]++;
  }
  return h;
}

Histogram edit_histogram(std::span<const std::pair<std::string, std::string>> pairs, int bins) {
  if (pairs.empty()) throw std::invalid_argument("edit_histogram: empty input");
  std::vector<double> dists;
  dists.reserve(pairs.size());
  for (const auto& [a, b] : pairs) dists.push_back(static_cast<double>(levenshtein(a, b)));
  return histogram_from_values(dists, bins, false);
}

Histogram ppl_histogram(const Parameters& params,
                        std::span<const std::pair<TokenSeq, TokenSeq>> items, int bins,
                        bool log10_scale) {
  if (items.empty()) throw std::invalid_argument("ppl_histogram: empty input");
  std::vector<double> ppl(items.size(), 0.0);
  parallel_for_items(static_cast<int>(items.size()), [&](int i) {
    const auto& [prompt, response] = items[static_cast<std::size_t>(i)];
    ppl[static_cast<std::size_t>(i)] = perplexity(params, prompt, response);
  });
  return histogram_from_values(ppl, bins, log10_scale);
}

EvalReport make_eval_report(std::string method, std::string opponent,
                            std::vector<Verdict> verdicts, double mean_len_method,
                            double mean_len_opponent) {
  EvalReport r;
  r.method = std::move(method);
  r.opponent = std::move(opponent);
  r.verdicts = std::move(verdicts);
  for (Verdict v : r.verdicts) {
    if (v == Verdict::WinA)
      ++r.wins;
    else if (v == Verdict::WinB)
      ++r.losses;
    else
      ++r.ties;
  }
  r.win_rate_pct = 100.0 * (r.wins + 0.5 * r.ties) / static_cast<double>(r.verdicts.size());
  r.mean_len_method = mean_len_method;
  r.mean_len_opponent = mean_len_opponent;
  return r;
}

EvalReport eval_winrate(const Parameters& model, const Parameters& baseline,
                        std::span<const SFTExample> tasks, const OracleConfig& judge_cfg,
                        const SamplingConfig& eval_sampling, std::uint64_t seed) {
  if (tasks.empty()) throw std::invalid_argument("eval_winrate: empty task list");
  const int n = static_cast<int>(tasks.size());
  std::vector<Verdict> verdicts(static_cast<std::size_t>(n), Verdict::Tie);
  std::vector<double> len_a(static_cast<std::size_t>(n), 0.0), len_b(len_a);
  parallel_for_items(n, [&](int i) {
    const TaskSpec& task = tasks[static_cast<std::size_t>(i)].task;
    const std::string a =
        generate_instruction_response(model, task, eval_sampling, mix_seed(seed, i, 1));
    const std::string b =
        generate_instruction_response(baseline, task, eval_sampling, mix_seed(seed, i, 2));
    verdicts[static_cast<std::size_t>(i)] =
        judge(task, a, b, judge_cfg.tie_delta, mix_seed(seed, i, 3)).verdict;
    len_a[static_cast<std::size_t>(i)] = static_cast<double>(a.size());
    len_b[static_cast<std::size_t>(i)] = static_cast<double>(b.size());
  });
  double la = 0.0, lb = 0.0;
  for (int i = 0; i < n; ++i) {
    la += len_a[static_cast<std::size_t>(i)];
    lb += len_b[static_cast<std::size_t>(i)];
  }
  return make_eval_report("model", "baseline", std::move(verdicts), la / n, lb / n);
}

ImproverEvalResult improver_eval(const Parameters& improver, const Parameters& initial,
                                 std::span<const SFTExample> tasks, const OracleConfig& judge_cfg,
                                 const SamplingConfig& sampling, PromptVariant variant,
                                 std::uint64_t seed) {
  if (tasks.empty()) throw std::invalid_argument("improver_eval: empty task list");
  const int n = static_cast<int>(tasks.size());
  std::vector<std::string> inputs(static_cast<std::size_t>(n));
  std::vector<Verdict> b_vs_a(static_cast<std::size_t>(n), Verdict::Tie);
  std::vector<Verdict> b_vs_c(b_vs_a), a_vs_c(b_vs_a);
  std::vector<double> len_b(static_cast<std::size_t>(n), 0.0), len_a(len_b), len_c(len_b);
  parallel_for_items(n, [&](int i) {
    const SFTExample& ex = tasks[static_cast<std::size_t>(i)];
    const std::optional<std::string> ref =
        variant.include_ref_in_refining ? std::optional<std::string>(ex.y) : std::nullopt;
    // one policy response per task, then both checkpoints refine the same input
    const std::string policy_resp =
        generate_instruction_response(improver, ex.task, sampling, mix_seed(seed, i, 0));
    const std::string b = generate_refined_response(improver, ex.task, policy_resp, ref, variant,
                                                    Phase::Refining, sampling, mix_seed(seed, i, 1));
    const std::string a = generate_refined_response(initial, ex.task, policy_resp, ref, variant,
                                                    Phase::Refining, sampling, mix_seed(seed, i, 2));
    const std::string& c = ex.y;
    inputs[static_cast<std::size_t>(i)] = policy_resp;
    b_vs_a[static_cast<std::size_t>(i)] =
        judge(ex.task, b, a, judge_cfg.tie_delta, mix_seed(seed, i, 3)).verdict;
    b_vs_c[static_cast<std::size_t>(i)] =
        judge(ex.task, b, c, judge_cfg.tie_delta, mix_seed(seed, i, 4)).verdict;
    a_vs_c[static_cast<std::size_t>(i)] =
        judge(ex.task, a, c, judge_cfg.tie_delta, mix_seed(seed, i, 5)).verdict;
    len_b[static_cast<std::size_t>(i)] = static_cast<double>(b.size());
    len_a[static_cast<std::size_t>(i)] = static_cast<double>(a.size());
    len_c[static_cast<std::size_t>(i)] = static_cast<double>(c.size());
  });
  double lb = 0.0, la = 0.0, lc = 0.0;
  for (int i = 0; i < n; ++i) {
    lb += len_b[static_cast<std::size_t>(i)];
    la += len_a[static_cast<std::size_t>(i)];
    lc += len_c[static_cast<std::size_t>(i)];
  }
  ImproverEvalResult out;
  out.b_vs_a = make_eval_report("improver", "initial-policy-improver", std::move(b_vs_a), lb / n, la / n);
  out.b_vs_c = make_eval_report("improver", "sft-reference", std::move(b_vs_c), lb / n, lc / n);
  out.a_vs_c = make_eval_report("initial-policy-improver", "sft-reference", std::move(a_vs_c), la / n, lc / n);
  out.inputs_policy = std::move(inputs);
  return out;
}

}  // namespace sgpo
