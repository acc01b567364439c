#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sgpo/config.hpp"
#include "sgpo/model.hpp"
#include "sgpo/tasks.hpp"

namespace sgpo {

struct Histogram {
  std::vector<double> bin_edges;  // counts.size() + 1, sorted
  std::vector<long long> counts;
  std::string scale = "linear";  // or "log10"
  int flagged_nonfinite = 0;

  long long total() const;
};

// 30 bins spanning observed min..max by default; log10 scale applies log10
// before binning and flags non-positive values along with non-finite ones.
Histogram histogram_from_values(std::span<const double> values, int bins, bool log10_scale);

Histogram edit_histogram(std::span<const std::pair<std::string, std::string>> pairs, int bins);

Histogram ppl_histogram(const Parameters& params,
                        std::span<const std::pair<TokenSeq, TokenSeq>> items, int bins,
                        bool log10_scale);

struct EvalReport {
  std::string method;
  std::string opponent;
  int wins = 0;
  int losses = 0;
  int ties = 0;
  double win_rate_pct = 0.0;
  double mean_len_method = 0.0;
  double mean_len_opponent = 0.0;
  std::vector<Verdict> verdicts;  // per item, method = side A

  int total() const { return wins + losses + ties; }
};

EvalReport make_eval_report(std::string method, std::string opponent,
                            std::vector<Verdict> verdicts, double mean_len_method,
                            double mean_len_opponent);

// Greedy decoding on both sides, judged per task against the reference
// quality. method is side A.
EvalReport eval_winrate(const Parameters& model, const Parameters& baseline,
                        std::span<const SFTExample> tasks, const OracleConfig& judge_cfg,
                        const SamplingConfig& eval_sampling, std::uint64_t seed);

struct ImproverEvalResult {
  EvalReport b_vs_a;  // trained improver vs initial-policy improver
  EvalReport b_vs_c;  // trained improver vs the SFT reference
  EvalReport a_vs_c;
  std::vector<std::string> inputs_policy;  // the shared responses being refined
};

// Generates one policy response per task from the improver checkpoint, has
// both checkpoints refine it with the Refining-phase prompt, and judges the
// refinements (plus the SFT reference) on quality.
ImproverEvalResult improver_eval(const Parameters& improver, const Parameters& initial,
                                 std::span<const SFTExample> tasks, const OracleConfig& judge_cfg,
                                 const SamplingConfig& sampling, PromptVariant variant,
                                 std::uint64_t seed);

}  // namespace sgpo
