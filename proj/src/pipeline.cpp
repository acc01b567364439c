#include "sgpo/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "sgpo/errors.hpp"
#include "sgpo/generate.hpp"
#include "sgpo/parallel.hpp"
#include "sgpo/rng.hpp"

namespace sgpo {

using nlohmann::json;

json FilterReport::to_json() const {
  return json{{"q1", q1},
              {"q3", q3},
              {"iqr", iqr},
              {"lower_bound", lower_bound},
              {"upper_bound", upper_bound},
              {"kept", kept},
              {"dropped", dropped},
              {"dropped_ids", dropped_ids},
              {"nonfinite", nonfinite},
              {"degenerate", degenerate},
              {"enabled", enabled}};
}

namespace {

double quantile_interpolated(const std::vector<double>& sorted, double q) {
  const std::size_t n = sorted.size();
  const double rank = q * static_cast<double>(n - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, n - 1);
  const double frac = rank - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

std::pair<std::vector<int>, FilterReport> iqr_filter(
    std::span<const std::pair<int, double>> items) {
  FilterReport report;
  std::vector<double> finite;
  finite.reserve(items.size());
  for (const auto& [id, v] : items) {
    if (std::isfinite(v)) finite.push_back(v);
  }
  std::vector<int> kept_ids;

  if (finite.size() < 4) {
    // not enough samples for meaningful quartiles: pass finite items through
    report.degenerate = true;
    report.q1 = report.q3 = report.iqr = std::numeric_limits<double>::quiet_NaN();
    report.lower_bound = -std::numeric_limits<double>::infinity();
    report.upper_bound = std::numeric_limits<double>::infinity();
    for (const auto& [id, v] : items) {
      if (std::isfinite(v)) {
        kept_ids.push_back(id);
      } else {
        report.dropped_ids.push_back(id);
        ++report.nonfinite;
      }
    }
  } else {
    std::sort(finite.begin(), finite.end());
    report.q1 = quantile_interpolated(finite, 0.25);
    report.q3 = quantile_interpolated(finite, 0.75);
    report.iqr = report.q3 - report.q1;
    report.lower_bound = report.q1 - 1.5 * report.iqr;
    report.upper_bound = report.q3 + 1.5 * report.iqr;
    for (const auto& [id, v] : items) {
      if (!std::isfinite(v)) {
        report.dropped_ids.push_back(id);
        ++report.nonfinite;
      } else if (v >= report.lower_bound && v <= report.upper_bound) {
        kept_ids.push_back(id);
      } else {
        report.dropped_ids.push_back(id);
      }
    }
  }
  report.kept = static_cast<int>(kept_ids.size());
  report.dropped = static_cast<int>(report.dropped_ids.size());
  return {std::move(kept_ids), std::move(report)};
}

// ---------------------------------------------------------------------------
// stage cores
// ---------------------------------------------------------------------------

ImproverDataResult build_improver_data_core(const Parameters& theta0,
                                            std::span<const SFTExample> s_r,
                                            const OracleConfig& oracle_cfg,
                                            const SamplingConfig& sampling,
                                            const VariantFlags& flags, bool filter_enabled,
                                            std::uint64_t stage_seed,
                                            const ExternalImproverClient* external) {
  if (s_r.empty()) throw StageError("improver-data: empty S_R corpus");
  const int n = static_cast<int>(s_r.size());
  ImproverDataResult out;
  out.policy_resps.resize(static_cast<std::size_t>(n));
  std::vector<std::string> improved(static_cast<std::size_t>(n)), direct(static_cast<std::size_t>(n));
  std::vector<double> ppl_improved(static_cast<std::size_t>(n), 0.0), ppl_direct(ppl_improved);
  const bool use_improved = flags.use_improved_targets;

  parallel_for_items(n, [&](int i) {
    const SFTExample& ex = s_r[static_cast<std::size_t>(i)];
    const std::string resp =
        generate_instruction_response(theta0, ex.task, sampling, mix_seed(stage_seed, i, 0));
    out.policy_resps[static_cast<std::size_t>(i)] = resp;
    if (use_improved) {
      improved[static_cast<std::size_t>(i)] =
          external ? external->improve(ex.task.instruction_text, ex.y, resp)
                   : oracle_improve(ex.task, ex.y, resp, oracle_cfg, mix_seed(stage_seed, i, 1));
      ppl_improved[static_cast<std::size_t>(i)] =
          response_perplexity(theta0, ex.task, improved[static_cast<std::size_t>(i)]);
    }
    direct[static_cast<std::size_t>(i)] =
        external ? external->direct(ex.task.instruction_text)
                 : oracle_direct(ex.task, oracle_cfg, mix_seed(stage_seed, i, 2));
    ppl_direct[static_cast<std::size_t>(i)] =
        response_perplexity(theta0, ex.task, direct[static_cast<std::size_t>(i)]);
  });

  auto filter_set = [&](const std::vector<double>& ppl) {
    std::vector<std::pair<int, double>> items;
    items.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) items.emplace_back(i, ppl[static_cast<std::size_t>(i)]);
    if (!filter_enabled) {
      FilterReport rep;
      rep.enabled = false;
      rep.kept = n;
      std::vector<int> ids(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = i;
      return std::make_pair(ids, rep);
    }
    return iqr_filter(items);
  };

  std::vector<int> kept_improved;
  if (use_improved) {
    auto [ids, rep] = filter_set(ppl_improved);
    kept_improved = std::move(ids);
    out.improve_report = std::move(rep);
  } else {
    out.improve_report.enabled = false;
  }
  auto [kept_direct, direct_rep] = filter_set(ppl_direct);
  out.direct_report = std::move(direct_rep);

  if (use_improved) {
    for (int i = 0; i < n; ++i) {
      out.candidates.push_back({i, "improve", improved[static_cast<std::size_t>(i)],
                                ppl_improved[static_cast<std::size_t>(i)], false});
    }
  }
  for (int i = 0; i < n; ++i) {
    out.candidates.push_back({i, "direct", direct[static_cast<std::size_t>(i)],
                              ppl_direct[static_cast<std::size_t>(i)], false});
  }

  auto add_triples = [&](const std::vector<int>& kept, const std::vector<std::string>& targets,
                         const std::vector<double>& ppl, const char* source,
                         std::size_t cand_base) {
    for (int id : kept) {
      const SFTExample& ex = s_r[static_cast<std::size_t>(id)];
      out.triples.push_back({id, ex.task.instruction_text,
                             out.policy_resps[static_cast<std::size_t>(id)],
                             targets[static_cast<std::size_t>(id)], source,
                             ppl[static_cast<std::size_t>(id)]});
      out.candidates[cand_base + static_cast<std::size_t>(id)].kept = true;
    }
  };
  if (use_improved) add_triples(kept_improved, improved, ppl_improved, "improve", 0);
  add_triples(kept_direct, direct, ppl_direct, "direct",
              use_improved ? static_cast<std::size_t>(n) : 0);

  if (out.triples.empty())
    throw StageError("improver-data: every candidate was filtered out (improve kept " +
                     std::to_string(out.improve_report.kept) + ", direct kept " +
                     std::to_string(out.direct_report.kept) + ")");
  return out;
}

std::vector<PreferencePair> build_preference_data_core(const Parameters& policy,
                                                       const Parameters& improver,
                                                       std::span<const SFTExample> s_p,
                                                       const VariantFlags& flags,
                                                       const SamplingConfig& sampling,
                                                       std::uint64_t stage_seed) {
  if (s_p.empty()) throw StageError("gen-prefs: empty S_P corpus");
  const int m = static_cast<int>(s_p.size());
  std::vector<PreferencePair> pairs(static_cast<std::size_t>(m));
  parallel_for_items(m, [&](int i) {
    const SFTExample& ex = s_p[static_cast<std::size_t>(i)];
    PreferencePair& pair = pairs[static_cast<std::size_t>(i)];
    pair.id = i;
    pair.instruction = ex.task.instruction_text;
    pair.pairing = flags.pairing;
    const std::string policy_resp =
        generate_instruction_response(policy, ex.task, sampling, mix_seed(stage_seed, i, 0));
    if (flags.pairing == Pairing::SGPO) {
      const std::optional<std::string> ref =
          flags.prompt_variant.include_ref_in_refining ? std::optional<std::string>(ex.y)
                                                       : std::nullopt;
      pair.chosen = generate_refined_response(improver, ex.task, policy_resp, ref,
                                              flags.prompt_variant, Phase::Refining, sampling,
                                              mix_seed(stage_seed, i, 1));
      pair.rejected = policy_resp;
    } else {
      // SPIN: rejected from the initial policy; Diamond: from the improver-
      // trained policy. The caller passes the matching checkpoint.
      pair.chosen = ex.y;
      pair.rejected = policy_resp;
    }
  });
  return pairs;
}

// ---------------------------------------------------------------------------
// training loops
// ---------------------------------------------------------------------------

namespace {

template <typename Item, typename StepFn>
void run_epochs(std::span<const Item> items, const TrainConfig& cfg, StepFn&& step_fn) {
  Rng rng(cfg.rng_seed);
  std::vector<int> order(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) order[i] = static_cast<int>(i);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t off = 0; off < order.size(); off += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), off + static_cast<std::size_t>(cfg.batch_size));
      std::vector<Item> batch;
      batch.reserve(end - off);
      for (std::size_t k = off; k < end; ++k)
        batch.push_back(items[static_cast<std::size_t>(order[k])]);
      step_fn(batch);
    }
  }
}

}  // namespace

Parameters train_sft_model(Parameters start, std::span<const SftItem> items,
                           const TrainConfig& cfg, TrainStats* stats) {
  cfg.validate();
  if (items.empty()) throw StageError("training set is empty");
  AdamState state = AdamState::zeros(start.data.size());
  TrainStats local;
  run_epochs(items, cfg, [&](const std::vector<SftItem>& batch) {
    SftLossGrad lg = sft_loss_and_grad(start, batch);
    if (!std::isfinite(lg.loss)) throw StageError("sft training diverged (non-finite loss)");
    if (local.steps == 0) local.first_batch_loss = lg.loss;
    adam_step(start, lg.grads, state, cfg);
    local.final_batch_loss = lg.loss;
    ++local.steps;
  });
  if (stats) *stats = local;
  return start;
}

Parameters train_dpo_model(Parameters start, const Parameters& ref,
                           std::span<const DpoItem> pairs, const TrainConfig& cfg,
                           TrainStats* stats) {
  cfg.validate();
  if (pairs.empty()) throw StageError("preference set is empty");
  AdamState state = AdamState::zeros(start.data.size());
  TrainStats local;
  run_epochs(pairs, cfg, [&](const std::vector<DpoItem>& batch) {
    DpoLossGrad lg = dpo_loss_and_grad(start, ref, batch, cfg.dpo_beta);
    if (!std::isfinite(lg.loss)) throw StageError("dpo training diverged (non-finite loss)");
    if (local.steps == 0) local.first_batch_loss = lg.loss;
    local.degenerate_pairs += lg.degenerate_pairs;
    adam_step(start, lg.grads, state, cfg);
    local.final_batch_loss = lg.loss;
    ++local.steps;
  });
  local.mean_margin_after = mean_dpo_margin(start, ref, pairs, cfg.dpo_beta);
  if (stats) *stats = local;
  return start;
}

double mean_dpo_margin(const Parameters& params, const Parameters& ref,
                       std::span<const DpoItem> pairs, double beta) {
  const int n = static_cast<int>(pairs.size());
  std::vector<double> margins(static_cast<std::size_t>(n), 0.0);
  parallel_for_items(n, [&](int i) {
    const DpoItem& pair = pairs[static_cast<std::size_t>(i)];
    const double z =
        beta * ((sequence_logprob(params, pair.prompt, pair.chosen) -
                 sequence_logprob(ref, pair.prompt, pair.chosen)) -
                (sequence_logprob(params, pair.prompt, pair.rejected) -
                 sequence_logprob(ref, pair.prompt, pair.rejected)));
    margins[static_cast<std::size_t>(i)] = z;
  });
  double total = 0.0;
  for (double z : margins) total += z;
  return total / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// token-level items
// ---------------------------------------------------------------------------

std::vector<SftItem> make_sft_items(std::span<const SFTExample> corpus, int max_seq_len) {
  std::vector<SftItem> items;
  items.reserve(corpus.size());
  for (const SFTExample& ex : corpus) {
    const RenderedPrompt p =
        render_instruction(ex.task.instruction_text, VocabSpec::standard(), max_seq_len);
    items.push_back({p.tokens, encode_response(ex.y)});
  }
  return items;
}

std::vector<SftItem> make_improver_items(std::span<const ImproverTriple> triples,
                                         std::span<const SFTExample> s_r,
                                         const VariantFlags& flags, int max_seq_len) {
  std::vector<SftItem> items;
  items.reserve(triples.size());
  for (const ImproverTriple& t : triples) {
    std::optional<std::string> ref;
    if (flags.prompt_variant.include_ref_in_training) {
      if (t.id < 0 || t.id >= static_cast<int>(s_r.size()))
        throw StageError("improver triple id out of range: " + std::to_string(t.id));
      ref = s_r[static_cast<std::size_t>(t.id)].y;
    }
    const RenderedPrompt p = render_refine(t.instruction, t.policy_resp, ref, flags.prompt_variant,
                                           Phase::Training, VocabSpec::standard(), max_seq_len);
    items.push_back({p.tokens, encode_response(t.target)});
  }
  return items;
}

std::vector<DpoItem> make_dpo_items(std::span<const PreferencePair> pairs, int max_seq_len) {
  std::vector<DpoItem> items;
  items.reserve(pairs.size());
  for (const PreferencePair& pair : pairs) {
    const RenderedPrompt p =
        render_instruction(pair.instruction, VocabSpec::standard(), max_seq_len);
    items.push_back({p.tokens, encode_response(pair.chosen), encode_response(pair.rejected)});
  }
  return items;
}

// ---------------------------------------------------------------------------
// corpora
// ---------------------------------------------------------------------------

Corpora generate_corpora(const CorpusConfig& corpus_cfg, const OracleConfig& oracle_cfg) {
  Corpora out;
  std::set<std::string> seen;
  auto build = [&](std::uint64_t seed, int count, std::uint64_t sft_seed) {
    std::vector<SFTExample> corpus;
    corpus.reserve(static_cast<std::size_t>(count));
    for (int index = 0; static_cast<int>(corpus.size()) < count; ++index) {
      if (index > count * 100)
        throw StageError("corpus generation failed to find enough distinct tasks");
      TaskSpec task = gen_task_at(seed, index, corpus_cfg.kinds, corpus_cfg.payload_min,
                                  corpus_cfg.payload_max);
      if (!seen.insert(task.instruction_text).second) continue;  // keep corpora disjoint
      corpus.push_back(oracle_sft(task, oracle_cfg, sft_seed));
    }
    return corpus;
  };
  out.s_r = build(corpus_cfg.seed_improver, corpus_cfg.improver_n, 1);
  out.s_p = build(corpus_cfg.seed_policy, corpus_cfg.policy_m, 2);
  out.eval = build(corpus_cfg.seed_eval, corpus_cfg.eval_size, 3);
  return out;
}

}  // namespace sgpo
