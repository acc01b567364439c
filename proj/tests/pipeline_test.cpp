#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "sgpo/editdist.hpp"
#include "sgpo/errors.hpp"
#include "sgpo/generate.hpp"
#include "sgpo/pipeline.hpp"
#include "sgpo/rng.hpp"

using namespace sgpo;

namespace {

// independently written closest-ranks interpolation (test oracle)
double oracle_quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t k = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(k);
  if (k + 1 < v.size()) return v[k] * (1.0 - frac) + v[k + 1] * frac;
  return v[k];
}

std::vector<std::pair<int, double>> with_ids(const std::vector<double>& values) {
  std::vector<std::pair<int, double>> items;
  for (std::size_t i = 0; i < values.size(); ++i) items.emplace_back(static_cast<int>(i), values[i]);
  return items;
}

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.max_seq_len = 256;
  return cfg;
}

CorpusConfig tiny_corpus() {
  CorpusConfig c;
  c.improver_n = 6;
  c.policy_m = 20;
  c.eval_size = 8;
  c.kinds = {TaskKind::Reverse, TaskKind::Dedup, TaskKind::SwapCase};
  c.payload_min = 4;
  c.payload_max = 8;
  c.seed_improver = 11;
  c.seed_policy = 12;
  c.seed_eval = 13;
  return c;
}

}  // namespace

TEST_CASE("iqr_filter worked examples") {
  {
    auto [kept, rep] = iqr_filter(with_ids({2, 4, 6, 8}));
    CHECK(kept.size() == 4);
    CHECK(rep.q1 == doctest::Approx(3.5));
    CHECK(rep.q3 == doctest::Approx(6.5));
    CHECK(rep.lower_bound == doctest::Approx(rep.q1 - 1.5 * rep.iqr));
    CHECK(rep.upper_bound == doctest::Approx(rep.q3 + 1.5 * rep.iqr));
    CHECK(rep.kept + rep.dropped == 4);
  }
  {
    auto [kept, rep] = iqr_filter(with_ids({1, 2, 3, 4, 1000}));
    CHECK(kept == std::vector<int>{0, 1, 2, 3});
    CHECK(rep.dropped_ids == std::vector<int>{4});
  }
  {
    auto [kept, rep] = iqr_filter(with_ids({5, 5, 5, 5, 5}));
    CHECK(kept.size() == 5);
    CHECK(rep.iqr == 0.0);
    CHECK(rep.lower_bound == rep.upper_bound);
  }
  {
    auto [kept, rep] = iqr_filter(with_ids({1, 2, 900}));
    CHECK(rep.degenerate);
    CHECK(kept.size() == 3);  // pass-through below 4 samples
  }
  {
    auto [kept, rep] = iqr_filter(
        with_ids({1, 2, 3, std::numeric_limits<double>::infinity(), 2.5,
                  std::numeric_limits<double>::quiet_NaN()}));
    CHECK(rep.nonfinite == 2);
    CHECK(kept.size() == 4);
    CHECK(rep.kept + rep.dropped == 6);
  }
}

TEST_CASE("iqr_filter matches the brute-force quartile oracle") {
  Rng rng(314);
  for (int rep = 0; rep < 200; ++rep) {
    const int n = 4 + static_cast<int>(rng.below(40));
    std::vector<double> values(static_cast<std::size_t>(n));
    for (double& v : values) v = std::floor(rng.uniform() * 200.0) / 4.0;  // ties likely
    auto [kept, report] = iqr_filter(with_ids(values));

    const double q1 = oracle_quantile(values, 0.25);
    const double q3 = oracle_quantile(values, 0.75);
    const double lo = q1 - 1.5 * (q3 - q1);
    const double hi = q3 + 1.5 * (q3 - q1);
    std::set<int> expect;
    for (int i = 0; i < n; ++i)
      if (values[static_cast<std::size_t>(i)] >= lo && values[static_cast<std::size_t>(i)] <= hi)
        expect.insert(i);
    CHECK(std::set<int>(kept.begin(), kept.end()) == expect);
    CHECK(report.q1 == doctest::Approx(q1).epsilon(1e-12));
    CHECK(report.q3 == doctest::Approx(q3).epsilon(1e-12));
  }
}

TEST_CASE("generate_corpora: disjoint, sized, deterministic") {
  OracleConfig ocfg;
  Corpora a = generate_corpora(tiny_corpus(), ocfg);
  Corpora b = generate_corpora(tiny_corpus(), ocfg);
  CHECK(a.s_r.size() == 6);
  CHECK(a.s_p.size() == 20);
  CHECK(a.eval.size() == 8);
  std::set<std::string> seen;
  for (const auto* corpus : {&a.s_r, &a.s_p, &a.eval}) {
    for (const SFTExample& ex : *corpus) {
      CHECK(seen.insert(ex.task.instruction_text).second);
      CHECK(ex.y == ex.task.reference_answer);  // perturb prob 0
    }
  }
  for (std::size_t i = 0; i < a.s_p.size(); ++i)
    CHECK(a.s_p[i].task.instruction_text == b.s_p[i].task.instruction_text);
}

TEST_CASE("build_improver_data_core: union arity, bounds, quality theorem") {
  OracleConfig ocfg;  // alpha 0.5, perturb 0
  SamplingConfig sampling;
  sampling.max_new_tokens = 12;
  sampling.rng_seed = 5;
  Corpora corpora = generate_corpora(tiny_corpus(), ocfg);
  Parameters theta0 = init_params(tiny_model(), VocabSpec::standard().vocab_size(), 77);
  VariantFlags flags;

  // filtering disabled: exactly 2n triples under SGPO flags
  ImproverDataResult unfiltered = build_improver_data_core(theta0, corpora.s_r, ocfg, sampling,
                                                           flags, /*filter_enabled=*/false, 99);
  CHECK(unfiltered.triples.size() == 2 * corpora.s_r.size());

  // and n triples when improved targets are omitted
  VariantFlags ddagger = flags;
  ddagger.use_improved_targets = false;
  ImproverDataResult direct_only = build_improver_data_core(theta0, corpora.s_r, ocfg, sampling,
                                                            ddagger, false, 99);
  CHECK(direct_only.triples.size() == corpora.s_r.size());
  for (const ImproverTriple& t : direct_only.triples) CHECK(t.target_source == "direct");

  // filtering enabled: |D_R| = kept(improve) + kept(direct) and every
  // retained perplexity lies inside its own report's bounds
  ImproverDataResult filtered =
      build_improver_data_core(theta0, corpora.s_r, ocfg, sampling, flags, true, 99);
  CHECK(static_cast<int>(filtered.triples.size()) ==
        filtered.improve_report.kept + filtered.direct_report.kept);
  CHECK(filtered.improve_report.kept + filtered.improve_report.dropped ==
        static_cast<int>(corpora.s_r.size()));
  for (const ImproverTriple& t : filtered.triples) {
    const FilterReport& rep =
        t.target_source == "improve" ? filtered.improve_report : filtered.direct_report;
    if (!rep.degenerate) {
      CHECK(t.ppl >= rep.lower_bound);
      CHECK(t.ppl <= rep.upper_bound);
    }
    // determinism: generation matches the recorded policy responses
    CHECK(t.policy_resp == filtered.policy_resps[static_cast<std::size_t>(t.id)]);
  }
  // improver-oracle quality guarantee re-asserted pipeline-wide
  for (const ImproverTriple& t : filtered.triples) {
    if (t.target_source != "improve") continue;
    const TaskSpec& task = corpora.s_r[static_cast<std::size_t>(t.id)].task;
    CHECK(quality(task, t.target) >= quality(task, t.policy_resp));
  }
}

TEST_CASE("build_preference_data_core pairings") {
  OracleConfig ocfg;
  SamplingConfig sampling;
  sampling.max_new_tokens = 12;
  sampling.rng_seed = 6;
  Corpora corpora = generate_corpora(tiny_corpus(), ocfg);
  Parameters theta = init_params(tiny_model(), VocabSpec::standard().vocab_size(), 31);

  VariantFlags sgpo_flags;
  auto pairs = build_preference_data_core(theta, theta, corpora.s_p, sgpo_flags, sampling, 1);
  CHECK(pairs.size() == corpora.s_p.size());
  for (const PreferencePair& p : pairs) {
    CHECK(p.pairing == Pairing::SGPO);
    // rejected is the plain policy generation, reproducible from the same seed
    const SFTExample& ex = corpora.s_p[static_cast<std::size_t>(p.id)];
    CHECK(p.rejected ==
          generate_instruction_response(theta, ex.task, sampling, mix_seed(1, p.id, 0)));
  }

  VariantFlags spin_flags;
  spin_flags.pairing = Pairing::SPIN;
  auto spin_pairs = build_preference_data_core(theta, theta, corpora.s_p, spin_flags, sampling, 1);
  for (const PreferencePair& p : spin_pairs) {
    CHECK(p.chosen == corpora.s_p[static_cast<std::size_t>(p.id)].y);  // SFT y verbatim
    CHECK(p.pairing == Pairing::SPIN);
  }
}

TEST_CASE("training loops improve their objective") {
  OracleConfig ocfg;
  Corpora corpora = generate_corpora(tiny_corpus(), ocfg);
  const int vocab = VocabSpec::standard().vocab_size();
  ModelConfig mcfg = tiny_model();
  TrainConfig tcfg;
  tcfg.learning_rate = 3e-3;
  tcfg.batch_size = 4;
  tcfg.epochs = 2;
  tcfg.rng_seed = 9;

  std::vector<SftItem> items = make_sft_items(corpora.s_p, mcfg.max_seq_len);
  TrainStats stats;
  Parameters theta0 = init_params(mcfg, vocab, 50);
  Parameters trained = train_sft_model(theta0, items, tcfg, &stats);
  CHECK(stats.steps == 2 * 5);
  CHECK(stats.first_batch_loss == doctest::Approx(std::log(vocab)).epsilon(0.05));
  CHECK(stats.final_batch_loss < stats.first_batch_loss);

  // DPO from its own reference: first batch at ln 2, margin positive after
  SamplingConfig sampling;
  sampling.max_new_tokens = 12;
  sampling.rng_seed = 6;
  VariantFlags flags;
  auto pairs = build_preference_data_core(trained, trained, corpora.s_p, flags, sampling, 2);
  // keep only non-degenerate pairs informative but feed everything
  std::vector<DpoItem> dpo_items = make_dpo_items(pairs, mcfg.max_seq_len);
  TrainConfig dcfg = tcfg;
  dcfg.learning_rate = 1e-3;
  dcfg.epochs = 1;
  dcfg.dpo_beta = 0.5;
  TrainStats dstats;
  Parameters theta2 = train_dpo_model(trained, trained, dpo_items, dcfg, &dstats);
  CHECK(dstats.first_batch_loss == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  CHECK(dstats.mean_margin_after > 0.0);
  CHECK(theta2.data != trained.data);
}

TEST_CASE("pipeline run end to end with manifests and determinism") {
  namespace fs = std::filesystem;
  RunConfig cfg;
  cfg.model = tiny_model();
  cfg.corpus = tiny_corpus();
  cfg.train_sft = TrainConfig{3e-3, 0.5, 4, 1, 1.0, 0.9, 0.999, 1e-8, 101};
  cfg.train_improver = TrainConfig{3e-3, 0.5, 4, 1, 1.0, 0.9, 0.999, 1e-8, 102};
  cfg.train_dpo = TrainConfig{1e-3, 0.5, 4, 1, 1.0, 0.9, 0.999, 1e-8, 103};
  cfg.sampling_gen = SamplingConfig{0.7, 0.9, 12, 201};
  cfg.sampling_eval = SamplingConfig{0.0, 1.0, 12, 202};
  cfg.preset = "sgpo";

  const fs::path base = fs::temp_directory_path() / "sgpo_pipeline_test";
  fs::remove_all(base);

  std::string hash_a, hash_b;
  {
    PipelineRun run(cfg, base / "a");
    run.run_preset();
    for (const char* stage : {"corpora", "sft", "improver-data", "improver-train", "gen-prefs",
                              "dpo-train", "improver-eval", "report", "preset"})
      CHECK(run.has_manifest(stage));
    CHECK(run.has_manifest("evaluate-dpo_vs_sft"));

    // prompt-variant contract on every persisted improver prompt and pair
    auto triples = run.load_improver_data();
    CHECK(!triples.empty());
    for (const ImproverTriple& t : triples) {
      RenderedPrompt p = render_refine(t.instruction, t.policy_resp, std::nullopt,
                                       PromptVariant::sgpo(), Phase::Training,
                                       VocabSpec::standard(), cfg.model.max_seq_len);
      CHECK_FALSE(p.has_segment(SegmentName::ResponseA));
    }
    // dpo-train started from its own reference
    StageManifest dpo = run.load_manifest("dpo-train");
    CHECK(dpo.stats.at("first_batch_loss").get<double>() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-9));

    run.verify_lineage();
    hash_a = checkpoint_content_hash(run.load_ckpt("dpo").params);

    // evaluate a checkpoint against itself: exactly 50.0
    EvalReport self = run.run_evaluate("sft", "sft");
    CHECK(self.win_rate_pct == 50.0);
    CHECK(self.wins + self.losses + self.ties == static_cast<int>(cfg.corpus.eval_size));
  }
  {
    PipelineRun run(cfg, base / "b");
    run.run_preset();
    hash_b = checkpoint_content_hash(run.load_ckpt("dpo").params);
  }
  CHECK(hash_a == hash_b);

  // tampering with a dataset breaks the lineage chain
  {
    PipelineRun run(cfg, base / "c");
    run.run_corpora();
    run.run_sft();
    std::ofstream f(base / "c" / "data" / "sp_corpus.jsonl", std::ios::app);
    f << "{\"id\":\"sp-999999\",\"instruction\":\"x\",\"reference\":\"y\",\"y\":\"z\"}\n";
    f.close();
    CHECK_THROWS_AS(run.verify_lineage(), LineageError);
  }

  // a second process on the same directory is rejected
  {
    PipelineRun run(cfg, base / "d");
    CHECK_THROWS_AS(PipelineRun(cfg, base / "d"), StageError);
  }
  fs::remove_all(base);
}

TEST_CASE("step2 runs on top of a dpo checkpoint with ln-2 start") {
  namespace fs = std::filesystem;
  RunConfig cfg;
  cfg.model = tiny_model();
  cfg.corpus = tiny_corpus();
  cfg.train_sft = TrainConfig{3e-3, 0.5, 4, 1, 1.0, 0.9, 0.999, 1e-8, 101};
  cfg.train_improver = TrainConfig{3e-3, 0.5, 4, 1, 1.0, 0.9, 0.999, 1e-8, 102};
  cfg.train_dpo = TrainConfig{1e-3, 0.5, 4, 1, 1.0, 0.9, 0.999, 1e-8, 103};
  cfg.sampling_gen = SamplingConfig{0.7, 0.9, 12, 201};
  cfg.sampling_eval = SamplingConfig{0.0, 1.0, 12, 202};
  cfg.preset = "sgpo-step2";

  const fs::path base = fs::temp_directory_path() / "sgpo_step2_test";
  fs::remove_all(base);
  PipelineRun run(cfg, base);
  run.run_preset();
  StageManifest m = run.load_manifest("step2");
  CHECK(m.stats.at("first_batch_loss").get<double>() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-9));
  CHECK(m.stats.at("reference").get<std::string>() == "dpo");
  CHECK(m.stats.at("policy_source").get<std::string>() == "dpo");
  CHECK(run.has_manifest("evaluate-step2_vs_sft"));
  CHECK(run.has_manifest("evaluate-dpo_vs_sft"));
  CHECK(fs::exists(base / "reports" / "summary.json"));
  fs::remove_all(base);
}
