#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#ifdef _OPENMP
#include <omp.h>
#endif

#include "sgpo/config.hpp"
#include "sgpo/errors.hpp"
#include "sgpo/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;
constexpr int kExitLineage = 4;

struct CliOptions {
  std::string config_path;
  std::string out_dir;
  std::string preset;
  int workers = -1;
  bool seed_override_set = false;
  std::uint64_t seed_override = 0;
  std::string eval_model;
  std::string eval_baseline;
};

sgpo::RunConfig prepare_config(const CliOptions& opt) {
  sgpo::RunConfig cfg = sgpo::load_config(opt.config_path);
  if (!opt.preset.empty()) cfg.preset = opt.preset;
  if (opt.seed_override_set) sgpo::apply_seed_override(cfg, opt.seed_override);
  if (const char* env = std::getenv("SGPO_OUT")) cfg.output_dir = env;
  if (const char* env = std::getenv("SGPO_WORKERS")) cfg.workers = std::atoi(env);
  if (!opt.out_dir.empty()) cfg.output_dir = opt.out_dir;
  if (opt.workers >= 0) cfg.workers = opt.workers;
  cfg.validate();
#ifdef _OPENMP
  omp_set_max_active_levels(1);  // item-level parallelism only; no nested teams
  if (cfg.workers > 0) omp_set_num_threads(cfg.workers);
#endif
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sgpo: self-generated preference optimization lab"};
  app.require_subcommand(1);
  app.fallthrough();  // accept the global flags after the subcommand too

  CliOptions opt;
  app.add_option("--config", opt.config_path, "run configuration file")->required();
  app.add_option("--out", opt.out_dir, "output directory (overrides config and SGPO_OUT)");
  app.add_option("--workers", opt.workers, "worker thread bound (overrides config and SGPO_WORKERS)");
  app.add_option("--preset", opt.preset, "preset name override");
  auto* seed_opt = app.add_option("--seed-override", opt.seed_override,
                                  "re-derive every stage seed from this value");

  auto* cmd_validate = app.add_subcommand("validate-config", "check the config and print its hash");
  auto* cmd_sft = app.add_subcommand("sft-train", "generate corpora and train the initial policy");
  auto* cmd_idata = app.add_subcommand("improver-data", "build the improver training data");
  auto* cmd_itrain = app.add_subcommand("improver-train", "train the self-improver");
  auto* cmd_prefs = app.add_subcommand("gen-prefs", "self-generate preference pairs");
  auto* cmd_dpo = app.add_subcommand("dpo-train", "preference optimization");
  auto* cmd_step2 = app.add_subcommand("step2", "one more preference-optimization pass");
  auto* cmd_eval = app.add_subcommand("evaluate", "pairwise win rate on held-out tasks");
  cmd_eval->add_option("--model", opt.eval_model, "checkpoint name (default: preset final)");
  cmd_eval->add_option("--baseline", opt.eval_baseline, "checkpoint name (default: sft)");
  auto* cmd_ieval = app.add_subcommand("improver-eval", "pairwise improver evaluation");
  auto* cmd_report = app.add_subcommand("report", "verify lineage and emit the analysis reports");
  auto* cmd_preset = app.add_subcommand("run-preset", "execute the preset stage DAG end to end");

  CLI11_PARSE(app, argc, argv);
  opt.seed_override_set = seed_opt->count() > 0;

  try {
    sgpo::RunConfig cfg = prepare_config(opt);
    if (cmd_validate->parsed()) {
      std::cout << "config ok, hash " << sgpo::config_hash(cfg) << "\n";
      return kExitOk;
    }

    sgpo::PipelineRun run(cfg, cfg.output_dir);
    if (cmd_sft->parsed()) {
      if (!run.has_manifest("corpora")) run.run_corpora();
      run.run_sft();
    } else if (cmd_idata->parsed()) {
      run.run_improver_data();
    } else if (cmd_itrain->parsed()) {
      run.run_improver_train();
    } else if (cmd_prefs->parsed()) {
      run.run_gen_prefs();
    } else if (cmd_dpo->parsed()) {
      run.run_dpo();
    } else if (cmd_step2->parsed()) {
      run.run_step2();
    } else if (cmd_eval->parsed()) {
      const std::string model = opt.eval_model.empty() ? run.final_checkpoint_name() : opt.eval_model;
      const std::string baseline = opt.eval_baseline.empty() ? "sft" : opt.eval_baseline;
      sgpo::EvalReport report = run.run_evaluate(model, baseline);
      std::cout << model << " vs " << baseline << ": WR " << report.win_rate_pct << " (" << report.wins
                << "W/" << report.losses << "L/" << report.ties << "T)\n";
    } else if (cmd_ieval->parsed()) {
      sgpo::ImproverEvalResult r = run.run_improver_eval();
      std::cout << "improver B-vs-A WR " << r.b_vs_a.win_rate_pct << ", B-vs-C WR "
                << r.b_vs_c.win_rate_pct << "\n";
    } else if (cmd_report->parsed()) {
      run.run_report();
      std::cout << "lineage verified; reports written to " << (run.root() / "reports").string()
                << "\n";
    } else if (cmd_preset->parsed()) {
      run.run_preset();
      std::cout << "preset " << cfg.preset << " complete; final checkpoint "
                << run.final_checkpoint_name() << "\n";
    }
    return kExitOk;
  } catch (const sgpo::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const sgpo::LineageError& e) {
    std::cerr << "lineage error: " << e.what() << "\n";
    return kExitLineage;
  } catch (const std::exception& e) {
    std::cerr << "stage error: " << e.what() << "\n";
    return kExitStage;
  }
}
