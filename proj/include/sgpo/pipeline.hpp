#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sgpo/checkpoint.hpp"
#include "sgpo/config.hpp"
#include "sgpo/external_improver.hpp"
#include "sgpo/metrics.hpp"
#include "sgpo/tasks.hpp"
#include "sgpo/train.hpp"

namespace sgpo {

// ---------------------------------------------------------------------------
// data records
// ---------------------------------------------------------------------------

struct ImproverTriple {
  int id = 0;  // index into S_R
  std::string instruction;
  std::string policy_resp;  // response of the initial policy
  std::string target;       // filtered improved or direct oracle response
  std::string target_source;  // "improve" | "direct"
  double ppl = 0.0;           // perplexity of target under the initial policy
};

struct PreferencePair {
  int id = 0;  // index into S_P
  std::string instruction;
  std::string chosen;
  std::string rejected;
  Pairing pairing = Pairing::SGPO;
};

// ---------------------------------------------------------------------------
// IQR outlier filter
// ---------------------------------------------------------------------------

struct FilterReport {
  double q1 = 0.0, q3 = 0.0, iqr = 0.0;
  double lower_bound = 0.0, upper_bound = 0.0;
  int kept = 0;
  int dropped = 0;
  std::vector<int> dropped_ids;
  int nonfinite = 0;      // dropped because the statistic was not finite
  bool degenerate = false;  // fewer than 4 finite inputs: pass-through
  bool enabled = true;      // false when filtering was globally disabled

  nlohmann::json to_json() const;
};

// Quartiles by linear interpolation between closest ranks on the sorted
// finite values; keeps items within [Q1 - 1.5 IQR, Q3 + 1.5 IQR]. Non-finite
// statistics are always dropped and flagged. Fewer than 4 finite items is a
// pass-through with the degenerate flag set.
std::pair<std::vector<int>, FilterReport> iqr_filter(
    std::span<const std::pair<int, double>> items);

// ---------------------------------------------------------------------------
// in-memory stage cores (persistence-free, used directly by tests)
// ---------------------------------------------------------------------------

struct CandidateRecord {
  int id = 0;
  std::string source;  // "improve" | "direct"
  std::string target;
  double ppl = 0.0;
  bool kept = false;
};

struct ImproverDataResult {
  std::vector<ImproverTriple> triples;
  FilterReport improve_report;
  FilterReport direct_report;
  std::vector<CandidateRecord> candidates;   // pre-filter, both sets
  std::vector<std::string> policy_resps;     // one per S_R task
};

// Generates policy responses with theta0, obtains improved and direct
// targets (programmatic oracles, or the HTTP backend when given), scores
// perplexity under theta0 and filters each candidate set independently.
// use_improved_targets=false omits the improved set entirely.
ImproverDataResult build_improver_data_core(const Parameters& theta0,
                                            std::span<const SFTExample> s_r,
                                            const OracleConfig& oracle_cfg,
                                            const SamplingConfig& sampling,
                                            const VariantFlags& flags, bool filter_enabled,
                                            std::uint64_t stage_seed,
                                            const ExternalImproverClient* external = nullptr);

// SGPO pairing: chosen = refine-prompt generation, rejected = instruction
// generation, both from the given checkpoints. SPIN/Diamond: chosen = SFT y,
// rejected = instruction generation from `policy`.
std::vector<PreferencePair> build_preference_data_core(const Parameters& policy,
                                                       const Parameters& improver,
                                                       std::span<const SFTExample> s_p,
                                                       const VariantFlags& flags,
                                                       const SamplingConfig& sampling,
                                                       std::uint64_t stage_seed);

struct TrainStats {
  double first_batch_loss = 0.0;
  double final_batch_loss = 0.0;
  int steps = 0;
  int degenerate_pairs = 0;
  double mean_margin_after = 0.0;  // DPO only, over the full training set
};

Parameters train_sft_model(Parameters start, std::span<const SftItem> items,
                           const TrainConfig& cfg, TrainStats* stats);
Parameters train_dpo_model(Parameters start, const Parameters& ref,
                           std::span<const DpoItem> pairs, const TrainConfig& cfg,
                           TrainStats* stats);

double mean_dpo_margin(const Parameters& params, const Parameters& ref,
                       std::span<const DpoItem> pairs, double beta);

// token-level training items
std::vector<SftItem> make_sft_items(std::span<const SFTExample> corpus, int max_seq_len);
std::vector<SftItem> make_improver_items(std::span<const ImproverTriple> triples,
                                         std::span<const SFTExample> s_r,
                                         const VariantFlags& flags, int max_seq_len);
std::vector<DpoItem> make_dpo_items(std::span<const PreferencePair> pairs, int max_seq_len);

// deterministic disjoint corpora (S_R, S_P, eval)
struct Corpora {
  std::vector<SFTExample> s_r;
  std::vector<SFTExample> s_p;
  std::vector<SFTExample> eval;
};
Corpora generate_corpora(const CorpusConfig& corpus_cfg, const OracleConfig& oracle_cfg);

// ---------------------------------------------------------------------------
// persisted run: stages, manifests, lineage
// ---------------------------------------------------------------------------

struct IoRef {
  std::string name;
  std::string path;  // relative to the run root
  std::string hash;  // content hash of the file
};

struct StageManifest {
  std::string stage;
  std::string config_hash;
  nlohmann::json seeds;
  std::vector<IoRef> inputs;
  std::vector<IoRef> outputs;
  nlohmann::json counts;
  nlohmann::json stats;

  // stable identity over (stage, config, seeds, inputs); embedded in output
  // file headers before the outputs themselves are hashed
  std::string identity() const;
  nlohmann::json to_json() const;
  static StageManifest from_json(const nlohmann::json& j);
};

std::string file_content_hash(const std::filesystem::path& path);

// Exclusive-ownership marker for one output directory.
class DirLock {
 public:
  explicit DirLock(const std::filesystem::path& dir);
  ~DirLock();
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  std::filesystem::path path_;
};

class PipelineRun {
 public:
  PipelineRun(RunConfig cfg, std::filesystem::path root);

  void run_corpora();
  void run_sft();
  void run_improver_data();
  void run_improver_train();
  void run_gen_prefs();
  void run_dpo();
  void run_step2();
  EvalReport run_evaluate(const std::string& model_name, const std::string& baseline_name);
  ImproverEvalResult run_improver_eval();
  void run_report();
  void run_preset();

  // artifact access
  Checkpoint load_ckpt(const std::string& name) const;  // "sft" | "improver" | "dpo" | "step2"
  std::vector<SFTExample> load_corpus(const std::string& name) const;  // "sr" | "sp" | "eval"
  std::vector<ImproverTriple> load_improver_data() const;
  std::vector<PreferencePair> load_prefs(const std::string& name) const;  // "prefs" | "prefs_step2"
  StageManifest load_manifest(const std::string& stage) const;
  bool has_manifest(const std::string& stage) const;

  const RunConfig& config() const { return cfg_; }
  const std::string& config_hash_hex() const { return cfg_hash_; }
  const std::filesystem::path& root() const { return root_; }
  std::string final_checkpoint_name() const;  // per preset

  // lineage verification over every manifest present; throws LineageError
  void verify_lineage() const;

 private:
  void save_corpus(const std::string& name, std::span<const SFTExample> corpus,
                   const StageManifest& m);
  void write_manifest(const StageManifest& m);
  StageManifest start_manifest(const std::string& stage, nlohmann::json seeds,
                               std::vector<IoRef> inputs) const;
  IoRef out_ref(const std::string& name, const std::string& rel_path) const;
  IoRef in_ref(const std::string& name, const std::string& rel_path) const;
  void check_header(const std::filesystem::path& path) const;
  void require_stage(const std::string& stage) const;
  Checkpoint policy_ckpt_for_prefs() const;
  Checkpoint improver_ckpt_for_prefs() const;

  RunConfig cfg_;
  std::string cfg_hash_;
  std::filesystem::path root_;
  DirLock lock_;
};

}  // namespace sgpo
