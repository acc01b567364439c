#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sgpo/model.hpp"
#include "sgpo/prompts.hpp"
#include "sgpo/tasks.hpp"
#include "sgpo/train.hpp"

namespace sgpo {

enum class Pairing { SGPO, SPIN, Diamond };

const char* pairing_name(Pairing p);

// Which documented combination a run uses; resolved from the preset name.
struct VariantFlags {
  bool share_improver_policy = true;  // false = the dagger variant
  bool use_improved_targets = true;   // false = the double-dagger variant
  PromptVariant prompt_variant = PromptVariant::sgpo();
  Pairing pairing = Pairing::SGPO;
};

struct CorpusConfig {
  int improver_n = 300;  // |S_R|
  int policy_m = 2000;   // |S_P|, must exceed improver_n
  int eval_size = 500;
  std::vector<TaskKind> kinds;
  int payload_min = 4;
  int payload_max = 12;
  std::uint64_t seed_improver = 0;
  std::uint64_t seed_policy = 0;
  std::uint64_t seed_eval = 0;
};

struct ExternalImproverConfig {
  bool enabled = false;
  std::string host;
  int port = 0;
  std::string path = "/improve";
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train_sft;
  TrainConfig train_improver;
  TrainConfig train_dpo;
  SamplingConfig sampling_gen;
  SamplingConfig sampling_eval;
  OracleConfig oracle;
  CorpusConfig corpus;
  std::string preset = "sgpo";
  bool iqr_filter_enabled = true;
  ExternalImproverConfig external_improver;
  // execution-only settings, excluded from the canonical form
  std::string output_dir = "runs/out";
  int workers = 0;

  VariantFlags flags() const;  // derived from preset; throws ConfigError
  void validate() const;       // throws ConfigError with field-precise messages
};

bool preset_has_improver_stages(const std::string& preset);
bool preset_has_step2(const std::string& preset);

// Parse + validate; ConfigError carries the offending field name.
RunConfig load_config(const std::filesystem::path& path);
RunConfig parse_config(const std::string& text);

// Canonical serialization (sorted keys, execution-only fields stripped) and
// its hash, which names the run.
std::string canonical_config(const RunConfig& cfg);
std::string config_hash(const RunConfig& cfg);

// Deterministically re-derives every seed from one override value.
void apply_seed_override(RunConfig& cfg, std::uint64_t base);

}  // namespace sgpo
