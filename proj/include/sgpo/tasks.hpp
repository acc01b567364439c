#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sgpo {

// Synthetic instruction environment with programmatic ground truth: exact
// reference answers, a normalized-edit-distance quality score, a
// deterministic judge, and an improver oracle that moves a response toward
// the reference along an optimal edit script under an edit budget.

enum class TaskKind { Reverse, SortChars, CaesarShift, Dedup, SwapCase };

const char* task_kind_name(TaskKind kind);
TaskKind task_kind_from_name(std::string_view name);  // throws ConfigError

struct TaskSpec {
  TaskKind kind = TaskKind::Reverse;
  int caesar_k = 0;  // 1..25, CaesarShift only
  std::string payload;
  std::string instruction_text;
  std::string reference_answer;
};

// The kind's exact transformation (pure, total).
std::string apply_task_kind(TaskKind kind, int caesar_k, std::string_view payload);

TaskSpec make_task(TaskKind kind, int caesar_k, std::string payload, int template_index);

// Inverse of instruction rendering; throws std::invalid_argument when the
// text matches no known template.
TaskSpec parse_instruction(std::string_view text);

struct OracleConfig {
  double alpha = 0.5;            // fraction of the optimal edit script to apply
  double sft_perturb_prob = 0.0; // chance of one cosmetic edit in oracle responses
  double tie_delta = 0.02;       // judge tie threshold
  std::uint64_t rng_seed = 0;

  void validate() const;  // throws ConfigError
};

// Deterministic per (seed, index); payloads over [a-z0-9]; instruction
// templates cycle by index.
TaskSpec gen_task_at(std::uint64_t seed, int index, std::span<const TaskKind> kinds,
                     int len_min, int len_max);
std::vector<TaskSpec> gen_tasks(std::uint64_t seed, int count, std::span<const TaskKind> kinds,
                                int len_min, int len_max);

// 1 - levenshtein(response, reference) / max(len(response), len(reference), 1)
double quality(const TaskSpec& task, std::string_view response);

struct SFTExample {
  TaskSpec task;
  std::string y;
};

// Reference answer, or (with probability sft_perturb_prob) one random
// single-character edit of it; any edit that would drop quality below 0.95
// is discarded and the exact answer returned instead.
SFTExample oracle_sft(const TaskSpec& task, const OracleConfig& cfg, std::uint64_t seed);

// Applies the first ceil(alpha * d) operations of the optimal edit script
// from policy_resp to y, in canonical script order. Guarantees:
// levenshtein(out, policy_resp) <= ceil(alpha*d), levenshtein(out, y) =
// max(0, d - applied), and quality-against-y never decreases.
std::string oracle_improve(const TaskSpec& task, std::string_view y, std::string_view policy_resp,
                           const OracleConfig& cfg, std::uint64_t seed);

// Stand-in for a direct external-model answer to the instruction alone.
std::string oracle_direct(const TaskSpec& task, const OracleConfig& cfg, std::uint64_t seed);

enum class Verdict { WinA, WinB, Tie };

struct JudgeOutcome {
  Verdict verdict = Verdict::Tie;
};

// WinA iff quality(A) > quality(B) + delta, WinB symmetrically, else Tie.
// The seed is reserved for stochastic judges and unused here.
JudgeOutcome judge(const TaskSpec& task, std::string_view resp_a, std::string_view resp_b,
                   double delta, std::uint64_t seed);

// 100 * (wins + 0.5 * ties) / total for the requested side.
double win_rate(std::span<const JudgeOutcome> outcomes, bool side_a);

}  // namespace sgpo
