#include "sgpo/tasks.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

#include "sgpo/editdist.hpp"
#include "sgpo/errors.hpp"
#include "sgpo/hash.hpp"
#include "sgpo/rng.hpp"

namespace sgpo {

namespace {

constexpr std::string_view kPayloadAlphabet = "abcdefghijklmnopqrstuvwxyz0123456789";

char shift_letter(char c, int k) {
  if (c >= 'a' && c <= 'z') return static_cast<char>('a' + (c - 'a' + k) % 26);
  if (c >= 'A' && c <= 'Z') return static_cast<char>('A' + (c - 'A' + k) % 26);
  return c;
}

char swap_case(char c) {
  if (c >= 'a' && c <= 'z') return static_cast<char>(c - 'a' + 'A');
  if (c >= 'A' && c <= 'Z') return static_cast<char>(c - 'A' + 'a');
  return c;
}

struct Template {
  TaskKind kind;
  // prefix ends with ": "; CaesarShift templates carry a "%d" for k
  std::string_view prefix;
};

// two templates per kind, cycled by task index
constexpr std::string_view kReverse0 = "Reverse the string: ";
constexpr std::string_view kReverse1 = "Print backwards: ";
constexpr std::string_view kSort0 = "Sort the characters: ";
constexpr std::string_view kSort1 = "Order the characters: ";
constexpr std::string_view kCaesar0 = "Caesar shift by ";
constexpr std::string_view kCaesar1 = "Rotate letters by ";
constexpr std::string_view kDedup0 = "Remove repeated characters: ";
constexpr std::string_view kDedup1 = "Drop duplicate characters: ";
constexpr std::string_view kSwap0 = "Swap the letter case: ";
constexpr std::string_view kSwap1 = "Invert the case: ";

std::string render_instruction_text(TaskKind kind, int k, std::string_view payload,
                                    int template_index) {
  const int t = template_index % 2;
  std::string out;
  switch (kind) {
    case TaskKind::Reverse:
      out = std::string(t == 0 ? kReverse0 : kReverse1);
      break;
    case TaskKind::SortChars:
      out = std::string(t == 0 ? kSort0 : kSort1);
      break;
    case TaskKind::CaesarShift:
      out = std::string(t == 0 ? kCaesar0 : kCaesar1) + std::to_string(k) + ": ";
      break;
    case TaskKind::Dedup:
      out = std::string(t == 0 ? kDedup0 : kDedup1);
      break;
    case TaskKind::SwapCase:
      out = std::string(t == 0 ? kSwap0 : kSwap1);
      break;
  }
  out += payload;
  return out;
}

bool parse_caesar(std::string_view text, std::string_view prefix, TaskSpec& out) {
  if (text.rfind(prefix, 0) != 0) return false;
  std::size_t pos = prefix.size();
  int k = 0;
  bool any = false;
  while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') {
    k = k * 10 + (text[pos] - '0');
    ++pos;
    any = true;
  }
  if (!any || pos + 2 > text.size() || text[pos] != ':' || text[pos + 1] != ' ') return false;
  if (k < 1 || k > 25) return false;
  out.kind = TaskKind::CaesarShift;
  out.caesar_k = k;
  out.payload = std::string(text.substr(pos + 2));
  return true;
}

}  // namespace

const char* task_kind_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::Reverse: return "reverse";
    case TaskKind::SortChars: return "sortchars";
    case TaskKind::CaesarShift: return "caesar";
    case TaskKind::Dedup: return "dedup";
    case TaskKind::SwapCase: return "swapcase";
  }
  return "?";
}

TaskKind task_kind_from_name(std::string_view name) {
  if (name == "reverse") return TaskKind::Reverse;
  if (name == "sortchars") return TaskKind::SortChars;
  if (name == "caesar") return TaskKind::CaesarShift;
  if (name == "dedup") return TaskKind::Dedup;
  if (name == "swapcase") return TaskKind::SwapCase;
  throw ConfigError("unknown task kind: " + std::string(name));
}

std::string apply_task_kind(TaskKind kind, int caesar_k, std::string_view payload) {
  std::string out;
  switch (kind) {
    case TaskKind::Reverse:
      out.assign(payload.rbegin(), payload.rend());
      break;
    case TaskKind::SortChars:
      out.assign(payload);
      std::sort(out.begin(), out.end(),
                [](char a, char b) { return static_cast<unsigned char>(a) < static_cast<unsigned char>(b); });
      break;
    case TaskKind::CaesarShift:
      out.reserve(payload.size());
      for (char c : payload) out.push_back(shift_letter(c, caesar_k));
      break;
    case TaskKind::Dedup: {
      bool seen[256] = {};
      for (char c : payload) {
        const auto u = static_cast<unsigned char>(c);
        if (!seen[u]) {
          seen[u] = true;
          out.push_back(c);
        }
      }
      break;
    }
    case TaskKind::SwapCase:
      out.reserve(payload.size());
      for (char c : payload) out.push_back(swap_case(c));
      break;
  }
  return out;
}

TaskSpec make_task(TaskKind kind, int caesar_k, std::string payload, int template_index) {
  TaskSpec t;
  t.kind = kind;
  t.caesar_k = kind == TaskKind::CaesarShift ? caesar_k : 0;
  t.payload = std::move(payload);
  t.instruction_text = render_instruction_text(kind, t.caesar_k, t.payload, template_index);
  t.reference_answer = apply_task_kind(kind, t.caesar_k, t.payload);
  return t;
}

TaskSpec parse_instruction(std::string_view text) {
  TaskSpec out;
  auto plain = [&](std::string_view prefix, TaskKind kind) {
    if (text.rfind(prefix, 0) != 0) return false;
    out.kind = kind;
    out.payload = std::string(text.substr(prefix.size()));
    return true;
  };
  const bool ok = plain(kReverse0, TaskKind::Reverse) || plain(kReverse1, TaskKind::Reverse) ||
                  plain(kSort0, TaskKind::SortChars) || plain(kSort1, TaskKind::SortChars) ||
                  parse_caesar(text, kCaesar0, out) || parse_caesar(text, kCaesar1, out) ||
                  plain(kDedup0, TaskKind::Dedup) || plain(kDedup1, TaskKind::Dedup) ||
                  plain(kSwap0, TaskKind::SwapCase) || plain(kSwap1, TaskKind::SwapCase);
  if (!ok) throw std::invalid_argument("unparseable instruction: " + std::string(text));
  out.instruction_text = std::string(text);
  out.reference_answer = apply_task_kind(out.kind, out.caesar_k, out.payload);
  return out;
}

void OracleConfig::validate() const {
  if (!(alpha > 0.0) || alpha > 1.0) throw ConfigError("oracle.alpha must be in (0,1]");
  if (sft_perturb_prob < 0.0 || sft_perturb_prob > 1.0)
    throw ConfigError("oracle.sft_perturb_prob must be in [0,1]");
  if (tie_delta < 0.0) throw ConfigError("oracle.tie_delta must be >= 0");
}

TaskSpec gen_task_at(std::uint64_t seed, int index, std::span<const TaskKind> kinds,
                     int len_min, int len_max) {
  if (kinds.empty()) throw ConfigError("gen_tasks: kinds must be non-empty");
  if (len_min < 1 || len_max < len_min) throw ConfigError("gen_tasks: bad length range");
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(index)));
  const TaskKind kind = kinds[static_cast<std::size_t>(rng.below(kinds.size()))];
  const int len = len_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(len_max - len_min + 1)));
  std::string payload(static_cast<std::size_t>(len), ' ');
  for (char& c : payload) c = kPayloadAlphabet[static_cast<std::size_t>(rng.below(kPayloadAlphabet.size()))];
  const int k = 1 + static_cast<int>(rng.below(25));
  return make_task(kind, k, std::move(payload), index);
}

std::vector<TaskSpec> gen_tasks(std::uint64_t seed, int count, std::span<const TaskKind> kinds,
                                int len_min, int len_max) {
  if (count < 1) throw ConfigError("gen_tasks: count must be >= 1");
  std::vector<TaskSpec> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(gen_task_at(seed, i, kinds, len_min, len_max));
  return out;
}

double quality(const TaskSpec& task, std::string_view response) {
  const double denom = static_cast<double>(
      std::max<std::size_t>({response.size(), task.reference_answer.size(), 1}));
  return 1.0 - static_cast<double>(levenshtein(response, task.reference_answer)) / denom;
}

namespace {

// one random single-character edit; returns the reference unchanged when the
// edit would break the quality floor
std::string perturb_once(const TaskSpec& task, Rng& rng) {
  const std::string& ref = task.reference_answer;
  std::string cand = ref;
  const int kind = static_cast<int>(rng.below(3));
  if (kind == 0 && !cand.empty()) {  // substitute
    const std::size_t pos = static_cast<std::size_t>(rng.below(cand.size()));
    char c = cand[pos];
    while (c == cand[pos]) c = kPayloadAlphabet[static_cast<std::size_t>(rng.below(kPayloadAlphabet.size()))];
    cand[pos] = c;
  } else if (kind == 1) {  // insert
    const std::size_t pos = static_cast<std::size_t>(rng.below(cand.size() + 1));
    cand.insert(cand.begin() + static_cast<std::ptrdiff_t>(pos),
                kPayloadAlphabet[static_cast<std::size_t>(rng.below(kPayloadAlphabet.size()))]);
  } else if (!cand.empty()) {  // delete
    const std::size_t pos = static_cast<std::size_t>(rng.below(cand.size()));
    cand.erase(cand.begin() + static_cast<std::ptrdiff_t>(pos));
  }
  if (quality(task, cand) < 0.95) return ref;
  return cand;
}

Rng oracle_rng(const TaskSpec& task, const OracleConfig& cfg, std::uint64_t seed, std::uint64_t role) {
  Fnv64 h;
  h.update(task.instruction_text);
  return Rng(mix_seed(cfg.rng_seed, seed ^ h.value(), role));
}

}  // namespace

SFTExample oracle_sft(const TaskSpec& task, const OracleConfig& cfg, std::uint64_t seed) {
  Rng rng = oracle_rng(task, cfg, seed, 1);
  SFTExample ex{task, task.reference_answer};
  if (rng.uniform() < cfg.sft_perturb_prob) ex.y = perturb_once(task, rng);
  return ex;
}

std::string oracle_improve(const TaskSpec& task, std::string_view y, std::string_view policy_resp,
                           const OracleConfig& cfg, std::uint64_t seed) {
  (void)task;
  (void)seed;
  const int d = levenshtein(policy_resp, y);
  if (d == 0) return std::string(y);
  const int budget = static_cast<int>(std::ceil(cfg.alpha * static_cast<double>(d)));
  return apply_edit_prefix(policy_resp, y, budget);
}

std::string oracle_direct(const TaskSpec& task, const OracleConfig& cfg, std::uint64_t seed) {
  Rng rng = oracle_rng(task, cfg, seed, 2);
  if (rng.uniform() < cfg.sft_perturb_prob) return perturb_once(task, rng);
  return task.reference_answer;
}

JudgeOutcome judge(const TaskSpec& task, std::string_view resp_a, std::string_view resp_b,
                   double delta, std::uint64_t seed) {
  (void)seed;
  if (delta < 0) throw std::invalid_argument("judge: delta must be >= 0");
  const double qa = quality(task, resp_a);
  const double qb = quality(task, resp_b);
  if (qa > qb + delta) return {Verdict::WinA};
  if (qb > qa + delta) return {Verdict::WinB};
  return {Verdict::Tie};
}

double win_rate(std::span<const JudgeOutcome> outcomes, bool side_a) {
  if (outcomes.empty()) throw std::invalid_argument("win_rate: empty outcome list");
  double wins = 0.0;
  for (const JudgeOutcome& o : outcomes) {
    if (o.verdict == Verdict::Tie)
      wins += 0.5;
    else if ((o.verdict == Verdict::WinA) == side_a)
      wins += 1.0;
  }
  return 100.0 * wins / static_cast<double>(outcomes.size());
}

}  // namespace sgpo
