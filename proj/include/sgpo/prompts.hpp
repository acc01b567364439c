#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "sgpo/vocab.hpp"

namespace sgpo {

// Prompt layouts for the two roles of the shared model. The instruction
// prompt conditions plain generation; the refinement prompt carries the
// instruction, the response to improve (response-B), optionally a
// high-quality reference (response-A) and a fixed improvement directive.

enum class Phase { Training, Refining };

struct PromptVariant {
  bool include_ref_in_training = false;
  bool include_ref_in_refining = true;

  static PromptVariant sgpo() { return {false, true}; }
  static PromptVariant all_ref() { return {true, true}; }
  static PromptVariant no_ref() { return {false, false}; }

  bool includes_ref(Phase phase) const {
    return phase == Phase::Training ? include_ref_in_training : include_ref_in_refining;
  }
};

enum class SegmentName { Instruction, ResponseB, ResponseA, Directive };

struct RenderedPrompt {
  TokenSeq tokens;
  std::map<SegmentName, std::pair<int, int>> segments;  // payload span [begin, end)

  bool has_segment(SegmentName s) const { return segments.count(s) != 0; }
};

inline constexpr std::string_view kImproveDirective = "Improve response B.";

// Payload bytes with every textual occurrence of a control-token form (e.g.
// "<INS>") prefixed by the escape token.
TokenSeq escape_payload(std::string_view text, const VocabSpec& vocab);
std::string unescape_payload(std::span<const Token> tokens, const VocabSpec& vocab);

// <INS> x </INS> <RESP>
RenderedPrompt render_instruction(std::string_view x, const VocabSpec& vocab, int max_len);

// <INS> x </INS> <RESPB> policy </RESPB> [<RESPA> ref </RESPA>] <DIR> ... </DIR> <RESP>
// ref_resp must be present exactly when the variant includes it for the phase.
RenderedPrompt render_refine(std::string_view x, std::string_view policy_resp,
                             const std::optional<std::string>& ref_resp, PromptVariant variant,
                             Phase phase, const VocabSpec& vocab, int max_len);

struct ParsedPrompt {
  std::string instruction;
  std::optional<std::string> policy_resp;
  std::optional<std::string> ref_resp;
};

// Exact inverse of the render operations; throws std::invalid_argument on a
// malformed token stream.
ParsedPrompt parse_back(const TokenSeq& tokens, const VocabSpec& vocab);

}  // namespace sgpo
