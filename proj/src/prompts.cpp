#include "sgpo/prompts.hpp"

#include <stdexcept>

namespace sgpo {

TokenSeq escape_payload(std::string_view text, const VocabSpec& vocab) {
  TokenSeq out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    bool escaped = false;
    for (const std::string& form : vocab.control_names) {
      if (text.compare(i, form.size(), form) == 0) {
        out.push_back(ctl::kEsc);
        for (unsigned char c : form) out.push_back(static_cast<Token>(c));
        i += form.size();
        escaped = true;
        break;
      }
    }
    if (!escaped) {
      out.push_back(static_cast<Token>(static_cast<unsigned char>(text[i])));
      ++i;
    }
  }
  return out;
}

std::string unescape_payload(std::span<const Token> tokens, const VocabSpec& vocab) {
  std::string out;
  out.reserve(tokens.size());
  for (Token t : tokens) {
    if (t == ctl::kEsc) continue;
    if (t >= 0 && t < 256) {
      out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
    } else {
      throw std::invalid_argument("unexpected control token inside payload: " +
                                  vocab.control_text(t));
    }
  }
  return out;
}

namespace {

void append_segment(RenderedPrompt& p, SegmentName name, Token open, Token close,
                    std::string_view payload, const VocabSpec& vocab) {
  p.tokens.push_back(open);
  const TokenSeq body = escape_payload(payload, vocab);
  const int begin = static_cast<int>(p.tokens.size());
  p.tokens.insert(p.tokens.end(), body.begin(), body.end());
  p.segments[name] = {begin, static_cast<int>(p.tokens.size())};
  p.tokens.push_back(close);
}

void check_len(const RenderedPrompt& p, int max_len) {
  if (static_cast<int>(p.tokens.size()) > max_len)
    throw std::length_error("rendered prompt exceeds max length");
}

}  // namespace

RenderedPrompt render_instruction(std::string_view x, const VocabSpec& vocab, int max_len) {
  if (x.empty()) throw std::invalid_argument("render_instruction: empty instruction");
  RenderedPrompt p;
  append_segment(p, SegmentName::Instruction, ctl::kIns, ctl::kInsEnd, x, vocab);
  p.tokens.push_back(ctl::kResp);
  check_len(p, max_len);
  return p;
}

RenderedPrompt render_refine(std::string_view x, std::string_view policy_resp,
                             const std::optional<std::string>& ref_resp, PromptVariant variant,
                             Phase phase, const VocabSpec& vocab, int max_len) {
  if (x.empty()) throw std::invalid_argument("render_refine: empty instruction");
  const bool want_ref = variant.includes_ref(phase);
  if (want_ref && !ref_resp.has_value())
    throw std::invalid_argument("render_refine: variant requires a reference response");
  if (!want_ref && ref_resp.has_value())
    throw std::invalid_argument("render_refine: variant excludes the reference response");

  RenderedPrompt p;
  append_segment(p, SegmentName::Instruction, ctl::kIns, ctl::kInsEnd, x, vocab);
  append_segment(p, SegmentName::ResponseB, ctl::kRespB, ctl::kRespBEnd, policy_resp, vocab);
  if (want_ref)
    append_segment(p, SegmentName::ResponseA, ctl::kRespA, ctl::kRespAEnd, *ref_resp, vocab);
  append_segment(p, SegmentName::Directive, ctl::kDir, ctl::kDirEnd, kImproveDirective, vocab);
  p.tokens.push_back(ctl::kResp);
  check_len(p, max_len);
  return p;
}

namespace {

struct Cursor {
  const TokenSeq& toks;
  std::size_t i = 0;

  bool done() const { return i >= toks.size(); }
  Token peek() const { return done() ? -1 : toks[i]; }
  void expect(Token t, const char* what) {
    if (done() || toks[i] != t) throw std::invalid_argument(std::string("malformed prompt: expected ") + what);
    ++i;
  }
  // payload tokens up to (not including) the close token
  std::span<const Token> until(Token close, const char* what) {
    const std::size_t begin = i;
    while (i < toks.size() && toks[i] != close) {
      // escaped control text is byte tokens; any bare control token here is
      // a structure error
      if (toks[i] >= 256 && toks[i] != ctl::kEsc)
        throw std::invalid_argument("malformed prompt: control token inside payload");
      ++i;
    }
    if (i >= toks.size())
      throw std::invalid_argument(std::string("malformed prompt: missing ") + what);
    const std::span<const Token> body{toks.data() + begin, i - begin};
    ++i;  // consume close
    return body;
  }
};

}  // namespace

ParsedPrompt parse_back(const TokenSeq& tokens, const VocabSpec& vocab) {
  Cursor c{tokens};
  ParsedPrompt out;
  c.expect(ctl::kIns, "<INS>");
  out.instruction = unescape_payload(c.until(ctl::kInsEnd, "</INS>"), vocab);
  if (c.peek() == ctl::kResp) {
    c.i++;
    if (!c.done()) throw std::invalid_argument("malformed prompt: trailing tokens");
    return out;
  }
  c.expect(ctl::kRespB, "<RESPB>");
  out.policy_resp = unescape_payload(c.until(ctl::kRespBEnd, "</RESPB>"), vocab);
  if (c.peek() == ctl::kRespA) {
    c.i++;
    out.ref_resp = unescape_payload(c.until(ctl::kRespAEnd, "</RESPA>"), vocab);
  }
  c.expect(ctl::kDir, "<DIR>");
  const auto directive = unescape_payload(c.until(ctl::kDirEnd, "</DIR>"), vocab);
  if (directive != kImproveDirective)
    throw std::invalid_argument("malformed prompt: unknown directive");
  c.expect(ctl::kResp, "<RESP>");
  if (!c.done()) throw std::invalid_argument("malformed prompt: trailing tokens");
  return out;
}

}  // namespace sgpo
