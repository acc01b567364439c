#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace sgpo {

using Token = int;
using TokenSeq = std::vector<Token>;

// Byte-level vocabulary: ids 0..255 are raw bytes, ids 256.. are named
// control tokens in declaration order. The text form of a control token is
// its name (e.g. "<INS>"); names must be unique and none may be a prefix of
// another so that escaping of text-form occurrences in payloads is
// unambiguous.
struct VocabSpec {
  std::vector<std::string> control_names;

  int vocab_size() const { return 256 + static_cast<int>(control_names.size()); }
  bool is_control(Token t) const { return t >= 256 && t < vocab_size(); }
  const std::string& control_text(Token t) const { return control_names[static_cast<std::size_t>(t - 256)]; }
  Token control_id(std::string_view name) const;  // throws if unknown

  void validate() const;  // throws ConfigError on collisions / bad names

  // The control set used by the pipeline.
  static const VocabSpec& standard();
};

// Ids of the standard control set, in declaration order.
namespace ctl {
inline constexpr Token kIns = 256;
inline constexpr Token kInsEnd = 257;
inline constexpr Token kRespB = 258;
inline constexpr Token kRespBEnd = 259;
inline constexpr Token kRespA = 260;
inline constexpr Token kRespAEnd = 261;
inline constexpr Token kDir = 262;
inline constexpr Token kDirEnd = 263;
inline constexpr Token kResp = 264;
inline constexpr Token kEos = 265;
inline constexpr Token kEsc = 266;
}  // namespace ctl

// Raw byte encoding, no escaping.
TokenSeq encode_bytes(std::string_view s);

// Byte tokens back to a string; control tokens are dropped.
std::string decode_bytes(const TokenSeq& tokens, const VocabSpec& vocab);

// Response tokens as trained/scored by the model: payload bytes + <EOS>.
TokenSeq encode_response(std::string_view s);

}  // namespace sgpo
