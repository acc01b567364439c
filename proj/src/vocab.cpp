#include "sgpo/vocab.hpp"

#include "sgpo/errors.hpp"

namespace sgpo {

Token VocabSpec::control_id(std::string_view name) const {
  for (std::size_t i = 0; i < control_names.size(); ++i) {
    if (control_names[i] == name) return static_cast<Token>(256 + i);
  }
  throw ConfigError("unknown control token: " + std::string(name));
}

void VocabSpec::validate() const {
  for (std::size_t i = 0; i < control_names.size(); ++i) {
    const std::string& a = control_names[i];
    if (a.empty()) throw ConfigError("control token name must be non-empty");
    for (std::size_t j = 0; j < control_names.size(); ++j) {
      if (i == j) continue;
      const std::string& b = control_names[j];
      if (a == b) throw ConfigError("control token name collision: " + a);
      if (b.size() > a.size() && b.compare(0, a.size(), a) == 0)
        throw ConfigError("control token name is a prefix of another: " + a);
    }
  }
}

const VocabSpec& VocabSpec::standard() {
  static const VocabSpec spec = [] {
    VocabSpec v;
    v.control_names = {"<INS>", "</INS>", "<RESPB>", "</RESPB>", "<RESPA>", "</RESPA>",
                       "<DIR>", "</DIR>", "<RESP>", "<EOS>", "<ESC>"};
    v.validate();
    return v;
  }();
  return spec;
}

TokenSeq encode_bytes(std::string_view s) {
  TokenSeq out;
  out.reserve(s.size());
  for (unsigned char c : s) out.push_back(static_cast<Token>(c));
  return out;
}

std::string decode_bytes(const TokenSeq& tokens, const VocabSpec& vocab) {
  std::string out;
  out.reserve(tokens.size());
  for (Token t : tokens) {
    if (t >= 0 && t < 256) out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
    (void)vocab;
  }
  return out;
}

TokenSeq encode_response(std::string_view s) {
  TokenSeq out = encode_bytes(s);
  out.push_back(ctl::kEos);
  return out;
}

}  // namespace sgpo
