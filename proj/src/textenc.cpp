#include "sgpo/textenc.hpp"

#include <stdexcept>

namespace sgpo {

std::string bytes_to_text(std::string_view bytes) {
  std::string out;
  out.reserve(bytes.size());
  for (unsigned char b : bytes) {
    if (b < 0x80) {
      out.push_back(static_cast<char>(b));
    } else {
      out.push_back(static_cast<char>(0xC0 | (b >> 6)));
      out.push_back(static_cast<char>(0x80 | (b & 0x3F)));
    }
  }
  return out;
}

std::string text_to_bytes(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size();) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (c < 0x80) {
      out.push_back(static_cast<char>(c));
      ++i;
    } else if ((c & 0xE0) == 0xC0) {
      if (i + 1 >= text.size()) throw std::invalid_argument("truncated UTF-8 in text field");
      const unsigned char c2 = static_cast<unsigned char>(text[i + 1]);
      if ((c2 & 0xC0) != 0x80) throw std::invalid_argument("malformed UTF-8 in text field");
      const unsigned int cp = (static_cast<unsigned int>(c & 0x1F) << 6) | (c2 & 0x3F);
      if (cp > 0xFF) throw std::invalid_argument("codepoint above U+00FF in byte-string field");
      out.push_back(static_cast<char>(static_cast<unsigned char>(cp)));
      i += 2;
    } else {
      throw std::invalid_argument("codepoint above U+00FF in byte-string field");
    }
  }
  return out;
}

}  // namespace sgpo
