#pragma once

#include <string>
#include <string_view>

namespace sgpo {

// Model responses are arbitrary byte strings while the dataset files are
// JSON, which requires valid UTF-8. Byte strings are stored as Latin-1
// codepoints (byte b -> U+00b), a lossless bijection.
std::string bytes_to_text(std::string_view bytes);

// Inverse mapping; throws std::invalid_argument on codepoints above U+00FF
// or malformed UTF-8.
std::string text_to_bytes(std::string_view text);

}  // namespace sgpo
