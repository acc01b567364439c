#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace sgpo {

// FNV-1a 64-bit, used for run/config naming and artifact integrity checks.
class Fnv64 {
 public:
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view s) { update(s.data(), s.size()); }
  std::uint64_t value() const { return h_; }
  std::string hex() const;

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

inline std::string Fnv64::hex() const {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  std::uint64_t v = h_;
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

inline std::string fnv64_hex(std::string_view s) {
  Fnv64 h;
  h.update(s);
  return h.hex();
}

}  // namespace sgpo
