#pragma once

#include <string>

#include "sgpo/config.hpp"

namespace sgpo {

// Optional HTTP backend that replaces the programmatic improver/direct
// oracles when configured. Wire format: POST {instruction, response_a,
// response_b, mode: "improve"|"direct"} -> {text}. Disabled by default; the
// acceptance suite never requires it.
class ExternalImproverClient {
 public:
  explicit ExternalImproverClient(ExternalImproverConfig cfg) : cfg_(std::move(cfg)) {}

  // response_a is the high-quality reference, response_b the response to
  // improve, mirroring the refinement prompt roles.
  std::string improve(const std::string& instruction, const std::string& response_a,
                      const std::string& response_b) const;
  std::string direct(const std::string& instruction) const;

  const ExternalImproverConfig& config() const { return cfg_; }

 private:
  std::string request(const std::string& mode, const std::string& instruction,
                      const std::string& response_a, const std::string& response_b) const;

  ExternalImproverConfig cfg_;
};

}  // namespace sgpo
