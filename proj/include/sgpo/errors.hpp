#pragma once

#include <stdexcept>
#include <string>

namespace sgpo {

// Config parse / invariant violations. CLI exit code 2.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Stage execution failures (divergence, missing artifacts, IO). CLI exit code 3.
struct StageError : std::runtime_error {
  explicit StageError(const std::string& msg) : std::runtime_error(msg) {}
};

// Broken lineage chain (hash mismatch between declared and found inputs). CLI exit code 4.
struct LineageError : std::runtime_error {
  explicit LineageError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace sgpo
