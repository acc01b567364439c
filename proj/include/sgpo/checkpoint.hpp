#pragma once

#include <filesystem>
#include <string>

#include "sgpo/model.hpp"
#include "sgpo/vocab.hpp"

namespace sgpo {

// Versioned weight container: a structured-text head (model config, vocab,
// tensor manifest with byte offsets, content hash) followed by the raw
// row-major little-endian float64 blob.
struct Checkpoint {
  VocabSpec vocab;
  Parameters params;
  std::string config_hash;  // canonical run-config hash of the producing run
  std::string stage;        // producing stage name
};

// FNV-1a over the weight blob bytes; the identity compared by the
// determinism checks.
std::string checkpoint_content_hash(const Parameters& params);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);  // throws StageError

}  // namespace sgpo
