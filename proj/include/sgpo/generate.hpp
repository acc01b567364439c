#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "sgpo/model.hpp"
#include "sgpo/prompts.hpp"
#include "sgpo/tasks.hpp"

namespace sgpo {

// Decoding helpers shared by the pipeline stages and the evaluation harness.
// Each call derives its own RNG stream from (cfg.rng_seed, item_seed); the
// new-token budget is clamped to what max_seq_len leaves after the prompt.

std::string generate_instruction_response(const Parameters& params, const TaskSpec& task,
                                          const SamplingConfig& cfg, std::uint64_t item_seed);

std::string generate_refined_response(const Parameters& params, const TaskSpec& task,
                                      const std::string& policy_resp,
                                      const std::optional<std::string>& ref_resp,
                                      PromptVariant variant, Phase phase,
                                      const SamplingConfig& cfg, std::uint64_t item_seed);

// Perplexity of a response string under the plain instruction prompt.
double response_perplexity(const Parameters& params, const TaskSpec& task,
                           const std::string& response);

}  // namespace sgpo
