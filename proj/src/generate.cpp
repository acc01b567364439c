#include "sgpo/generate.hpp"

#include <algorithm>
#include <limits>

#include "sgpo/rng.hpp"

namespace sgpo {

namespace {

std::string decode_sampled(const Parameters& params, const TokenSeq& prompt,
                           const SamplingConfig& cfg, std::uint64_t item_seed) {
  SamplingConfig local = cfg;
  local.rng_seed = mix_seed(cfg.rng_seed, item_seed);
  local.max_new_tokens =
      std::min(cfg.max_new_tokens, params.config.max_seq_len - static_cast<int>(prompt.size()));
  const TokenSeq out = sample(params, prompt, local, ctl::kEos);
  return decode_bytes(out, VocabSpec::standard());
}

}  // namespace

std::string generate_instruction_response(const Parameters& params, const TaskSpec& task,
                                          const SamplingConfig& cfg, std::uint64_t item_seed) {
  const RenderedPrompt p =
      render_instruction(task.instruction_text, VocabSpec::standard(), params.config.max_seq_len);
  return decode_sampled(params, p.tokens, cfg, item_seed);
}

std::string generate_refined_response(const Parameters& params, const TaskSpec& task,
                                      const std::string& policy_resp,
                                      const std::optional<std::string>& ref_resp,
                                      PromptVariant variant, Phase phase,
                                      const SamplingConfig& cfg, std::uint64_t item_seed) {
  const RenderedPrompt p = render_refine(task.instruction_text, policy_resp, ref_resp, variant,
                                         phase, VocabSpec::standard(), params.config.max_seq_len);
  return decode_sampled(params, p.tokens, cfg, item_seed);
}

double response_perplexity(const Parameters& params, const TaskSpec& task,
                           const std::string& response) {
  const RenderedPrompt p =
      render_instruction(task.instruction_text, VocabSpec::standard(), params.config.max_seq_len);
  const TokenSeq resp = encode_response(response);
  // unscorable overlong responses surface as non-finite and get filtered
  if (p.tokens.size() + resp.size() > static_cast<std::size_t>(params.config.max_seq_len))
    return std::numeric_limits<double>::infinity();
  return perplexity(params, p.tokens, resp);
}

}  // namespace sgpo
