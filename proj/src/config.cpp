#include "sgpo/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sgpo/errors.hpp"
#include "sgpo/hash.hpp"
#include "sgpo/rng.hpp"

namespace sgpo {

using nlohmann::json;

const char* pairing_name(Pairing p) {
  switch (p) {
    case Pairing::SGPO: return "sgpo";
    case Pairing::SPIN: return "spin";
    case Pairing::Diamond: return "diamond";
  }
  return "?";
}

VariantFlags RunConfig::flags() const {
  VariantFlags f;
  if (preset == "sft" || preset == "sgpo" || preset == "sgpo-step2") {
    // defaults
  } else if (preset == "sgpo-dagger") {
    f.share_improver_policy = false;
  } else if (preset == "sgpo-ddagger") {
    f.share_improver_policy = false;
    f.use_improved_targets = false;
  } else if (preset == "sgpo-diamond") {
    f.pairing = Pairing::Diamond;
  } else if (preset == "spin") {
    f.pairing = Pairing::SPIN;
  } else if (preset == "allref") {
    f.prompt_variant = PromptVariant::all_ref();
  } else if (preset == "noref") {
    f.prompt_variant = PromptVariant::no_ref();
  } else {
    throw ConfigError("unknown preset: " + preset);
  }
  return f;
}

bool preset_has_improver_stages(const std::string& preset) {
  return preset != "sft" && preset != "spin";
}

bool preset_has_step2(const std::string& preset) { return preset == "sgpo-step2"; }

void RunConfig::validate() const {
  model.validate();
  try {
    train_sft.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("train.sft: ") + e.what());
  }
  try {
    train_improver.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("train.improver: ") + e.what());
  }
  try {
    train_dpo.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("train.dpo: ") + e.what());
  }
  oracle.validate();
  if (sampling_gen.temperature < 0) throw ConfigError("sampling.gen.temperature must be >= 0");
  if (sampling_gen.top_p <= 0 || sampling_gen.top_p > 1)
    throw ConfigError("sampling.gen.top_p must be in (0,1]");
  if (sampling_gen.max_new_tokens < 1) throw ConfigError("sampling.gen.max_new_tokens must be >= 1");
  if (sampling_eval.temperature < 0) throw ConfigError("sampling.eval.temperature must be >= 0");
  if (sampling_eval.top_p <= 0 || sampling_eval.top_p > 1)
    throw ConfigError("sampling.eval.top_p must be in (0,1]");
  if (sampling_eval.max_new_tokens < 1)
    throw ConfigError("sampling.eval.max_new_tokens must be >= 1");
  if (corpus.improver_n < 1) throw ConfigError("corpus.improver_n must be >= 1");
  if (corpus.policy_m < 1) throw ConfigError("corpus.policy_m must be >= 1");
  if (corpus.improver_n >= corpus.policy_m)
    throw ConfigError("corpus.improver_n must be smaller than corpus.policy_m");
  if (corpus.eval_size < 1) throw ConfigError("corpus.eval_size must be >= 1");
  if (corpus.kinds.empty()) throw ConfigError("corpus.kinds must be non-empty");
  if (corpus.payload_min < 4 || corpus.payload_max > 48 || corpus.payload_max < corpus.payload_min)
    throw ConfigError("corpus payload length range must lie within [4,48]");
  if (external_improver.enabled) {
    if (external_improver.host.empty()) throw ConfigError("external_improver.host must be set");
    if (external_improver.port < 1 || external_improver.port > 65535)
      throw ConfigError("external_improver.port must be a valid port");
  }
  flags();  // rejects unknown presets
}

namespace {

const json& require(const json& j, const char* section, const char* key) {
  auto it = j.find(key);
  if (it == j.end())
    throw ConfigError(std::string("missing config field: ") + section + "." + key);
  return *it;
}

TrainConfig parse_train(const json& j, const char* section) {
  TrainConfig t;
  t.learning_rate = require(j, section, "learning_rate").get<double>();
  t.dpo_beta = require(j, section, "dpo_beta").get<double>();
  t.batch_size = require(j, section, "batch_size").get<int>();
  t.epochs = require(j, section, "epochs").get<int>();
  t.grad_clip_norm = require(j, section, "grad_clip_norm").get<double>();
  t.adam_beta1 = require(j, section, "adam_beta1").get<double>();
  t.adam_beta2 = require(j, section, "adam_beta2").get<double>();
  t.adam_epsilon = require(j, section, "adam_epsilon").get<double>();
  t.rng_seed = require(j, section, "rng_seed").get<std::uint64_t>();
  return t;
}

json train_to_json(const TrainConfig& t) {
  return json{{"learning_rate", t.learning_rate},
              {"dpo_beta", t.dpo_beta},
              {"batch_size", t.batch_size},
              {"epochs", t.epochs},
              {"grad_clip_norm", t.grad_clip_norm},
              {"adam_beta1", t.adam_beta1},
              {"adam_beta2", t.adam_beta2},
              {"adam_epsilon", t.adam_epsilon},
              {"rng_seed", t.rng_seed}};
}

SamplingConfig parse_sampling(const json& j, const char* section) {
  SamplingConfig s;
  s.temperature = require(j, section, "temperature").get<double>();
  s.top_p = require(j, section, "top_p").get<double>();
  s.max_new_tokens = require(j, section, "max_new_tokens").get<int>();
  s.rng_seed = require(j, section, "rng_seed").get<std::uint64_t>();
  return s;
}

json sampling_to_json(const SamplingConfig& s) {
  return json{{"temperature", s.temperature},
              {"top_p", s.top_p},
              {"max_new_tokens", s.max_new_tokens},
              {"rng_seed", s.rng_seed}};
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config is not valid JSON");
  RunConfig c;
  const json& m = require(j, "", "model");
  c.model.d_model = require(m, "model", "d_model").get<int>();
  c.model.n_layers = require(m, "model", "n_layers").get<int>();
  c.model.n_heads = require(m, "model", "n_heads").get<int>();
  c.model.d_ff = require(m, "model", "d_ff").get<int>();
  c.model.max_seq_len = require(m, "model", "max_seq_len").get<int>();
  c.model.init_scale = require(m, "model", "init_scale").get<double>();
  c.model.ln_epsilon = require(m, "model", "ln_epsilon").get<double>();

  const json& tr = require(j, "", "train");
  c.train_sft = parse_train(require(tr, "train", "sft"), "train.sft");
  c.train_improver = parse_train(require(tr, "train", "improver"), "train.improver");
  c.train_dpo = parse_train(require(tr, "train", "dpo"), "train.dpo");

  const json& sa = require(j, "", "sampling");
  c.sampling_gen = parse_sampling(require(sa, "sampling", "gen"), "sampling.gen");
  c.sampling_eval = parse_sampling(require(sa, "sampling", "eval"), "sampling.eval");

  const json& orc = require(j, "", "oracle");
  c.oracle.alpha = require(orc, "oracle", "alpha").get<double>();
  c.oracle.sft_perturb_prob = require(orc, "oracle", "sft_perturb_prob").get<double>();
  c.oracle.tie_delta = require(orc, "oracle", "tie_delta").get<double>();
  c.oracle.rng_seed = require(orc, "oracle", "rng_seed").get<std::uint64_t>();

  const json& co = require(j, "", "corpus");
  c.corpus.improver_n = require(co, "corpus", "improver_n").get<int>();
  c.corpus.policy_m = require(co, "corpus", "policy_m").get<int>();
  c.corpus.eval_size = require(co, "corpus", "eval_size").get<int>();
  for (const auto& k : require(co, "corpus", "kinds"))
    c.corpus.kinds.push_back(task_kind_from_name(k.get<std::string>()));
  c.corpus.payload_min = require(co, "corpus", "payload_min").get<int>();
  c.corpus.payload_max = require(co, "corpus", "payload_max").get<int>();
  c.corpus.seed_improver = require(co, "corpus", "seed_improver").get<std::uint64_t>();
  c.corpus.seed_policy = require(co, "corpus", "seed_policy").get<std::uint64_t>();
  c.corpus.seed_eval = require(co, "corpus", "seed_eval").get<std::uint64_t>();

  c.preset = require(j, "", "preset").get<std::string>();
  c.iqr_filter_enabled = require(j, "", "iqr_filter_enabled").get<bool>();

  if (j.contains("external_improver")) {
    const json& e = j["external_improver"];
    c.external_improver.enabled = e.value("enabled", false);
    c.external_improver.host = e.value("host", "");
    c.external_improver.port = e.value("port", 0);
    c.external_improver.path = e.value("path", "/improve");
  }
  if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
  if (j.contains("workers")) c.workers = j["workers"].get<int>();

  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string canonical_config(const RunConfig& c) {
  json j;
  j["model"] = {{"d_model", c.model.d_model},       {"n_layers", c.model.n_layers},
                {"n_heads", c.model.n_heads},       {"d_ff", c.model.d_ff},
                {"max_seq_len", c.model.max_seq_len}, {"init_scale", c.model.init_scale},
                {"ln_epsilon", c.model.ln_epsilon}};
  j["train"] = {{"sft", train_to_json(c.train_sft)},
                {"improver", train_to_json(c.train_improver)},
                {"dpo", train_to_json(c.train_dpo)}};
  j["sampling"] = {{"gen", sampling_to_json(c.sampling_gen)},
                   {"eval", sampling_to_json(c.sampling_eval)}};
  j["oracle"] = {{"alpha", c.oracle.alpha},
                 {"sft_perturb_prob", c.oracle.sft_perturb_prob},
                 {"tie_delta", c.oracle.tie_delta},
                 {"rng_seed", c.oracle.rng_seed}};
  std::vector<std::string> kinds;
  for (TaskKind k : c.corpus.kinds) kinds.emplace_back(task_kind_name(k));
  j["corpus"] = {{"improver_n", c.corpus.improver_n},
                 {"policy_m", c.corpus.policy_m},
                 {"eval_size", c.corpus.eval_size},
                 {"kinds", kinds},
                 {"payload_min", c.corpus.payload_min},
                 {"payload_max", c.corpus.payload_max},
                 {"seed_improver", c.corpus.seed_improver},
                 {"seed_policy", c.corpus.seed_policy},
                 {"seed_eval", c.corpus.seed_eval}};
  j["preset"] = c.preset;
  j["iqr_filter_enabled"] = c.iqr_filter_enabled;
  j["external_improver"] = {{"enabled", c.external_improver.enabled},
                            {"host", c.external_improver.host},
                            {"port", c.external_improver.port},
                            {"path", c.external_improver.path}};
  // nlohmann objects iterate key-sorted, so dump() is canonical
  return j.dump(2);
}

std::string config_hash(const RunConfig& c) { return fnv64_hex(canonical_config(c)); }

void apply_seed_override(RunConfig& c, std::uint64_t base) {
  c.train_sft.rng_seed = mix_seed(base, 1);
  c.train_improver.rng_seed = mix_seed(base, 2);
  c.train_dpo.rng_seed = mix_seed(base, 3);
  c.sampling_gen.rng_seed = mix_seed(base, 4);
  c.sampling_eval.rng_seed = mix_seed(base, 5);
  c.oracle.rng_seed = mix_seed(base, 6);
  c.corpus.seed_improver = mix_seed(base, 7);
  c.corpus.seed_policy = mix_seed(base, 8);
  c.corpus.seed_eval = mix_seed(base, 9);
}

}  // namespace sgpo
