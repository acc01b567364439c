#include <fcntl.h>
#include <unistd.h>

#include <fstream>
#include <memory>
#include <sstream>

#include "sgpo/editdist.hpp"
#include "sgpo/errors.hpp"
#include "sgpo/generate.hpp"
#include "sgpo/hash.hpp"
#include "sgpo/parallel.hpp"
#include "sgpo/pipeline.hpp"
#include "sgpo/rng.hpp"
#include "sgpo/textenc.hpp"

namespace sgpo {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// manifests + lineage plumbing
// ---------------------------------------------------------------------------

std::string file_content_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StageError("missing artifact: " + path.string());
  Fnv64 h;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
    h.update(buf, static_cast<std::size_t>(in.gcount()));
  return h.hex();
}

namespace {

json ioref_json(const IoRef& r) {
  return json{{"name", r.name}, {"path", r.path}, {"hash", r.hash}};
}

IoRef ioref_from(const json& j) {
  return {j.at("name").get<std::string>(), j.at("path").get<std::string>(),
          j.at("hash").get<std::string>()};
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw StageError("cannot write " + tmp.string());
    out << text;
  }
  fs::rename(tmp, path);
}

constexpr int kSaltImproverData = 1;
constexpr int kSaltGenPrefs = 2;
constexpr int kSaltStep2 = 3;
constexpr int kSaltImproverEval = 4;
constexpr int kSaltEvaluate = 5;

}  // namespace

std::string StageManifest::identity() const {
  json j{{"stage", stage}, {"config_hash", config_hash}, {"seeds", seeds}};
  json ins = json::array();
  for (const IoRef& r : inputs) ins.push_back(ioref_json(r));
  j["inputs"] = ins;
  return fnv64_hex(j.dump());
}

json StageManifest::to_json() const {
  json j{{"stage", stage}, {"config_hash", config_hash}, {"seeds", seeds},
         {"counts", counts}, {"stats", stats},          {"identity", identity()}};
  json ins = json::array(), outs = json::array();
  for (const IoRef& r : inputs) ins.push_back(ioref_json(r));
  for (const IoRef& r : outputs) outs.push_back(ioref_json(r));
  j["inputs"] = ins;
  j["outputs"] = outs;
  return j;
}

StageManifest StageManifest::from_json(const json& j) {
  StageManifest m;
  m.stage = j.at("stage").get<std::string>();
  m.config_hash = j.at("config_hash").get<std::string>();
  m.seeds = j.at("seeds");
  m.counts = j.at("counts");
  m.stats = j.at("stats");
  for (const json& r : j.at("inputs")) m.inputs.push_back(ioref_from(r));
  for (const json& r : j.at("outputs")) m.outputs.push_back(ioref_from(r));
  return m;
}

DirLock::DirLock(const fs::path& dir) {
  fs::create_directories(dir);
  path_ = dir / ".sgpo.lock";
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0)
    throw StageError("output directory is locked by another process: " + dir.string());
  ::close(fd);
}

DirLock::~DirLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

// ---------------------------------------------------------------------------
// jsonl datasets
// ---------------------------------------------------------------------------

namespace {

void write_jsonl(const fs::path& path, const json& header, const std::vector<json>& records) {
  std::ostringstream ss;
  ss << header.dump() << '\n';
  for (const json& r : records) ss << r.dump() << '\n';
  write_text_atomic(path, ss.str());
}

std::pair<json, std::vector<json>> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw StageError("missing upstream artifact: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw StageError("empty dataset file: " + path.string());
  json header = json::parse(line, nullptr, false);
  if (header.is_discarded()) throw StageError("bad dataset header in " + path.string());
  std::vector<json> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json r = json::parse(line, nullptr, false);
    if (r.is_discarded()) throw StageError("bad dataset record in " + path.string());
    records.push_back(std::move(r));
  }
  return {std::move(header), std::move(records)};
}

std::string item_id(const char* prefix, int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s-%06d", prefix, index);
  return buf;
}

const char* corpus_prefix(const std::string& name) {
  if (name == "sr") return "sr";
  if (name == "sp") return "sp";
  if (name == "eval") return "ev";
  throw StageError("unknown corpus: " + name);
}

}  // namespace

// ---------------------------------------------------------------------------
// PipelineRun
// ---------------------------------------------------------------------------

PipelineRun::PipelineRun(RunConfig cfg, fs::path root)
    : cfg_(std::move(cfg)), cfg_hash_(config_hash(cfg_)), root_(std::move(root)), lock_(root_) {
  cfg_.validate();
  for (const char* sub : {"data", "checkpoints", "manifests", "reports"})
    fs::create_directories(root_ / sub);
  write_text_atomic(root_ / "config.canonical.json", canonical_config(cfg_) + "\n");
}

IoRef PipelineRun::out_ref(const std::string& name, const std::string& rel_path) const {
  return {name, rel_path, file_content_hash(root_ / rel_path)};
}

IoRef PipelineRun::in_ref(const std::string& name, const std::string& rel_path) const {
  return {name, rel_path, file_content_hash(root_ / rel_path)};
}

StageManifest PipelineRun::start_manifest(const std::string& stage, json seeds,
                                          std::vector<IoRef> inputs) const {
  StageManifest m;
  m.stage = stage;
  m.config_hash = cfg_hash_;
  m.seeds = std::move(seeds);
  m.inputs = std::move(inputs);
  return m;
}

void PipelineRun::write_manifest(const StageManifest& m) {
  write_text_atomic(root_ / "manifests" / (m.stage + ".json"), m.to_json().dump(2) + "\n");
}

bool PipelineRun::has_manifest(const std::string& stage) const {
  return fs::exists(root_ / "manifests" / (stage + ".json"));
}

StageManifest PipelineRun::load_manifest(const std::string& stage) const {
  const fs::path path = root_ / "manifests" / (stage + ".json");
  std::ifstream in(path);
  if (!in) throw StageError("missing stage manifest: " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw StageError("bad manifest: " + path.string());
  return StageManifest::from_json(j);
}

void PipelineRun::require_stage(const std::string& stage) const {
  if (!has_manifest(stage))
    throw StageError("missing upstream artifact: stage '" + stage + "' has not run in " +
                     root_.string());
}

void PipelineRun::check_header(const fs::path& path) const {
  auto [header, records] = read_jsonl(path);
  (void)records;
  const std::string h = header.value("config_hash", "");
  if (h != cfg_hash_)
    throw LineageError("config hash mismatch between declared and found inputs: " + path.string() +
                       " was produced under " + h + ", current config is " + cfg_hash_);
}

static json dataset_header(const std::string& schema, const std::string& config_hash,
                    const std::string& stage, const std::string& manifest_id) {
  return json{{"schema", schema},
              {"version", 1},
              {"config_hash", config_hash},
              {"stage", stage},
              {"manifest", manifest_id}};
}

void PipelineRun::save_corpus(const std::string& name, std::span<const SFTExample> corpus,
                              const StageManifest& m) {
  std::vector<json> records;
  records.reserve(corpus.size());
  const char* prefix = corpus_prefix(name);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const SFTExample& ex = corpus[i];
    records.push_back(json{{"id", item_id(prefix, static_cast<int>(i))},
                           {"instruction", bytes_to_text(ex.task.instruction_text)},
                           {"reference", bytes_to_text(ex.task.reference_answer)},
                           {"y", bytes_to_text(ex.y)}});
  }
  write_jsonl(root_ / "data" / (name + "_corpus.jsonl"),
              dataset_header("sgpo.sft.v1", cfg_hash_, m.stage, m.identity()), records);
}

std::vector<SFTExample> PipelineRun::load_corpus(const std::string& name) const {
  const fs::path path = root_ / "data" / (name + "_corpus.jsonl");
  auto [header, records] = read_jsonl(path);
  if (header.value("config_hash", "") != cfg_hash_)
    throw LineageError("config hash mismatch for corpus " + name);
  std::vector<SFTExample> out;
  out.reserve(records.size());
  for (const json& r : records) {
    SFTExample ex;
    ex.task = parse_instruction(text_to_bytes(r.at("instruction").get<std::string>()));
    if (ex.task.reference_answer != text_to_bytes(r.at("reference").get<std::string>()))
      throw StageError("corpus record reference mismatch in " + path.string());
    ex.y = text_to_bytes(r.at("y").get<std::string>());
    out.push_back(std::move(ex));
  }
  return out;
}

void PipelineRun::run_corpora() {
  Corpora corpora = generate_corpora(cfg_.corpus, cfg_.oracle);
  StageManifest m = start_manifest(
      "corpora",
      json{{"seed_improver", cfg_.corpus.seed_improver},
           {"seed_policy", cfg_.corpus.seed_policy},
           {"seed_eval", cfg_.corpus.seed_eval},
           {"oracle_seed", cfg_.oracle.rng_seed}},
      {});
  save_corpus("sr", corpora.s_r, m);
  save_corpus("sp", corpora.s_p, m);
  save_corpus("eval", corpora.eval, m);
  m.counts = json{{"s_r", corpora.s_r.size()}, {"s_p", corpora.s_p.size()}, {"eval", corpora.eval.size()}};
  m.outputs = {out_ref("sr_corpus", "data/sr_corpus.jsonl"),
               out_ref("sp_corpus", "data/sp_corpus.jsonl"),
               out_ref("eval_corpus", "data/eval_corpus.jsonl")};
  write_manifest(m);
}

Checkpoint PipelineRun::load_ckpt(const std::string& name) const {
  const fs::path path = root_ / "checkpoints" / (name + ".ckpt");
  Checkpoint c = load_checkpoint(path);
  if (c.config_hash != cfg_hash_)
    throw LineageError("config hash mismatch for checkpoint " + name + ": found " + c.config_hash +
                       ", expected " + cfg_hash_);
  return c;
}

void PipelineRun::run_sft() {
  require_stage("corpora");
  check_header(root_ / "data" / "sp_corpus.jsonl");
  std::vector<SFTExample> s_p = load_corpus("sp");
  StageManifest m = start_manifest("sft", json{{"train_seed", cfg_.train_sft.rng_seed}},
                                   {in_ref("sp_corpus", "data/sp_corpus.jsonl")});

  Parameters start = init_params(cfg_.model, VocabSpec::standard().vocab_size(),
                                 cfg_.train_sft.rng_seed);
  std::vector<SftItem> items = make_sft_items(s_p, cfg_.model.max_seq_len);
  TrainStats stats;
  Parameters trained = cfg_.train_sft.epochs == 0
                           ? std::move(start)
                           : train_sft_model(std::move(start), items, cfg_.train_sft, &stats);

  Checkpoint ckpt{VocabSpec::standard(), std::move(trained), cfg_hash_, "sft"};
  save_checkpoint(ckpt, root_ / "checkpoints" / "sft.ckpt");
  m.counts = json{{"train_items", items.size()}};
  m.stats = json{{"first_batch_loss", stats.first_batch_loss},
                 {"final_batch_loss", stats.final_batch_loss},
                 {"steps", stats.steps},
                 {"content_hash", checkpoint_content_hash(ckpt.params)}};
  m.outputs = {out_ref("sft_ckpt", "checkpoints/sft.ckpt")};
  write_manifest(m);
}

void PipelineRun::run_improver_data() {
  require_stage("sft");
  check_header(root_ / "data" / "sr_corpus.jsonl");
  std::vector<SFTExample> s_r = load_corpus("sr");
  Checkpoint theta0 = load_ckpt("sft");
  const VariantFlags flags = cfg_.flags();

  StageManifest m = start_manifest(
      "improver-data",
      json{{"sampling_seed", cfg_.sampling_gen.rng_seed},
           {"oracle_seed", cfg_.oracle.rng_seed},
           {"stage_salt", kSaltImproverData}},
      {in_ref("sr_corpus", "data/sr_corpus.jsonl"), in_ref("sft_ckpt", "checkpoints/sft.ckpt")});

  std::unique_ptr<ExternalImproverClient> external;
  if (cfg_.external_improver.enabled)
    external = std::make_unique<ExternalImproverClient>(cfg_.external_improver);
  ImproverDataResult result = build_improver_data_core(
      theta0.params, s_r, cfg_.oracle, cfg_.sampling_gen, flags, cfg_.iqr_filter_enabled,
      mix_seed(cfg_.sampling_gen.rng_seed, kSaltImproverData), external.get());

  const std::string identity = m.identity();
  std::vector<json> cand_records;
  cand_records.reserve(result.candidates.size());
  for (const CandidateRecord& c : result.candidates) {
    cand_records.push_back(
        json{{"id", item_id("sr", c.id) + "#" + c.source},
             {"policy_resp", bytes_to_text(result.policy_resps[static_cast<std::size_t>(c.id)])},
             {"source", c.source},
             {"target", bytes_to_text(c.target)},
             {"ppl", c.ppl},
             {"kept", c.kept}});
  }
  write_jsonl(root_ / "data" / "improver_candidates.jsonl",
              dataset_header("sgpo.candidates.v1", cfg_hash_, m.stage, identity), cand_records);

  std::vector<json> triple_records;
  triple_records.reserve(result.triples.size());
  for (const ImproverTriple& t : result.triples) {
    triple_records.push_back(json{{"id", item_id("sr", t.id) + "#" + t.target_source},
                                  {"instruction", bytes_to_text(t.instruction)},
                                  {"policy_resp", bytes_to_text(t.policy_resp)},
                                  {"target", bytes_to_text(t.target)},
                                  {"target_source", t.target_source},
                                  {"ppl", t.ppl}});
  }
  write_jsonl(root_ / "data" / "improver_data.jsonl",
              dataset_header("sgpo.improver.v1", cfg_hash_, m.stage, identity), triple_records);

  write_text_atomic(root_ / "reports" / "filter_improve.json",
                    result.improve_report.to_json().dump(2) + "\n");
  write_text_atomic(root_ / "reports" / "filter_direct.json",
                    result.direct_report.to_json().dump(2) + "\n");

  m.counts = json{{"tasks", s_r.size()},
                  {"triples", result.triples.size()},
                  {"improve_kept", result.improve_report.kept},
                  {"improve_dropped", result.improve_report.dropped},
                  {"direct_kept", result.direct_report.kept},
                  {"direct_dropped", result.direct_report.dropped}};
  m.stats = json{{"improve_report", result.improve_report.to_json()},
                 {"direct_report", result.direct_report.to_json()},
                 {"external_improver", cfg_.external_improver.enabled}};
  m.outputs = {out_ref("improver_data", "data/improver_data.jsonl"),
               out_ref("improver_candidates", "data/improver_candidates.jsonl"),
               out_ref("filter_improve", "reports/filter_improve.json"),
               out_ref("filter_direct", "reports/filter_direct.json")};
  write_manifest(m);
}

std::vector<ImproverTriple> PipelineRun::load_improver_data() const {
  const fs::path path = root_ / "data" / "improver_data.jsonl";
  auto [header, records] = read_jsonl(path);
  if (header.value("config_hash", "") != cfg_hash_)
    throw LineageError("config hash mismatch for improver data");
  std::vector<ImproverTriple> out;
  out.reserve(records.size());
  for (const json& r : records) {
    ImproverTriple t;
    const std::string id = r.at("id").get<std::string>();
    t.id = std::stoi(id.substr(3, 6));
    t.instruction = text_to_bytes(r.at("instruction").get<std::string>());
    t.policy_resp = text_to_bytes(r.at("policy_resp").get<std::string>());
    t.target = text_to_bytes(r.at("target").get<std::string>());
    t.target_source = r.at("target_source").get<std::string>();
    t.ppl = r.at("ppl").get<double>();
    out.push_back(std::move(t));
  }
  return out;
}

void PipelineRun::run_improver_train() {
  require_stage("improver-data");
  check_header(root_ / "data" / "improver_data.jsonl");
  std::vector<SFTExample> s_r = load_corpus("sr");
  std::vector<ImproverTriple> triples = load_improver_data();
  Checkpoint theta0 = load_ckpt("sft");
  const VariantFlags flags = cfg_.flags();

  StageManifest m = start_manifest(
      "improver-train", json{{"train_seed", cfg_.train_improver.rng_seed}},
      {in_ref("improver_data", "data/improver_data.jsonl"),
       in_ref("sft_ckpt", "checkpoints/sft.ckpt")});

  std::vector<SftItem> items = make_improver_items(triples, s_r, flags, cfg_.model.max_seq_len);
  TrainStats stats;
  Parameters trained = train_sft_model(theta0.params, items, cfg_.train_improver, &stats);

  Checkpoint ckpt{VocabSpec::standard(), std::move(trained), cfg_hash_, "improver-train"};
  save_checkpoint(ckpt, root_ / "checkpoints" / "improver.ckpt");
  m.counts = json{{"train_items", items.size()}};
  m.stats = json{{"first_batch_loss", stats.first_batch_loss},
                 {"final_batch_loss", stats.final_batch_loss},
                 {"steps", stats.steps},
                 {"share_improver_policy", flags.share_improver_policy},
                 {"content_hash", checkpoint_content_hash(ckpt.params)}};
  m.outputs = {out_ref("improver_ckpt", "checkpoints/improver.ckpt")};
  write_manifest(m);
}

Checkpoint PipelineRun::policy_ckpt_for_prefs() const {
  const VariantFlags flags = cfg_.flags();
  if (flags.pairing == Pairing::SPIN) return load_ckpt("sft");
  if (!flags.share_improver_policy) return load_ckpt("sft");  // policy stays theta0-derived
  return load_ckpt("improver");
}

Checkpoint PipelineRun::improver_ckpt_for_prefs() const {
  const VariantFlags flags = cfg_.flags();
  if (flags.pairing == Pairing::SPIN) return load_ckpt("sft");  // unused by SPIN pairing
  return load_ckpt("improver");
}

namespace {

json prefs_records_header(const std::string& cfg_hash, const StageManifest& m) {
  return dataset_header("sgpo.prefs.v1", cfg_hash, m.stage, m.identity());
}

std::vector<json> prefs_to_records(std::span<const PreferencePair> pairs) {
  std::vector<json> records;
  records.reserve(pairs.size());
  for (const PreferencePair& p : pairs) {
    records.push_back(json{{"id", item_id("sp", p.id)},
                           {"instruction", bytes_to_text(p.instruction)},
                           {"chosen", bytes_to_text(p.chosen)},
                           {"rejected", bytes_to_text(p.rejected)},
                           {"pairing", pairing_name(p.pairing)}});
  }
  return records;
}

}  // namespace

void PipelineRun::run_gen_prefs() {
  require_stage("sft");
  const VariantFlags flags = cfg_.flags();
  std::vector<IoRef> inputs{in_ref("sp_corpus", "data/sp_corpus.jsonl"),
                            in_ref("sft_ckpt", "checkpoints/sft.ckpt")};
  if (flags.pairing != Pairing::SPIN) {
    require_stage("improver-train");
    inputs.push_back(in_ref("improver_ckpt", "checkpoints/improver.ckpt"));
  }
  check_header(root_ / "data" / "sp_corpus.jsonl");
  std::vector<SFTExample> s_p = load_corpus("sp");
  Checkpoint policy = policy_ckpt_for_prefs();
  Checkpoint improver = improver_ckpt_for_prefs();

  StageManifest m = start_manifest(
      "gen-prefs",
      json{{"sampling_seed", cfg_.sampling_gen.rng_seed}, {"stage_salt", kSaltGenPrefs}},
      std::move(inputs));

  std::vector<PreferencePair> pairs =
      build_preference_data_core(policy.params, improver.params, s_p, flags, cfg_.sampling_gen,
                                 mix_seed(cfg_.sampling_gen.rng_seed, kSaltGenPrefs));
  write_jsonl(root_ / "data" / "prefs.jsonl", prefs_records_header(cfg_hash_, m),
              prefs_to_records(pairs));

  int identical = 0;
  for (const PreferencePair& p : pairs)
    if (p.chosen == p.rejected) ++identical;
  m.counts = json{{"pairs", pairs.size()}, {"chosen_equals_rejected", identical}};
  m.stats = json{{"pairing", pairing_name(flags.pairing)},
                 {"policy_ckpt", policy.stage},
                 {"improver_ckpt", improver.stage}};
  m.outputs = {out_ref("prefs", "data/prefs.jsonl")};
  write_manifest(m);
}

std::vector<PreferencePair> PipelineRun::load_prefs(const std::string& name) const {
  const fs::path path = root_ / "data" / (name + ".jsonl");
  auto [header, records] = read_jsonl(path);
  if (header.value("config_hash", "") != cfg_hash_)
    throw LineageError("config hash mismatch for " + name);
  std::vector<PreferencePair> out;
  out.reserve(records.size());
  for (const json& r : records) {
    PreferencePair p;
    p.id = std::stoi(r.at("id").get<std::string>().substr(3));
    p.instruction = text_to_bytes(r.at("instruction").get<std::string>());
    p.chosen = text_to_bytes(r.at("chosen").get<std::string>());
    p.rejected = text_to_bytes(r.at("rejected").get<std::string>());
    const std::string pname = r.at("pairing").get<std::string>();
    p.pairing = pname == "spin" ? Pairing::SPIN
                                : (pname == "diamond" ? Pairing::Diamond : Pairing::SGPO);
    out.push_back(std::move(p));
  }
  return out;
}

void PipelineRun::run_dpo() {
  require_stage("gen-prefs");
  check_header(root_ / "data" / "prefs.jsonl");
  std::vector<PreferencePair> pairs = load_prefs("prefs");
  const VariantFlags flags = cfg_.flags();
  const std::string base =
      (flags.pairing == Pairing::SPIN || !flags.share_improver_policy) ? "sft" : "improver";
  Checkpoint ref = load_ckpt(base);

  StageManifest m = start_manifest(
      "dpo-train", json{{"train_seed", cfg_.train_dpo.rng_seed}},
      {in_ref("prefs", "data/prefs.jsonl"),
       in_ref(base + "_ckpt", "checkpoints/" + base + ".ckpt")});

  std::vector<DpoItem> items = make_dpo_items(pairs, cfg_.model.max_seq_len);
  TrainStats stats;
  Parameters trained = train_dpo_model(ref.params, ref.params, items, cfg_.train_dpo, &stats);

  Checkpoint ckpt{VocabSpec::standard(), std::move(trained), cfg_hash_, "dpo-train"};
  save_checkpoint(ckpt, root_ / "checkpoints" / "dpo.ckpt");
  m.counts = json{{"pairs", pairs.size()}, {"degenerate_pairs", stats.degenerate_pairs}};
  m.stats = json{{"first_batch_loss", stats.first_batch_loss},
                 {"final_batch_loss", stats.final_batch_loss},
                 {"steps", stats.steps},
                 {"mean_margin_after", stats.mean_margin_after},
                 {"reference", base},
                 {"content_hash", checkpoint_content_hash(ckpt.params)}};
  m.outputs = {out_ref("dpo_ckpt", "checkpoints/dpo.ckpt")};
  write_manifest(m);
}

void PipelineRun::run_step2() {
  require_stage("dpo-train");
  std::vector<SFTExample> s_p = load_corpus("sp");
  Checkpoint theta2 = load_ckpt("dpo");
  const VariantFlags flags = cfg_.flags();

  StageManifest m = start_manifest(
      "step2",
      json{{"sampling_seed", cfg_.sampling_gen.rng_seed},
           {"train_seed", cfg_.train_dpo.rng_seed},
           {"stage_salt", kSaltStep2}},
      {in_ref("sp_corpus", "data/sp_corpus.jsonl"), in_ref("dpo_ckpt", "checkpoints/dpo.ckpt")});

  // same refinement prompts, no improver re-training; the dpo checkpoint is
  // generator, improver and reference all at once
  std::vector<PreferencePair> pairs =
      build_preference_data_core(theta2.params, theta2.params, s_p, flags, cfg_.sampling_gen,
                                 mix_seed(cfg_.sampling_gen.rng_seed, kSaltStep2));
  write_jsonl(root_ / "data" / "prefs_step2.jsonl", prefs_records_header(cfg_hash_, m),
              prefs_to_records(pairs));

  std::vector<DpoItem> items = make_dpo_items(pairs, cfg_.model.max_seq_len);
  TrainStats stats;
  Parameters trained = train_dpo_model(theta2.params, theta2.params, items, cfg_.train_dpo, &stats);

  Checkpoint ckpt{VocabSpec::standard(), std::move(trained), cfg_hash_, "step2"};
  save_checkpoint(ckpt, root_ / "checkpoints" / "step2.ckpt");
  int identical = 0;
  for (const PreferencePair& p : pairs)
    if (p.chosen == p.rejected) ++identical;
  m.counts = json{{"pairs", pairs.size()},
                  {"chosen_equals_rejected", identical},
                  {"degenerate_pairs", stats.degenerate_pairs}};
  m.stats = json{{"first_batch_loss", stats.first_batch_loss},
                 {"final_batch_loss", stats.final_batch_loss},
                 {"steps", stats.steps},
                 {"mean_margin_after", stats.mean_margin_after},
                 {"policy_source", "dpo"},
                 {"reference", "dpo"},
                 {"content_hash", checkpoint_content_hash(ckpt.params)}};
  m.outputs = {out_ref("prefs_step2", "data/prefs_step2.jsonl"),
               out_ref("step2_ckpt", "checkpoints/step2.ckpt")};
  write_manifest(m);
}

std::string PipelineRun::final_checkpoint_name() const {
  if (cfg_.preset == "sft") return "sft";
  if (preset_has_step2(cfg_.preset)) return "step2";
  return "dpo";
}

namespace {

json eval_report_json(const EvalReport& r, const std::string& cfg_hash,
                      const std::string& manifest_id) {
  return json{{"method", r.method},
              {"opponent", r.opponent},
              {"wins", r.wins},
              {"losses", r.losses},
              {"ties", r.ties},
              {"win_rate_pct", r.win_rate_pct},
              {"mean_len_method", r.mean_len_method},
              {"mean_len_opponent", r.mean_len_opponent},
              {"config_hash", cfg_hash},
              {"manifest", manifest_id}};
}

std::string verdict_name(Verdict v) {
  return v == Verdict::WinA ? "win_a" : (v == Verdict::WinB ? "win_b" : "tie");
}

void write_verdicts_csv(const fs::path& path, const EvalReport& r, const char* id_prefix,
                        const std::string& cfg_hash, const std::string& manifest_id) {
  std::ostringstream ss;
  ss << "# sgpo.verdicts.v1 config=" << cfg_hash << " manifest=" << manifest_id << "\n";
  ss << "id,verdict\n";
  for (std::size_t i = 0; i < r.verdicts.size(); ++i)
    ss << item_id(id_prefix, static_cast<int>(i)) << ',' << verdict_name(r.verdicts[i]) << "\n";
  write_text_atomic(path, ss.str());
}

}  // namespace

EvalReport PipelineRun::run_evaluate(const std::string& model_name,
                                     const std::string& baseline_name) {
  require_stage("corpora");
  std::vector<SFTExample> eval_tasks = load_corpus("eval");
  Checkpoint model = load_ckpt(model_name);
  Checkpoint baseline = load_ckpt(baseline_name);
  const std::string tag = model_name + "_vs_" + baseline_name;

  StageManifest m = start_manifest(
      "evaluate-" + tag,
      json{{"sampling_seed", cfg_.sampling_eval.rng_seed}, {"stage_salt", kSaltEvaluate}},
      {in_ref("eval_corpus", "data/eval_corpus.jsonl"),
       in_ref(model_name + "_ckpt", "checkpoints/" + model_name + ".ckpt"),
       in_ref(baseline_name + "_ckpt", "checkpoints/" + baseline_name + ".ckpt")});

  EvalReport report = eval_winrate(model.params, baseline.params, eval_tasks, cfg_.oracle,
                                   cfg_.sampling_eval,
                                   mix_seed(cfg_.sampling_eval.rng_seed, kSaltEvaluate));
  report.method = model_name;
  report.opponent = baseline_name;

  const std::string identity = m.identity();
  write_text_atomic(root_ / "reports" / ("eval_" + tag + ".json"),
                    eval_report_json(report, cfg_hash_, identity).dump(2) + "\n");
  write_verdicts_csv(root_ / "reports" / ("verdicts_" + tag + ".csv"), report, "ev", cfg_hash_,
                     identity);

  m.counts = json{{"tasks", eval_tasks.size()},
                  {"wins", report.wins},
                  {"losses", report.losses},
                  {"ties", report.ties}};
  m.stats = json{{"win_rate_pct", report.win_rate_pct},
                 {"mean_len_method", report.mean_len_method},
                 {"mean_len_opponent", report.mean_len_opponent}};
  m.outputs = {out_ref("eval_report", "reports/eval_" + tag + ".json"),
               out_ref("verdicts", "reports/verdicts_" + tag + ".csv")};
  write_manifest(m);
  return report;
}

ImproverEvalResult PipelineRun::run_improver_eval() {
  require_stage("improver-train");
  std::vector<SFTExample> eval_tasks = load_corpus("eval");
  Checkpoint improver = load_ckpt("improver");
  Checkpoint initial = load_ckpt("sft");

  StageManifest m = start_manifest(
      "improver-eval",
      json{{"sampling_seed", cfg_.sampling_gen.rng_seed}, {"stage_salt", kSaltImproverEval}},
      {in_ref("eval_corpus", "data/eval_corpus.jsonl"),
       in_ref("improver_ckpt", "checkpoints/improver.ckpt"),
       in_ref("sft_ckpt", "checkpoints/sft.ckpt")});

  ImproverEvalResult result =
      improver_eval(improver.params, initial.params, eval_tasks, cfg_.oracle, cfg_.sampling_gen,
                    cfg_.flags().prompt_variant,
                    mix_seed(cfg_.sampling_gen.rng_seed, kSaltImproverEval));

  const std::string identity = m.identity();
  json j{{"b_vs_a", eval_report_json(result.b_vs_a, cfg_hash_, identity)},
         {"b_vs_c", eval_report_json(result.b_vs_c, cfg_hash_, identity)},
         {"a_vs_c", eval_report_json(result.a_vs_c, cfg_hash_, identity)}};
  write_text_atomic(root_ / "reports" / "improver_eval.json", j.dump(2) + "\n");
  write_verdicts_csv(root_ / "reports" / "verdicts_improver_b_vs_a.csv", result.b_vs_a, "ev",
                     cfg_hash_, identity);

  m.counts = json{{"tasks", eval_tasks.size()}};
  m.stats = json{{"b_vs_a_win_rate", result.b_vs_a.win_rate_pct},
                 {"b_vs_c_win_rate", result.b_vs_c.win_rate_pct},
                 {"a_vs_c_win_rate", result.a_vs_c.win_rate_pct}};
  m.outputs = {out_ref("improver_eval", "reports/improver_eval.json"),
               out_ref("verdicts_b_vs_a", "reports/verdicts_improver_b_vs_a.csv")};
  write_manifest(m);
  return result;
}

// ---------------------------------------------------------------------------
// report stage
// ---------------------------------------------------------------------------

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

void write_histogram_csv(const fs::path& path, const Histogram& h, const std::string& title,
                         const std::string& cfg_hash, const std::string& manifest_id) {
  std::ostringstream ss;
  ss << "# sgpo.hist.v1 title=" << title << " scale=" << h.scale
     << " flagged=" << h.flagged_nonfinite << " config=" << cfg_hash
     << " manifest=" << manifest_id << "\n";
  ss << "bin_lo,bin_hi,count\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i)
    ss << fmt_double(h.bin_edges[i]) << ',' << fmt_double(h.bin_edges[i + 1]) << ',' << h.counts[i]
       << "\n";
  write_text_atomic(path, ss.str());
}

void write_histogram_svg(const fs::path& path, const Histogram& h, const std::string& title) {
  const int width = 640, height = 360, margin = 40;
  long long max_count = 1;
  for (long long c : h.counts) max_count = std::max(max_count, c);
  std::ostringstream ss;
  ss << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\">\n";
  ss << "<text x=\"" << margin << "\" y=\"20\" font-size=\"14\">" << title << " [" << h.scale
     << "]</text>\n";
  const double plot_w = width - 2.0 * margin;
  const double plot_h = height - 2.0 * margin;
  const double bar_w = plot_w / static_cast<double>(h.counts.size());
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    const double bh = plot_h * static_cast<double>(h.counts[i]) / static_cast<double>(max_count);
    ss << "<rect x=\"" << fmt_double(margin + bar_w * static_cast<double>(i)) << "\" y=\""
       << fmt_double(height - margin - bh) << "\" width=\"" << fmt_double(bar_w * 0.9)
       << "\" height=\"" << fmt_double(bh) << "\" fill=\"steelblue\"/>\n";
  }
  ss << "<text x=\"" << margin << "\" y=\"" << height - 8 << "\" font-size=\"11\">"
     << fmt_double(h.bin_edges.front()) << "</text>\n";
  ss << "<text x=\"" << width - margin - 60 << "\" y=\"" << height - 8 << "\" font-size=\"11\">"
     << fmt_double(h.bin_edges.back()) << "</text>\n";
  ss << "</svg>\n";
  write_text_atomic(path, ss.str());
}

}  // namespace

void PipelineRun::verify_lineage() const {
  const fs::path dir = root_ / "manifests";
  if (!fs::exists(dir)) throw StageError("no manifests found in " + root_.string());
  std::map<std::string, std::string> producer_identity;  // output rel path -> identity
  std::vector<StageManifest> manifests;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const fs::path& f : files) {
    std::ifstream in(f);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw LineageError("unreadable manifest: " + f.string());
    StageManifest m = StageManifest::from_json(j);
    if (m.config_hash != cfg_hash_)
      throw LineageError("manifest " + m.stage + " was produced under config " + m.config_hash +
                         ", current is " + cfg_hash_);
    if (j.value("identity", "") != m.identity())
      throw LineageError("manifest " + m.stage + " identity mismatch");
    for (const IoRef& out : m.outputs) producer_identity[out.path] = m.identity();
    manifests.push_back(std::move(m));
  }
  for (const StageManifest& m : manifests) {
    for (const IoRef& out : m.outputs) {
      const std::string actual = file_content_hash(root_ / out.path);
      if (actual != out.hash)
        throw LineageError("output " + out.path + " of stage " + m.stage +
                           " does not match its manifest hash");
    }
    for (const IoRef& inp : m.inputs) {
      const std::string actual = file_content_hash(root_ / inp.path);
      if (actual != inp.hash)
        throw LineageError("input " + inp.path + " of stage " + m.stage +
                           " changed after the stage ran");
    }
  }
}

void PipelineRun::run_report() {
  verify_lineage();
  StageManifest m = start_manifest("report", json::object(), {});
  const std::string identity = m.identity();
  json summary;
  summary["config_hash"] = cfg_hash_;
  summary["preset"] = cfg_.preset;

  // edit-distance histograms over the improver corpus (improved vs policy,
  // reference vs policy)
  if (has_manifest("improver-data")) {
    auto [header, records] = read_jsonl(root_ / "data" / "improver_candidates.jsonl");
    (void)header;
    std::vector<SFTExample> s_r = load_corpus("sr");
    std::vector<std::pair<std::string, std::string>> improved_vs_policy, ref_vs_policy;
    std::vector<double> ppl_before_improve, ppl_after_improve, ppl_before_direct, ppl_after_direct;
    for (const json& r : records) {
      const std::string source = r.at("source").get<std::string>();
      const int id = std::stoi(r.at("id").get<std::string>().substr(3, 6));
      const std::string policy = text_to_bytes(r.at("policy_resp").get<std::string>());
      const double ppl = r.at("ppl").get<double>();
      const bool kept = r.at("kept").get<bool>();
      if (source == "improve") {
        improved_vs_policy.emplace_back(text_to_bytes(r.at("target").get<std::string>()), policy);
        ref_vs_policy.emplace_back(s_r[static_cast<std::size_t>(id)].y, policy);
        ppl_before_improve.push_back(ppl);
        if (kept) ppl_after_improve.push_back(ppl);
      } else {
        ppl_before_direct.push_back(ppl);
        if (kept) ppl_after_direct.push_back(ppl);
      }
    }
    auto emit = [&](const std::string& name, const Histogram& h) {
      write_histogram_csv(root_ / "reports" / ("hist_" + name + ".csv"), h, name, cfg_hash_,
                          identity);
      write_histogram_svg(root_ / "reports" / ("hist_" + name + ".svg"), h, name);
      m.outputs.push_back(out_ref("hist_" + name + "_csv", "reports/hist_" + name + ".csv"));
      m.outputs.push_back(out_ref("hist_" + name + "_svg", "reports/hist_" + name + ".svg"));
    };
    if (!improved_vs_policy.empty()) {
      emit("edit_improved_vs_policy", edit_histogram(improved_vs_policy, 30));
      emit("edit_reference_vs_policy", edit_histogram(ref_vs_policy, 30));
      double mean_imp = 0.0, mean_ref = 0.0;
      for (const auto& [a, b] : improved_vs_policy) mean_imp += levenshtein(a, b);
      for (const auto& [a, b] : ref_vs_policy) mean_ref += levenshtein(a, b);
      mean_imp /= static_cast<double>(improved_vs_policy.size());
      mean_ref /= static_cast<double>(ref_vs_policy.size());
      summary["edit_distance"] = {{"mean_improved_vs_policy", mean_imp},
                                  {"mean_reference_vs_policy", mean_ref}};
      emit("ppl_improve_before", histogram_from_values(ppl_before_improve, 30, false));
      if (!ppl_after_improve.empty())
        emit("ppl_improve_after", histogram_from_values(ppl_after_improve, 30, false));
    }
    if (!ppl_before_direct.empty()) {
      emit("ppl_direct_before", histogram_from_values(ppl_before_direct, 30, false));
      if (!ppl_after_direct.empty())
        emit("ppl_direct_after", histogram_from_values(ppl_after_direct, 30, false));
    }
    summary["filter"] = {{"improve", load_manifest("improver-data").stats.at("improve_report")},
                         {"direct", load_manifest("improver-data").stats.at("direct_report")}};
  }

  // log-scaled perplexity of the preference response sets under the improver
  if (has_manifest("gen-prefs") && has_manifest("improver-train")) {
    Checkpoint improver = load_ckpt("improver");
    std::vector<PreferencePair> pairs = load_prefs("prefs");
    std::vector<SFTExample> s_p = load_corpus("sp");
    std::vector<double> ppl_chosen(pairs.size()), ppl_rejected(pairs.size()), ppl_y(pairs.size());
    parallel_for_items(static_cast<int>(pairs.size()), [&](int i) {
      const auto& pair = pairs[static_cast<std::size_t>(i)];
      const TaskSpec& task = s_p[static_cast<std::size_t>(pair.id)].task;
      ppl_chosen[static_cast<std::size_t>(i)] =
          response_perplexity(improver.params, task, pair.chosen);
      ppl_rejected[static_cast<std::size_t>(i)] =
          response_perplexity(improver.params, task, pair.rejected);
      ppl_y[static_cast<std::size_t>(i)] = response_perplexity(
          improver.params, task, s_p[static_cast<std::size_t>(pair.id)].y);
    });
    auto emit = [&](const std::string& name, const Histogram& h) {
      write_histogram_csv(root_ / "reports" / ("hist_" + name + ".csv"), h, name, cfg_hash_,
                          identity);
      write_histogram_svg(root_ / "reports" / ("hist_" + name + ".svg"), h, name);
      m.outputs.push_back(out_ref("hist_" + name + "_csv", "reports/hist_" + name + ".csv"));
      m.outputs.push_back(out_ref("hist_" + name + "_svg", "reports/hist_" + name + ".svg"));
    };
    emit("logppl_chosen", histogram_from_values(ppl_chosen, 30, true));
    emit("logppl_rejected", histogram_from_values(ppl_rejected, 30, true));
    emit("logppl_reference", histogram_from_values(ppl_y, 30, true));
  }

  // pull stage stats into the summary
  for (const char* stage : {"sft", "improver-data", "improver-train", "gen-prefs", "dpo-train",
                            "step2", "improver-eval"}) {
    if (has_manifest(stage)) {
      StageManifest sm = load_manifest(stage);
      summary["stages"][stage] = {{"counts", sm.counts}, {"stats", sm.stats}};
    }
  }
  for (const auto& entry : fs::directory_iterator(root_ / "manifests")) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("evaluate-", 0) == 0) {
      StageManifest sm = load_manifest(name.substr(0, name.size() - 5));
      summary["evals"][sm.stage] = sm.stats;
    }
  }
  // advisory comparison for the extra preference-optimization step
  if (has_manifest("evaluate-step2_vs_sft") && has_manifest("evaluate-dpo_vs_sft")) {
    const double wr_step2 =
        load_manifest("evaluate-step2_vs_sft").stats.at("win_rate_pct").get<double>();
    const double wr_sgpo =
        load_manifest("evaluate-dpo_vs_sft").stats.at("win_rate_pct").get<double>();
    summary["step2_advisory"] = {{"wr_step2", wr_step2},
                                 {"wr_sgpo", wr_sgpo},
                                 {"within_2pts", wr_step2 >= wr_sgpo - 2.0}};
  }

  write_text_atomic(root_ / "reports" / "summary.json", summary.dump(2) + "\n");
  m.outputs.push_back(out_ref("summary", "reports/summary.json"));
  m.counts = json{{"manifests_verified", true}};
  write_manifest(m);
}

void PipelineRun::run_preset() {
  run_corpora();
  run_sft();
  if (cfg_.preset == "sft") {
    run_report();
    return;
  }
  if (preset_has_improver_stages(cfg_.preset)) {
    run_improver_data();
    run_improver_train();
  }
  run_gen_prefs();
  run_dpo();
  if (preset_has_step2(cfg_.preset)) run_step2();
  run_evaluate(final_checkpoint_name(), "sft");
  if (preset_has_step2(cfg_.preset)) run_evaluate("dpo", "sft");
  if (preset_has_improver_stages(cfg_.preset)) run_improver_eval();
  run_report();

  // preset-level manifest tree: the stage manifests in execution order
  StageManifest m = start_manifest("preset", json{{"preset", cfg_.preset}}, {});
  json stages = json::array();
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(root_ / "manifests")) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const fs::path& f : files) {
    if (f.filename() == "preset.json") continue;
    std::ifstream in(f);
    json j = json::parse(in);
    stages.push_back(json{{"stage", j.at("stage")}, {"identity", j.at("identity")}});
  }
  m.stats = json{{"stages", stages}, {"final_checkpoint", final_checkpoint_name()}};
  write_manifest(m);
}

}  // namespace sgpo
