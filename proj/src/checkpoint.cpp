#include "sgpo/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sgpo/errors.hpp"
#include "sgpo/hash.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; byte-swapping writer not implemented");

namespace sgpo {

using nlohmann::json;

std::string checkpoint_content_hash(const Parameters& params) {
  Fnv64 h;
  h.update(params.data.data(), params.data.size() * sizeof(double));
  return h.hex();
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const Parameters& p = ckpt.params;
  json head;
  head["format"] = "sgpo-ckpt";
  head["version"] = 1;
  head["model"] = {{"d_model", p.config.d_model},
                   {"n_layers", p.config.n_layers},
                   {"n_heads", p.config.n_heads},
                   {"d_ff", p.config.d_ff},
                   {"max_seq_len", p.config.max_seq_len},
                   {"init_scale", p.config.init_scale},
                   {"ln_epsilon", p.config.ln_epsilon}};
  head["vocab"] = {{"control_tokens", ckpt.vocab.control_names}, {"vocab_size", p.vocab_size}};
  head["config_hash"] = ckpt.config_hash;
  head["stage"] = ckpt.stage;
  head["content_hash"] = checkpoint_content_hash(p);

  std::ostringstream manifest;
  for (const TensorInfo& t : p.layout.tensors)
    manifest << t.name << ' ' << t.rows << ' ' << t.cols << ' ' << t.offset * sizeof(double) << '\n';

  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StageError("cannot write checkpoint: " + path.string());
  out << head.dump() << '\n';
  out << "tensors " << p.layout.tensors.size() << '\n';
  out << manifest.str();
  out << "blob " << p.data.size() * sizeof(double) << '\n';
  out.write(reinterpret_cast<const char*>(p.data.data()),
            static_cast<std::streamsize>(p.data.size() * sizeof(double)));
  if (!out) throw StageError("short write on checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StageError("missing checkpoint: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw StageError("truncated checkpoint head: " + path.string());
  json head = json::parse(line, nullptr, false);
  if (head.is_discarded() || head.value("format", "") != "sgpo-ckpt")
    throw StageError("not a checkpoint file: " + path.string());
  if (head.value("version", 0) != 1)
    throw StageError("unsupported checkpoint version in " + path.string());

  Checkpoint ckpt;
  const json& m = head.at("model");
  ckpt.params.config.d_model = m.at("d_model").get<int>();
  ckpt.params.config.n_layers = m.at("n_layers").get<int>();
  ckpt.params.config.n_heads = m.at("n_heads").get<int>();
  ckpt.params.config.d_ff = m.at("d_ff").get<int>();
  ckpt.params.config.max_seq_len = m.at("max_seq_len").get<int>();
  ckpt.params.config.init_scale = m.at("init_scale").get<double>();
  ckpt.params.config.ln_epsilon = m.at("ln_epsilon").get<double>();
  ckpt.vocab.control_names = head.at("vocab").at("control_tokens").get<std::vector<std::string>>();
  ckpt.params.vocab_size = head.at("vocab").at("vocab_size").get<int>();
  ckpt.config_hash = head.value("config_hash", "");
  ckpt.stage = head.value("stage", "");
  ckpt.params.layout = ParamLayout::build(ckpt.params.config, ckpt.params.vocab_size);

  if (!std::getline(in, line) || line.rfind("tensors ", 0) != 0)
    throw StageError("bad tensor manifest in " + path.string());
  const std::size_t n_tensors = std::stoull(line.substr(8));
  if (n_tensors != ckpt.params.layout.tensors.size())
    throw StageError("tensor count mismatch in " + path.string());
  for (std::size_t i = 0; i < n_tensors; ++i) {
    if (!std::getline(in, line)) throw StageError("truncated manifest in " + path.string());
    std::istringstream row(line);
    std::string name;
    long long rows = 0, cols = 0, byte_off = 0;
    row >> name >> rows >> cols >> byte_off;
    const TensorInfo& t = ckpt.params.layout.tensors[i];
    if (name != t.name || rows != t.rows || cols != t.cols ||
        byte_off != static_cast<long long>(t.offset * sizeof(double)))
      throw StageError("manifest entry mismatch for tensor " + name + " in " + path.string());
  }
  if (!std::getline(in, line) || line.rfind("blob ", 0) != 0)
    throw StageError("missing blob header in " + path.string());
  const std::size_t blob_bytes = std::stoull(line.substr(5));
  if (blob_bytes != ckpt.params.layout.total * sizeof(double))
    throw StageError("blob size mismatch in " + path.string());
  ckpt.params.data.resize(ckpt.params.layout.total);
  in.read(reinterpret_cast<char*>(ckpt.params.data.data()), static_cast<std::streamsize>(blob_bytes));
  if (static_cast<std::size_t>(in.gcount()) != blob_bytes)
    throw StageError("truncated blob in " + path.string());

  const std::string declared = head.value("content_hash", "");
  if (declared != checkpoint_content_hash(ckpt.params))
    throw StageError("content hash mismatch (corrupt checkpoint): " + path.string());
  return ckpt;
}

}  // namespace sgpo
