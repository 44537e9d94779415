#include "ardiff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace ardiff {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

json config_to_json(const ModelConfig& c) {
  return json{{"vocab_size", c.vocab_size}, {"d_model", c.d_model},
              {"n_layers", c.n_layers},     {"n_heads", c.n_heads},
              {"d_ff", c.d_ff},             {"max_seq_len", c.max_seq_len},
              {"seed", c.seed}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  c.seed = j.at("seed").get<uint64_t>();
  c.validate();
  return c;
}

void save_tensors(const std::string& path, const ModelConfig& config,
                  const std::vector<std::pair<std::string, const Tensor*>>& tensors,
                  const json& extra) {
  json header;
  header["format_version"] = kCheckpointFormatVersion;
  header["model_config"] = config_to_json(config);
  header["extra"] = extra;
  json table = json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    table.push_back({{"name", name}, {"shape", t->shape}, {"offset", offset}});
    offset += t->data.size() * sizeof(float);
  }
  header["tensors"] = std::move(table);
  const std::string htext = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + tmp);
    const uint64_t hlen = htext.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const auto& [name, t] : tensors) {
      out.write(reinterpret_cast<const char*>(t->data.data()),
                static_cast<std::streamsize>(t->data.size() * sizeof(float)));
    }
    if (!out) throw std::runtime_error("write failed: " + tmp);
  }
  fs::rename(tmp, path);
}

const Tensor* LoadedTensors::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

LoadedTensors load_tensors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!in) throw std::runtime_error("truncated checkpoint header: " + path);
  std::string htext(hlen, '\0');
  in.read(htext.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw std::runtime_error("truncated checkpoint header: " + path);
  json header = json::parse(htext);

  const uint64_t version = header.at("format_version").get<uint64_t>();
  if (version != kCheckpointFormatVersion) {
    throw std::runtime_error("unsupported checkpoint format version " +
                             std::to_string(version) + " in " + path);
  }
  LoadedTensors out;
  out.config = config_from_json(header.at("model_config"));
  out.extra = header.value("extra", json::object());

  const uint64_t data_start = sizeof(uint64_t) + hlen;
  for (const auto& entry : header.at("tensors")) {
    std::string name = entry.at("name").get<std::string>();
    std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
    uint64_t offset = entry.at("offset").get<uint64_t>();
    Tensor t = Tensor::zeros(shape);
    in.seekg(static_cast<std::streamoff>(data_start + offset));
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!in) throw std::runtime_error("truncated tensor '" + name + "' in " + path);
    out.tensors.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

void save_weights(const std::string& path, const Weights& weights, const json& extra) {
  save_tensors(path, weights.config, weights.named_tensors(), extra);
}

Weights load_weights(const std::string& path, json* extra) {
  LoadedTensors lt = load_tensors(path);
  Weights w = zero_weights<float>(lt.config);
  auto named = w.named_tensors();
  if (named.size() != lt.tensors.size()) {
    throw std::runtime_error("checkpoint tensor count mismatch in " + path + ": expected " +
                             std::to_string(named.size()) + ", found " +
                             std::to_string(lt.tensors.size()));
  }
  for (auto& [name, dst] : named) {
    const Tensor* src = lt.find(name);
    if (src == nullptr) throw std::runtime_error("checkpoint missing tensor '" + name + "': " + path);
    if (src->shape != dst->shape) {
      throw std::runtime_error("checkpoint shape mismatch for '" + name + "' in " + path);
    }
    dst->data = src->data;
  }
  if (extra != nullptr) *extra = lt.extra;
  return w;
}

namespace {

std::string fnv1a64_hex(const char* data, size_t n) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace

std::string content_hash(const std::string& text) {
  return fnv1a64_hex(text.data(), text.size());
}

std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for hashing: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  return fnv1a64_hex(bytes.data(), bytes.size());
}

void write_text_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + tmp);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp);
  }
  fs::rename(tmp, path);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json CheckpointMeta::to_json() const {
  return json{{"stage", stage},
              {"step", step},
              {"attention_mode", attention_mode.to_string()},
              {"seed", seed},
              {"weights_file", weights_file},
              {"weights_hash", weights_hash},
              {"parent", parent},
              {"extra", extra}};
}

CheckpointMeta CheckpointMeta::from_json(const json& j) {
  CheckpointMeta m;
  m.stage = j.at("stage").get<std::string>();
  m.step = j.at("step").get<int64_t>();
  m.attention_mode = AttentionMode::from_string(j.at("attention_mode").get<std::string>());
  m.seed = j.at("seed").get<uint64_t>();
  m.weights_file = j.at("weights_file").get<std::string>();
  m.weights_hash = j.at("weights_hash").get<std::string>();
  m.parent = j.value("parent", "");
  m.extra = j.value("extra", json::object());
  return m;
}

std::string checkpoint_meta_path(const std::string& ckpt_path) {
  fs::path p(ckpt_path);
  p.replace_extension(".json");
  return p.string();
}

std::string write_checkpoint(const std::string& dir, const std::string& stage,
                             int64_t step, const Weights& weights,
                             const AttentionMode& mode, uint64_t seed,
                             const std::string& parent, const json& extra) {
  fs::create_directories(dir);
  const std::string stem = stage + "_" + std::to_string(step);
  const std::string ckpt_path = (fs::path(dir) / (stem + ".ckpt")).string();
  save_weights(ckpt_path, weights);

  CheckpointMeta meta;
  meta.stage = stage;
  meta.step = step;
  meta.attention_mode = mode;
  meta.seed = seed;
  meta.weights_file = stem + ".ckpt";
  meta.weights_hash = file_hash(ckpt_path);
  meta.parent = parent;
  meta.extra = extra;
  write_text_atomic(checkpoint_meta_path(ckpt_path), meta.to_json().dump(2) + "\n");
  return ckpt_path;
}

CheckpointMeta read_checkpoint_meta(const std::string& ckpt_path) {
  const std::string mpath = checkpoint_meta_path(ckpt_path);
  if (!fs::exists(mpath)) {
    throw std::runtime_error("checkpoint has no sidecar manifest: " + mpath);
  }
  return CheckpointMeta::from_json(json::parse(read_text(mpath)));
}

Weights read_checkpoint(const std::string& ckpt_path, CheckpointMeta* meta) {
  if (meta != nullptr) *meta = read_checkpoint_meta(ckpt_path);
  return load_weights(ckpt_path);
}

}  // namespace ardiff
