#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ardiff/model.hpp"
#include "json.hpp"

namespace ardiff {

inline constexpr uint64_t kCheckpointFormatVersion = 1;

nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

// Generic container: [u64 little-endian header length][JSON header][raw data].
// The header lists the format version, the model config, and for each tensor
// its name, shape and byte offset into the data section. Data is raw
// little-endian float32, so a round-trip is bit-exact.
void save_tensors(const std::string& path, const ModelConfig& config,
                  const std::vector<std::pair<std::string, const Tensor*>>& tensors,
                  const nlohmann::json& extra = nlohmann::json::object());

struct LoadedTensors {
  ModelConfig config;
  nlohmann::json extra;
  std::vector<std::pair<std::string, Tensor>> tensors;  // in file order

  const Tensor* find(const std::string& name) const;
};

LoadedTensors load_tensors(const std::string& path);

void save_weights(const std::string& path, const Weights& weights,
                  const nlohmann::json& extra = nlohmann::json::object());
Weights load_weights(const std::string& path, nlohmann::json* extra = nullptr);

// FNV-1a 64-bit content hash as a 16-digit hex string.
std::string file_hash(const std::string& path);
std::string content_hash(const std::string& text);

// Write-temp-then-rename so readers never observe a partial file.
void write_text_atomic(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

// Sidecar metadata stored next to each {stage}_{step}.ckpt file. The
// attention mode lives here (not inferred from weights) so downstream stages
// can fail loudly on a mode mismatch.
struct CheckpointMeta {
  std::string stage;
  int64_t step = 0;
  AttentionMode attention_mode = AttentionMode::causal();
  uint64_t seed = 0;
  std::string weights_file;  // basename of the .ckpt
  std::string weights_hash;
  std::string parent;  // hash of the checkpoint this one was trained from
  nlohmann::json extra = nlohmann::json::object();

  nlohmann::json to_json() const;
  static CheckpointMeta from_json(const nlohmann::json& j);
};

// Writes <dir>/<stage>_<step>.ckpt plus its .json sidecar; returns the .ckpt
// path. `extra` lands in the sidecar, not the container.
std::string write_checkpoint(const std::string& dir, const std::string& stage,
                             int64_t step, const Weights& weights,
                             const AttentionMode& mode, uint64_t seed,
                             const std::string& parent = "",
                             const nlohmann::json& extra = nlohmann::json::object());

// Sidecar path for a given .ckpt path.
std::string checkpoint_meta_path(const std::string& ckpt_path);
CheckpointMeta read_checkpoint_meta(const std::string& ckpt_path);
Weights read_checkpoint(const std::string& ckpt_path, CheckpointMeta* meta = nullptr);

}  // namespace ardiff
