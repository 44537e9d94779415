#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "ardiff/data.hpp"
#include "ardiff/decode.hpp"
#include "ardiff/eval.hpp"
#include "ardiff/model.hpp"
#include "ardiff/train.hpp"

namespace ardiff {

// Step budgets and batching for the pretrain -> adapt -> finetune pipeline.
struct StagePlan {
  int64_t pretrain_steps = 1000;
  int64_t adapt_steps = 0;  // 0 = the ancestor goes straight to fine-tuning
  int64_t finetune_steps = 1000;
  int batch_size = 8;
  int corpus_seq_len = 48;      // row width for the pretraining streams
  int64_t checkpoint_every = 0;  // 0 = only the final checkpoint
};

struct EvalPlan {
  int n_examples = 100;
  uint64_t data_seed = 0;
  int64_t index_base = 1'000'000;  // clear of the training indices
};

struct PathsPlan {
  std::string checkpoints = "runs/checkpoints";
  std::string logs = "runs/logs";
  std::string reports = "runs/reports";
};

// Everything a run needs, loadable from one JSON document. Every field has a
// default, so the minimal useful config is just the model sizes.
struct RunConfig {
  ModelConfig model;
  StagePlan stages;
  AdamConfig optimizer;
  DiffusionSettings diffusion;
  SamplerSettings sampler;
  TaskSpec task;
  int64_t task_train_size = 1024;  // distinct pairs the fine-tune stream cycles
  EvalPlan eval;
  BenchSettings bench;
  PathsPlan paths;
  uint64_t seed = 0;  // master seed; stage/decode seeds are derived from it

  // Throws std::invalid_argument naming the offending field path
  // (e.g. "config: sampler.tau must be >= 0").
  void validate() const;
};

// A fully-defaulted config (vocabulary-sized model, small budgets).
RunConfig default_run_config();

// Serialization is total: every field appears, so a load -> dump -> load
// round-trip reproduces the config exactly.
nlohmann::json run_config_to_json(const RunConfig& config);

// Applies the document over the defaults. Unknown keys anywhere are an error
// naming the full path ("config: unknown key 'stages.num_stpes'"); so are
// type mismatches.
RunConfig run_config_from_json(const nlohmann::json& j);

// Reads, parses (errors carry line and column), applies defaults, validates.
RunConfig load_config(const std::string& path);

// Content hash of the canonical serialization; stable across field order.
std::string run_config_hash(const RunConfig& config);

// Creates each configured directory and probes it with a write; throws
// naming the config field if one is not usable.
void check_paths_writable(const PathsPlan& paths);

// Provenance record each CLI run leaves behind: what ran, with which merged
// config, which artifacts it consumed and produced, and the seeds involved.
struct RunManifest {
  std::string command;
  std::string config_hash;
  nlohmann::json effective_config;
  std::vector<std::pair<std::string, std::string>> inputs;   // path -> content hash
  std::vector<std::pair<std::string, std::string>> outputs;  // path -> content hash
  std::vector<std::pair<std::string, uint64_t>> seeds;       // name -> value
};

// Writes manifest_<command>_<index>.json under dir; returns the path.
std::string write_run_manifest(const std::string& dir, const RunManifest& manifest);

// Housekeeping: files under the given directories that no manifest mentions
// as an input or output. Manifests themselves and lock files never count.
std::vector<std::string> find_orphan_artifacts(const std::vector<std::string>& dirs);

}  // namespace ardiff
