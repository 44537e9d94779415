#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ardiff/data.hpp"
#include "ardiff/model.hpp"
#include "json.hpp"

namespace ardiff {

// Knobs for the two-pass denoising loss. The replacement distribution is
// uniform over [replacement_min_id, vocab_size), i.e. the non-special ids.
struct DiffusionSettings {
  double unroll_temperature = 0.0;  // 0 = argmax, ties -> lowest id
  double w1 = 1.0;
  double w2 = 1.0;
  int replacement_min_id = Vocab::kSentinelStart + Vocab::kNumSentinels;

  void validate() const;
};

// Mean over examples of (mean next-token cross-entropy over that example's
// loss-masked positions); logits at i predict the token at i+1. Gradients, if
// requested, accumulate into *grads.
template <typename T>
T ar_loss(const WeightsT<T>& weights, const Batch& batch, WeightsT<T>* grads);

// Draws one corruption proportion p ~ Uniform(0,1), then redraws each
// position independently with probability p from the replacement
// distribution. Operates on the target region only — callers never hand it
// input-region tokens.
std::vector<int> corrupt(const std::vector<int>& target_region, Rng& rng,
                         const DiffusionSettings& settings, int vocab_size);

template <typename T>
struct DenoisingDiagnostics {
  T l1 = 0;  // denoising cross-entropy (first pass)
  T l2 = 0;  // unrolled cross-entropy (second pass)
};

// Two-pass denoising loss: corrupt targets, score the clean tokens, sample a
// reconstruction from the first pass (input region frozen to the original
// tokens), score the clean tokens again on that reconstruction. Total is
// w1*L1 + w2*L2; gradients flow through each forward pass but not through
// the sampled token identities. `forced_unroll` (full [batch, seq_len] row
// layout) replaces the sampling step — used by gradient checks that must hold
// the intermediate sample fixed; `unroll_out` reports the unroll input used.
template <typename T>
T denoising_loss(const WeightsT<T>& weights, const Batch& batch, Rng& rng,
              const DiffusionSettings& settings, WeightsT<T>* grads,
              DenoisingDiagnostics<T>* diag = nullptr,
              std::vector<int>* unroll_out = nullptr,
              const std::vector<int>* forced_unroll = nullptr);

struct AdamConfig {
  double lr = 0.001;  // constant after warmup
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t warmup_steps = 100;  // linear ramp from 0
};

// Adam with first/second moment tensors mirroring Weights. All state is
// float32 and round-trips bit-exactly through save/load.
struct Adam {
  AdamConfig config;
  int64_t step = 0;
  Weights m, v;

  Adam(const ModelConfig& model, const AdamConfig& cfg);

  double lr_at(int64_t step_1based) const;
  void update(Weights* weights, const Weights& grads);

  void save(const std::string& path) const;
  static Adam load(const std::string& path, const AdamConfig& cfg);
};

enum class StageKind { AR, Diffusion };

std::string stage_kind_name(StageKind kind);
StageKind stage_kind_from_name(const std::string& name);
// AR trains under a causal mask, diffusion under a fully bidirectional one.
AttentionMode stage_attention_mode(StageKind kind);

struct StageConfig {
  StageKind kind = StageKind::AR;
  std::string name = "pretrain";  // checkpoint/metrics file stem
  int64_t steps = 0;
  int batch_size = 8;
  int seq_len = 48;  // fixed row width of every batch
  int64_t checkpoint_every = 0;  // 0 = final checkpoint only
  AdamConfig optimizer;
  DiffusionSettings diffusion;  // used by Diffusion stages
  uint64_t seed = 0;

  void validate() const;
};

// Stateless batch source: batch_at(step) must be a pure function of step so
// an interrupted run resumes on identical data.
using BatchFn = std::function<Batch(int64_t step)>;

struct TrainResult {
  Weights weights;
  std::string final_checkpoint;
  std::vector<double> losses;  // one entry per update, in order
};

// Runs the stage's optimizer updates from `start`, writing checkpoints
// (weights + optimizer companion + sidecar) every checkpoint_every steps plus
// a final one, and a JSON-lines metrics log. start_step > 0 resumes: `start`
// then must be the {name}_{start_step} checkpoint, whose optimizer companion
// is loaded alongside. A NaN/inf loss aborts after dumping diagnostic state.
TrainResult train(const StageConfig& stage, const Weights& start, const BatchFn& data,
                  const std::string& out_dir, int64_t start_step = 0,
                  const std::string& parent_hash = "");

// Path of the Adam companion file for a given weights checkpoint path.
std::string optimizer_state_path(const std::string& ckpt_path);

// Pretraining stream: prefix-LM rows of exactly seq_len tokens drawn from the
// synthetic corpus, split point randomized per document.
BatchFn corpus_stream(const Vocab& vocab, int batch_size, int seq_len, uint64_t seed);
// Task fine-tuning stream: cycles a fixed pool of train_size pairs.
BatchFn task_stream(const Vocab& vocab, const TaskSpec& task, int batch_size,
                    uint64_t seed, int64_t train_size);

// The three-stage recipe: AR pretrain (causal), optional diffusion adaptation
// for adapt_steps (bidirectional, same corpus), diffusion fine-tune on the
// task. Variants with different adapt_steps share the stage-1 checkpoint:
// it lives under <out_dir>/ancestor and is reused if already present.
struct PipelinePlan {
  ModelConfig model;
  int64_t pretrain_steps = 0;
  int64_t adapt_steps = 0;  // diffusion adaptation budget; 0 skips the stage
  int64_t finetune_steps = 0;
  TaskSpec task;
  int batch_size = 8;
  int corpus_seq_len = 48;
  int64_t task_train_size = 1024;
  int64_t checkpoint_every = 0;
  AdamConfig optimizer;
  DiffusionSettings diffusion;
  uint64_t seed = 0;
};

struct PipelineResult {
  Weights weights;
  std::string pretrain_ckpt;
  std::string adapt_ckpt;  // equals pretrain_ckpt when adapt_steps == 0
  std::string finetune_ckpt;
  std::string manifest_path;
};

PipelineResult run_pipeline(const PipelinePlan& plan, const Vocab& vocab,
                          const std::string& out_dir);

}  // namespace ardiff
