#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ardiff/data.hpp"
#include "ardiff/model.hpp"

namespace ardiff {

// Parallel-denoising decode knobs. Initialization draws only from
// [sample_min_id, vocab_size) — the non-special ids — while per-step
// resampling uses the model's full distribution (that is how it learns to
// emit padding and signal length).
struct SamplerSettings {
  int num_steps = 10;    // T: denoising steps
  int num_samples = 8;   // N: parallel candidates
  double tau = 0.2;      // resampling temperature; 0 = argmax
  int target_window = 16;
  uint64_t seed = 0;
  int sample_min_id = Vocab::kSentinelStart + Vocab::kNumSentinels;

  void validate() const;
};

struct DecodeResult {
  // Target regions only, each exactly target_window tokens (padding included).
  std::vector<std::vector<int>> candidates;
  std::vector<double> scores;  // log-likelihood style: higher is better
  int winner_index = 0;        // argmax of scores, ties -> lowest index
  int steps_executed = 0;

  const std::vector<int>& winner() const { return candidates[winner_index]; }
};

// Per-layer key/value rows cached across autoregressive decode steps.
struct KVCache {
  ModelConfig config;
  int len = 0;  // positions filled so far
  std::vector<Tensor> k, v;  // per layer, [max_seq_len, d_model]

  explicit KVCache(const ModelConfig& config);
};

// Feeds one token at position cache->len and returns that position's logits.
// Matches the uncached causal forward within float round-off.
std::vector<float> decode_step(const Weights& weights, KVCache* cache, int token);

struct ArSettings {
  double temperature = 0.0;  // 0 = greedy with lowest-id tie-break
  uint64_t seed = 0;
  bool stop_at_pad = true;  // pad acts as a terminator at generation time
};

// Left-to-right generation under the causal mask via the KV cache; the
// prompt is prefilled through the same incremental path. Returns prompt plus
// generated tokens (including the terminating pad, if any).
std::vector<int> ar_decode(const Weights& weights, const std::vector<int>& prompt,
                           const ArSettings& mode, int max_new);

// N candidate rows sharing one prompt, advanced in lock step.
struct DiffusionState {
  int n = 0;
  int row_len = 0;
  int prefix_len = 0;  // prompt plus SEP
  std::vector<int> rows;  // [n, row_len]

  int* row(int i) { return rows.data() + static_cast<size_t>(i) * row_len; }
  const int* row(int i) const { return rows.data() + static_cast<size_t>(i) * row_len; }
};

// Candidates start as prompt + SEP + uniformly random non-special tokens; the
// prompt region is identical across candidates and never touched again.
DiffusionState diffusion_init(const std::vector<int>& prompt,
                              const SamplerSettings& settings, int vocab_size,
                              Rng& rng);

// One parallel denoising step: a batched forward over all candidates, then
// every target position is resampled from softmax(logits / tau). Returns the
// logits the step consumed (the scoring step needs them).
Logits diffusion_step(const Weights& weights, DiffusionState* state, double tau,
                      Rng& rng);

// Sum over target positions of log softmax(logits)[input token]; higher is
// better. `row` is the decoder input the logits were computed from.
double model_score(const Logits& logits, int candidate, const int* row,
                   int prefix_len);

// Full recipe: init, T denoising steps, then rerank by the model score of the
// final step's decoder input against that step's logits. Deterministic given
// settings.seed.
DecodeResult diffusion_decode(const Weights& weights, const std::vector<int>& prompt,
                              const SamplerSettings& settings);

}  // namespace ardiff
