#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ardiff/data.hpp"
#include "ardiff/decode.hpp"
#include "ardiff/model.hpp"

namespace ardiff {

// One scored metric over an evaluation split, with the decode settings that
// produced it echoed alongside so report rows are self-describing.
struct MetricReport {
  std::string task;
  std::string model;
  std::string metric;  // exact_match | token_f1 | pass_at_k
  double value = 0.0;  // fraction in [0, 1]
  int n = 0;           // examples scored
  int steps = 0;       // denoising steps (0 for the AR decoder)
  int samples = 0;     // candidates per example
  double tau = 0.0;    // resampling / sampling temperature
  uint64_t seed = 0;   // decode seed

  bool operator==(const MetricReport&) const = default;
};

struct LatencyRecord {
  std::string kind;  // "ar" | "diffusion"
  int length = 0;    // tokens in the generated window
  int reps = 0;
  double median_ms = 0.0;    // median wall time of one decode
  double per_unit_ms = 0.0;  // per token (ar) or per denoising step (diffusion)
  int steps = 0;             // tokens generated (ar) or denoising steps (diffusion)

  bool operator==(const LatencyRecord&) const = default;
};

enum class DecoderKind { AR, Diffusion };

std::string decoder_kind_name(DecoderKind kind);
DecoderKind decoder_kind_from_name(const std::string& name);

struct EvalSettings {
  DecoderKind mode = DecoderKind::Diffusion;
  // Diffusion decode settings; num_samples doubles as the pass@k candidate
  // count for both decoders. The target window is derived from the task's
  // row geometry per example, so the field here is ignored during eval.
  SamplerSettings sampler;
  ArSettings ar;  // pass@k candidates for the AR decoder use ar.temperature
  int n_examples = 100;
  uint64_t data_seed = 0;
  // Examples come from the task stream starting at this index; training draws
  // from low indices, so the default keeps evaluation held out.
  int64_t index_base = 1'000'000;
  std::string model_id = "model";
};

// Copy of tokens with every trailing pad removed.
std::vector<int> strip_trailing_pads(const std::vector<int>& tokens);

// Bag-of-tokens F1 (multiset overlap); 1.0 when both sides are empty.
double token_f1(const std::vector<int>& output, const std::vector<int>& target);

// Decodes every example of the split and reports exact_match, token_f1 and
// pass_at_k (in that order). Exact match counts whole-sequence hits after
// trailing pads are stripped, so the value is always a ratio of integers.
// Deterministic given the settings' seeds.
std::vector<MetricReport> evaluate(const Weights& weights, const Vocab& vocab,
                                   const TaskSpec& task, const EvalSettings& settings);

// One exact_match report per (num_steps, num_samples) grid cell, all cells
// sharing the evaluation split and seed discipline. Diffusion decoding only —
// the grid axes are diffusion inference knobs.
std::vector<MetricReport> sweep(const Weights& weights, const Vocab& vocab,
                                const TaskSpec& task, const std::vector<int>& steps_grid,
                                const std::vector<int>& samples_grid,
                                const EvalSettings& settings);

struct BenchSettings {
  std::vector<int> lengths = {64, 128, 256, 512};
  int num_steps = 10;  // denoising steps per diffusion decode
  double tau = 0.2;    // diffusion resampling temperature while timing
  int reps = 3;        // timed samples per configuration; median reported
  int warmup = 2;      // untimed runs before the clock starts
  uint64_t seed = 0;
};

// Wall-clock contrast of the two decoders: for each length L, times an AR
// greedy decode of exactly L tokens and a diffusion decode of an L-token
// window at fixed T, batch 1, N=1, single-threaded. Warmup runs are excluded;
// runs are batched into blocks that are grown until one block lasts at least
// a millisecond, so clock granularity cannot dominate short decodes.
std::vector<LatencyRecord> latency_benchmark(const Weights& weights,
                                             const BenchSettings& settings);

struct Report {
  std::string config_hash;
  std::vector<std::pair<std::string, uint64_t>> seeds;  // name -> value
  std::vector<MetricReport> metrics;
  std::vector<LatencyRecord> latency;
};

// CSV serialization. Doubles are written with enough digits that parsing the
// text reproduces the in-memory records exactly.
std::string metrics_to_csv(const std::vector<MetricReport>& rows);
std::vector<MetricReport> metrics_from_csv(const std::string& text);
std::string latency_to_csv(const std::vector<LatencyRecord>& rows);
std::vector<LatencyRecord> latency_from_csv(const std::string& text);

// Writes <stem>_metrics.csv and <stem>_latency.csv (each only when nonempty)
// plus <stem>_summary.json under out_dir; returns the paths written. A report
// with neither metrics nor latency records is an error and writes nothing.
std::vector<std::string> write_report(const std::string& out_dir, const std::string& stem,
                                      const Report& report);

}  // namespace ardiff
