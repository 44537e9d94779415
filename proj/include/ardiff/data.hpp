#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ardiff/tensor.hpp"

namespace ardiff {

// Character-level vocabulary with reserved special ids. pad is always 0 and
// the sentinel ids form one contiguous block.
struct Vocab {
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kSep = 2;
  static constexpr int kSentinelStart = 3;
  static constexpr int kNumSentinels = 16;

  std::vector<std::string> id_to_token;
  std::unordered_map<std::string, int> token_to_id;

  // The built-in alphabet: specials, lowercase, digits, punctuation+space,
  // uppercase. Roughly a hundred tokens so tiny models see each one often.
  static Vocab standard();

  int size() const { return static_cast<int>(id_to_token.size()); }
  int sentinel(int k) const;
  bool is_special(int id) const { return id < kSentinelStart + kNumSentinels; }
  int first_text_id() const { return kSentinelStart + kNumSentinels; }

  std::vector<int> tokenize(const std::string& text) const;
  // Strips pads; other special tokens render as their token strings.
  std::string detokenize(const std::vector<int>& ids) const;

  void save(const std::string& path) const;  // JSON: token string -> id
  static Vocab load(const std::string& path);
};

// One decoder-only training example: input region (ending in SEP), then a
// fixed-size target region whose padding is also trained on.
struct TrainingExample {
  std::vector<int> tokens;
  int prefix_len = 0;
  std::vector<uint8_t> loss_mask;

  int target_len() const { return static_cast<int>(tokens.size()) - prefix_len; }
  void validate(int max_seq_len) const;
};

// input = doc[0:split] + SEP; target = doc[split:] truncated/padded to
// target_len. total_len is a capacity bound on the whole example.
TrainingExample make_prefix_lm_example(const std::vector<int>& doc, int split,
                                       int total_len, int target_len);

// Sentinel span corruption: each selected span is replaced in the input by a
// fresh sentinel; the target lists sentinel_i + span_i in order plus a final
// terminator sentinel. target_len 0 means "natural length, no padding".
TrainingExample make_span_corruption_example(const Vocab& vocab,
                                             const std::vector<int>& doc,
                                             double noise_density, int mean_span_len,
                                             Rng& rng, int target_len = 0);

enum class TaskKind { Copy, Reverse, SubstitutionCipher, PythonLikeTemplate };

// Synthetic (source, target) pair generators; generation is a pure function
// of (spec, seed, index).
struct TaskSpec {
  TaskKind kind = TaskKind::Copy;
  int min_len = 2;        // source length range for the character tasks
  int max_len = 8;
  uint64_t perm_seed = 7;  // fixes the cipher's letter permutation
  int target_len = 16;     // decoder target window when formatting examples

  std::string name() const;
  static TaskSpec from_name(const std::string& name);
};

std::pair<std::string, std::string> task_pair(const TaskSpec& spec, uint64_t seed,
                                              int64_t index);
std::vector<std::pair<std::string, std::string>> generate_task_pairs(
    const TaskSpec& spec, uint64_t seed, int n);

// Task success predicate used by pass@k style metrics: exact for copy /
// reverse / cipher; the python-like templates accept any consistent
// single-letter argument name as long as the operation and constant match.
bool check_task_output(const TaskSpec& spec, const std::string& source,
                       const std::string& output);

// The fixed letter permutation behind SubstitutionCipherTask.
std::string cipher_apply(uint64_t perm_seed, const std::string& text);
std::string cipher_invert(uint64_t perm_seed, const std::string& text);

// Longest possible tokenized source for the task.
int task_max_source_len(const TaskSpec& spec);
// Fixed example row width: longest prompt + SEP + the task's target window.
// Every training row and decode window uses this width so padding behaves
// identically at train and inference time.
int task_row_len(const TaskSpec& spec);

// Formats a task pair as a decoder-only example of exactly row_len tokens;
// the target window absorbs whatever the prompt leaves free.
TrainingExample task_example(const Vocab& vocab, const TaskSpec& spec,
                             const std::string& source, const std::string& target,
                             int row_len);
// Prompt region only (source + SEP), for AR decoding.
std::vector<int> task_prompt(const Vocab& vocab, const std::string& source);

// Synthetic pretraining document stream: 80% sentence-like text from a small
// template grammar, 20% python-like single-line functions. Pure in
// (seed, index).
std::string corpus_doc(uint64_t seed, int64_t index);

struct Batch {
  std::vector<int> tokens;         // [batch, seq_len] row-major
  std::vector<int> prefix_len;     // [batch]
  std::vector<uint8_t> loss_mask;  // [batch, seq_len]
  int batch_size = 0;
  int seq_len = 0;

  int token_at(int b, int t) const { return tokens[static_cast<size_t>(b) * seq_len + t]; }
  bool masked(int b, int t) const {
    return loss_mask[static_cast<size_t>(b) * seq_len + t] != 0;
  }
};

// Right-pads every example to pad_to; padding beyond an example's own target
// region carries no loss.
Batch make_batch(const std::vector<TrainingExample>& examples, int batch_size,
                 int pad_to);

// JSON-lines {"source": ..., "target": ...} per row.
void save_pairs(const std::string& path,
                const std::vector<std::pair<std::string, std::string>>& pairs);
std::vector<std::pair<std::string, std::string>> load_pairs(const std::string& path);

}  // namespace ardiff
