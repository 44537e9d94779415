#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ardiff/tensor.hpp"

namespace ardiff {

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 0;
  int n_layers = 0;
  int n_heads = 0;
  int d_ff = 0;
  int max_seq_len = 0;
  uint64_t seed = 0;

  int head_dim() const { return d_model / n_heads; }
  int64_t num_params() const;

  // Throws std::invalid_argument naming the violated invariant.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

enum class AttentionKind { Causal, PrefixBidirectional, FullBidirectional };

struct AttentionMode {
  AttentionKind kind = AttentionKind::Causal;
  int prefix_len = 0;  // only meaningful for PrefixBidirectional

  static AttentionMode causal() { return {AttentionKind::Causal, 0}; }
  static AttentionMode prefix_bidirectional(int prefix_len) {
    return {AttentionKind::PrefixBidirectional, prefix_len};
  }
  static AttentionMode full_bidirectional() {
    return {AttentionKind::FullBidirectional, 0};
  }

  std::string to_string() const;
  static AttentionMode from_string(const std::string& s);

  bool operator==(const AttentionMode&) const = default;
};

// Boolean attention mask: allow(i, j) == true iff position i may attend
// to position j.
struct AttnMask {
  int seq_len = 0;
  std::vector<uint8_t> allow;  // seq_len * seq_len, row-major

  bool at(int i, int j) const {
    return allow[static_cast<size_t>(i) * seq_len + j] != 0;
  }
};

AttnMask build_attention_mask(const AttentionMode& mode, int seq_len);

template <typename T>
struct LayerWeightsT {
  TensorT<T> ln1_gamma, ln1_beta;
  TensorT<T> wq, bq, wk, bk, wv, bv, wo, bo;
  TensorT<T> ln2_gamma, ln2_beta;
  TensorT<T> w_ff1, b_ff1, w_ff2, b_ff2;
};

// Full parameter set of the decoder-only transformer. Tensor shapes are a
// pure function of ModelConfig; named_tensors() exposes them in a fixed
// order for init, optimizers, checkpoints and gradient checks.
template <typename T>
struct WeightsT {
  ModelConfig config;
  TensorT<T> token_embedding;     // [V, D]
  TensorT<T> position_embedding;  // [max_seq_len, D]
  std::vector<LayerWeightsT<T>> layers;
  TensorT<T> final_ln_gamma, final_ln_beta;  // [D]
  TensorT<T> w_out;  // [D, V]
  TensorT<T> b_out;  // [V]

  std::vector<std::pair<std::string, TensorT<T>*>> named_tensors();
  std::vector<std::pair<std::string, const TensorT<T>*>> named_tensors() const;
};

using Weights = WeightsT<float>;

// Allocates all tensors per config, zero-filled. Used for gradients and
// optimizer moments as well as as the base of init_weights.
template <typename T>
WeightsT<T> zero_weights(const ModelConfig& config);

// Deterministic initialization from config.seed. Matrices are
// normal(0, 1/sqrt(fan_in)) except the output projection, which is scaled
// down so that initial logits stay near zero; embeddings are normal(0, 1);
// biases and layernorm offsets zero.
template <typename T>
WeightsT<T> init_weights(const ModelConfig& config);

// True iff every tensor value is finite.
template <typename T>
bool all_finite(const WeightsT<T>& w);

// Logits for a batch: shape [batch, seq_len, vocab_size], raw (pre-softmax).
template <typename T>
struct LogitsT {
  int batch = 0, seq_len = 0, vocab = 0;
  std::vector<T> data;
  T* row(int b, int t) {
    return data.data() + (static_cast<size_t>(b) * seq_len + t) * vocab;
  }
  const T* row(int b, int t) const {
    return data.data() + (static_cast<size_t>(b) * seq_len + t) * vocab;
  }
};

using Logits = LogitsT<float>;

// Saved activations from a forward pass, consumed by backward().
// Examples are processed independently so batched results are bit-identical
// to the same examples run one at a time.
template <typename T>
struct ForwardTraceT;

template <typename T>
struct ForwardTraceDeleter {
  void operator()(ForwardTraceT<T>*) const;
};

template <typename T>
using ForwardTracePtr = std::unique_ptr<ForwardTraceT<T>, ForwardTraceDeleter<T>>;

// Forward pass over a token batch (row-major [batch, seq_len]) under one
// shared attention mask. Disallowed (i, j) links carry exactly zero
// influence on every output.
template <typename T>
LogitsT<T> forward(const WeightsT<T>& weights, const std::vector<int>& tokens,
                   int batch, int seq_len, const AttnMask& mask,
                   ForwardTracePtr<T>* trace = nullptr);

// Exact analytic gradients for every named tensor given dL/dlogits.
// Gradients accumulate into *grads (callers zero it first).
template <typename T>
void backward(const WeightsT<T>& weights, const std::vector<int>& tokens,
              int batch, int seq_len, const AttnMask& mask,
              const ForwardTraceT<T>& trace, const LogitsT<T>& dlogits,
              WeightsT<T>* grads);

// Convenience form matching the training-loop shape: loss_fn maps logits to
// (scalar loss, dlogits); returns the loss with gradients in *grads.
template <typename T>
T backward(const WeightsT<T>& weights, const std::vector<int>& tokens,
           int batch, int seq_len, const AttnMask& mask,
           const std::function<T(const LogitsT<T>&, LogitsT<T>*)>& loss_fn,
           WeightsT<T>* grads);

// Numerically stable in-place softmax over n entries.
template <typename T>
void softmax_inplace(T* x, int n);

// Argmax with lowest-index tie-break.
template <typename T>
int argmax_lowest(const T* x, int n);

// Draws one token from softmax(row / temperature); temperature 0 means
// argmax with lowest-id tie-break (and consumes no randomness).
template <typename T>
int sample_logits(const T* row, int vocab, double temperature, Rng& rng);

}  // namespace ardiff
