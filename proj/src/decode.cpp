#include "ardiff/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "ardiff/detail/ops.hpp"

namespace ardiff {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// y[out] = x[in] * W[in,out] + b; single-row flavour of the batched linear
// layer so cached decoding tracks the training-path numerics.
void linear_row(const float* x, const Tensor& w, const Tensor& b, float* y) {
  const int in = w.shape[0], out = w.shape[1];
  Eigen::Map<const Eigen::RowVectorXf> xv(x, in);
  Eigen::Map<const RowMat> wm(w.ptr(), in, out);
  Eigen::Map<Eigen::RowVectorXf> yv(y, out);
  yv.noalias() = xv * wm;
  yv += Eigen::Map<const Eigen::RowVectorXf>(b.ptr(), out);
}

}  // namespace

void SamplerSettings::validate() const {
  if (num_steps < 1) throw std::invalid_argument("sampler.num_steps must be >= 1");
  if (num_samples < 1) throw std::invalid_argument("sampler.num_samples must be >= 1");
  if (tau < 0.0) throw std::invalid_argument("sampler.tau must be >= 0");
  if (target_window < 1) throw std::invalid_argument("sampler.target_window must be >= 1");
  if (sample_min_id < 0) throw std::invalid_argument("sampler.sample_min_id must be >= 0");
}

KVCache::KVCache(const ModelConfig& cfg) : config(cfg) {
  config.validate();
  k.reserve(static_cast<size_t>(config.n_layers));
  v.reserve(static_cast<size_t>(config.n_layers));
  for (int l = 0; l < config.n_layers; ++l) {
    k.push_back(Tensor::zeros({config.max_seq_len, config.d_model}));
    v.push_back(Tensor::zeros({config.max_seq_len, config.d_model}));
  }
}

std::vector<float> decode_step(const Weights& weights, KVCache* cache, int token) {
  if (cache == nullptr) throw std::invalid_argument("decode_step: cache must not be null");
  const ModelConfig& cfg = weights.config;
  const int pos = cache->len;
  if (pos >= cfg.max_seq_len) {
    throw std::invalid_argument("decode_step: position " + std::to_string(pos) +
                                " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  }
  if (token < 0 || token >= cfg.vocab_size) {
    throw std::invalid_argument("decode_step: token id " + std::to_string(token) +
                                " out of range [0, " + std::to_string(cfg.vocab_size) + ")");
  }

  const int D = cfg.d_model, H = cfg.n_heads, hd = cfg.head_dim();
  const float inv_sqrt_hd = 1.0f / std::sqrt(static_cast<float>(hd));

  std::vector<float> x(static_cast<size_t>(D));
  const float* te = weights.token_embedding.ptr() + static_cast<size_t>(token) * D;
  const float* pe = weights.position_embedding.ptr() + static_cast<size_t>(pos) * D;
  for (int i = 0; i < D; ++i) x[i] = te[i] + pe[i];

  std::vector<float> h(static_cast<size_t>(D)), q(static_cast<size_t>(D));
  std::vector<float> ctx(static_cast<size_t>(D)), proj(static_cast<size_t>(D));
  std::vector<float> scores(static_cast<size_t>(pos) + 1);
  std::vector<float> ff1(static_cast<size_t>(cfg.d_ff));
  float mean = 0, rstd = 0;

  for (int l = 0; l < cfg.n_layers; ++l) {
    const LayerWeightsT<float>& lw = weights.layers[l];
    detail::layernorm_row(x.data(), D, lw.ln1_gamma.ptr(), lw.ln1_beta.ptr(), h.data(),
                          &mean, &rstd);

    // New position's key/value land directly in the cache; attention then
    // covers every cached position j <= pos, which is exactly the causal set.
    float* k_new = cache->k[l].ptr() + static_cast<size_t>(pos) * D;
    float* v_new = cache->v[l].ptr() + static_cast<size_t>(pos) * D;
    linear_row(h.data(), lw.wq, lw.bq, q.data());
    linear_row(h.data(), lw.wk, lw.bk, k_new);
    linear_row(h.data(), lw.wv, lw.bv, v_new);

    for (int hh = 0; hh < H; ++hh) {
      const int ho = hh * hd;
      const float* qh = q.data() + ho;
      float maxs = -std::numeric_limits<float>::infinity();
      for (int j = 0; j <= pos; ++j) {
        const float* kj = cache->k[l].ptr() + static_cast<size_t>(j) * D + ho;
        float s = 0;
        for (int c = 0; c < hd; ++c) s += qh[c] * kj[c];
        s *= inv_sqrt_hd;
        scores[static_cast<size_t>(j)] = s;
        if (s > maxs) maxs = s;
      }
      float denom = 0;
      for (int j = 0; j <= pos; ++j) {
        float e = std::exp(scores[static_cast<size_t>(j)] - maxs);
        scores[static_cast<size_t>(j)] = e;
        denom += e;
      }
      const float inv_denom = 1.0f / denom;
      float* ch = ctx.data() + ho;
      for (int c = 0; c < hd; ++c) ch[c] = 0;
      for (int j = 0; j <= pos; ++j) {
        const float p = scores[static_cast<size_t>(j)] * inv_denom;
        const float* vj = cache->v[l].ptr() + static_cast<size_t>(j) * D + ho;
        for (int c = 0; c < hd; ++c) ch[c] += p * vj[c];
      }
    }

    linear_row(ctx.data(), lw.wo, lw.bo, proj.data());
    for (int i = 0; i < D; ++i) x[i] += proj[i];

    detail::layernorm_row(x.data(), D, lw.ln2_gamma.ptr(), lw.ln2_beta.ptr(), h.data(),
                          &mean, &rstd);
    linear_row(h.data(), lw.w_ff1, lw.b_ff1, ff1.data());
    for (int i = 0; i < cfg.d_ff; ++i) ff1[i] = detail::gelu(ff1[i]);
    linear_row(ff1.data(), lw.w_ff2, lw.b_ff2, proj.data());
    for (int i = 0; i < D; ++i) x[i] += proj[i];
  }

  detail::layernorm_row(x.data(), D, weights.final_ln_gamma.ptr(),
                        weights.final_ln_beta.ptr(), h.data(), &mean, &rstd);
  std::vector<float> logits(static_cast<size_t>(cfg.vocab_size));
  linear_row(h.data(), weights.w_out, weights.b_out, logits.data());

  cache->len = pos + 1;
  return logits;
}

std::vector<int> ar_decode(const Weights& weights, const std::vector<int>& prompt,
                           const ArSettings& mode, int max_new) {
  if (prompt.empty()) throw std::invalid_argument("ar_decode: prompt must not be empty");
  if (max_new < 0) throw std::invalid_argument("ar_decode: max_new must be >= 0");
  if (mode.temperature < 0.0) {
    throw std::invalid_argument("ar_decode: temperature must be >= 0");
  }
  const int cap = weights.config.max_seq_len;
  if (static_cast<int>(prompt.size()) > cap) {
    throw std::invalid_argument("ar_decode: prompt of length " +
                                std::to_string(prompt.size()) + " exceeds max_seq_len " +
                                std::to_string(cap));
  }
  std::vector<int> out = prompt;
  if (max_new == 0) return out;

  // The prompt is prefilled one token at a time through the same incremental
  // path generation uses; the last prompt position's logits seed the loop.
  KVCache cache(weights.config);
  std::vector<float> logits;
  for (int tok : prompt) logits = decode_step(weights, &cache, tok);

  Rng rng(mix64(mode.seed, 0xA4));
  for (int i = 0; i < max_new; ++i) {
    if (static_cast<int>(out.size()) >= cap) break;  // positional capacity reached
    const int next =
        sample_logits(logits.data(), weights.config.vocab_size, mode.temperature, rng);
    out.push_back(next);
    if (mode.stop_at_pad && next == Vocab::kPad) break;
    if (i + 1 < max_new && static_cast<int>(out.size()) < cap) {
      logits = decode_step(weights, &cache, next);
    }
  }
  return out;
}

DiffusionState diffusion_init(const std::vector<int>& prompt,
                              const SamplerSettings& settings, int vocab_size,
                              Rng& rng) {
  settings.validate();
  if (prompt.empty()) throw std::invalid_argument("diffusion_init: prompt must not be empty");
  if (settings.sample_min_id >= vocab_size) {
    throw std::invalid_argument("diffusion_init: sample_min_id " +
                                std::to_string(settings.sample_min_id) +
                                " leaves nothing to draw from a vocabulary of " +
                                std::to_string(vocab_size));
  }
  DiffusionState st;
  st.n = settings.num_samples;
  st.prefix_len = static_cast<int>(prompt.size()) + 1;
  st.row_len = st.prefix_len + settings.target_window;
  st.rows.resize(static_cast<size_t>(st.n) * st.row_len);
  const int span = vocab_size - settings.sample_min_id;
  for (int i = 0; i < st.n; ++i) {
    int* r = st.row(i);
    std::copy(prompt.begin(), prompt.end(), r);
    r[prompt.size()] = Vocab::kSep;
    for (int t = st.prefix_len; t < st.row_len; ++t) {
      r[t] = settings.sample_min_id + rng.uniform_int(span);
    }
  }
  return st;
}

Logits diffusion_step(const Weights& weights, DiffusionState* state, double tau,
                      Rng& rng) {
  if (state == nullptr || state->n < 1) {
    throw std::invalid_argument("diffusion_step: state must hold at least one candidate");
  }
  if (tau < 0.0) throw std::invalid_argument("diffusion_step: tau must be >= 0");
  const AttnMask mask =
      build_attention_mask(AttentionMode::full_bidirectional(), state->row_len);
  Logits logits = forward(weights, state->rows, state->n, state->row_len, mask);
  const int V = weights.config.vocab_size;
  for (int b = 0; b < state->n; ++b) {
    int* r = state->row(b);
    for (int t = state->prefix_len; t < state->row_len; ++t) {
      r[t] = sample_logits(logits.row(b, t), V, tau, rng);
    }
  }
  return logits;
}

double model_score(const Logits& logits, int candidate, const int* row,
                   int prefix_len) {
  if (candidate < 0 || candidate >= logits.batch) {
    throw std::out_of_range("model_score: candidate index " + std::to_string(candidate) +
                            " out of range [0, " + std::to_string(logits.batch) + ")");
  }
  if (prefix_len < 0 || prefix_len > logits.seq_len) {
    throw std::out_of_range("model_score: prefix_len " + std::to_string(prefix_len) +
                            " out of range [0, " + std::to_string(logits.seq_len) + "]");
  }
  double total = 0.0;
  for (int t = prefix_len; t < logits.seq_len; ++t) {
    const float* r = logits.row(candidate, t);
    double mx = r[0];
    for (int j = 1; j < logits.vocab; ++j) mx = std::max(mx, static_cast<double>(r[j]));
    double lse = 0.0;
    for (int j = 0; j < logits.vocab; ++j) lse += std::exp(static_cast<double>(r[j]) - mx);
    const int tok = row[t];
    if (tok < 0 || tok >= logits.vocab) {
      throw std::out_of_range("model_score: token id " + std::to_string(tok) +
                              " out of range [0, " + std::to_string(logits.vocab) + ")");
    }
    total += static_cast<double>(r[tok]) - mx - std::log(lse);
  }
  return total;
}

DecodeResult diffusion_decode(const Weights& weights, const std::vector<int>& prompt,
                              const SamplerSettings& settings) {
  settings.validate();
  const ModelConfig& cfg = weights.config;
  const int need = static_cast<int>(prompt.size()) + 1 + settings.target_window;
  if (need > cfg.max_seq_len) {
    throw std::invalid_argument("diffusion_decode: prompt + separator + target window (" +
                                std::to_string(need) + " tokens) exceeds max_seq_len " +
                                std::to_string(cfg.max_seq_len));
  }

  Rng rng(mix64(settings.seed, 0xD1FF));
  DiffusionState st = diffusion_init(prompt, settings, cfg.vocab_size, rng);

  // Candidates are ranked by how likely the model finds the sequences it was
  // shown on the last step, so keep the rows as they stood going into it.
  std::vector<int> final_input;
  Logits last;
  for (int step = 0; step < settings.num_steps; ++step) {
    if (step + 1 == settings.num_steps) final_input = st.rows;
    last = diffusion_step(weights, &st, settings.tau, rng);
  }

  DecodeResult res;
  res.steps_executed = settings.num_steps;
  res.candidates.reserve(static_cast<size_t>(st.n));
  res.scores.reserve(static_cast<size_t>(st.n));
  for (int i = 0; i < st.n; ++i) {
    const int* r = st.row(i);
    res.candidates.emplace_back(r + st.prefix_len, r + st.row_len);
    res.scores.push_back(model_score(
        last, i, final_input.data() + static_cast<size_t>(i) * st.row_len, st.prefix_len));
  }
  res.winner_index = 0;
  for (int i = 1; i < st.n; ++i) {
    if (res.scores[i] > res.scores[res.winner_index]) res.winner_index = i;
  }
  return res;
}

}  // namespace ardiff
