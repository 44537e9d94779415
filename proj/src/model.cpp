#include "ardiff/model.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "ardiff/detail/ops.hpp"

namespace ardiff {

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<Mat<T>>;
template <typename T>
using MapCM = Eigen::Map<const Mat<T>>;
// Head-sized [S, head_dim] view into a [S, d_model] activation buffer.
template <typename T>
using MapHead = Eigen::Map<Mat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using MapCHead = Eigen::Map<const Mat<T>, 0, Eigen::OuterStride<>>;

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("ModelConfig: " + msg); };
  if (vocab_size <= 0) fail("vocab_size must be positive");
  if (d_model <= 0) fail("d_model must be positive");
  if (n_layers <= 0) fail("n_layers must be positive");
  if (n_heads <= 0) fail("n_heads must be positive");
  if (d_ff <= 0) fail("d_ff must be positive");
  if (max_seq_len < 2) fail("max_seq_len must be at least 2");
  if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
}

int64_t ModelConfig::num_params() const {
  int64_t d = d_model, v = vocab_size, f = d_ff;
  int64_t per_layer = 4 * (d * d + d) + 2 * d       // attention + ln1
                      + d * f + f + f * d + d + 2 * d;  // ffn + ln2
  return v * d + int64_t(max_seq_len) * d + n_layers * per_layer + 2 * d +
         d * v + v;
}

std::string AttentionMode::to_string() const {
  switch (kind) {
    case AttentionKind::Causal:
      return "causal";
    case AttentionKind::FullBidirectional:
      return "full_bidirectional";
    case AttentionKind::PrefixBidirectional:
      return "prefix_bidirectional:" + std::to_string(prefix_len);
  }
  return "causal";
}

AttentionMode AttentionMode::from_string(const std::string& s) {
  if (s == "causal") return causal();
  if (s == "full_bidirectional") return full_bidirectional();
  const std::string prefix = "prefix_bidirectional:";
  if (s.rfind(prefix, 0) == 0) {
    return prefix_bidirectional(std::stoi(s.substr(prefix.size())));
  }
  throw std::invalid_argument("unknown attention mode: " + s);
}

AttnMask build_attention_mask(const AttentionMode& mode, int seq_len) {
  if (seq_len < 1) throw std::invalid_argument("build_attention_mask: seq_len must be >= 1");
  if (mode.kind == AttentionKind::PrefixBidirectional &&
      (mode.prefix_len < 0 || mode.prefix_len > seq_len)) {
    throw std::invalid_argument("build_attention_mask: prefix_len out of range [0, seq_len]");
  }
  AttnMask m;
  m.seq_len = seq_len;
  m.allow.assign(static_cast<size_t>(seq_len) * seq_len, 0);
  for (int i = 0; i < seq_len; ++i) {
    for (int j = 0; j < seq_len; ++j) {
      bool ok = false;
      switch (mode.kind) {
        case AttentionKind::Causal:
          ok = j <= i;
          break;
        case AttentionKind::FullBidirectional:
          ok = true;
          break;
        case AttentionKind::PrefixBidirectional:
          ok = j < mode.prefix_len || j <= i;
          break;
      }
      m.allow[static_cast<size_t>(i) * seq_len + j] = ok ? 1 : 0;
    }
  }
  return m;
}

template <typename T>
std::vector<std::pair<std::string, TensorT<T>*>> WeightsT<T>::named_tensors() {
  std::vector<std::pair<std::string, TensorT<T>*>> out;
  out.emplace_back("token_embedding", &token_embedding);
  out.emplace_back("position_embedding", &position_embedding);
  for (size_t l = 0; l < layers.size(); ++l) {
    auto& lw = layers[l];
    std::string p = "layers." + std::to_string(l) + ".";
    out.emplace_back(p + "ln1.gamma", &lw.ln1_gamma);
    out.emplace_back(p + "ln1.beta", &lw.ln1_beta);
    out.emplace_back(p + "attn.wq", &lw.wq);
    out.emplace_back(p + "attn.bq", &lw.bq);
    out.emplace_back(p + "attn.wk", &lw.wk);
    out.emplace_back(p + "attn.bk", &lw.bk);
    out.emplace_back(p + "attn.wv", &lw.wv);
    out.emplace_back(p + "attn.bv", &lw.bv);
    out.emplace_back(p + "attn.wo", &lw.wo);
    out.emplace_back(p + "attn.bo", &lw.bo);
    out.emplace_back(p + "ln2.gamma", &lw.ln2_gamma);
    out.emplace_back(p + "ln2.beta", &lw.ln2_beta);
    out.emplace_back(p + "ff.w1", &lw.w_ff1);
    out.emplace_back(p + "ff.b1", &lw.b_ff1);
    out.emplace_back(p + "ff.w2", &lw.w_ff2);
    out.emplace_back(p + "ff.b2", &lw.b_ff2);
  }
  out.emplace_back("final_ln.gamma", &final_ln_gamma);
  out.emplace_back("final_ln.beta", &final_ln_beta);
  out.emplace_back("output.w", &w_out);
  out.emplace_back("output.b", &b_out);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, const TensorT<T>*>> WeightsT<T>::named_tensors() const {
  auto mut = const_cast<WeightsT<T>*>(this)->named_tensors();
  std::vector<std::pair<std::string, const TensorT<T>*>> out;
  out.reserve(mut.size());
  for (auto& [name, t] : mut) out.emplace_back(name, t);
  return out;
}

template <typename T>
WeightsT<T> zero_weights(const ModelConfig& config) {
  config.validate();
  const int d = config.d_model, v = config.vocab_size, f = config.d_ff;
  WeightsT<T> w;
  w.config = config;
  w.token_embedding = TensorT<T>::zeros({v, d});
  w.position_embedding = TensorT<T>::zeros({config.max_seq_len, d});
  w.layers.resize(config.n_layers);
  for (auto& lw : w.layers) {
    lw.ln1_gamma = TensorT<T>::zeros({d});
    lw.ln1_beta = TensorT<T>::zeros({d});
    lw.wq = TensorT<T>::zeros({d, d});
    lw.bq = TensorT<T>::zeros({d});
    lw.wk = TensorT<T>::zeros({d, d});
    lw.bk = TensorT<T>::zeros({d});
    lw.wv = TensorT<T>::zeros({d, d});
    lw.bv = TensorT<T>::zeros({d});
    lw.wo = TensorT<T>::zeros({d, d});
    lw.bo = TensorT<T>::zeros({d});
    lw.ln2_gamma = TensorT<T>::zeros({d});
    lw.ln2_beta = TensorT<T>::zeros({d});
    lw.w_ff1 = TensorT<T>::zeros({d, f});
    lw.b_ff1 = TensorT<T>::zeros({f});
    lw.w_ff2 = TensorT<T>::zeros({f, d});
    lw.b_ff2 = TensorT<T>::zeros({d});
  }
  w.final_ln_gamma = TensorT<T>::zeros({d});
  w.final_ln_beta = TensorT<T>::zeros({d});
  w.w_out = TensorT<T>::zeros({d, v});
  w.b_out = TensorT<T>::zeros({v});
  return w;
}

namespace {

// The output projection is initialized 10x smaller than 1/sqrt(fan_in) so
// that initial logits are near zero and the initial cross-entropy sits at
// ln(vocab_size).
constexpr double kOutputInitScale = 0.1;

template <typename T>
void init_tensor(const std::string& name, TensorT<T>* t, Rng* rng) {
  bool is_embedding = name == "token_embedding" || name == "position_embedding";
  bool is_gamma = name.find("gamma") != std::string::npos;
  bool is_matrix = t->shape.size() == 2 && !is_embedding;
  if (is_gamma) {
    t->fill(T(1));
  } else if (is_embedding) {
    for (auto& x : t->data) x = static_cast<T>(rng->normal());
  } else if (is_matrix) {
    int fan_in = t->shape[0];
    double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    if (name == "output.w") scale *= kOutputInitScale;
    for (auto& x : t->data) x = static_cast<T>(rng->normal() * scale);
  }
  // biases and layernorm betas stay zero
}

}  // namespace

template <typename T>
WeightsT<T> init_weights(const ModelConfig& config) {
  WeightsT<T> w = zero_weights<T>(config);
  Rng rng(mix64(config.seed, 0x696e6974ull));
  for (auto& [name, t] : w.named_tensors()) {
    init_tensor(name, t, &rng);
  }
  return w;
}

template <typename T>
bool all_finite(const WeightsT<T>& w) {
  for (const auto& [name, t] : w.named_tensors()) {
    for (T x : t->data) {
      if (!std::isfinite(static_cast<double>(x))) return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Forward / backward

template <typename T>
struct ForwardTraceT {
  int batch = 0, seq_len = 0;
  // Per layer: input x, ln1 stats/out, q/k/v, attention probs, head concat,
  // ln2 stats/out, ffn pre-activation and activation. xs has n_layers + 1
  // entries; xs[l] is the residual-stream input of layer l.
  std::vector<std::vector<T>> xs;                    // [L+1][B*S*D]
  std::vector<std::vector<T>> ln1_mean, ln1_rstd;    // [L][B*S]
  std::vector<std::vector<T>> ln1_out;               // [L][B*S*D]
  std::vector<std::vector<T>> q, k, v;               // [L][B*S*D]
  std::vector<std::vector<T>> probs;                 // [L][B*H*S*S]
  std::vector<std::vector<T>> ctx;                   // [L][B*S*D]
  std::vector<std::vector<T>> attn_res;              // [L][B*S*D] x + attention
  std::vector<std::vector<T>> ln2_mean, ln2_rstd;    // [L][B*S]
  std::vector<std::vector<T>> ln2_out;               // [L][B*S*D]
  std::vector<std::vector<T>> ff_pre, ff_act;        // [L][B*S*F]
  std::vector<T> lnf_mean, lnf_rstd;                 // [B*S]
  std::vector<T> lnf_out;                            // [B*S*D]
};

template <typename T>
void ForwardTraceDeleter<T>::operator()(ForwardTraceT<T>* p) const {
  delete p;
}

namespace {

template <typename T>
ForwardTraceT<T>* alloc_trace(const ModelConfig& cfg, int batch, int seq_len) {
  auto* tr = new ForwardTraceT<T>();
  const size_t bs = static_cast<size_t>(batch) * seq_len;
  const size_t bsd = bs * cfg.d_model;
  const size_t bsf = bs * cfg.d_ff;
  const size_t bhss = static_cast<size_t>(batch) * cfg.n_heads * seq_len * seq_len;
  const int L = cfg.n_layers;
  tr->batch = batch;
  tr->seq_len = seq_len;
  tr->xs.assign(L + 1, std::vector<T>(bsd));
  tr->ln1_mean.assign(L, std::vector<T>(bs));
  tr->ln1_rstd.assign(L, std::vector<T>(bs));
  tr->ln1_out.assign(L, std::vector<T>(bsd));
  tr->q.assign(L, std::vector<T>(bsd));
  tr->k.assign(L, std::vector<T>(bsd));
  tr->v.assign(L, std::vector<T>(bsd));
  tr->probs.assign(L, std::vector<T>(bhss, T(0)));
  tr->ctx.assign(L, std::vector<T>(bsd));
  tr->attn_res.assign(L, std::vector<T>(bsd));
  tr->ln2_mean.assign(L, std::vector<T>(bs));
  tr->ln2_rstd.assign(L, std::vector<T>(bs));
  tr->ln2_out.assign(L, std::vector<T>(bsd));
  tr->ff_pre.assign(L, std::vector<T>(bsf));
  tr->ff_act.assign(L, std::vector<T>(bsf));
  tr->lnf_mean.resize(bs);
  tr->lnf_rstd.resize(bs);
  tr->lnf_out.resize(bsd);
  return tr;
}

// Refits an existing trace to new dimensions without clearing reused storage;
// forward writes every element it reads, so stale contents are harmless.
template <typename T>
void resize_trace(ForwardTraceT<T>* tr, const ModelConfig& cfg, int batch, int seq_len) {
  const size_t bs = static_cast<size_t>(batch) * seq_len;
  const size_t bsd = bs * cfg.d_model;
  const size_t bsf = bs * cfg.d_ff;
  const size_t bhss = static_cast<size_t>(batch) * cfg.n_heads * seq_len * seq_len;
  const int L = cfg.n_layers;
  tr->batch = batch;
  tr->seq_len = seq_len;
  auto fit = [](std::vector<std::vector<T>>& vs, int n, size_t len) {
    vs.resize(n);
    for (auto& v : vs) v.resize(len);
  };
  fit(tr->xs, L + 1, bsd);
  fit(tr->ln1_mean, L, bs);
  fit(tr->ln1_rstd, L, bs);
  fit(tr->ln1_out, L, bsd);
  fit(tr->q, L, bsd);
  fit(tr->k, L, bsd);
  fit(tr->v, L, bsd);
  fit(tr->probs, L, bhss);
  fit(tr->ctx, L, bsd);
  fit(tr->attn_res, L, bsd);
  fit(tr->ln2_mean, L, bs);
  fit(tr->ln2_rstd, L, bs);
  fit(tr->ln2_out, L, bsd);
  fit(tr->ff_pre, L, bsf);
  fit(tr->ff_act, L, bsf);
  tr->lnf_mean.resize(bs);
  tr->lnf_rstd.resize(bs);
  tr->lnf_out.resize(bsd);
}

// y[S,out] = x[S,in] * W[in,out] + b
template <typename T>
void linear_fwd(const T* x, int rows, const TensorT<T>& w, const TensorT<T>& b, T* y) {
  const int in = w.shape[0], out = w.shape[1];
  MapCM<T> xm(x, rows, in);
  MapCM<T> wm(w.ptr(), in, out);
  MapM<T> ym(y, rows, out);
  ym.noalias() = xm * wm;
  MapCM<T> bm(b.ptr(), 1, out);
  ym.rowwise() += bm.row(0);
}

// Accumulates dW, db and writes dx for y = x*W + b.
template <typename T>
void linear_bwd(const T* x, int rows, const TensorT<T>& w, const T* dy,
                TensorT<T>* dw, TensorT<T>* db, T* dx) {
  const int in = w.shape[0], out = w.shape[1];
  MapCM<T> xm(x, rows, in);
  MapCM<T> wm(w.ptr(), in, out);
  MapCM<T> dym(dy, rows, out);
  MapM<T> dwm(dw->ptr(), in, out);
  dwm.noalias() += xm.transpose() * dym;
  // Bias gradient in fixed row order. A vectorized column reduction would
  // reorder the sums depending on the buffer's alignment, making gradients
  // (hence training runs) depend on where the heap put this block.
  T* dbp = db->ptr();
  for (int r = 0; r < rows; ++r) {
    const T* dyr = dy + static_cast<size_t>(r) * out;
    for (int o = 0; o < out; ++o) dbp[o] += dyr[o];
  }
  if (dx != nullptr) {
    MapM<T> dxm(dx, rows, in);
    dxm.noalias() = dym * wm.transpose();
  }
}

}  // namespace

template <typename T>
LogitsT<T> forward(const WeightsT<T>& weights, const std::vector<int>& tokens,
                   int batch, int seq_len, const AttnMask& mask,
                   ForwardTracePtr<T>* trace_out) {
  const ModelConfig& cfg = weights.config;
  if (batch < 1) throw std::invalid_argument("forward: batch must be >= 1");
  if (seq_len < 1) throw std::invalid_argument("forward: seq_len must be >= 1");
  if (seq_len > cfg.max_seq_len) {
    throw std::invalid_argument("forward: sequence length " + std::to_string(seq_len) +
                                " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  }
  if (static_cast<int64_t>(tokens.size()) != static_cast<int64_t>(batch) * seq_len) {
    throw std::invalid_argument("forward: tokens size does not match batch * seq_len");
  }
  if (mask.seq_len != seq_len) throw std::invalid_argument("forward: mask size mismatch");
  for (int tok : tokens) {
    if (tok < 0 || tok >= cfg.vocab_size) {
      throw std::invalid_argument("forward: token id " + std::to_string(tok) +
                                  " out of range [0, " + std::to_string(cfg.vocab_size) + ")");
    }
  }

  const int S = seq_len, D = cfg.d_model, H = cfg.n_heads, hd = cfg.head_dim();
  const int F = cfg.d_ff, V = cfg.vocab_size, L = cfg.n_layers;
  const T inv_sqrt_hd = T(1) / std::sqrt(static_cast<T>(hd));

  // Callers that keep the activations get a fresh trace; inference-only
  // callers share one scratch trace per thread, sparing a multi-megabyte
  // allocate/free cycle on every forward.
  ForwardTracePtr<T> local;
  ForwardTraceT<T>* trp;
  if (trace_out != nullptr) {
    local.reset(alloc_trace<T>(cfg, batch, S));
    trp = local.get();
  } else {
    thread_local ForwardTracePtr<T> scratch;
    if (!scratch) {
      scratch.reset(alloc_trace<T>(cfg, batch, S));
    } else {
      resize_trace(scratch.get(), cfg, batch, S);
    }
    trp = scratch.get();
  }
  ForwardTraceT<T>& tr = *trp;

  LogitsT<T> logits;
  logits.batch = batch;
  logits.seq_len = S;
  logits.vocab = V;
  logits.data.resize(static_cast<size_t>(batch) * S * V);

  // All three attention modes allow a contiguous run [0, end) per query row;
  // when that holds the softmax runs on vectorized row segments instead of
  // testing the mask pair by pair. Rows are staged through this 64-byte
  // aligned scratch so the SIMD lane split of max/exp/sum is the same
  // wherever the trace lives; outputs then depend on the inputs alone,
  // never on heap addresses.
  thread_local Eigen::Array<T, Eigen::Dynamic, 1> softmax_scratch;
  if (softmax_scratch.size() < S) softmax_scratch.resize(S);
  std::vector<int> allow_end(S, 0);
  bool contiguous = true;
  for (int i = 0; i < S && contiguous; ++i) {
    int end = 0;
    for (int j = 0; j < S; ++j) {
      if (mask.at(i, j)) end = j + 1;
    }
    for (int j = 0; j < end; ++j) {
      if (!mask.at(i, j)) {
        contiguous = false;
        break;
      }
    }
    allow_end[i] = end;
  }

  for (int b = 0; b < batch; ++b) {
    const size_t ex_off = static_cast<size_t>(b) * S * D;
    const size_t exf_off = static_cast<size_t>(b) * S * F;
    const size_t exs_off = static_cast<size_t>(b) * S;

    // Embedding: token + learned absolute position.
    T* x0 = tr.xs[0].data() + ex_off;
    for (int t = 0; t < S; ++t) {
      const int tok = tokens[static_cast<size_t>(b) * S + t];
      const T* te = weights.token_embedding.ptr() + static_cast<size_t>(tok) * D;
      const T* pe = weights.position_embedding.ptr() + static_cast<size_t>(t) * D;
      T* row = x0 + static_cast<size_t>(t) * D;
      for (int i = 0; i < D; ++i) row[i] = te[i] + pe[i];
    }

    for (int l = 0; l < L; ++l) {
      const LayerWeightsT<T>& lw = weights.layers[l];
      const T* x_in = tr.xs[l].data() + ex_off;
      T* x_next = tr.xs[l + 1].data() + ex_off;

      T* ln1 = tr.ln1_out[l].data() + ex_off;
      for (int t = 0; t < S; ++t) {
        detail::layernorm_row(x_in + static_cast<size_t>(t) * D, D, lw.ln1_gamma.ptr(),
                              lw.ln1_beta.ptr(), ln1 + static_cast<size_t>(t) * D,
                              &tr.ln1_mean[l][exs_off + t], &tr.ln1_rstd[l][exs_off + t]);
      }

      T* q = tr.q[l].data() + ex_off;
      T* k = tr.k[l].data() + ex_off;
      T* v = tr.v[l].data() + ex_off;
      linear_fwd(ln1, S, lw.wq, lw.bq, q);
      linear_fwd(ln1, S, lw.wk, lw.bk, k);
      linear_fwd(ln1, S, lw.wv, lw.bv, v);

      // Masked multi-head attention. Scores and context run as head-wide
      // matrix products; disallowed probabilities are forced to exactly zero
      // before the context product, so masked positions cannot influence the
      // result.
      T* ctx = tr.ctx[l].data() + ex_off;
      T* probs = tr.probs[l].data() +
                 static_cast<size_t>(b) * H * S * S;
      for (int h = 0; h < H; ++h) {
        const int ho = h * hd;
        T* hp = probs + static_cast<size_t>(h) * S * S;
        MapCHead<T> qh(q + ho, S, hd, Eigen::OuterStride<>(D));
        MapCHead<T> kh(k + ho, S, hd, Eigen::OuterStride<>(D));
        MapCHead<T> vh(v + ho, S, hd, Eigen::OuterStride<>(D));
        MapM<T> pm(hp, S, S);
        pm.noalias() = (qh * kh.transpose()) * inv_sqrt_hd;
        for (int i = 0; i < S; ++i) {
          T* row = hp + static_cast<size_t>(i) * S;
          if (contiguous) {
            const int end = allow_end[i];
            if (end == 0) {  // row with nothing to attend to: all-zero probs
              for (int j = 0; j < S; ++j) row[j] = T(0);
              continue;
            }
            auto seg = softmax_scratch.head(end);
            std::copy(row, row + end, softmax_scratch.data());
            const T maxs = seg.maxCoeff();
            seg = (seg - maxs).exp();
            seg *= T(1) / seg.sum();
            std::copy(softmax_scratch.data(), softmax_scratch.data() + end, row);
            for (int j = end; j < S; ++j) row[j] = T(0);
          } else {
            T maxs = -std::numeric_limits<T>::infinity();
            for (int j = 0; j < S; ++j) {
              if (mask.at(i, j) && row[j] > maxs) maxs = row[j];
            }
            T denom = 0;
            for (int j = 0; j < S; ++j) {
              if (!mask.at(i, j)) {
                row[j] = T(0);
              } else {
                row[j] = std::exp(row[j] - maxs);
                denom += row[j];
              }
            }
            if (denom > T(0)) {
              const T inv_denom = T(1) / denom;
              for (int j = 0; j < S; ++j) row[j] *= inv_denom;
            }
          }
        }
        MapHead<T> ch(ctx + ho, S, hd, Eigen::OuterStride<>(D));
        MapCM<T> pmc(hp, S, S);
        ch.noalias() = pmc * vh;
      }

      // Output projection + residual; the pre-ffn residual is kept for the
      // ln2 backward pass.
      std::vector<T> attn_out(static_cast<size_t>(S) * D);
      linear_fwd(ctx, S, lw.wo, lw.bo, attn_out.data());
      T* x_att = tr.attn_res[l].data() + ex_off;
      for (size_t i = 0; i < attn_out.size(); ++i) x_att[i] = x_in[i] + attn_out[i];

      T* ln2 = tr.ln2_out[l].data() + ex_off;
      for (int t = 0; t < S; ++t) {
        detail::layernorm_row(x_att + static_cast<size_t>(t) * D, D, lw.ln2_gamma.ptr(),
                              lw.ln2_beta.ptr(), ln2 + static_cast<size_t>(t) * D,
                              &tr.ln2_mean[l][exs_off + t], &tr.ln2_rstd[l][exs_off + t]);
      }
      T* ff_pre = tr.ff_pre[l].data() + exf_off;
      T* ff_act = tr.ff_act[l].data() + exf_off;
      linear_fwd(ln2, S, lw.w_ff1, lw.b_ff1, ff_pre);
      for (int i = 0; i < S * F; ++i) ff_act[i] = detail::gelu(ff_pre[i]);
      std::vector<T> ff_out(static_cast<size_t>(S) * D);
      linear_fwd(ff_act, S, lw.w_ff2, lw.b_ff2, ff_out.data());
      for (size_t i = 0; i < ff_out.size(); ++i) x_next[i] = x_att[i] + ff_out[i];
    }

    const T* x_final = tr.xs[L].data() + ex_off;
    T* lnf = tr.lnf_out.data() + ex_off;
    for (int t = 0; t < S; ++t) {
      detail::layernorm_row(x_final + static_cast<size_t>(t) * D, D, weights.final_ln_gamma.ptr(),
                            weights.final_ln_beta.ptr(), lnf + static_cast<size_t>(t) * D,
                            &tr.lnf_mean[exs_off + t], &tr.lnf_rstd[exs_off + t]);
    }
    linear_fwd(lnf, S, weights.w_out, weights.b_out, logits.row(b, 0));
  }

  if (trace_out != nullptr) *trace_out = std::move(local);
  return logits;
}

namespace {

// dx for layernorm given dy, saved stats and the original input row.
template <typename T>
void layernorm_bwd_row(const T* x, const T* dy, int d, const T* gamma, T mean, T rstd,
                       TensorT<T>* dgamma, TensorT<T>* dbeta, T* dx) {
  T* dg = dgamma->ptr();
  T* db = dbeta->ptr();
  T sum_dxhat = 0, sum_dxhat_xhat = 0;
  for (int i = 0; i < d; ++i) {
    T xhat = (x[i] - mean) * rstd;
    T dxhat = dy[i] * gamma[i];
    dg[i] += dy[i] * xhat;
    db[i] += dy[i];
    sum_dxhat += dxhat;
    sum_dxhat_xhat += dxhat * xhat;
  }
  const T inv_d = T(1) / static_cast<T>(d);
  for (int i = 0; i < d; ++i) {
    T xhat = (x[i] - mean) * rstd;
    T dxhat = dy[i] * gamma[i];
    dx[i] = rstd * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
  }
}

}  // namespace

template <typename T>
void backward(const WeightsT<T>& weights, const std::vector<int>& tokens,
              int batch, int seq_len, const AttnMask& mask,
              const ForwardTraceT<T>& tr, const LogitsT<T>& dlogits,
              WeightsT<T>* grads) {
  const ModelConfig& cfg = weights.config;
  if (tr.batch != batch || tr.seq_len != seq_len) {
    throw std::invalid_argument("backward: trace does not match batch/seq_len");
  }
  const int S = seq_len, D = cfg.d_model, H = cfg.n_heads, hd = cfg.head_dim();
  const int F = cfg.d_ff, L = cfg.n_layers;
  const T inv_sqrt_hd = T(1) / std::sqrt(static_cast<T>(hd));

  std::vector<T> dx(static_cast<size_t>(S) * D);
  std::vector<T> dx_tmp(static_cast<size_t>(S) * D);
  std::vector<T> d_ln(static_cast<size_t>(S) * D);
  std::vector<T> d_ff_act(static_cast<size_t>(S) * F);
  std::vector<T> d_ff_pre(static_cast<size_t>(S) * F);
  std::vector<T> d_ctx(static_cast<size_t>(S) * D);
  std::vector<T> dq(static_cast<size_t>(S) * D);
  std::vector<T> dk(static_cast<size_t>(S) * D);
  std::vector<T> dv(static_cast<size_t>(S) * D);
  std::vector<T> dp_row(S);

  for (int b = 0; b < batch; ++b) {
    const size_t ex_off = static_cast<size_t>(b) * S * D;
    const size_t exf_off = static_cast<size_t>(b) * S * F;
    const size_t exs_off = static_cast<size_t>(b) * S;

    // Output head.
    const T* lnf = tr.lnf_out.data() + ex_off;
    linear_bwd(lnf, S, weights.w_out, dlogits.row(b, 0), &grads->w_out, &grads->b_out,
               d_ln.data());
    const T* x_final = tr.xs[L].data() + ex_off;
    for (int t = 0; t < S; ++t) {
      layernorm_bwd_row(x_final + static_cast<size_t>(t) * D,
                        d_ln.data() + static_cast<size_t>(t) * D, D,
                        weights.final_ln_gamma.ptr(), tr.lnf_mean[exs_off + t],
                        tr.lnf_rstd[exs_off + t], &grads->final_ln_gamma,
                        &grads->final_ln_beta, dx.data() + static_cast<size_t>(t) * D);
    }

    for (int l = L - 1; l >= 0; --l) {
      const LayerWeightsT<T>& lw = weights.layers[l];
      LayerWeightsT<T>& gw = grads->layers[l];
      const T* x_att = tr.attn_res[l].data() + ex_off;
      const T* ln2 = tr.ln2_out[l].data() + ex_off;
      const T* ff_pre = tr.ff_pre[l].data() + exf_off;
      const T* ff_act = tr.ff_act[l].data() + exf_off;

      // FFN block: x_out = x_att + W2(gelu(W1 ln2(x_att) + b1)) + b2.
      linear_bwd(ff_act, S, lw.w_ff2, dx.data(), &gw.w_ff2, &gw.b_ff2, d_ff_act.data());
      for (int i = 0; i < S * F; ++i) {
        d_ff_pre[i] = d_ff_act[i] * detail::gelu_grad(ff_pre[i]);
      }
      linear_bwd(ln2, S, lw.w_ff1, d_ff_pre.data(), &gw.w_ff1, &gw.b_ff1, d_ln.data());
      for (int t = 0; t < S; ++t) {
        layernorm_bwd_row(x_att + static_cast<size_t>(t) * D,
                          d_ln.data() + static_cast<size_t>(t) * D, D, lw.ln2_gamma.ptr(),
                          tr.ln2_mean[l][exs_off + t], tr.ln2_rstd[l][exs_off + t],
                          &gw.ln2_gamma, &gw.ln2_beta,
                          dx_tmp.data() + static_cast<size_t>(t) * D);
      }
      // Residual: gradient w.r.t. x_next accumulates the skip path.
      for (size_t i = 0; i < dx.size(); ++i) dx[i] += dx_tmp[i];

      // Attention block.
      const T* ctx = tr.ctx[l].data() + ex_off;
      linear_bwd(ctx, S, lw.wo, dx.data(), &gw.wo, &gw.bo, d_ctx.data());

      const T* q = tr.q[l].data() + ex_off;
      const T* k = tr.k[l].data() + ex_off;
      const T* v = tr.v[l].data() + ex_off;
      const T* probs = tr.probs[l].data() + static_cast<size_t>(b) * H * S * S;
      std::fill(dq.begin(), dq.end(), T(0));
      std::fill(dk.begin(), dk.end(), T(0));
      std::fill(dv.begin(), dv.end(), T(0));
      for (int h = 0; h < H; ++h) {
        const int ho = h * hd;
        const T* hp = probs + static_cast<size_t>(h) * S * S;
        for (int i = 0; i < S; ++i) {
          const T* dci = d_ctx.data() + static_cast<size_t>(i) * D + ho;
          const T* qi = q + static_cast<size_t>(i) * D + ho;
          T dot = 0;
          for (int j = 0; j < S; ++j) {
            if (!mask.at(i, j)) continue;
            const T p = hp[static_cast<size_t>(i) * S + j];
            const T* vj = v + static_cast<size_t>(j) * D + ho;
            T dp = 0;
            for (int c = 0; c < hd; ++c) dp += dci[c] * vj[c];
            dp_row[j] = dp;
            dot += p * dp;
            T* dvj = dv.data() + static_cast<size_t>(j) * D + ho;
            for (int c = 0; c < hd; ++c) dvj[c] += p * dci[c];
          }
          T* dqi = dq.data() + static_cast<size_t>(i) * D + ho;
          for (int j = 0; j < S; ++j) {
            if (!mask.at(i, j)) continue;
            const T p = hp[static_cast<size_t>(i) * S + j];
            const T ds = p * (dp_row[j] - dot) * inv_sqrt_hd;
            const T* kj = k + static_cast<size_t>(j) * D + ho;
            T* dkj = dk.data() + static_cast<size_t>(j) * D + ho;
            for (int c = 0; c < hd; ++c) {
              dqi[c] += ds * kj[c];
              dkj[c] += ds * qi[c];
            }
          }
        }
      }

      const T* ln1 = tr.ln1_out[l].data() + ex_off;
      linear_bwd(ln1, S, lw.wq, dq.data(), &gw.wq, &gw.bq, d_ln.data());
      {
        MapM<T> acc(d_ln.data(), S, D);
        linear_bwd(ln1, S, lw.wk, dk.data(), &gw.wk, &gw.bk, dx_tmp.data());
        acc += MapCM<T>(dx_tmp.data(), S, D);
        linear_bwd(ln1, S, lw.wv, dv.data(), &gw.wv, &gw.bv, dx_tmp.data());
        acc += MapCM<T>(dx_tmp.data(), S, D);
      }
      const T* x_in = tr.xs[l].data() + ex_off;
      for (int t = 0; t < S; ++t) {
        layernorm_bwd_row(x_in + static_cast<size_t>(t) * D,
                          d_ln.data() + static_cast<size_t>(t) * D, D, lw.ln1_gamma.ptr(),
                          tr.ln1_mean[l][exs_off + t], tr.ln1_rstd[l][exs_off + t],
                          &gw.ln1_gamma, &gw.ln1_beta,
                          dx_tmp.data() + static_cast<size_t>(t) * D);
      }
      for (size_t i = 0; i < dx.size(); ++i) dx[i] += dx_tmp[i];
    }

    // Embedding gradients.
    for (int t = 0; t < S; ++t) {
      const int tok = tokens[static_cast<size_t>(b) * S + t];
      T* dte = grads->token_embedding.ptr() + static_cast<size_t>(tok) * D;
      T* dpe = grads->position_embedding.ptr() + static_cast<size_t>(t) * D;
      const T* row = dx.data() + static_cast<size_t>(t) * D;
      for (int i = 0; i < D; ++i) {
        dte[i] += row[i];
        dpe[i] += row[i];
      }
    }
  }
}

template <typename T>
T backward(const WeightsT<T>& weights, const std::vector<int>& tokens, int batch,
           int seq_len, const AttnMask& mask,
           const std::function<T(const LogitsT<T>&, LogitsT<T>*)>& loss_fn,
           WeightsT<T>* grads) {
  ForwardTracePtr<T> trace;
  LogitsT<T> logits = forward(weights, tokens, batch, seq_len, mask, &trace);
  LogitsT<T> dlogits;
  dlogits.batch = logits.batch;
  dlogits.seq_len = logits.seq_len;
  dlogits.vocab = logits.vocab;
  dlogits.data.assign(logits.data.size(), T(0));
  T loss = loss_fn(logits, &dlogits);
  backward(weights, tokens, batch, seq_len, mask, *trace, dlogits, grads);
  return loss;
}

template <typename T>
void softmax_inplace(T* x, int n) {
  T maxv = x[0];
  for (int i = 1; i < n; ++i) maxv = std::max(maxv, x[i]);
  T denom = 0;
  for (int i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - maxv);
    denom += x[i];
  }
  const T inv = T(1) / denom;
  for (int i = 0; i < n; ++i) x[i] *= inv;
}

template <typename T>
int argmax_lowest(const T* x, int n) {
  int best = 0;
  for (int i = 1; i < n; ++i) {
    if (x[i] > x[best]) best = i;
  }
  return best;
}

template <typename T>
int sample_logits(const T* row, int vocab, double temperature, Rng& rng) {
  if (temperature < 0) throw std::invalid_argument("sample_logits: negative temperature");
  if (temperature == 0.0) return argmax_lowest(row, vocab);
  std::vector<T> probs(row, row + vocab);
  const T inv_t = T(1) / static_cast<T>(temperature);
  for (T& x : probs) x *= inv_t;
  softmax_inplace(probs.data(), vocab);
  const double u = rng.uniform01();
  double acc = 0;
  for (int v = 0; v < vocab; ++v) {
    acc += static_cast<double>(probs[v]);
    if (u < acc) return v;
  }
  return vocab - 1;  // guard against accumulated rounding
}

// Explicit instantiations: float for production, double for gradient checks.
#define ARDIFF_INSTANTIATE(T)                                                              \
  template struct WeightsT<T>;                                                             \
  template struct ForwardTraceT<T>;                                                        \
  template struct ForwardTraceDeleter<T>;                                                  \
  template WeightsT<T> zero_weights<T>(const ModelConfig&);                                \
  template WeightsT<T> init_weights<T>(const ModelConfig&);                                \
  template bool all_finite<T>(const WeightsT<T>&);                                         \
  template LogitsT<T> forward<T>(const WeightsT<T>&, const std::vector<int>&, int, int,    \
                                 const AttnMask&, ForwardTracePtr<T>*);                    \
  template void backward<T>(const WeightsT<T>&, const std::vector<int>&, int, int,         \
                            const AttnMask&, const ForwardTraceT<T>&, const LogitsT<T>&,   \
                            WeightsT<T>*);                                                 \
  template T backward<T>(const WeightsT<T>&, const std::vector<int>&, int, int,            \
                         const AttnMask&,                                                  \
                         const std::function<T(const LogitsT<T>&, LogitsT<T>*)>&,          \
                         WeightsT<T>*);                                                    \
  template void softmax_inplace<T>(T*, int);                                               \
  template int argmax_lowest<T>(const T*, int);                                            \
  template int sample_logits<T>(const T*, int, double, Rng&);

ARDIFF_INSTANTIATE(float)
ARDIFF_INSTANTIATE(double)

#undef ARDIFF_INSTANTIATE

}  // namespace ardiff
