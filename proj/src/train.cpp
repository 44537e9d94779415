#include "ardiff/train.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "ardiff/checkpoint.hpp"

namespace ardiff {

namespace fs = std::filesystem;
using nlohmann::json;

void DiffusionSettings::validate() const {
  if (unroll_temperature < 0) {
    throw std::invalid_argument("diffusion.unroll_temperature must be >= 0");
  }
  if (w1 < 0 || w2 < 0 || (w1 == 0 && w2 == 0)) {
    throw std::invalid_argument("diffusion loss weights must be >= 0 and not both zero");
  }
  if (replacement_min_id < 0) {
    throw std::invalid_argument("diffusion.replacement_min_id must be >= 0");
  }
}

namespace {

// Mean-over-masked-positions cross-entropy for one batch, optionally
// accumulating (softmax - onehot) into dlogits scaled by `weight`. With
// next_token set, the loss-masked position p is predicted from logits at
// p-1; otherwise logits at p predict position p itself.
template <typename T>
T masked_ce(const Batch& batch, const LogitsT<T>& logits, bool next_token, T weight,
            LogitsT<T>* dlogits) {
  const int B = batch.batch_size, S = batch.seq_len, V = logits.vocab;
  std::vector<T> probs(V);
  T total = 0;
  for (int b = 0; b < B; ++b) {
    int m = 0;
    for (int p = next_token ? 1 : 0; p < S; ++p) {
      if (batch.masked(b, p)) ++m;
    }
    if (m == 0) {
      throw std::invalid_argument("loss: example " + std::to_string(b) +
                                  " has an empty loss mask");
    }
    const T scale = weight / (static_cast<T>(m) * static_cast<T>(B));
    T ce = 0;
    for (int p = next_token ? 1 : 0; p < S; ++p) {
      if (!batch.masked(b, p)) continue;
      const int pos = next_token ? p - 1 : p;
      const int target = batch.token_at(b, p);
      const T* row = logits.row(b, pos);
      std::copy(row, row + V, probs.begin());
      softmax_inplace(probs.data(), V);
      ce -= std::log(probs[target]);
      if (dlogits != nullptr) {
        T* d = dlogits->row(b, pos);
        for (int v = 0; v < V; ++v) d[v] += probs[v] * scale;
        d[target] -= scale;
      }
    }
    total += ce / static_cast<T>(m);
  }
  return total / static_cast<T>(B);
}

template <typename T>
LogitsT<T> zeros_like(const LogitsT<T>& logits) {
  LogitsT<T> d;
  d.batch = logits.batch;
  d.seq_len = logits.seq_len;
  d.vocab = logits.vocab;
  d.data.assign(logits.data.size(), T(0));
  return d;
}

void check_batch(const Batch& batch) {
  if (batch.batch_size < 1 || batch.seq_len < 1) {
    throw std::invalid_argument("loss: empty batch");
  }
}

}  // namespace

template <typename T>
T ar_loss(const WeightsT<T>& weights, const Batch& batch, WeightsT<T>* grads) {
  check_batch(batch);
  const AttnMask mask = build_attention_mask(AttentionMode::causal(), batch.seq_len);
  if (grads == nullptr) {
    LogitsT<T> logits =
        forward(weights, batch.tokens, batch.batch_size, batch.seq_len, mask);
    return masked_ce<T>(batch, logits, /*next_token=*/true, T(1), nullptr);
  }
  ForwardTracePtr<T> trace;
  LogitsT<T> logits =
      forward(weights, batch.tokens, batch.batch_size, batch.seq_len, mask, &trace);
  LogitsT<T> dlogits = zeros_like(logits);
  T loss = masked_ce<T>(batch, logits, /*next_token=*/true, T(1), &dlogits);
  backward(weights, batch.tokens, batch.batch_size, batch.seq_len, mask, *trace, dlogits,
           grads);
  return loss;
}

std::vector<int> corrupt(const std::vector<int>& target_region, Rng& rng,
                         const DiffusionSettings& settings, int vocab_size) {
  settings.validate();
  if (target_region.empty()) {
    throw std::invalid_argument("corrupt: empty target region");
  }
  const int span = vocab_size - settings.replacement_min_id;
  if (span < 1) {
    throw std::invalid_argument("corrupt: replacement range [" +
                                std::to_string(settings.replacement_min_id) + ", " +
                                std::to_string(vocab_size) + ") is empty");
  }
  const double p = rng.uniform01();
  std::vector<int> out = target_region;
  for (int& tok : out) {
    if (rng.uniform01() < p) tok = settings.replacement_min_id + rng.uniform_int(span);
  }
  return out;
}

template <typename T>
T denoising_loss(const WeightsT<T>& weights, const Batch& batch, Rng& rng,
              const DiffusionSettings& settings, WeightsT<T>* grads,
              DenoisingDiagnostics<T>* diag, std::vector<int>* unroll_out,
              const std::vector<int>* forced_unroll) {
  check_batch(batch);
  settings.validate();
  const int B = batch.batch_size, S = batch.seq_len;
  const int V = weights.config.vocab_size;

  // Corrupt the target region of every example; everything outside the loss
  // mask stays clean.
  std::vector<int> corrupted = batch.tokens;
  std::vector<int> positions, region;
  for (int b = 0; b < B; ++b) {
    positions.clear();
    region.clear();
    for (int t = 0; t < S; ++t) {
      if (batch.masked(b, t)) {
        positions.push_back(t);
        region.push_back(batch.token_at(b, t));
      }
    }
    if (region.empty()) {
      throw std::invalid_argument("denoising_loss: example " + std::to_string(b) +
                                  " has an empty loss mask");
    }
    const std::vector<int> xc = corrupt(region, rng, settings, V);
    for (size_t i = 0; i < positions.size(); ++i) {
      corrupted[static_cast<size_t>(b) * S + positions[i]] = xc[i];
    }
  }

  const AttnMask mask =
      build_attention_mask(AttentionMode::full_bidirectional(), S);

  // First pass: denoise the corrupted input.
  ForwardTracePtr<T> tr1;
  LogitsT<T> l1 = forward(weights, corrupted, B, S, mask, grads ? &tr1 : nullptr);
  LogitsT<T> d1;
  if (grads != nullptr) d1 = zeros_like(l1);
  const T ce1 = masked_ce<T>(batch, l1, /*next_token=*/false, static_cast<T>(settings.w1),
                             grads ? &d1 : nullptr);

  // Unroll input: original tokens everywhere (input region frozen), with the
  // target region replaced by tokens sampled from the first pass.
  std::vector<int> unroll;
  if (forced_unroll != nullptr) {
    if (forced_unroll->size() != batch.tokens.size()) {
      throw std::invalid_argument("denoising_loss: forced unroll has wrong shape");
    }
    unroll = *forced_unroll;
  } else {
    unroll = batch.tokens;
    for (int b = 0; b < B; ++b) {
      for (int t = 0; t < S; ++t) {
        if (!batch.masked(b, t)) continue;
        unroll[static_cast<size_t>(b) * S + t] =
            sample_logits(l1.row(b, t), V, settings.unroll_temperature, rng);
      }
    }
  }
  if (unroll_out != nullptr) *unroll_out = unroll;

  // Second pass: denoise the model's own reconstruction. Gradients do not
  // flow through the sampled token identities.
  ForwardTracePtr<T> tr2;
  LogitsT<T> l2 = forward(weights, unroll, B, S, mask, grads ? &tr2 : nullptr);
  LogitsT<T> d2;
  if (grads != nullptr) d2 = zeros_like(l2);
  const T ce2 = masked_ce<T>(batch, l2, /*next_token=*/false, static_cast<T>(settings.w2),
                             grads ? &d2 : nullptr);

  if (grads != nullptr) {
    backward(weights, corrupted, B, S, mask, *tr1, d1, grads);
    backward(weights, unroll, B, S, mask, *tr2, d2, grads);
  }
  if (diag != nullptr) {
    diag->l1 = ce1;
    diag->l2 = ce2;
  }
  return static_cast<T>(settings.w1) * ce1 + static_cast<T>(settings.w2) * ce2;
}

template float ar_loss<float>(const WeightsT<float>&, const Batch&, WeightsT<float>*);
template double ar_loss<double>(const WeightsT<double>&, const Batch&, WeightsT<double>*);
template float denoising_loss<float>(const WeightsT<float>&, const Batch&, Rng&,
                                  const DiffusionSettings&, WeightsT<float>*,
                                  DenoisingDiagnostics<float>*, std::vector<int>*,
                                  const std::vector<int>*);
template double denoising_loss<double>(const WeightsT<double>&, const Batch&, Rng&,
                                    const DiffusionSettings&, WeightsT<double>*,
                                    DenoisingDiagnostics<double>*, std::vector<int>*,
                                    const std::vector<int>*);

// ---------------------------------------------------------------------------
// Optimizer

Adam::Adam(const ModelConfig& model, const AdamConfig& cfg)
    : config(cfg), m(zero_weights<float>(model)), v(zero_weights<float>(model)) {}

double Adam::lr_at(int64_t step_1based) const {
  if (config.warmup_steps > 0 && step_1based <= config.warmup_steps) {
    return config.lr * static_cast<double>(step_1based) /
           static_cast<double>(config.warmup_steps);
  }
  return config.lr;
}

void Adam::update(Weights* weights, const Weights& grads) {
  ++step;
  const float lr_t = static_cast<float>(lr_at(step));
  const float b1 = static_cast<float>(config.beta1);
  const float b2 = static_cast<float>(config.beta2);
  const float eps = static_cast<float>(config.eps);
  const float bc1 =
      static_cast<float>(1.0 - std::pow(config.beta1, static_cast<double>(step)));
  const float bc2 =
      static_cast<float>(1.0 - std::pow(config.beta2, static_cast<double>(step)));

  auto wt = weights->named_tensors();
  auto gt = grads.named_tensors();
  auto mt = m.named_tensors();
  auto vt = v.named_tensors();
  for (size_t i = 0; i < wt.size(); ++i) {
    float* w = wt[i].second->ptr();
    const float* g = gt[i].second->ptr();
    float* mi = mt[i].second->ptr();
    float* vi = vt[i].second->ptr();
    const size_t n = wt[i].second->data.size();
    for (size_t j = 0; j < n; ++j) {
      mi[j] = b1 * mi[j] + (1.0f - b1) * g[j];
      vi[j] = b2 * vi[j] + (1.0f - b2) * g[j] * g[j];
      const float mhat = mi[j] / bc1;
      const float vhat = vi[j] / bc2;
      w[j] -= lr_t * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

void Adam::save(const std::string& path) const {
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  for (const auto& [name, t] : m.named_tensors()) tensors.emplace_back("m." + name, t);
  for (const auto& [name, t] : v.named_tensors()) tensors.emplace_back("v." + name, t);
  save_tensors(path, m.config, tensors, json{{"adam_step", step}});
}

Adam Adam::load(const std::string& path, const AdamConfig& cfg) {
  LoadedTensors lt = load_tensors(path);
  Adam opt(lt.config, cfg);
  opt.step = lt.extra.at("adam_step").get<int64_t>();
  for (const std::string prefix : {"m.", "v."}) {
    Weights& dst = prefix == "m." ? opt.m : opt.v;
    for (auto& [name, t] : dst.named_tensors()) {
      const Tensor* src = lt.find(prefix + name);
      if (src == nullptr || src->shape != t->shape) {
        throw std::runtime_error("optimizer state missing tensor '" + prefix + name +
                                 "': " + path);
      }
      t->data = src->data;
    }
  }
  return opt;
}

// ---------------------------------------------------------------------------
// Stages

std::string stage_kind_name(StageKind kind) {
  return kind == StageKind::AR ? "ar" : "diffusion";
}

StageKind stage_kind_from_name(const std::string& name) {
  if (name == "ar") return StageKind::AR;
  if (name == "diffusion") return StageKind::Diffusion;
  throw std::invalid_argument("unknown stage kind: " + name + " (expected ar|diffusion)");
}

AttentionMode stage_attention_mode(StageKind kind) {
  return kind == StageKind::AR ? AttentionMode::causal()
                               : AttentionMode::full_bidirectional();
}

void StageConfig::validate() const {
  if (steps < 0) throw std::invalid_argument("stage.steps must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("stage.batch_size must be >= 1");
  if (seq_len < 2) throw std::invalid_argument("stage.seq_len must be >= 2");
  if (checkpoint_every < 0) throw std::invalid_argument("stage.checkpoint_every must be >= 0");
  if (name.empty()) throw std::invalid_argument("stage.name must be nonempty");
  if (kind == StageKind::Diffusion) diffusion.validate();
}

std::string optimizer_state_path(const std::string& ckpt_path) {
  fs::path p(ckpt_path);
  p.replace_extension(".opt");
  return p.string();
}

namespace {

std::string ckpt_path_for(const std::string& dir, const std::string& name, int64_t step) {
  return (fs::path(dir) / (name + "_" + std::to_string(step) + ".ckpt")).string();
}

void emit_checkpoint(const std::string& dir, const StageConfig& stage, int64_t step,
                     const Weights& w, const Adam& opt, const std::string& parent_hash) {
  const std::string stem = stage.name + "_" + std::to_string(step);
  const std::string ckpt = write_checkpoint(
      dir, stage.name, step, w, stage_attention_mode(stage.kind), stage.seed, parent_hash,
      json{{"optimizer_state", stem + ".opt"}, {"kind", stage_kind_name(stage.kind)}});
  opt.save(optimizer_state_path(ckpt));
}

}  // namespace

TrainResult train(const StageConfig& stage, const Weights& start, const BatchFn& data,
                  const std::string& out_dir, int64_t start_step,
                  const std::string& parent_hash) {
  stage.validate();
  start.config.validate();
  if (start_step < 0 || start_step > stage.steps) {
    throw std::invalid_argument("train: start_step out of range");
  }
  if (stage.seq_len > start.config.max_seq_len) {
    throw std::invalid_argument("train: stage.seq_len exceeds the model's max_seq_len");
  }
  fs::create_directories(out_dir);

  Weights weights = start;
  Adam opt(weights.config, stage.optimizer);
  if (start_step > 0) {
    opt = Adam::load(optimizer_state_path(ckpt_path_for(out_dir, stage.name, start_step)),
                     stage.optimizer);
    if (opt.step != start_step) {
      throw std::runtime_error("train: optimizer state step " + std::to_string(opt.step) +
                               " does not match resume step " + std::to_string(start_step));
    }
  }

  const std::string log_path = (fs::path(out_dir) / (stage.name + "_metrics.jsonl")).string();
  std::ofstream log(log_path, start_step > 0 ? std::ios::app : std::ios::trunc);
  if (!log) throw std::runtime_error("cannot open metrics log: " + log_path);

  TrainResult result;
  Weights grads = zero_weights<float>(weights.config);
  for (int64_t s = start_step; s < stage.steps; ++s) {
    const auto t0 = std::chrono::steady_clock::now();
    Batch batch = data(s);
    if (batch.batch_size != stage.batch_size || batch.seq_len != stage.seq_len) {
      throw std::invalid_argument("train: data stream shape [" +
                                  std::to_string(batch.batch_size) + ", " +
                                  std::to_string(batch.seq_len) +
                                  "] does not match the stage");
    }
    for (auto& [name, t] : grads.named_tensors()) t->fill(0.0f);

    float loss = 0;
    DenoisingDiagnostics<float> diag;
    if (stage.kind == StageKind::AR) {
      loss = ar_loss(weights, batch, &grads);
    } else {
      Rng rng(mix64(stage.seed, static_cast<uint64_t>(s)));
      loss = denoising_loss(weights, batch, rng, stage.diffusion, &grads, &diag);
    }
    if (!std::isfinite(loss)) {
      // Dump diagnostic state before aborting so the failure is inspectable.
      json dump{{"stage", stage.name}, {"step", s + 1},         {"loss", loss},
                {"L1", diag.l1},       {"L2", diag.l2},         {"seed", stage.seed},
                {"weights_finite", all_finite(weights)}};
      write_text_atomic((fs::path(out_dir) / (stage.name + "_nan_dump.json")).string(),
                        dump.dump(2) + "\n");
      save_weights((fs::path(out_dir) / (stage.name + "_nan_dump.ckpt")).string(), weights);
      throw std::runtime_error("train: non-finite loss at step " + std::to_string(s + 1) +
                               " (diagnostics in " + out_dir + ")");
    }

    opt.update(&weights, grads);
    result.losses.push_back(loss);

    const double wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
            .count();
    json row{{"step", s + 1},
             {"stage", stage.name},
             {"loss", loss},
             {"learning_rate", opt.lr_at(s + 1)},
             {"wall_ms", wall_ms}};
    if (stage.kind == StageKind::Diffusion) {
      row["L1"] = diag.l1;
      row["L2"] = diag.l2;
    }
    log << row.dump() << "\n";

    if (stage.checkpoint_every > 0 && (s + 1) % stage.checkpoint_every == 0 &&
        s + 1 < stage.steps) {
      emit_checkpoint(out_dir, stage, s + 1, weights, opt, parent_hash);
    }
  }
  log.flush();

  emit_checkpoint(out_dir, stage, stage.steps, weights, opt, parent_hash);
  result.weights = std::move(weights);
  result.final_checkpoint = ckpt_path_for(out_dir, stage.name, stage.steps);
  return result;
}

// ---------------------------------------------------------------------------
// Data streams

BatchFn corpus_stream(const Vocab& vocab, int batch_size, int seq_len, uint64_t seed) {
  if (seq_len < 4) throw std::invalid_argument("corpus_stream: seq_len must be >= 4");
  return [vocab, batch_size, seq_len, seed](int64_t step) {
    std::vector<TrainingExample> examples;
    examples.reserve(batch_size);
    for (int i = 0; i < batch_size; ++i) {
      const int64_t index = step * static_cast<int64_t>(batch_size) + i;
      std::vector<int> doc = vocab.tokenize(corpus_doc(seed, index));
      if (static_cast<int>(doc.size()) > seq_len - 2) doc.resize(seq_len - 2);
      if (doc.size() < 2) throw std::logic_error("corpus_stream: degenerate document");
      Rng rng(mix64(mix64(seed, 0x5eedb47cull), static_cast<uint64_t>(index)));
      const int max_split = std::min<int>(static_cast<int>(doc.size()) - 1, seq_len - 2);
      const int split = 1 + rng.uniform_int(max_split);
      examples.push_back(make_prefix_lm_example(doc, split, seq_len, seq_len - split - 1));
    }
    return make_batch(examples, batch_size, seq_len);
  };
}

BatchFn task_stream(const Vocab& vocab, const TaskSpec& task, int batch_size,
                    uint64_t seed, int64_t train_size) {
  if (train_size < 1) throw std::invalid_argument("task_stream: train_size must be >= 1");
  const int row_len = task_row_len(task);
  return [vocab, task, batch_size, seed, train_size, row_len](int64_t step) {
    std::vector<TrainingExample> examples;
    examples.reserve(batch_size);
    for (int i = 0; i < batch_size; ++i) {
      const int64_t pair_index =
          (step * static_cast<int64_t>(batch_size) + i) % train_size;
      const auto [src, tgt] = task_pair(task, seed, pair_index);
      examples.push_back(task_example(vocab, task, src, tgt, row_len));
    }
    return make_batch(examples, batch_size, row_len);
  };
}

// ---------------------------------------------------------------------------
// Pretrain -> adapt -> fine-tune pipeline

PipelineResult run_pipeline(const PipelinePlan& plan, const Vocab& vocab,
                          const std::string& out_dir) {
  plan.model.validate();
  if (plan.model.vocab_size != vocab.size()) {
    throw std::invalid_argument("run_pipeline: model vocab_size " +
                                std::to_string(plan.model.vocab_size) +
                                " does not match the vocabulary (" +
                                std::to_string(vocab.size()) + ")");
  }
  if (plan.adapt_steps < 0) throw std::invalid_argument("run_pipeline: adapt_steps must be >= 0");

  const std::string ancestor_dir = (fs::path(out_dir) / "ancestor").string();
  const std::string variant_dir =
      (fs::path(out_dir) / ("n" + std::to_string(plan.adapt_steps))).string();

  // Stage 1: AR pretrain with causal attention. All adaptation budgets under
  // the same out_dir reuse this checkpoint, so they share a bit-identical
  // ancestor.
  StageConfig s1;
  s1.kind = StageKind::AR;
  s1.name = "pretrain";
  s1.steps = plan.pretrain_steps;
  s1.batch_size = plan.batch_size;
  s1.seq_len = plan.corpus_seq_len;
  s1.checkpoint_every = plan.checkpoint_every;
  s1.optimizer = plan.optimizer;
  s1.seed = mix64(plan.seed, 1);

  std::string pretrain_ckpt = ckpt_path_for(ancestor_dir, "pretrain", plan.pretrain_steps);
  Weights weights;
  if (fs::exists(pretrain_ckpt) && fs::exists(checkpoint_meta_path(pretrain_ckpt))) {
    CheckpointMeta meta;
    weights = read_checkpoint(pretrain_ckpt, &meta);
    if (!(meta.attention_mode == AttentionMode::causal())) {
      throw std::runtime_error("run_pipeline: ancestor checkpoint " + pretrain_ckpt +
                               " is not an AR (causal) checkpoint");
    }
  } else {
    TrainResult r = train(s1, init_weights<float>(plan.model),
                          corpus_stream(vocab, plan.batch_size, plan.corpus_seq_len,
                                        mix64(plan.seed, 0xDA7A1ull)),
                          ancestor_dir);
    weights = std::move(r.weights);
    pretrain_ckpt = r.final_checkpoint;
  }
  const std::string pretrain_hash = file_hash(pretrain_ckpt);

  // Stage 2: continue pretraining with the diffusion objective for N steps
  // under bidirectional attention. N = 0 skips straight to fine-tuning.
  std::string adapt_ckpt = pretrain_ckpt;
  if (plan.adapt_steps > 0) {
    StageConfig s2 = s1;
    s2.kind = StageKind::Diffusion;
    s2.name = "adapt";
    s2.steps = plan.adapt_steps;
    s2.diffusion = plan.diffusion;
    s2.seed = mix64(plan.seed, 2);
    TrainResult r = train(s2, weights,
                          corpus_stream(vocab, plan.batch_size, plan.corpus_seq_len,
                                        mix64(plan.seed, 0xDA7A2ull)),
                          variant_dir, 0, pretrain_hash);
    weights = std::move(r.weights);
    adapt_ckpt = r.final_checkpoint;
  }
  const std::string adapt_hash = file_hash(adapt_ckpt);

  // Stage 3: diffusion fine-tune on the task.
  StageConfig s3;
  s3.kind = StageKind::Diffusion;
  s3.name = "finetune";
  s3.steps = plan.finetune_steps;
  s3.batch_size = plan.batch_size;
  s3.seq_len = task_row_len(plan.task);
  s3.checkpoint_every = plan.checkpoint_every;
  s3.optimizer = plan.optimizer;
  s3.diffusion = plan.diffusion;
  s3.seed = mix64(plan.seed, 3);
  TrainResult r3 = train(s3, weights,
                         task_stream(vocab, plan.task, plan.batch_size,
                                     mix64(plan.seed, 0xDA7A3ull), plan.task_train_size),
                         variant_dir, 0, adapt_hash);

  json manifest{
      {"model", config_to_json(plan.model)},
      {"task", plan.task.name()},
      {"adapt_steps", plan.adapt_steps},
      {"seed", plan.seed},
      {"stages",
       json::array(
           {json{{"name", "pretrain"},
                 {"kind", "ar"},
                 {"steps", plan.pretrain_steps},
                 {"data", "corpus:" + std::to_string(mix64(plan.seed, 0xDA7A1ull))},
                 {"checkpoint", pretrain_ckpt},
                 {"hash", pretrain_hash}},
            json{{"name", "adapt"},
                 {"kind", "diffusion"},
                 {"steps", plan.adapt_steps},
                 {"skipped", plan.adapt_steps == 0},
                 {"data", "corpus:" + std::to_string(mix64(plan.seed, 0xDA7A2ull))},
                 {"checkpoint", adapt_ckpt},
                 {"hash", adapt_hash}},
            json{{"name", "finetune"},
                 {"kind", "diffusion"},
                 {"steps", plan.finetune_steps},
                 {"data", "task:" + plan.task.name() + ":" +
                              std::to_string(mix64(plan.seed, 0xDA7A3ull))},
                 {"checkpoint", r3.final_checkpoint},
                 {"hash", file_hash(r3.final_checkpoint)}}})}};
  const std::string manifest_path =
      (fs::path(variant_dir) / "pipeline_manifest.json").string();
  write_text_atomic(manifest_path, manifest.dump(2) + "\n");

  PipelineResult result;
  result.weights = std::move(r3.weights);
  result.pretrain_ckpt = pretrain_ckpt;
  result.adapt_ckpt = adapt_ckpt;
  result.finetune_ckpt = r3.final_checkpoint;
  result.manifest_path = manifest_path;
  return result;
}

}  // namespace ardiff
