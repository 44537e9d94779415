#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include "json.hpp"

#include "ardiff/checkpoint.hpp"
#include "ardiff/config.hpp"
#include "ardiff/data.hpp"
#include "ardiff/decode.hpp"
#include "ardiff/eval.hpp"
#include "ardiff/model.hpp"
#include "ardiff/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ardiff;

namespace {

// Holds an advisory lock on <dir>/.lock for the life of the process so two
// runs cannot write the same checkpoint directory at once. Readers share.
class DirLock {
 public:
  DirLock(const std::string& dir, bool exclusive) {
    fs::create_directories(dir);
    path_ = (fs::path(dir) / ".lock").string();
    fd_ = ::open(path_.c_str(), O_CREAT | O_RDWR, 0644);
    if (fd_ < 0) {
      throw std::runtime_error("cannot open lock file " + path_ + ": " +
                               std::strerror(errno));
    }
    if (::flock(fd_, (exclusive ? LOCK_EX : LOCK_SH) | LOCK_NB) != 0) {
      ::close(fd_);
      fd_ = -1;
      throw std::runtime_error("checkpoint directory '" + dir +
                               "' is locked by another run");
    }
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;
  ~DirLock() {
    if (fd_ >= 0) {
      ::flock(fd_, LOCK_UN);
      ::close(fd_);
    }
  }

 private:
  int fd_ = -1;
  std::string path_;
};

using DirSnapshot = std::map<std::string, std::pair<uintmax_t, int64_t>>;

std::string canon(const fs::path& p) {
  std::error_code ec;
  fs::path c = fs::weakly_canonical(p, ec);
  return ec ? fs::absolute(p).lexically_normal().string() : c.string();
}

DirSnapshot snapshot_dirs(const std::vector<std::string>& dirs) {
  DirSnapshot snap;
  for (const std::string& dir : dirs) {
    if (!fs::exists(dir)) continue;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
      if (!entry.is_regular_file() || entry.path().filename() == ".lock") continue;
      snap[canon(entry.path())] = {entry.file_size(),
                                   entry.last_write_time().time_since_epoch().count()};
    }
  }
  return snap;
}

// Files that appeared or changed since `before`, each with its content hash;
// this is what the run manifest lists as produced artifacts.
std::vector<std::pair<std::string, std::string>> outputs_since(
    const DirSnapshot& before, const std::vector<std::string>& dirs) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [path, sig] : snapshot_dirs(dirs)) {
    auto it = before.find(path);
    if (it == before.end() || it->second != sig) out.emplace_back(path, file_hash(path));
  }
  return out;
}

// Shared command state: merged config, provenance being accumulated, and the
// pre-run directory snapshot that determines what the manifest lists.
struct Ctx {
  RunConfig cfg;
  std::string config_hash;
  Vocab vocab = Vocab::standard();
  std::vector<std::pair<std::string, std::string>> inputs;
  std::vector<std::pair<std::string, uint64_t>> seeds;
  std::vector<std::string> watch_dirs;
  DirSnapshot before;

  void start_watching() {
    watch_dirs = {cfg.paths.checkpoints, cfg.paths.logs, cfg.paths.reports};
    before = snapshot_dirs(watch_dirs);
  }

  std::string finish(const std::string& command) {
    RunManifest m;
    m.command = command;
    m.config_hash = config_hash;
    m.effective_config = run_config_to_json(cfg);
    m.inputs = inputs;
    m.outputs = outputs_since(before, watch_dirs);
    m.seeds = seeds;
    return write_run_manifest(cfg.paths.logs, m);
  }
};

// Flags shared by every subcommand.
struct CommonFlags {
  std::optional<std::string> config_path;
  std::optional<uint64_t> seed;
};

void add_common(CLI::App* sub, CommonFlags* f) {
  sub->add_option("--config", f->config_path, "JSON run configuration file");
  sub->add_option("--seed", f->seed, "master seed (config field: seed)");
}

Ctx make_ctx(const CommonFlags& f) {
  Ctx ctx;
  if (f.config_path) {
    ctx.cfg = load_config(*f.config_path);
    ctx.inputs.emplace_back(canon(*f.config_path), file_hash(*f.config_path));
  } else {
    ctx.cfg = default_run_config();
  }
  if (f.seed) ctx.cfg.seed = *f.seed;
  return ctx;
}

// Validation, path probing and the effective-config hash happen after every
// flag override has been applied.
void seal_config(Ctx* ctx) {
  ctx->cfg.validate();
  check_paths_writable(ctx->cfg.paths);
  ctx->config_hash = run_config_hash(ctx->cfg);
  if (const char* log = std::getenv("ARDIFF_LOG"); log && std::string(log) == "debug") {
    std::fprintf(stderr, "%s\n", run_config_to_json(ctx->cfg).dump(2).c_str());
  }
}

Weights load_from(Ctx* ctx, const std::string& path, CheckpointMeta* meta) {
  Weights w = read_checkpoint(path, meta);
  ctx->inputs.emplace_back(canon(path), file_hash(path));
  return w;
}

void require_mode(const char* command, const CheckpointMeta& meta,
                  const AttentionMode& expected) {
  if (meta.attention_mode != expected) {
    throw std::runtime_error(std::string(command) + ": checkpoint '" +
                             meta.weights_file + "' has attention mode " +
                             meta.attention_mode.to_string() + ", expected " +
                             expected.to_string());
  }
}

void require_text_vocab(const ModelConfig& model, const Vocab& vocab) {
  if (model.vocab_size < static_cast<int>(vocab.size())) {
    throw std::runtime_error("model vocab_size " + std::to_string(model.vocab_size) +
                             " is smaller than the " + std::to_string(vocab.size()) +
                             "-token text vocabulary");
  }
}

StageConfig base_stage(const RunConfig& cfg) {
  StageConfig s;
  s.batch_size = cfg.stages.batch_size;
  s.seq_len = cfg.stages.corpus_seq_len;
  s.checkpoint_every = cfg.stages.checkpoint_every;
  s.optimizer = cfg.optimizer;
  s.diffusion = cfg.diffusion;
  return s;
}

void report_stage(const StageConfig& s, const TrainResult& r) {
  std::printf("stage %s: %lld steps done, final loss %.6f\n", s.name.c_str(),
              static_cast<long long>(s.steps), r.losses.empty() ? 0.0 : r.losses.back());
  std::printf("checkpoint: %s\n", r.final_checkpoint.c_str());
}

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
      .count();
}

// ---- subcommands ----------------------------------------------------------

struct PretrainFlags {
  CommonFlags common;
  std::string kind = "ar";
  std::optional<int64_t> steps;
  std::optional<int> batch_size, seq_len;
  std::optional<int64_t> checkpoint_every;
};

int cmd_pretrain(const PretrainFlags& f) {
  Ctx ctx = make_ctx(f.common);
  RunConfig& cfg = ctx.cfg;
  if (f.steps) cfg.stages.pretrain_steps = *f.steps;
  if (f.batch_size) cfg.stages.batch_size = *f.batch_size;
  if (f.seq_len) cfg.stages.corpus_seq_len = *f.seq_len;
  if (f.checkpoint_every) cfg.stages.checkpoint_every = *f.checkpoint_every;
  seal_config(&ctx);
  require_text_vocab(cfg.model, ctx.vocab);

  DirLock lock(cfg.paths.checkpoints, /*exclusive=*/true);
  ctx.start_watching();

  StageConfig s = base_stage(cfg);
  s.kind = stage_kind_from_name(f.kind);
  s.name = "pretrain";
  s.steps = cfg.stages.pretrain_steps;
  s.seed = mix64(cfg.seed, 1);
  const uint64_t data_seed = mix64(cfg.seed, 0xDA7A1ull);
  ctx.seeds = {{"seed", cfg.seed}, {"stage_seed", s.seed}, {"data_seed", data_seed}};

  const Weights start = init_weights<float>(cfg.model);
  const TrainResult r = train(
      s, start, corpus_stream(ctx.vocab, s.batch_size, s.seq_len, data_seed),
      cfg.paths.checkpoints);
  report_stage(s, r);
  std::printf("manifest: %s\n", ctx.finish("pretrain").c_str());
  return 0;
}

struct AdaptFlags {
  CommonFlags common;
  std::string from;
  std::optional<int64_t> steps;
  std::optional<int> batch_size, seq_len;
  std::optional<int64_t> checkpoint_every;
};

int cmd_adapt(const AdaptFlags& f) {
  Ctx ctx = make_ctx(f.common);
  RunConfig& cfg = ctx.cfg;
  if (f.steps) cfg.stages.adapt_steps = *f.steps;
  if (f.batch_size) cfg.stages.batch_size = *f.batch_size;
  if (f.seq_len) cfg.stages.corpus_seq_len = *f.seq_len;
  if (f.checkpoint_every) cfg.stages.checkpoint_every = *f.checkpoint_every;
  seal_config(&ctx);

  DirLock lock(cfg.paths.checkpoints, /*exclusive=*/true);
  ctx.start_watching();

  CheckpointMeta meta;
  const Weights start = load_from(&ctx, f.from, &meta);
  require_mode("adapt", meta, AttentionMode::causal());
  require_text_vocab(start.config, ctx.vocab);

  const uint64_t stage_seed = mix64(cfg.seed, 2);
  const uint64_t data_seed = mix64(cfg.seed, 0xDA7A2ull);
  ctx.seeds = {{"seed", cfg.seed}, {"stage_seed", stage_seed}, {"data_seed", data_seed}};

  if (cfg.stages.adapt_steps == 0) {
    // Degenerate adaptation: the AR weights continue unchanged, only the
    // attention-mode metadata flips to diffusion's bidirectional mask.
    const std::string ckpt =
        write_checkpoint(cfg.paths.checkpoints, "adapt", 0, start,
                         AttentionMode::full_bidirectional(), stage_seed,
                         meta.weights_hash, json{{"kind", "adapt"}});
    std::printf("stage adapt: 0 steps, checkpoint copied with mode flipped\n");
    std::printf("checkpoint: %s\n", ckpt.c_str());
  } else {
    StageConfig s = base_stage(cfg);
    s.kind = StageKind::Diffusion;
    s.name = "adapt";
    s.steps = cfg.stages.adapt_steps;
    s.seed = stage_seed;
    const TrainResult r = train(
        s, start, corpus_stream(ctx.vocab, s.batch_size, s.seq_len, data_seed),
        cfg.paths.checkpoints, 0, meta.weights_hash);
    report_stage(s, r);
  }
  std::printf("manifest: %s\n", ctx.finish("adapt").c_str());
  return 0;
}

struct FinetuneFlags {
  CommonFlags common;
  std::string from;
  std::string kind = "diffusion";
  std::optional<std::string> task;
  std::optional<int64_t> steps, train_size;
  std::optional<int> batch_size;
  std::optional<int64_t> checkpoint_every;
};

int cmd_finetune(const FinetuneFlags& f) {
  Ctx ctx = make_ctx(f.common);
  RunConfig& cfg = ctx.cfg;
  if (f.task) cfg.task = TaskSpec::from_name(*f.task);
  if (f.steps) cfg.stages.finetune_steps = *f.steps;
  if (f.train_size) cfg.task_train_size = *f.train_size;
  if (f.batch_size) cfg.stages.batch_size = *f.batch_size;
  if (f.checkpoint_every) cfg.stages.checkpoint_every = *f.checkpoint_every;
  seal_config(&ctx);

  DirLock lock(cfg.paths.checkpoints, /*exclusive=*/true);
  ctx.start_watching();

  CheckpointMeta meta;
  const Weights start = load_from(&ctx, f.from, &meta);
  const StageKind kind = stage_kind_from_name(f.kind);
  require_mode("finetune", meta, stage_attention_mode(kind));
  require_text_vocab(start.config, ctx.vocab);

  StageConfig s = base_stage(cfg);
  s.kind = kind;
  s.name = "finetune";
  s.steps = cfg.stages.finetune_steps;
  s.seq_len = task_row_len(cfg.task);
  s.seed = mix64(cfg.seed, 3);
  const uint64_t data_seed = mix64(cfg.seed, 0xDA7A3ull);
  ctx.seeds = {{"seed", cfg.seed}, {"stage_seed", s.seed}, {"data_seed", data_seed}};

  const TrainResult r = train(
      s, start,
      task_stream(ctx.vocab, cfg.task, s.batch_size, data_seed, cfg.task_train_size),
      cfg.paths.checkpoints, 0, meta.weights_hash);
  report_stage(s, r);
  std::printf("manifest: %s\n", ctx.finish("finetune").c_str());
  return 0;
}

struct DecodeFlags {
  CommonFlags common;
  std::string from;
  std::string mode = "diffusion";
  std::string prompt;
  std::optional<int> num_steps, num_samples, target_window, max_new;
  std::optional<double> tau, temperature;
  std::optional<uint64_t> decode_seed;
};

int cmd_decode(const DecodeFlags& f) {
  Ctx ctx = make_ctx(f.common);
  RunConfig& cfg = ctx.cfg;
  if (f.num_steps) cfg.sampler.num_steps = *f.num_steps;
  if (f.num_samples) cfg.sampler.num_samples = *f.num_samples;
  if (f.tau) cfg.sampler.tau = *f.tau;
  if (f.target_window) cfg.sampler.target_window = *f.target_window;
  if (f.decode_seed) cfg.sampler.seed = *f.decode_seed;
  seal_config(&ctx);

  DirLock lock(cfg.paths.checkpoints, /*exclusive=*/false);
  ctx.start_watching();

  CheckpointMeta meta;
  const Weights weights = load_from(&ctx, f.from, &meta);
  require_text_vocab(weights.config, ctx.vocab);
  const DecoderKind kind = decoder_kind_from_name(f.mode);
  require_mode("decode", meta,
               kind == DecoderKind::AR ? AttentionMode::causal()
                                       : AttentionMode::full_bidirectional());
  ctx.seeds = {{"decode_seed", cfg.sampler.seed}};

  json response;
  const auto t0 = std::chrono::steady_clock::now();
  if (kind == DecoderKind::Diffusion) {
    const DecodeResult res =
        diffusion_decode(weights, ctx.vocab.tokenize(f.prompt), cfg.sampler);
    response["output"] = ctx.vocab.detokenize(strip_trailing_pads(res.winner()));
    json candidates = json::array(), scores = json::array();
    for (const auto& cand : res.candidates) {
      candidates.push_back(ctx.vocab.detokenize(strip_trailing_pads(cand)));
    }
    for (double sc : res.scores) scores.push_back(sc);
    response["candidates"] = candidates;
    response["scores"] = scores;
  } else {
    ArSettings ar;
    ar.temperature = f.temperature ? *f.temperature : 0.0;
    ar.seed = cfg.sampler.seed;
    std::vector<int> prompt = task_prompt(ctx.vocab, f.prompt);
    const int max_new = f.max_new ? *f.max_new : cfg.sampler.target_window;
    const std::vector<int> seq = ar_decode(weights, prompt, ar, max_new);
    response["output"] = ctx.vocab.detokenize(strip_trailing_pads(std::vector<int>(
        seq.begin() + static_cast<ptrdiff_t>(prompt.size()), seq.end())));
  }
  response["timing_ms"] = ms_since(t0);

  std::printf("%s\n", response.dump(2).c_str());
  ctx.finish("decode");
  return 0;
}

struct EvalFlags {
  CommonFlags common;
  std::string from;
  std::optional<std::string> mode, task, model_id;
  std::string stem = "eval";
  std::optional<int> n_examples, num_steps, num_samples;
  std::optional<double> tau, temperature;
  std::optional<uint64_t> data_seed, decode_seed;
  std::optional<int64_t> index_base;
};

EvalSettings eval_settings_of(const RunConfig& cfg, double ar_temperature) {
  EvalSettings s;
  s.sampler = cfg.sampler;
  s.ar.temperature = ar_temperature;
  s.ar.seed = cfg.sampler.seed;
  s.n_examples = cfg.eval.n_examples;
  s.data_seed = cfg.eval.data_seed;
  s.index_base = cfg.eval.index_base;
  return s;
}

int cmd_eval(const EvalFlags& f) {
  Ctx ctx = make_ctx(f.common);
  RunConfig& cfg = ctx.cfg;
  if (f.task) cfg.task = TaskSpec::from_name(*f.task);
  if (f.n_examples) cfg.eval.n_examples = *f.n_examples;
  if (f.num_steps) cfg.sampler.num_steps = *f.num_steps;
  if (f.num_samples) cfg.sampler.num_samples = *f.num_samples;
  if (f.tau) cfg.sampler.tau = *f.tau;
  if (f.data_seed) cfg.eval.data_seed = *f.data_seed;
  if (f.decode_seed) cfg.sampler.seed = *f.decode_seed;
  if (f.index_base) cfg.eval.index_base = *f.index_base;
  seal_config(&ctx);

  DirLock lock(cfg.paths.checkpoints, /*exclusive=*/false);
  ctx.start_watching();

  CheckpointMeta meta;
  const Weights weights = load_from(&ctx, f.from, &meta);
  require_text_vocab(weights.config, ctx.vocab);

  EvalSettings settings = eval_settings_of(cfg, f.temperature ? *f.temperature : 0.8);
  settings.mode = f.mode ? decoder_kind_from_name(*f.mode)
                         : (meta.attention_mode == AttentionMode::causal()
                                ? DecoderKind::AR
                                : DecoderKind::Diffusion);
  require_mode("eval", meta,
               settings.mode == DecoderKind::AR ? AttentionMode::causal()
                                                : AttentionMode::full_bidirectional());
  settings.model_id =
      f.model_id ? *f.model_id : fs::path(f.from).stem().string();
  ctx.seeds = {{"decode_seed", cfg.sampler.seed}, {"data_seed", cfg.eval.data_seed}};

  Report report;
  report.config_hash = ctx.config_hash;
  report.seeds = ctx.seeds;
  report.metrics = evaluate(weights, ctx.vocab, cfg.task, settings);
  std::printf("%s", metrics_to_csv(report.metrics).c_str());
  for (const std::string& path : write_report(cfg.paths.reports, f.stem, report)) {
    std::printf("report: %s\n", path.c_str());
  }
  std::printf("manifest: %s\n", ctx.finish("eval").c_str());
  return 0;
}

struct SweepFlags {
  CommonFlags common;
  std::string from;
  std::optional<std::string> task, model_id;
  std::string stem = "sweep";
  std::vector<int> steps_grid = {5, 10, 20};
  std::vector<int> samples_grid = {4, 8, 16};
  std::optional<int> n_examples;
  std::optional<double> tau;
  std::optional<uint64_t> data_seed, decode_seed;
  std::optional<int64_t> index_base;
};

int cmd_sweep(const SweepFlags& f) {
  Ctx ctx = make_ctx(f.common);
  RunConfig& cfg = ctx.cfg;
  if (f.task) cfg.task = TaskSpec::from_name(*f.task);
  if (f.n_examples) cfg.eval.n_examples = *f.n_examples;
  if (f.tau) cfg.sampler.tau = *f.tau;
  if (f.data_seed) cfg.eval.data_seed = *f.data_seed;
  if (f.decode_seed) cfg.sampler.seed = *f.decode_seed;
  if (f.index_base) cfg.eval.index_base = *f.index_base;
  seal_config(&ctx);

  DirLock lock(cfg.paths.checkpoints, /*exclusive=*/false);
  ctx.start_watching();

  CheckpointMeta meta;
  const Weights weights = load_from(&ctx, f.from, &meta);
  require_text_vocab(weights.config, ctx.vocab);
  require_mode("sweep", meta, AttentionMode::full_bidirectional());

  EvalSettings settings = eval_settings_of(cfg, 0.8);
  settings.mode = DecoderKind::Diffusion;
  settings.model_id =
      f.model_id ? *f.model_id : fs::path(f.from).stem().string();
  ctx.seeds = {{"decode_seed", cfg.sampler.seed}, {"data_seed", cfg.eval.data_seed}};

  Report report;
  report.config_hash = ctx.config_hash;
  report.seeds = ctx.seeds;
  report.metrics =
      sweep(weights, ctx.vocab, cfg.task, f.steps_grid, f.samples_grid, settings);
  std::printf("%s", metrics_to_csv(report.metrics).c_str());
  for (const std::string& path : write_report(cfg.paths.reports, f.stem, report)) {
    std::printf("report: %s\n", path.c_str());
  }
  std::printf("manifest: %s\n", ctx.finish("sweep").c_str());
  return 0;
}

struct BenchFlags {
  CommonFlags common;
  std::optional<std::string> from;
  std::string stem = "bench";
  std::vector<int> lengths;
  std::optional<int> num_steps, reps, warmup;
  std::optional<double> tau;
};

int cmd_bench(const BenchFlags& f) {
  Ctx ctx = make_ctx(f.common);
  RunConfig& cfg = ctx.cfg;
  if (!f.lengths.empty()) cfg.bench.lengths = f.lengths;
  if (f.num_steps) cfg.bench.num_steps = *f.num_steps;
  if (f.reps) cfg.bench.reps = *f.reps;
  if (f.warmup) cfg.bench.warmup = *f.warmup;
  if (f.tau) cfg.bench.tau = *f.tau;
  if (f.common.seed) cfg.bench.seed = *f.common.seed;
  seal_config(&ctx);

  DirLock lock(cfg.paths.checkpoints, /*exclusive=*/false);
  ctx.start_watching();

  Weights weights;
  if (f.from) {
    CheckpointMeta meta;
    weights = load_from(&ctx, *f.from, &meta);
  } else {
    // Timing depends only on shapes, so a freshly initialized model of the
    // configured size is a valid benchmark subject.
    weights = init_weights<float>(cfg.model);
  }
  ctx.seeds = {{"bench_seed", cfg.bench.seed}};

  Report report;
  report.config_hash = ctx.config_hash;
  report.seeds = ctx.seeds;
  report.latency = latency_benchmark(weights, cfg.bench);
  std::printf("%s", latency_to_csv(report.latency).c_str());
  for (const std::string& path : write_report(cfg.paths.reports, f.stem, report)) {
    std::printf("report: %s\n", path.c_str());
  }
  std::printf("manifest: %s\n", ctx.finish("bench").c_str());
  return 0;
}

std::string one_line(std::string msg) {
  for (char& c : msg) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return msg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ardiff: one transformer stack, autoregressive and diffusion text "
               "generation"};
  app.require_subcommand(1);

  PretrainFlags pre;
  CLI::App* pre_cmd = app.add_subcommand(
      "pretrain", "Train a model from scratch on the synthetic corpus");
  add_common(pre_cmd, &pre.common);
  pre_cmd->add_option("--kind", pre.kind, "training objective: ar | diffusion")
      ->check(CLI::IsMember({"ar", "diffusion"}));
  pre_cmd->add_option("--steps", pre.steps, "updates (stages.pretrain_steps)");
  pre_cmd->add_option("--batch-size", pre.batch_size, "examples per update");
  pre_cmd->add_option("--seq-len", pre.seq_len, "row width (stages.corpus_seq_len)");
  pre_cmd->add_option("--checkpoint-every", pre.checkpoint_every,
                      "periodic checkpoint interval; 0 = final only");

  AdaptFlags adp;
  CLI::App* adp_cmd = app.add_subcommand(
      "adapt", "Continue an AR checkpoint as diffusion pretraining");
  add_common(adp_cmd, &adp.common);
  adp_cmd->add_option("--from", adp.from, "AR (causal) checkpoint to adapt")->required();
  adp_cmd->add_option("--steps", adp.steps,
                      "adaptation updates; 0 copies the checkpoint with the "
                      "attention mode flipped (stages.adapt_steps)");
  adp_cmd->add_option("--batch-size", adp.batch_size, "examples per update");
  adp_cmd->add_option("--seq-len", adp.seq_len, "row width (stages.corpus_seq_len)");
  adp_cmd->add_option("--checkpoint-every", adp.checkpoint_every,
                      "periodic checkpoint interval; 0 = final only");

  FinetuneFlags fin;
  CLI::App* fin_cmd =
      app.add_subcommand("finetune", "Fine-tune a checkpoint on a synthetic task");
  add_common(fin_cmd, &fin.common);
  fin_cmd->add_option("--from", fin.from, "checkpoint to fine-tune")->required();
  fin_cmd->add_option("--kind", fin.kind,
                      "objective: ar | diffusion; must match the checkpoint's "
                      "attention mode")
      ->check(CLI::IsMember({"ar", "diffusion"}));
  fin_cmd->add_option("--task", fin.task, "copy | reverse | cipher | pycode");
  fin_cmd->add_option("--steps", fin.steps, "updates (stages.finetune_steps)");
  fin_cmd->add_option("--train-size", fin.train_size,
                      "distinct training pairs to cycle (task.train_size)");
  fin_cmd->add_option("--batch-size", fin.batch_size, "examples per update");
  fin_cmd->add_option("--checkpoint-every", fin.checkpoint_every,
                      "periodic checkpoint interval; 0 = final only");

  DecodeFlags dec;
  CLI::App* dec_cmd = app.add_subcommand("decode", "Generate from a checkpoint");
  add_common(dec_cmd, &dec.common);
  dec_cmd->add_option("--from", dec.from, "checkpoint to decode with")->required();
  dec_cmd->add_option("--mode", dec.mode, "decoder: ar | diffusion")
      ->check(CLI::IsMember({"ar", "diffusion"}));
  dec_cmd->add_option("--prompt", dec.prompt, "source text; a separator is appended")
      ->required();
  dec_cmd->add_option("--num-steps", dec.num_steps,
                      "denoising steps (sampler.num_steps)");
  dec_cmd->add_option("--num-samples", dec.num_samples,
                      "parallel candidates (sampler.num_samples)");
  dec_cmd->add_option("--tau", dec.tau, "resampling temperature (sampler.tau)");
  dec_cmd->add_option("--target-window", dec.target_window,
                      "generated window length (sampler.target_window)");
  dec_cmd->add_option("--temperature", dec.temperature,
                      "AR sampling temperature; 0 = greedy");
  dec_cmd->add_option("--max-new", dec.max_new,
                      "AR generation budget; defaults to the target window");
  dec_cmd->add_option("--decode-seed", dec.decode_seed, "sampler.seed override");

  EvalFlags evl;
  CLI::App* evl_cmd =
      app.add_subcommand("eval", "Score a checkpoint on a task's held-out split");
  add_common(evl_cmd, &evl.common);
  evl_cmd->add_option("--from", evl.from, "checkpoint to evaluate")->required();
  evl_cmd->add_option("--mode", evl.mode,
                      "decoder: ar | diffusion; defaults to the checkpoint's mode")
      ->check(CLI::IsMember({"ar", "diffusion"}));
  evl_cmd->add_option("--task", evl.task, "copy | reverse | cipher | pycode");
  evl_cmd->add_option("--n-examples", evl.n_examples, "split size (eval.n_examples)");
  evl_cmd->add_option("--num-steps", evl.num_steps, "sampler.num_steps");
  evl_cmd->add_option("--num-samples", evl.num_samples, "sampler.num_samples");
  evl_cmd->add_option("--tau", evl.tau, "sampler.tau");
  evl_cmd->add_option("--temperature", evl.temperature,
                      "AR pass@k sampling temperature (default 0.8)");
  evl_cmd->add_option("--data-seed", evl.data_seed, "eval.data_seed");
  evl_cmd->add_option("--decode-seed", evl.decode_seed, "sampler.seed");
  evl_cmd->add_option("--index-base", evl.index_base, "eval.index_base");
  evl_cmd->add_option("--model-id", evl.model_id,
                      "id echoed in reports; defaults to the checkpoint stem");
  evl_cmd->add_option("--stem", evl.stem, "report file stem");

  SweepFlags swp;
  CLI::App* swp_cmd = app.add_subcommand(
      "sweep", "Exact-match grid over diffusion (num_steps, num_samples)");
  add_common(swp_cmd, &swp.common);
  swp_cmd->add_option("--from", swp.from, "diffusion checkpoint")->required();
  swp_cmd->add_option("--task", swp.task, "copy | reverse | cipher | pycode");
  swp_cmd->add_option("--steps-grid", swp.steps_grid, "num_steps grid")
      ->delimiter(',');
  swp_cmd->add_option("--samples-grid", swp.samples_grid, "num_samples grid")
      ->delimiter(',');
  swp_cmd->add_option("--n-examples", swp.n_examples, "split size (eval.n_examples)");
  swp_cmd->add_option("--tau", swp.tau, "sampler.tau");
  swp_cmd->add_option("--data-seed", swp.data_seed, "eval.data_seed");
  swp_cmd->add_option("--decode-seed", swp.decode_seed, "sampler.seed");
  swp_cmd->add_option("--index-base", swp.index_base, "eval.index_base");
  swp_cmd->add_option("--model-id", swp.model_id,
                      "id echoed in reports; defaults to the checkpoint stem");
  swp_cmd->add_option("--stem", swp.stem, "report file stem");

  BenchFlags bch;
  CLI::App* bch_cmd = app.add_subcommand(
      "bench", "Wall-clock latency: AR tokens vs diffusion steps across lengths");
  add_common(bch_cmd, &bch.common);
  bch_cmd->add_option("--from", bch.from,
                      "checkpoint to time; defaults to a fresh model of the "
                      "configured size");
  bch_cmd->add_option("--lengths", bch.lengths, "sequence lengths (bench.lengths)")
      ->delimiter(',');
  bch_cmd->add_option("--num-steps", bch.num_steps, "bench.num_steps");
  bch_cmd->add_option("--reps", bch.reps, "timed repetitions (bench.reps)");
  bch_cmd->add_option("--warmup", bch.warmup, "untimed runs first (bench.warmup)");
  bch_cmd->add_option("--tau", bch.tau, "bench.tau");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (pre_cmd->parsed()) return cmd_pretrain(pre);
    if (adp_cmd->parsed()) return cmd_adapt(adp);
    if (fin_cmd->parsed()) return cmd_finetune(fin);
    if (dec_cmd->parsed()) return cmd_decode(dec);
    if (evl_cmd->parsed()) return cmd_eval(evl);
    if (swp_cmd->parsed()) return cmd_sweep(swp);
    if (bch_cmd->parsed()) return cmd_bench(bch);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", one_line(e.what()).c_str());
    return 1;
  }
  std::fprintf(stderr, "error: no subcommand selected\n");
  return 1;
}
