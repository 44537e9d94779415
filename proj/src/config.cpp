#include "ardiff/config.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <set>
#include <stdexcept>

#include "ardiff/checkpoint.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ardiff {

namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::invalid_argument("config: " + msg);
}

void check_keys(const json& j, const std::string& prefix,
                std::initializer_list<const char*> allowed) {
  for (const auto& item : j.items()) {
    const std::string& key = item.key();
    if (std::find_if(allowed.begin(), allowed.end(),
                     [&key](const char* a) { return key == a; }) == allowed.end()) {
      fail("unknown key '" + (prefix.empty() ? key : prefix + "." + key) + "'");
    }
  }
}

const json* maybe(const json& j, const char* key) {
  auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

void get_i64(const json& j, const std::string& path, const char* key, int64_t* out) {
  if (const json* f = maybe(j, key)) {
    if (!f->is_number_integer()) fail("field '" + path + "' must be an integer");
    *out = f->get<int64_t>();
  }
}

void get_int(const json& j, const std::string& path, const char* key, int* out) {
  int64_t v = *out;
  get_i64(j, path, key, &v);
  if (v < INT32_MIN || v > INT32_MAX) fail("field '" + path + "' is out of range");
  *out = static_cast<int>(v);
}

void get_u64(const json& j, const std::string& path, const char* key, uint64_t* out) {
  if (const json* f = maybe(j, key)) {
    if (!f->is_number_unsigned() &&
        !(f->is_number_integer() && f->get<int64_t>() >= 0)) {
      fail("field '" + path + "' must be a non-negative integer");
    }
    *out = f->get<uint64_t>();
  }
}

void get_f64(const json& j, const std::string& path, const char* key, double* out) {
  if (const json* f = maybe(j, key)) {
    if (!f->is_number()) fail("field '" + path + "' must be a number");
    *out = f->get<double>();
  }
}

void get_str(const json& j, const std::string& path, const char* key, std::string* out) {
  if (const json* f = maybe(j, key)) {
    if (!f->is_string()) fail("field '" + path + "' must be a string");
    *out = f->get<std::string>();
  }
}

void get_int_list(const json& j, const std::string& path, const char* key,
                  std::vector<int>* out) {
  if (const json* f = maybe(j, key)) {
    if (!f->is_array()) fail("field '" + path + "' must be an array of integers");
    std::vector<int> v;
    for (const json& e : *f) {
      if (!e.is_number_integer()) fail("field '" + path + "' must be an array of integers");
      v.push_back(e.get<int>());
    }
    *out = std::move(v);
  }
}

}  // namespace

void RunConfig::validate() const {
  try {
    model.validate();
  } catch (const std::invalid_argument& e) {
    // "ModelConfig: d_model must be positive" -> "config: model.d_model ..."
    std::string msg = e.what();
    const std::string prefix = "ModelConfig: ";
    if (msg.rfind(prefix, 0) == 0) msg = msg.substr(prefix.size());
    fail("model." + msg);
  }
  try {
    diffusion.validate();
    sampler.validate();
  } catch (const std::invalid_argument& e) {
    fail(e.what());  // both already name dotted field paths
  }

  if (stages.pretrain_steps < 0) fail("stages.pretrain_steps must be >= 0");
  if (stages.adapt_steps < 0) fail("stages.adapt_steps must be >= 0");
  if (stages.finetune_steps < 0) fail("stages.finetune_steps must be >= 0");
  if (stages.batch_size < 1) fail("stages.batch_size must be >= 1");
  if (stages.corpus_seq_len < 4) fail("stages.corpus_seq_len must be >= 4");
  if (stages.corpus_seq_len > model.max_seq_len) {
    fail("stages.corpus_seq_len exceeds model.max_seq_len");
  }
  if (stages.checkpoint_every < 0) fail("stages.checkpoint_every must be >= 0");

  if (optimizer.lr <= 0) fail("optimizer.lr must be positive");
  if (optimizer.beta1 < 0 || optimizer.beta1 >= 1) fail("optimizer.beta1 must be in [0, 1)");
  if (optimizer.beta2 < 0 || optimizer.beta2 >= 1) fail("optimizer.beta2 must be in [0, 1)");
  if (optimizer.eps <= 0) fail("optimizer.eps must be positive");
  if (optimizer.warmup_steps < 0) fail("optimizer.warmup_steps must be >= 0");

  if (task.min_len < 1) fail("task.min_len must be >= 1");
  if (task.max_len < task.min_len) fail("task.max_len must be >= task.min_len");
  if (task.target_len < 1) fail("task.target_len must be >= 1");
  if (task_train_size < 1) fail("task.train_size must be >= 1");
  if (task_row_len(task) > model.max_seq_len) {
    fail("task rows of " + std::to_string(task_row_len(task)) +
         " tokens exceed model.max_seq_len " + std::to_string(model.max_seq_len));
  }

  if (eval.n_examples < 1) fail("eval.n_examples must be >= 1");
  if (eval.index_base < 0) fail("eval.index_base must be >= 0");

  if (bench.lengths.empty()) fail("bench.lengths must not be empty");
  for (int length : bench.lengths) {
    if (length < 1) fail("bench.lengths must be positive");
  }
  if (bench.num_steps < 1) fail("bench.num_steps must be >= 1");
  if (bench.tau < 0) fail("bench.tau must be >= 0");
  if (bench.reps < 3) fail("bench.reps must be >= 3");
  if (bench.warmup < 0) fail("bench.warmup must be >= 0");

  if (paths.checkpoints.empty()) fail("paths.checkpoints must be nonempty");
  if (paths.logs.empty()) fail("paths.logs must be nonempty");
  if (paths.reports.empty()) fail("paths.reports must be nonempty");
}

RunConfig default_run_config() {
  RunConfig c;
  c.model.vocab_size = static_cast<int>(Vocab::standard().size());
  c.model.d_model = 128;
  c.model.n_layers = 6;
  c.model.n_heads = 8;
  c.model.d_ff = 512;
  c.model.max_seq_len = 64;
  return c;
}

json run_config_to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["model"] = {{"vocab_size", c.model.vocab_size}, {"d_model", c.model.d_model},
                {"n_layers", c.model.n_layers},     {"n_heads", c.model.n_heads},
                {"d_ff", c.model.d_ff},             {"max_seq_len", c.model.max_seq_len},
                {"seed", c.model.seed}};
  j["stages"] = {{"pretrain_steps", c.stages.pretrain_steps},
                 {"adapt_steps", c.stages.adapt_steps},
                 {"finetune_steps", c.stages.finetune_steps},
                 {"batch_size", c.stages.batch_size},
                 {"corpus_seq_len", c.stages.corpus_seq_len},
                 {"checkpoint_every", c.stages.checkpoint_every}};
  j["optimizer"] = {{"lr", c.optimizer.lr},
                    {"beta1", c.optimizer.beta1},
                    {"beta2", c.optimizer.beta2},
                    {"eps", c.optimizer.eps},
                    {"warmup_steps", c.optimizer.warmup_steps}};
  j["diffusion"] = {{"unroll_temperature", c.diffusion.unroll_temperature},
                    {"w1", c.diffusion.w1},
                    {"w2", c.diffusion.w2},
                    {"replacement_min_id", c.diffusion.replacement_min_id}};
  j["sampler"] = {{"num_steps", c.sampler.num_steps},
                  {"num_samples", c.sampler.num_samples},
                  {"tau", c.sampler.tau},
                  {"target_window", c.sampler.target_window},
                  {"seed", c.sampler.seed},
                  {"sample_min_id", c.sampler.sample_min_id}};
  j["task"] = {{"name", c.task.name()},       {"min_len", c.task.min_len},
               {"max_len", c.task.max_len},   {"perm_seed", c.task.perm_seed},
               {"target_len", c.task.target_len}, {"train_size", c.task_train_size}};
  j["eval"] = {{"n_examples", c.eval.n_examples},
               {"data_seed", c.eval.data_seed},
               {"index_base", c.eval.index_base}};
  j["bench"] = {{"lengths", c.bench.lengths}, {"num_steps", c.bench.num_steps},
                {"tau", c.bench.tau},         {"reps", c.bench.reps},
                {"warmup", c.bench.warmup},   {"seed", c.bench.seed}};
  j["paths"] = {{"checkpoints", c.paths.checkpoints},
                {"logs", c.paths.logs},
                {"reports", c.paths.reports}};
  return j;
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) fail("document root must be a JSON object");
  check_keys(j, "", {"seed", "model", "stages", "optimizer", "diffusion", "sampler",
                     "task", "eval", "bench", "paths"});
  RunConfig c = default_run_config();
  get_u64(j, "seed", "seed", &c.seed);

  if (const json* m = maybe(j, "model")) {
    if (!m->is_object()) fail("field 'model' must be an object");
    check_keys(*m, "model",
               {"vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_seq_len",
                "seed"});
    get_int(*m, "model.vocab_size", "vocab_size", &c.model.vocab_size);
    get_int(*m, "model.d_model", "d_model", &c.model.d_model);
    get_int(*m, "model.n_layers", "n_layers", &c.model.n_layers);
    get_int(*m, "model.n_heads", "n_heads", &c.model.n_heads);
    get_int(*m, "model.d_ff", "d_ff", &c.model.d_ff);
    get_int(*m, "model.max_seq_len", "max_seq_len", &c.model.max_seq_len);
    get_u64(*m, "model.seed", "seed", &c.model.seed);
  }

  if (const json* s = maybe(j, "stages")) {
    if (!s->is_object()) fail("field 'stages' must be an object");
    check_keys(*s, "stages",
               {"pretrain_steps", "adapt_steps", "finetune_steps", "batch_size",
                "corpus_seq_len", "checkpoint_every"});
    get_i64(*s, "stages.pretrain_steps", "pretrain_steps", &c.stages.pretrain_steps);
    get_i64(*s, "stages.adapt_steps", "adapt_steps", &c.stages.adapt_steps);
    get_i64(*s, "stages.finetune_steps", "finetune_steps", &c.stages.finetune_steps);
    get_int(*s, "stages.batch_size", "batch_size", &c.stages.batch_size);
    get_int(*s, "stages.corpus_seq_len", "corpus_seq_len", &c.stages.corpus_seq_len);
    get_i64(*s, "stages.checkpoint_every", "checkpoint_every",
            &c.stages.checkpoint_every);
  }

  if (const json* o = maybe(j, "optimizer")) {
    if (!o->is_object()) fail("field 'optimizer' must be an object");
    check_keys(*o, "optimizer", {"lr", "beta1", "beta2", "eps", "warmup_steps"});
    get_f64(*o, "optimizer.lr", "lr", &c.optimizer.lr);
    get_f64(*o, "optimizer.beta1", "beta1", &c.optimizer.beta1);
    get_f64(*o, "optimizer.beta2", "beta2", &c.optimizer.beta2);
    get_f64(*o, "optimizer.eps", "eps", &c.optimizer.eps);
    get_i64(*o, "optimizer.warmup_steps", "warmup_steps", &c.optimizer.warmup_steps);
  }

  if (const json* d = maybe(j, "diffusion")) {
    if (!d->is_object()) fail("field 'diffusion' must be an object");
    check_keys(*d, "diffusion", {"unroll_temperature", "w1", "w2", "replacement_min_id"});
    get_f64(*d, "diffusion.unroll_temperature", "unroll_temperature",
            &c.diffusion.unroll_temperature);
    get_f64(*d, "diffusion.w1", "w1", &c.diffusion.w1);
    get_f64(*d, "diffusion.w2", "w2", &c.diffusion.w2);
    get_int(*d, "diffusion.replacement_min_id", "replacement_min_id",
            &c.diffusion.replacement_min_id);
  }

  if (const json* s = maybe(j, "sampler")) {
    if (!s->is_object()) fail("field 'sampler' must be an object");
    check_keys(*s, "sampler",
               {"num_steps", "num_samples", "tau", "target_window", "seed",
                "sample_min_id"});
    get_int(*s, "sampler.num_steps", "num_steps", &c.sampler.num_steps);
    get_int(*s, "sampler.num_samples", "num_samples", &c.sampler.num_samples);
    get_f64(*s, "sampler.tau", "tau", &c.sampler.tau);
    get_int(*s, "sampler.target_window", "target_window", &c.sampler.target_window);
    get_u64(*s, "sampler.seed", "seed", &c.sampler.seed);
    get_int(*s, "sampler.sample_min_id", "sample_min_id", &c.sampler.sample_min_id);
  }

  if (const json* t = maybe(j, "task")) {
    if (!t->is_object()) fail("field 'task' must be an object");
    check_keys(*t, "task",
               {"name", "min_len", "max_len", "perm_seed", "target_len", "train_size"});
    std::string name = c.task.name();
    get_str(*t, "task.name", "name", &name);
    TaskSpec spec;
    try {
      spec = TaskSpec::from_name(name);
    } catch (const std::invalid_argument& e) {
      fail("task.name: " + std::string(e.what()));
    }
    // from_name sets the kind and its preferred window; explicit fields win.
    c.task = spec;
    get_int(*t, "task.min_len", "min_len", &c.task.min_len);
    get_int(*t, "task.max_len", "max_len", &c.task.max_len);
    get_u64(*t, "task.perm_seed", "perm_seed", &c.task.perm_seed);
    get_int(*t, "task.target_len", "target_len", &c.task.target_len);
    get_i64(*t, "task.train_size", "train_size", &c.task_train_size);
  }

  if (const json* e = maybe(j, "eval")) {
    if (!e->is_object()) fail("field 'eval' must be an object");
    check_keys(*e, "eval", {"n_examples", "data_seed", "index_base"});
    get_int(*e, "eval.n_examples", "n_examples", &c.eval.n_examples);
    get_u64(*e, "eval.data_seed", "data_seed", &c.eval.data_seed);
    get_i64(*e, "eval.index_base", "index_base", &c.eval.index_base);
  }

  if (const json* b = maybe(j, "bench")) {
    if (!b->is_object()) fail("field 'bench' must be an object");
    check_keys(*b, "bench", {"lengths", "num_steps", "tau", "reps", "warmup", "seed"});
    get_int_list(*b, "bench.lengths", "lengths", &c.bench.lengths);
    get_int(*b, "bench.num_steps", "num_steps", &c.bench.num_steps);
    get_f64(*b, "bench.tau", "tau", &c.bench.tau);
    get_int(*b, "bench.reps", "reps", &c.bench.reps);
    get_int(*b, "bench.warmup", "warmup", &c.bench.warmup);
    get_u64(*b, "bench.seed", "seed", &c.bench.seed);
  }

  if (const json* p = maybe(j, "paths")) {
    if (!p->is_object()) fail("field 'paths' must be an object");
    check_keys(*p, "paths", {"checkpoints", "logs", "reports"});
    get_str(*p, "paths.checkpoints", "checkpoints", &c.paths.checkpoints);
    get_str(*p, "paths.logs", "logs", &c.paths.logs);
    get_str(*p, "paths.reports", "reports", &c.paths.reports);
  }

  return c;
}

RunConfig load_config(const std::string& path) {
  const std::string text = read_text(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    // nlohmann's message already carries line and column; drop its tag.
    std::string msg = e.what();
    const size_t tag_end = msg.find("] ");
    if (tag_end != std::string::npos) msg = msg.substr(tag_end + 2);
    fail(path + ": " + msg);
  }
  RunConfig c = run_config_from_json(j);
  c.validate();
  return c;
}

std::string run_config_hash(const RunConfig& config) {
  return content_hash(run_config_to_json(config).dump());
}

void check_paths_writable(const PathsPlan& paths) {
  const std::pair<const char*, const std::string*> entries[] = {
      {"paths.checkpoints", &paths.checkpoints},
      {"paths.logs", &paths.logs},
      {"paths.reports", &paths.reports}};
  for (const auto& [field, dir] : entries) {
    std::error_code ec;
    fs::create_directories(*dir, ec);
    if (ec) fail(std::string(field) + " ('" + *dir + "') cannot be created: " + ec.message());
    const fs::path probe = fs::path(*dir) / ".writable_probe";
    std::ofstream out(probe, std::ios::trunc);
    out << "probe";
    out.close();
    if (!out) fail(std::string(field) + " ('" + *dir + "') is not writable");
    fs::remove(probe, ec);
  }
}

std::string write_run_manifest(const std::string& dir, const RunManifest& manifest) {
  if (manifest.command.empty()) {
    throw std::invalid_argument("manifest: command must be nonempty");
  }
  fs::create_directories(dir);
  json j;
  j["command"] = manifest.command;
  j["config_hash"] = manifest.config_hash;
  j["effective_config"] = manifest.effective_config;
  json inputs = json::array(), outputs = json::array();
  for (const auto& [path, hash] : manifest.inputs) {
    inputs.push_back({{"path", path}, {"hash", hash}});
  }
  for (const auto& [path, hash] : manifest.outputs) {
    outputs.push_back({{"path", path}, {"hash", hash}});
  }
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  json seeds = json::object();
  for (const auto& [name, value] : manifest.seeds) seeds[name] = value;
  j["seeds"] = seeds;

  // Sequence number keeps repeated runs of one command distinct; the caller
  // holds the checkpoint-directory lock, so counting existing files is safe.
  int index = 0;
  std::string path;
  do {
    char name[64];
    std::snprintf(name, sizeof(name), "manifest_%s_%04d.json", manifest.command.c_str(),
                  index++);
    path = (fs::path(dir) / name).string();
  } while (fs::exists(path));
  write_text_atomic(path, j.dump(2) + "\n");
  return path;
}

namespace {

bool is_manifest_file(const fs::path& p) {
  const std::string name = p.filename().string();
  return name.rfind("manifest_", 0) == 0 && name.size() >= 5 &&
         name.substr(name.size() - 5) == ".json";
}

std::string canon(const fs::path& p) {
  std::error_code ec;
  fs::path c = fs::weakly_canonical(p, ec);
  return ec ? fs::absolute(p).lexically_normal().string() : c.string();
}

}  // namespace

std::vector<std::string> find_orphan_artifacts(const std::vector<std::string>& dirs) {
  std::vector<fs::path> files;
  for (const std::string& dir : dirs) {
    if (!fs::exists(dir)) continue;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
      if (entry.is_regular_file()) files.push_back(entry.path());
    }
  }

  std::set<std::string> reachable;
  for (const fs::path& f : files) {
    if (f.filename() == ".lock") reachable.insert(canon(f));
    if (!is_manifest_file(f)) continue;
    reachable.insert(canon(f));
    json j;
    try {
      j = json::parse(read_text(f.string()));
    } catch (const std::exception& e) {
      throw std::runtime_error("housekeeping: cannot parse manifest " + f.string() +
                               ": " + e.what());
    }
    for (const char* section : {"inputs", "outputs"}) {
      if (!j.contains(section)) continue;
      for (const json& entry : j[section]) {
        if (entry.contains("path")) {
          reachable.insert(canon(entry["path"].get<std::string>()));
        }
      }
    }
  }

  std::vector<std::string> orphans;
  for (const fs::path& f : files) {
    if (reachable.find(canon(f)) == reachable.end()) orphans.push_back(f.string());
  }
  std::sort(orphans.begin(), orphans.end());
  return orphans;
}

}  // namespace ardiff
