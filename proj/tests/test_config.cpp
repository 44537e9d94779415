#include <doctest.h>

#include <cctype>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "ardiff/config.hpp"

using namespace ardiff;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("ardiff_config_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  REQUIRE(out.good());
  out << text;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// The thrown message must carry the dotted path of the offending field.
void expect_invalid(const RunConfig& c, const std::string& needle) {
  try {
    c.validate();
    FAIL_CHECK("expected a validation error mentioning '" << needle << "'");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.rfind("config: ", 0) == 0);
    CHECK(msg.find(needle) != std::string::npos);
  }
}

void expect_parse_error(const json& j, const std::string& needle) {
  try {
    run_config_from_json(j);
    FAIL_CHECK("expected a parse error mentioning '" << needle << "'");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find(needle) != std::string::npos);
  }
}

}  // namespace

TEST_CASE("the default config is valid and fully specified") {
  const RunConfig c = default_run_config();
  CHECK_NOTHROW(c.validate());
  CHECK(c.model.vocab_size == 106);
  CHECK(c.model.d_model == 128);
  CHECK(c.model.n_layers == 6);
  CHECK(c.model.max_seq_len == 64);
  CHECK(c.stages.pretrain_steps == 1000);
  CHECK(c.eval.index_base == 1'000'000);
  CHECK(c.bench.lengths == std::vector<int>{64, 128, 256, 512});
}

TEST_CASE("validation names the offending field path") {
  RunConfig c = default_run_config();
  c.model.d_model = 0;
  expect_invalid(c, "model.d_model");

  c = default_run_config();
  c.model.d_model = 30;  // not divisible by the 8 heads
  expect_invalid(c, "model.d_model");

  c = default_run_config();
  c.sampler.tau = -1.0;
  expect_invalid(c, "sampler.tau");

  c = default_run_config();
  c.diffusion.replacement_min_id = -2;
  expect_invalid(c, "diffusion.replacement_min_id");

  c = default_run_config();
  c.stages.batch_size = 0;
  expect_invalid(c, "stages.batch_size");

  c = default_run_config();
  c.stages.corpus_seq_len = c.model.max_seq_len + 1;
  expect_invalid(c, "stages.corpus_seq_len");

  c = default_run_config();
  c.optimizer.lr = 0.0;
  expect_invalid(c, "optimizer.lr");

  c = default_run_config();
  c.optimizer.beta2 = 1.0;
  expect_invalid(c, "optimizer.beta2");

  c = default_run_config();
  c.task.max_len = c.task.min_len - 1;
  expect_invalid(c, "task.max_len");

  c = default_run_config();
  c.task.target_len = 1000;  // rows would not fit the model
  expect_invalid(c, "max_seq_len");

  c = default_run_config();
  c.task_train_size = 0;
  expect_invalid(c, "task.train_size");

  c = default_run_config();
  c.eval.n_examples = 0;
  expect_invalid(c, "eval.n_examples");

  c = default_run_config();
  c.bench.reps = 2;
  expect_invalid(c, "bench.reps");

  c = default_run_config();
  c.bench.lengths = {};
  expect_invalid(c, "bench.lengths");

  c = default_run_config();
  c.paths.logs = "";
  expect_invalid(c, "paths.logs");
}

TEST_CASE("json serialization round-trips every field") {
  RunConfig c = default_run_config();
  c.seed = 12345;
  c.model.d_model = 96;
  c.model.n_heads = 6;
  c.model.max_seq_len = 80;
  c.stages.pretrain_steps = 7;
  c.stages.adapt_steps = 3;
  c.stages.finetune_steps = 9;
  c.stages.batch_size = 2;
  c.stages.corpus_seq_len = 24;
  c.stages.checkpoint_every = 5;
  c.optimizer.lr = 0.0125;
  c.optimizer.warmup_steps = 17;
  c.diffusion.unroll_temperature = 0.3;
  c.diffusion.w1 = 0.25;
  c.sampler.num_steps = 4;
  c.sampler.tau = 0.7;
  c.sampler.seed = 99;
  c.task = TaskSpec::from_name("cipher");
  c.task.max_len = 10;
  c.task.perm_seed = 13;
  c.task_train_size = 64;
  c.eval.n_examples = 12;
  c.eval.data_seed = 4;
  c.eval.index_base = 500;
  c.bench.lengths = {8, 16};
  c.bench.reps = 4;
  c.paths.reports = "elsewhere/reports";

  const json j = run_config_to_json(c);
  const RunConfig back = run_config_from_json(j);
  CHECK(run_config_to_json(back).dump() == j.dump());
  CHECK(run_config_hash(back) == run_config_hash(c));
  CHECK(back.task.kind == TaskKind::SubstitutionCipher);
  CHECK(back.task.max_len == 10);
  CHECK(back.bench.lengths == std::vector<int>{8, 16});
}

TEST_CASE("partial documents overlay the defaults") {
  const RunConfig c =
      run_config_from_json(json::parse(R"({"model":{"d_model":64,"n_heads":4}})"));
  CHECK(c.model.d_model == 64);
  CHECK(c.model.n_heads == 4);
  CHECK(c.model.n_layers == default_run_config().model.n_layers);
  CHECK(c.stages.pretrain_steps == 1000);

  const RunConfig named = run_config_from_json(json::parse(R"({"task":{"name":"pycode"}})"));
  CHECK(named.task.kind == TaskKind::PythonLikeTemplate);
  // Explicit fields override whatever the named task prefers.
  const RunConfig tuned = run_config_from_json(
      json::parse(R"({"task":{"name":"cipher","max_len":12,"target_len":20}})"));
  CHECK(tuned.task.kind == TaskKind::SubstitutionCipher);
  CHECK(tuned.task.max_len == 12);
  CHECK(tuned.task.target_len == 20);

  const RunConfig empty = run_config_from_json(json::object());
  CHECK(run_config_to_json(empty).dump() ==
        run_config_to_json(default_run_config()).dump());
}

TEST_CASE("unknown keys are rejected with their full path") {
  try {
    run_config_from_json(json::parse(R"({"moodel":{}})"));
    FAIL_CHECK("expected rejection of the misspelled key");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()) == "config: unknown key 'moodel'");
  }
  try {
    run_config_from_json(json::parse(R"({"stages":{"num_stpes":3}})"));
    FAIL_CHECK("expected rejection of the nested misspelled key");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()) == "config: unknown key 'stages.num_stpes'");
  }
  expect_parse_error(json::parse(R"({"sampler":{"temperature":0.2}})"),
                     "sampler.temperature");
  expect_parse_error(json::parse(R"({"paths":{"cache":"x"}})"), "paths.cache");
}

TEST_CASE("type mismatches are rejected with their full path") {
  expect_parse_error(json::parse(R"({"model":{"d_model":"big"}})"), "model.d_model");
  expect_parse_error(json::parse(R"({"model":5})"), "'model' must be an object");
  expect_parse_error(json::parse(R"({"seed":-5})"), "seed");
  expect_parse_error(json::parse(R"({"optimizer":{"lr":"fast"}})"), "optimizer.lr");
  expect_parse_error(json::parse(R"({"bench":{"lengths":[1,"x"]}})"), "bench.lengths");
  expect_parse_error(json::parse(R"({"bench":{"lengths":64}})"), "bench.lengths");
  expect_parse_error(json::parse(R"({"task":{"name":"sudoku"}})"), "task.name");
  expect_parse_error(json::parse(R"([1,2,3])"), "root");
  expect_parse_error(json::parse(R"({"model":{"d_model":99999999999}})"),
                     "out of range");
}

TEST_CASE("config files load, carry parse locations, and are validated") {
  const fs::path dir = fresh_dir("load");

  write_file(dir / "ok.json", R"({"model":{"d_model":64,"n_heads":4,"max_seq_len":64}})");
  const RunConfig c = load_config((dir / "ok.json").string());
  CHECK(c.model.d_model == 64);

  write_file(dir / "broken.json", "{ \"model\": { nope }");
  try {
    load_config((dir / "broken.json").string());
    FAIL_CHECK("expected a parse failure");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("broken.json") != std::string::npos);
    CHECK(msg.find("line 1") != std::string::npos);
    CHECK(msg.find("column") != std::string::npos);
  }

  write_file(dir / "invalid.json", R"({"model":{"d_model":0}})");
  CHECK_THROWS_AS(load_config((dir / "invalid.json").string()), std::invalid_argument);

  CHECK_THROWS(load_config((dir / "missing.json").string()));
}

TEST_CASE("the config hash tracks content, not formatting") {
  const json a = json::parse(R"({"seed":7,"model":{"d_model":64,"n_heads":4}})");
  const json b = json::parse(R"({"model":{"n_heads":4,"d_model":64},"seed":7})");
  const std::string ha = run_config_hash(run_config_from_json(a));
  const std::string hb = run_config_hash(run_config_from_json(b));
  CHECK(ha == hb);
  CHECK_FALSE(ha.empty());
  for (char ch : ha) CHECK(std::isxdigit(static_cast<unsigned char>(ch)));

  RunConfig c = run_config_from_json(a);
  c.seed = 8;
  CHECK(run_config_hash(c) != ha);
  RunConfig d = run_config_from_json(a);
  d.paths.logs = "other";
  CHECK(run_config_hash(d) != ha);
}

TEST_CASE("path probing creates directories and reports unusable ones") {
  const fs::path dir = fresh_dir("paths");
  PathsPlan p;
  p.checkpoints = (dir / "ck").string();
  p.logs = (dir / "deep" / "logs").string();
  p.reports = (dir / "rep").string();
  CHECK_NOTHROW(check_paths_writable(p));
  CHECK(fs::is_directory(dir / "ck"));
  CHECK(fs::is_directory(dir / "deep" / "logs"));
  CHECK_FALSE(fs::exists(dir / "ck" / ".writable_probe"));  // probe cleaned up

  write_file(dir / "blocker", "not a directory");
  p.logs = (dir / "blocker" / "logs").string();
  try {
    check_paths_writable(p);
    FAIL_CHECK("expected a failure for the blocked directory");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("paths.logs") != std::string::npos);
  }
}

TEST_CASE("run manifests are sequenced and carry full provenance") {
  const fs::path dir = fresh_dir("manifest");
  RunManifest m;
  CHECK_THROWS_AS(write_run_manifest(dir.string(), m), std::invalid_argument);

  m.command = "train";
  m.config_hash = "cafe01";
  m.effective_config = json{{"seed", 7}};
  m.inputs = {{"in/a.ckpt", "h1"}};
  m.outputs = {{"out/b.ckpt", "h2"}, {"out/c.jsonl", "h3"}};
  m.seeds = {{"stage", 42}};

  const std::string p0 = write_run_manifest(dir.string(), m);
  CHECK(fs::path(p0).filename() == "manifest_train_0000.json");
  const std::string p1 = write_run_manifest(dir.string(), m);
  CHECK(fs::path(p1).filename() == "manifest_train_0001.json");
  const std::string pe = write_run_manifest(dir.string(), [] {
    RunManifest e;
    e.command = "eval";
    return e;
  }());
  CHECK(fs::path(pe).filename() == "manifest_eval_0000.json");

  const json j = json::parse(slurp(p0));
  CHECK(j.at("command") == "train");
  CHECK(j.at("config_hash") == "cafe01");
  CHECK(j.at("effective_config").at("seed") == 7);
  REQUIRE(j.at("inputs").size() == 1u);
  CHECK(j.at("inputs")[0].at("path") == "in/a.ckpt");
  CHECK(j.at("inputs")[0].at("hash") == "h1");
  REQUIRE(j.at("outputs").size() == 2u);
  CHECK(j.at("outputs")[1].at("hash") == "h3");
  CHECK(j.at("seeds").at("stage") == 42);
}

TEST_CASE("housekeeping reports files no manifest accounts for") {
  const fs::path dir = fresh_dir("orphans");
  const fs::path ck = dir / "ck";
  const fs::path logs = dir / "logs";
  fs::create_directories(ck);
  fs::create_directories(logs);

  write_file(ck / "kept.ckpt", "weights");
  write_file(ck / "orphan.bin", "???");
  write_file(ck / ".lock", "");
  write_file(logs / "consumed.jsonl", "{}");

  RunManifest m;
  m.command = "train";
  m.inputs = {{(logs / "consumed.jsonl").string(), "h_in"}};
  m.outputs = {{(ck / "kept.ckpt").string(), "h_out"}};
  write_run_manifest(ck.string(), m);

  const std::vector<std::string> orphans =
      find_orphan_artifacts({ck.string(), logs.string(), (dir / "missing").string()});
  REQUIRE(orphans.size() == 1u);
  CHECK(fs::path(orphans[0]).filename() == "orphan.bin");

  write_file(ck / "manifest_bad_0000.json", "{ not json");
  CHECK_THROWS_AS(find_orphan_artifacts({ck.string()}), std::runtime_error);
}
