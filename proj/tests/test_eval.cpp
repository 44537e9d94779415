#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "ardiff/data.hpp"
#include "ardiff/eval.hpp"
#include "ardiff/model.hpp"
#include "ardiff/train.hpp"

using namespace ardiff;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("ardiff_eval_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

MetricReport sample_metric(double value, uint64_t seed) {
  MetricReport r;
  r.task = "copy";
  r.model = "tiny";
  r.metric = "exact_match";
  r.value = value;
  r.n = 7;
  r.steps = 10;
  r.samples = 8;
  r.tau = 0.2;
  r.seed = seed;
  return r;
}

}  // namespace

TEST_CASE("decoder kind names round-trip") {
  CHECK(decoder_kind_name(DecoderKind::AR) == "ar");
  CHECK(decoder_kind_name(DecoderKind::Diffusion) == "diffusion");
  CHECK(decoder_kind_from_name("ar") == DecoderKind::AR);
  CHECK(decoder_kind_from_name("diffusion") == DecoderKind::Diffusion);
  CHECK_THROWS_AS(decoder_kind_from_name("beam"), std::invalid_argument);
}

TEST_CASE("trailing pads are stripped, interior pads kept") {
  CHECK(strip_trailing_pads({5, 6, Vocab::kPad, Vocab::kPad}) == std::vector<int>{5, 6});
  CHECK(strip_trailing_pads({5, Vocab::kPad, 6}) ==
        std::vector<int>{5, Vocab::kPad, 6});
  CHECK(strip_trailing_pads({Vocab::kPad, Vocab::kPad}).empty());
  CHECK(strip_trailing_pads({}).empty());
  CHECK(strip_trailing_pads({9}) == std::vector<int>{9});
}

TEST_CASE("token f1 is the multiset overlap harmonic mean") {
  CHECK(token_f1({1, 2, 3}, {1, 2, 3}) == doctest::Approx(1.0));
  CHECK(token_f1({3, 2, 1}, {1, 2, 3}) == doctest::Approx(1.0));  // order-blind
  CHECK(token_f1({4, 5}, {1, 2}) == doctest::Approx(0.0));
  CHECK(token_f1({}, {}) == doctest::Approx(1.0));
  CHECK(token_f1({1}, {}) == doctest::Approx(0.0));
  CHECK(token_f1({}, {1}) == doctest::Approx(0.0));
  // output {1,1,2} vs target {1,2,2}: two matches, precision = recall = 2/3.
  CHECK(token_f1({1, 1, 2}, {1, 2, 2}) == doctest::Approx(2.0 / 3.0));
  // output {1} vs target {1,1}: precision 1, recall 1/2.
  CHECK(token_f1({1}, {1, 1}) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("a memorized copy task scores perfectly through both decoders") {
  const Vocab vocab = Vocab::standard();
  TaskSpec task;
  task.kind = TaskKind::Copy;
  task.min_len = 3;
  task.max_len = 3;
  const int row_len = task_row_len(task);
  const uint64_t kDataSeed = 77;
  const int64_t kPool = 4;

  ModelConfig cfg;
  cfg.vocab_size = vocab.size();
  cfg.d_model = 32;
  cfg.n_layers = 2;
  cfg.n_heads = 4;
  cfg.d_ff = 64;
  cfg.max_seq_len = row_len;
  cfg.seed = 3;

  StageConfig stage;
  stage.steps = 600;
  stage.batch_size = 4;
  stage.seq_len = row_len;
  stage.optimizer.lr = 3e-3;
  stage.optimizer.warmup_steps = 50;
  stage.seed = 9;

  EvalSettings ev;
  ev.n_examples = static_cast<int>(kPool);
  ev.data_seed = kDataSeed;
  ev.index_base = 0;  // score exactly the memorized pool
  ev.model_id = "tiny";
  ev.sampler.num_steps = 10;
  ev.sampler.num_samples = 4;
  ev.sampler.tau = 0.2;
  ev.sampler.seed = 1;

  const BatchFn data = task_stream(vocab, task, stage.batch_size, kDataSeed, kPool);

  SUBCASE("denoising decoder") {
    stage.kind = StageKind::Diffusion;
    stage.name = "ft";
    const fs::path dir = fresh_dir("diff_copy");
    TrainResult tr = train(stage, init_weights<float>(cfg), data, dir.string());

    ev.mode = DecoderKind::Diffusion;
    const std::vector<MetricReport> reports = evaluate(tr.weights, vocab, task, ev);
    REQUIRE(reports.size() == 3u);
    CHECK(reports[0].metric == "exact_match");
    CHECK(reports[1].metric == "token_f1");
    CHECK(reports[2].metric == "pass_at_k");
    for (const MetricReport& r : reports) {
      CHECK(r.value == doctest::Approx(1.0));
      CHECK(r.task == task.name());
      CHECK(r.model == "tiny");
      CHECK(r.n == 4);
      CHECK(r.steps == 10);
      CHECK(r.samples == 4);
      CHECK(r.tau == doctest::Approx(0.2));
      CHECK(r.seed == 1);
    }
    CHECK(evaluate(tr.weights, vocab, task, ev) == reports);  // deterministic

    // A one-cell sweep is exactly the evaluate() exact-match row; a grid
    // reports one row per cell in steps-major order.
    const std::vector<MetricReport> one = sweep(tr.weights, vocab, task, {10}, {4}, ev);
    REQUIRE(one.size() == 1u);
    CHECK(one[0] == reports[0]);
    const std::vector<MetricReport> grid =
        sweep(tr.weights, vocab, task, {2, 10}, {1, 4}, ev);
    REQUIRE(grid.size() == 4u);
    CHECK(grid[0].steps == 2);
    CHECK(grid[0].samples == 1);
    CHECK(grid[1].steps == 2);
    CHECK(grid[1].samples == 4);
    CHECK(grid[2].steps == 10);
    CHECK(grid[2].samples == 1);
    CHECK(grid[3].steps == 10);
    CHECK(grid[3].samples == 4);
    for (const MetricReport& r : grid) CHECK(r.metric == "exact_match");
    CHECK(grid[3].value == reports[0].value);

    CHECK_THROWS_AS(sweep(tr.weights, vocab, task, {}, {4}, ev), std::invalid_argument);
    CHECK_THROWS_AS(sweep(tr.weights, vocab, task, {10}, {}, ev), std::invalid_argument);
  }

  SUBCASE("token-by-token decoder") {
    stage.kind = StageKind::AR;
    stage.name = "ar_ft";
    const fs::path dir = fresh_dir("ar_copy");
    TrainResult tr = train(stage, init_weights<float>(cfg), data, dir.string());

    ev.mode = DecoderKind::AR;
    ev.ar.seed = 5;
    const std::vector<MetricReport> reports = evaluate(tr.weights, vocab, task, ev);
    REQUIRE(reports.size() == 3u);
    for (const MetricReport& r : reports) {
      CHECK(r.value == doctest::Approx(1.0));
      CHECK(r.steps == 0);  // marks the AR decoder
      CHECK(r.samples == 4);
      CHECK(r.tau == doctest::Approx(0.0));
      CHECK(r.seed == 5);
    }
  }
}

TEST_CASE("evaluate validates its inputs") {
  const Vocab vocab = Vocab::standard();
  TaskSpec task;
  task.kind = TaskKind::Copy;
  task.min_len = 2;
  task.max_len = 4;

  ModelConfig cfg;
  cfg.vocab_size = vocab.size();
  cfg.d_model = 16;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.max_seq_len = task_row_len(task);
  Weights w = init_weights<float>(cfg);

  EvalSettings ev;
  ev.n_examples = 0;
  CHECK_THROWS_AS(evaluate(w, vocab, task, ev), std::invalid_argument);

  ev.n_examples = 2;
  ModelConfig tiny = cfg;
  tiny.max_seq_len = task_row_len(task) - 1;  // rows no longer fit
  Weights small = init_weights<float>(tiny);
  CHECK_THROWS_AS(evaluate(small, vocab, task, ev), std::invalid_argument);

  // An untrained model still produces well-formed bounded metrics.
  ev.sampler.num_steps = 2;
  ev.sampler.num_samples = 2;
  const std::vector<MetricReport> r = evaluate(w, vocab, task, ev);
  REQUIRE(r.size() == 3u);
  for (const MetricReport& m : r) {
    CHECK(m.value >= 0.0);
    CHECK(m.value <= 1.0);
    CHECK(m.n == 2);
  }
}

TEST_CASE("latency benchmark reports one ar and one diffusion record per length") {
  ModelConfig cfg;
  cfg.vocab_size = 30;
  cfg.d_model = 16;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.max_seq_len = 20;
  cfg.seed = 2;
  Weights w = init_weights<float>(cfg);

  BenchSettings b;
  b.lengths = {8, 16};
  b.num_steps = 2;
  b.reps = 3;
  b.warmup = 1;

  const std::vector<LatencyRecord> rec = latency_benchmark(w, b);
  REQUIRE(rec.size() == 4u);
  CHECK(rec[0].kind == "ar");
  CHECK(rec[1].kind == "diffusion");
  CHECK(rec[2].kind == "ar");
  CHECK(rec[3].kind == "diffusion");
  CHECK(rec[0].length == 8);
  CHECK(rec[1].length == 8);
  CHECK(rec[2].length == 16);
  CHECK(rec[3].length == 16);
  for (const LatencyRecord& r : rec) {
    CHECK(r.reps == 3);
    CHECK(r.median_ms > 0.0);
    CHECK(std::isfinite(r.median_ms));
    const int expect_steps = r.kind == "ar" ? r.length : b.num_steps;
    CHECK(r.steps == expect_steps);
    CHECK(r.per_unit_ms == doctest::Approx(r.median_ms / expect_steps));
  }

  BenchSettings bad = b;
  bad.reps = 2;
  CHECK_THROWS_AS(latency_benchmark(w, bad), std::invalid_argument);
  bad = b;
  bad.warmup = -1;
  CHECK_THROWS_AS(latency_benchmark(w, bad), std::invalid_argument);
  bad = b;
  bad.num_steps = 0;
  CHECK_THROWS_AS(latency_benchmark(w, bad), std::invalid_argument);
  bad = b;
  bad.tau = -0.5;
  CHECK_THROWS_AS(latency_benchmark(w, bad), std::invalid_argument);
  bad = b;
  bad.lengths.clear();
  CHECK_THROWS_AS(latency_benchmark(w, bad), std::invalid_argument);
  bad = b;
  bad.lengths = {19};  // needs 19 + 2 positions, model allows 20
  CHECK_THROWS_AS(latency_benchmark(w, bad), std::invalid_argument);
  bad = b;
  bad.lengths = {0};
  CHECK_THROWS_AS(latency_benchmark(w, bad), std::invalid_argument);
}

TEST_CASE("metric csv round-trips exactly") {
  std::vector<MetricReport> rows;
  rows.push_back(sample_metric(0.123456789012345678, 42));
  rows.push_back(sample_metric(1.0 / 3.0, (1ull << 63) + 5));
  rows[1].task = "cipher";
  rows[1].metric = "token_f1";
  rows[1].tau = 0.0;

  const std::string text = metrics_to_csv(rows);
  CHECK(metrics_from_csv(text) == rows);

  CHECK(metrics_from_csv(metrics_to_csv({})).empty());
  CHECK(metrics_from_csv(text + "\n\n") == rows);  // blank lines ignored

  CHECK_THROWS_AS(metrics_from_csv("nope\n"), std::invalid_argument);
  const std::string header = text.substr(0, text.find('\n') + 1);
  CHECK_THROWS_AS(metrics_from_csv(header + "a,b,c\n"), std::invalid_argument);
  CHECK_THROWS_AS(metrics_from_csv(header + "t,m,em,xyz,1,1,1,0.1,1\n"),
                  std::invalid_argument);
  CHECK_THROWS_AS(metrics_from_csv(header + "t,m,em,0.5,1,1,1,0.1,-3\n"),
                  std::invalid_argument);

  MetricReport evil = sample_metric(0.5, 1);
  evil.task = "a,b";
  CHECK_THROWS_AS(metrics_to_csv({evil}), std::invalid_argument);
}

TEST_CASE("latency csv round-trips exactly") {
  std::vector<LatencyRecord> rows(2);
  rows[0].kind = "ar";
  rows[0].length = 64;
  rows[0].reps = 5;
  rows[0].median_ms = 12.3456789012345678;
  rows[0].per_unit_ms = rows[0].median_ms / 64;
  rows[0].steps = 64;
  rows[1].kind = "diffusion";
  rows[1].length = 64;
  rows[1].reps = 5;
  rows[1].median_ms = 7.000000001;
  rows[1].per_unit_ms = 0.7000000001;
  rows[1].steps = 10;

  const std::string text = latency_to_csv(rows);
  CHECK(latency_from_csv(text) == rows);
  CHECK(latency_from_csv(latency_to_csv({})).empty());
  CHECK_THROWS_AS(latency_from_csv("kind,length\n"), std::invalid_argument);
  const std::string header = text.substr(0, text.find('\n') + 1);
  CHECK_THROWS_AS(latency_from_csv(header + "ar,64,5,1.0\n"), std::invalid_argument);
  CHECK_THROWS_AS(latency_from_csv(header + "ar,sixty,5,1.0,0.1,64\n"),
                  std::invalid_argument);
}

TEST_CASE("report writing emits csv files and a json summary") {
  Report rep;
  CHECK_THROWS_AS(write_report(fresh_dir("rep_empty").string(), "r", rep),
                  std::invalid_argument);

  rep.config_hash = "abc123";
  rep.seeds = {{"train", 7}, {"data", 9}};
  rep.metrics.push_back(sample_metric(0.95, 11));

  const fs::path dir1 = fresh_dir("rep_metrics");
  std::vector<std::string> paths = write_report(dir1.string(), "r1", rep);
  REQUIRE(paths.size() == 2u);
  CHECK(fs::path(paths[0]).filename() == "r1_metrics.csv");
  CHECK(fs::path(paths[1]).filename() == "r1_summary.json");
  for (const std::string& p : paths) CHECK(fs::exists(p));
  CHECK(metrics_from_csv(slurp(paths[0])) == rep.metrics);
  CHECK_FALSE(fs::exists(dir1 / "r1_latency.csv"));

  LatencyRecord lat;
  lat.kind = "ar";
  lat.length = 64;
  lat.reps = 3;
  lat.median_ms = 5.5;
  lat.per_unit_ms = 5.5 / 64;
  lat.steps = 64;
  rep.latency.push_back(lat);

  const fs::path dir2 = fresh_dir("rep_full");
  paths = write_report(dir2.string(), "r2", rep);
  REQUIRE(paths.size() == 3u);
  CHECK(fs::path(paths[1]).filename() == "r2_latency.csv");
  CHECK(latency_from_csv(slurp(paths[1])) == rep.latency);

  const nlohmann::json summary = nlohmann::json::parse(slurp(paths[2]));
  CHECK(summary.at("config_hash") == "abc123");
  CHECK(summary.at("seeds").at("train") == 7);
  CHECK(summary.at("seeds").at("data") == 9);
  REQUIRE(summary.at("records").size() == 2u);
  CHECK(summary.at("records")[0].at("type") == "metric");
  CHECK(summary.at("records")[0].at("value") == doctest::Approx(0.95));
  CHECK(summary.at("records")[1].at("type") == "latency");
  CHECK(summary.at("records")[1].at("kind") == "ar");
}
