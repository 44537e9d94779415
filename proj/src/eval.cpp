#include "ardiff/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <stdexcept>

#include "json.hpp"

#include "ardiff/checkpoint.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ardiff {

namespace {

// Keeps the optimizer from discarding benchmarked decodes as dead code.
volatile int g_bench_sink = 0;

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void check_csv_field(const char* column, const std::string& value) {
  if (value.find_first_of(",\"\n\r") != std::string::npos) {
    throw std::invalid_argument(std::string("csv: field '") + column +
                                "' must not contain commas, quotes or newlines");
  }
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  size_t start = 0;
  while (start < text.size()) {
    size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    start = end + 1;
  }
  return lines;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  size_t start = 0;
  for (;;) {
    size_t end = line.find(',', start);
    if (end == std::string::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, end - start));
    start = end + 1;
  }
}

double parse_csv_double(const std::string& s, const char* what, size_t line_no) {
  char* end = nullptr;
  errno = 0;
  double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || s.empty() || errno == ERANGE) {
    throw std::invalid_argument(std::string(what) + ": line " + std::to_string(line_no) +
                                ": invalid number '" + s + "'");
  }
  return v;
}

int64_t parse_csv_int(const std::string& s, const char* what, size_t line_no) {
  char* end = nullptr;
  errno = 0;
  long long v = std::strtoll(s.c_str(), &end, 10);
  if (end != s.c_str() + s.size() || s.empty() || errno == ERANGE) {
    throw std::invalid_argument(std::string(what) + ": line " + std::to_string(line_no) +
                                ": invalid integer '" + s + "'");
  }
  return v;
}

uint64_t parse_csv_u64(const std::string& s, const char* what, size_t line_no) {
  char* end = nullptr;
  errno = 0;
  unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (end != s.c_str() + s.size() || s.empty() || errno == ERANGE ||
      s.front() == '-') {
    throw std::invalid_argument(std::string(what) + ": line " + std::to_string(line_no) +
                                ": invalid unsigned integer '" + s + "'");
  }
  return v;
}

constexpr const char* kMetricsHeader = "task,model,metric,value,n,steps,samples,tau,seed";
constexpr const char* kLatencyHeader = "kind,length,reps,median_ms,per_unit_ms,steps";

}  // namespace

std::string decoder_kind_name(DecoderKind kind) {
  return kind == DecoderKind::AR ? "ar" : "diffusion";
}

DecoderKind decoder_kind_from_name(const std::string& name) {
  if (name == "ar") return DecoderKind::AR;
  if (name == "diffusion") return DecoderKind::Diffusion;
  throw std::invalid_argument("unknown decoder kind '" + name +
                              "' (expected ar or diffusion)");
}

std::vector<int> strip_trailing_pads(const std::vector<int>& tokens) {
  size_t end = tokens.size();
  while (end > 0 && tokens[end - 1] == Vocab::kPad) --end;
  return std::vector<int>(tokens.begin(), tokens.begin() + static_cast<ptrdiff_t>(end));
}

double token_f1(const std::vector<int>& output, const std::vector<int>& target) {
  if (output.empty() && target.empty()) return 1.0;
  if (output.empty() || target.empty()) return 0.0;
  std::map<int, int> counts;
  for (int t : target) ++counts[t];
  int64_t matches = 0;
  for (int t : output) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++matches;
    }
  }
  if (matches == 0) return 0.0;
  const double precision = static_cast<double>(matches) / static_cast<double>(output.size());
  const double recall = static_cast<double>(matches) / static_cast<double>(target.size());
  return 2.0 * precision * recall / (precision + recall);
}

std::vector<MetricReport> evaluate(const Weights& weights, const Vocab& vocab,
                                   const TaskSpec& task, const EvalSettings& settings) {
  if (settings.n_examples < 1) {
    throw std::invalid_argument("evaluate: n_examples must be >= 1");
  }
  settings.sampler.validate();
  const int row_len = task_row_len(task);
  if (row_len > weights.config.max_seq_len) {
    throw std::invalid_argument("evaluate: task rows of " + std::to_string(row_len) +
                                " tokens exceed max_seq_len " +
                                std::to_string(weights.config.max_seq_len));
  }

  int64_t em_hits = 0, pass_hits = 0;
  double f1_sum = 0.0;
  for (int i = 0; i < settings.n_examples; ++i) {
    const int64_t index = settings.index_base + i;
    const auto [source, target] = task_pair(task, settings.data_seed, index);
    const std::vector<int> target_ids = vocab.tokenize(target);
    try {
      if (settings.mode == DecoderKind::Diffusion) {
        const std::vector<int> prompt = vocab.tokenize(source);
        SamplerSettings s = settings.sampler;
        // The decode window mirrors the training rows: whatever the prompt
        // leaves free of the fixed task row.
        s.target_window = row_len - static_cast<int>(prompt.size()) - 1;
        s.seed = mix64(settings.sampler.seed, static_cast<uint64_t>(index));
        const DecodeResult res = diffusion_decode(weights, prompt, s);

        const std::vector<int> out = strip_trailing_pads(res.winner());
        em_hits += out == target_ids ? 1 : 0;
        f1_sum += token_f1(out, target_ids);
        bool any = false;
        for (const auto& cand : res.candidates) {
          if (check_task_output(task, source,
                                vocab.detokenize(strip_trailing_pads(cand)))) {
            any = true;
            break;
          }
        }
        pass_hits += any ? 1 : 0;
      } else {
        const std::vector<int> prompt = task_prompt(vocab, source);
        const int window = row_len - static_cast<int>(prompt.size());
        ArSettings greedy = settings.ar;
        greedy.temperature = 0.0;
        const std::vector<int> seq = ar_decode(weights, prompt, greedy, window);
        const std::vector<int> out = strip_trailing_pads(std::vector<int>(
            seq.begin() + static_cast<ptrdiff_t>(prompt.size()), seq.end()));
        em_hits += out == target_ids ? 1 : 0;
        f1_sum += token_f1(out, target_ids);

        bool any = false;
        for (int c = 0; c < settings.sampler.num_samples && !any; ++c) {
          ArSettings s = settings.ar;
          s.seed = mix64(mix64(settings.ar.seed, static_cast<uint64_t>(index)),
                         static_cast<uint64_t>(c));
          const std::vector<int> cand = ar_decode(weights, prompt, s, window);
          const std::vector<int> cout = strip_trailing_pads(std::vector<int>(
              cand.begin() + static_cast<ptrdiff_t>(prompt.size()), cand.end()));
          any = check_task_output(task, source, vocab.detokenize(cout));
        }
        pass_hits += any ? 1 : 0;
      }
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("evaluate: example " + std::to_string(index) + ": " +
                                  e.what());
    }
  }

  MetricReport base;
  base.task = task.name();
  base.model = settings.model_id;
  base.n = settings.n_examples;
  base.samples = settings.sampler.num_samples;
  if (settings.mode == DecoderKind::Diffusion) {
    base.steps = settings.sampler.num_steps;
    base.tau = settings.sampler.tau;
    base.seed = settings.sampler.seed;
  } else {
    base.steps = 0;
    base.tau = settings.ar.temperature;
    base.seed = settings.ar.seed;
  }

  const double n = static_cast<double>(settings.n_examples);
  std::vector<MetricReport> out(3, base);
  out[0].metric = "exact_match";
  out[0].value = static_cast<double>(em_hits) / n;
  out[1].metric = "token_f1";
  out[1].value = f1_sum / n;
  out[2].metric = "pass_at_k";
  out[2].value = static_cast<double>(pass_hits) / n;
  return out;
}

std::vector<MetricReport> sweep(const Weights& weights, const Vocab& vocab,
                                const TaskSpec& task, const std::vector<int>& steps_grid,
                                const std::vector<int>& samples_grid,
                                const EvalSettings& settings) {
  if (steps_grid.empty()) throw std::invalid_argument("sweep: steps grid must not be empty");
  if (samples_grid.empty()) {
    throw std::invalid_argument("sweep: samples grid must not be empty");
  }
  std::vector<MetricReport> out;
  out.reserve(steps_grid.size() * samples_grid.size());
  for (int steps : steps_grid) {
    for (int samples : samples_grid) {
      EvalSettings cell = settings;
      cell.mode = DecoderKind::Diffusion;
      cell.sampler.num_steps = steps;
      cell.sampler.num_samples = samples;
      for (const MetricReport& r : evaluate(weights, vocab, task, cell)) {
        if (r.metric == "exact_match") out.push_back(r);
      }
    }
  }
  return out;
}

namespace {

// Times fn over `reps` blocks; the block size doubles until one block lasts
// at least a millisecond so that short decodes are not lost in clock ticks.
template <typename F>
LatencyRecord time_decode(const std::string& kind, int length, int steps, int reps,
                          int warmup, F&& fn) {
  using clock = std::chrono::steady_clock;
  const auto block_ms_of = [&fn](int block) {
    const auto t0 = clock::now();
    for (int i = 0; i < block; ++i) fn();
    const auto t1 = clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count();
  };

  for (int i = 0; i < warmup; ++i) fn();

  int block = 1;
  double block_ms = block_ms_of(block);
  while (block_ms < 1.0) {
    if (block > (1 << 20)) {
      throw std::runtime_error("bench: decode too fast to time even in blocks of " +
                               std::to_string(block));
    }
    block *= 2;
    block_ms = block_ms_of(block);
  }

  std::vector<double> per_run;
  per_run.reserve(static_cast<size_t>(reps));
  per_run.push_back(block_ms / block);  // the successful calibration block counts
  for (int r = 1; r < reps; ++r) per_run.push_back(block_ms_of(block) / block);
  std::sort(per_run.begin(), per_run.end());
  const size_t mid = per_run.size() / 2;
  const double median = per_run.size() % 2 == 1
                            ? per_run[mid]
                            : 0.5 * (per_run[mid - 1] + per_run[mid]);

  LatencyRecord rec;
  rec.kind = kind;
  rec.length = length;
  rec.reps = reps;
  rec.median_ms = median;
  rec.per_unit_ms = median / steps;
  rec.steps = steps;
  return rec;
}

}  // namespace

std::vector<LatencyRecord> latency_benchmark(const Weights& weights,
                                             const BenchSettings& settings) {
  if (settings.reps < 3) throw std::invalid_argument("bench: reps must be >= 3");
  if (settings.warmup < 0) throw std::invalid_argument("bench: warmup must be >= 0");
  if (settings.num_steps < 1) throw std::invalid_argument("bench: num_steps must be >= 1");
  if (settings.tau < 0.0) throw std::invalid_argument("bench: tau must be >= 0");
  if (settings.lengths.empty()) {
    throw std::invalid_argument("bench: lengths must not be empty");
  }
  const int cap = weights.config.max_seq_len;
  for (int length : settings.lengths) {
    if (length < 1) throw std::invalid_argument("bench: lengths must be positive");
    // The diffusion row is prompt + separator + window; AR needs one less.
    if (length + 2 > cap) {
      throw std::invalid_argument("bench: length " + std::to_string(length) +
                                  " needs max_seq_len >= " + std::to_string(length + 2) +
                                  ", model allows " + std::to_string(cap));
    }
  }

  const std::vector<int> prompt = {Vocab::kBos};
  std::vector<LatencyRecord> out;
  out.reserve(settings.lengths.size() * 2);
  for (int length : settings.lengths) {
    ArSettings ar;
    ar.temperature = 0.0;
    ar.seed = settings.seed;
    ar.stop_at_pad = false;  // the timing run must emit exactly `length` tokens
    out.push_back(time_decode("ar", length, length, settings.reps, settings.warmup,
                              [&weights, &prompt, &ar, length] {
                                const std::vector<int> r =
                                    ar_decode(weights, prompt, ar, length);
                                g_bench_sink = g_bench_sink + r.back();
                              }));

    SamplerSettings diff;
    diff.num_steps = settings.num_steps;
    diff.num_samples = 1;
    diff.tau = settings.tau;
    diff.target_window = length;
    diff.seed = settings.seed;
    out.push_back(time_decode("diffusion", length, settings.num_steps, settings.reps,
                              settings.warmup, [&weights, &prompt, &diff] {
                                const DecodeResult r =
                                    diffusion_decode(weights, prompt, diff);
                                g_bench_sink = g_bench_sink + r.winner().back();
                              }));
  }
  return out;
}

std::string metrics_to_csv(const std::vector<MetricReport>& rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const MetricReport& r : rows) {
    check_csv_field("task", r.task);
    check_csv_field("model", r.model);
    check_csv_field("metric", r.metric);
    out += r.task + ',' + r.model + ',' + r.metric + ',' + fmt_double(r.value) + ',' +
           std::to_string(r.n) + ',' + std::to_string(r.steps) + ',' +
           std::to_string(r.samples) + ',' + fmt_double(r.tau) + ',' +
           std::to_string(r.seed) + '\n';
  }
  return out;
}

std::vector<MetricReport> metrics_from_csv(const std::string& text) {
  const std::vector<std::string> lines = split_lines(text);
  if (lines.empty() || lines[0] != kMetricsHeader) {
    throw std::invalid_argument(std::string("metrics csv: expected header '") +
                                kMetricsHeader + "'");
  }
  std::vector<MetricReport> rows;
  for (size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::vector<std::string> f = split_fields(lines[i]);
    if (f.size() != 9) {
      throw std::invalid_argument("metrics csv: line " + std::to_string(i + 1) +
                                  ": expected 9 fields, got " + std::to_string(f.size()));
    }
    MetricReport r;
    r.task = f[0];
    r.model = f[1];
    r.metric = f[2];
    r.value = parse_csv_double(f[3], "metrics csv", i + 1);
    r.n = static_cast<int>(parse_csv_int(f[4], "metrics csv", i + 1));
    r.steps = static_cast<int>(parse_csv_int(f[5], "metrics csv", i + 1));
    r.samples = static_cast<int>(parse_csv_int(f[6], "metrics csv", i + 1));
    r.tau = parse_csv_double(f[7], "metrics csv", i + 1);
    r.seed = parse_csv_u64(f[8], "metrics csv", i + 1);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string latency_to_csv(const std::vector<LatencyRecord>& rows) {
  std::string out = std::string(kLatencyHeader) + "\n";
  for (const LatencyRecord& r : rows) {
    check_csv_field("kind", r.kind);
    out += r.kind + ',' + std::to_string(r.length) + ',' + std::to_string(r.reps) + ',' +
           fmt_double(r.median_ms) + ',' + fmt_double(r.per_unit_ms) + ',' +
           std::to_string(r.steps) + '\n';
  }
  return out;
}

std::vector<LatencyRecord> latency_from_csv(const std::string& text) {
  const std::vector<std::string> lines = split_lines(text);
  if (lines.empty() || lines[0] != kLatencyHeader) {
    throw std::invalid_argument(std::string("latency csv: expected header '") +
                                kLatencyHeader + "'");
  }
  std::vector<LatencyRecord> rows;
  for (size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::vector<std::string> f = split_fields(lines[i]);
    if (f.size() != 6) {
      throw std::invalid_argument("latency csv: line " + std::to_string(i + 1) +
                                  ": expected 6 fields, got " + std::to_string(f.size()));
    }
    LatencyRecord r;
    r.kind = f[0];
    r.length = static_cast<int>(parse_csv_int(f[1], "latency csv", i + 1));
    r.reps = static_cast<int>(parse_csv_int(f[2], "latency csv", i + 1));
    r.median_ms = parse_csv_double(f[3], "latency csv", i + 1);
    r.per_unit_ms = parse_csv_double(f[4], "latency csv", i + 1);
    r.steps = static_cast<int>(parse_csv_int(f[5], "latency csv", i + 1));
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<std::string> write_report(const std::string& out_dir, const std::string& stem,
                                      const Report& report) {
  if (report.metrics.empty() && report.latency.empty()) {
    throw std::invalid_argument("report: nothing to write (no metrics, no latency records)");
  }
  fs::create_directories(out_dir);
  std::vector<std::string> written;

  if (!report.metrics.empty()) {
    const std::string path = (fs::path(out_dir) / (stem + "_metrics.csv")).string();
    write_text_atomic(path, metrics_to_csv(report.metrics));
    written.push_back(path);
  }
  if (!report.latency.empty()) {
    const std::string path = (fs::path(out_dir) / (stem + "_latency.csv")).string();
    write_text_atomic(path, latency_to_csv(report.latency));
    written.push_back(path);
  }

  json summary;
  summary["config_hash"] = report.config_hash;
  json seeds = json::object();
  for (const auto& [name, value] : report.seeds) seeds[name] = value;
  summary["seeds"] = seeds;
  json records = json::array();
  for (const MetricReport& r : report.metrics) {
    records.push_back({{"type", "metric"},
                       {"task", r.task},
                       {"model", r.model},
                       {"metric", r.metric},
                       {"value", r.value},
                       {"n", r.n},
                       {"steps", r.steps},
                       {"samples", r.samples},
                       {"tau", r.tau},
                       {"seed", r.seed}});
  }
  for (const LatencyRecord& r : report.latency) {
    records.push_back({{"type", "latency"},
                       {"kind", r.kind},
                       {"length", r.length},
                       {"reps", r.reps},
                       {"median_ms", r.median_ms},
                       {"per_unit_ms", r.per_unit_ms},
                       {"steps", r.steps}});
  }
  summary["records"] = records;
  const std::string path = (fs::path(out_dir) / (stem + "_summary.json")).string();
  write_text_atomic(path, summary.dump(2) + "\n");
  written.push_back(path);
  return written;
}

}  // namespace ardiff
