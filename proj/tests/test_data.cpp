#include <doctest.h>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "ardiff/data.hpp"
#include "ardiff/tensor.hpp"

using namespace ardiff;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  fs::path p = fs::temp_directory_path() / "ardiff_data_test";
  fs::create_directories(p);
  return p;
}

std::vector<int> random_text_ids(const Vocab& v, int n, uint64_t seed) {
  Rng rng(seed);
  std::vector<int> out(static_cast<size_t>(n));
  for (int& id : out) id = v.first_text_id() + rng.uniform_int(v.size() - v.first_text_id());
  return out;
}

}  // namespace

TEST_CASE("standard vocabulary layout: specials first, text ids contiguous") {
  Vocab v = Vocab::standard();
  CHECK(v.id_to_token[Vocab::kPad] == "<pad>");
  CHECK(v.id_to_token[Vocab::kBos] == "<bos>");
  CHECK(v.id_to_token[Vocab::kSep] == "<sep>");
  for (int k = 0; k < Vocab::kNumSentinels; ++k) {
    CHECK(v.sentinel(k) == Vocab::kSentinelStart + k);
    CHECK(v.id_to_token[static_cast<size_t>(v.sentinel(k))] == "<X" + std::to_string(k) + ">");
    CHECK(v.is_special(v.sentinel(k)));
  }
  CHECK(v.first_text_id() == Vocab::kSentinelStart + Vocab::kNumSentinels);
  CHECK_FALSE(v.is_special(v.first_text_id()));
  // 3 control tokens + 16 sentinels + 26 lower + 10 digits + 25 punct + 26 upper.
  CHECK(v.size() == 106);
  for (int id = v.first_text_id(); id < v.size(); ++id) {
    CHECK(v.id_to_token[static_cast<size_t>(id)].size() == 1);
  }
  CHECK_THROWS_AS(v.sentinel(-1), std::out_of_range);
  CHECK_THROWS_AS(v.sentinel(Vocab::kNumSentinels), std::out_of_range);
}

TEST_CASE("tokenize and detokenize round-trip printable text") {
  Vocab v = Vocab::standard();
  const std::string text = "def f(x): return x * 3  # Mixed CASE, digits 0189?!";
  std::vector<int> ids = v.tokenize(text);
  CHECK(ids.size() == text.size());
  CHECK(v.detokenize(ids) == text);
  CHECK_THROWS_AS(v.tokenize("tab\tchar"), std::invalid_argument);
  CHECK(v.tokenize("").empty());
  // Pads vanish on detokenize; other specials render as their names.
  CHECK(v.detokenize({Vocab::kPad, v.tokenize("a")[0], Vocab::kPad}) == "a");
  CHECK(v.detokenize({Vocab::kSep}) == "<sep>");
  CHECK_THROWS_AS(v.detokenize({-1}), std::invalid_argument);
  CHECK_THROWS_AS(v.detokenize({v.size()}), std::invalid_argument);
}

TEST_CASE("vocabulary survives a save/load round trip") {
  Vocab v = Vocab::standard();
  fs::path p = temp_dir() / "vocab.json";
  v.save(p.string());
  Vocab back = Vocab::load(p.string());
  CHECK(back.id_to_token == v.id_to_token);
  CHECK(back.tokenize("hello") == v.tokenize("hello"));

  fs::path bad = temp_dir() / "bad_vocab.json";
  std::ofstream(bad) << "{\"a\": 0}\n";
  CHECK_THROWS(Vocab::load(bad.string()));  // pad must be id 0
  fs::path dup = temp_dir() / "dup_vocab.json";
  std::ofstream(dup) << "{\"<pad>\": 0, \"a\": 0}\n";
  CHECK_THROWS(Vocab::load(dup.string()));
  CHECK_THROWS(Vocab::load((temp_dir() / "missing.json").string()));
}

TEST_CASE("prefix-LM examples put SEP after the input and train the whole window") {
  Vocab v = Vocab::standard();
  std::vector<int> doc = random_text_ids(v, 10, 5);
  TrainingExample ex = make_prefix_lm_example(doc, 4, 12, 6);
  CHECK(ex.prefix_len == 5);
  CHECK(ex.tokens.size() == 11u);
  CHECK(ex.target_len() == 6);
  for (int i = 0; i < 4; ++i) CHECK(ex.tokens[static_cast<size_t>(i)] == doc[static_cast<size_t>(i)]);
  CHECK(ex.tokens[4] == Vocab::kSep);
  for (int i = 0; i < 6; ++i) CHECK(ex.tokens[static_cast<size_t>(5 + i)] == doc[static_cast<size_t>(4 + i)]);
  for (size_t i = 0; i < ex.loss_mask.size(); ++i) {
    CHECK(ex.loss_mask[i] == (static_cast<int>(i) >= ex.prefix_len ? 1 : 0));
  }
  CHECK_NOTHROW(ex.validate(12));

  // A short continuation is padded out to target_len, and padding is trained.
  TrainingExample padded = make_prefix_lm_example(doc, 8, 16, 5);
  CHECK(padded.tokens.size() == 14u);
  CHECK(padded.tokens[10] == doc[9]);
  CHECK(padded.tokens[11] == Vocab::kPad);
  CHECK(padded.tokens[13] == Vocab::kPad);
  CHECK(padded.loss_mask[13] == 1);

  CHECK_THROWS_AS(make_prefix_lm_example(doc, 0, 20, 4), std::invalid_argument);
  CHECK_THROWS_AS(make_prefix_lm_example(doc, 10, 20, 4), std::invalid_argument);
  CHECK_THROWS_AS(make_prefix_lm_example(doc, 4, 20, 0), std::invalid_argument);
  CHECK_THROWS_AS(make_prefix_lm_example(doc, 4, 8, 6), std::invalid_argument);
}

TEST_CASE("training example validation rejects inconsistent structures") {
  TrainingExample ex;
  ex.tokens = {20, 21, Vocab::kSep, 22};
  ex.prefix_len = 3;
  ex.loss_mask = {0, 0, 0, 1};
  CHECK_NOTHROW(ex.validate(8));
  CHECK_THROWS_AS(ex.validate(3), std::logic_error);  // too long
  TrainingExample bad = ex;
  bad.loss_mask.pop_back();
  CHECK_THROWS_AS(bad.validate(8), std::logic_error);  // length mismatch
  bad = ex;
  bad.prefix_len = 0;
  CHECK_THROWS_AS(bad.validate(8), std::logic_error);
  bad = ex;
  bad.loss_mask = {0, 1, 0, 1};
  CHECK_THROWS_AS(bad.validate(8), std::logic_error);  // loss inside input
  bad = ex;
  bad.loss_mask = {0, 0, 0, 0};
  CHECK_THROWS_AS(bad.validate(8), std::logic_error);  // nothing to learn
}

TEST_CASE("span corruption replaces spans with ordered sentinels and is invertible") {
  Vocab v = Vocab::standard();
  const int n = 200;
  const double density = 0.15;
  std::vector<int> doc = random_text_ids(v, n, 77);

  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    TrainingExample ex = make_span_corruption_example(v, doc, density, 3, rng);
    CHECK_NOTHROW(ex.validate(1024));

    // Split the example back into input (before SEP) and target (after).
    REQUIRE(ex.prefix_len >= 1);
    REQUIRE(ex.tokens[static_cast<size_t>(ex.prefix_len - 1)] == Vocab::kSep);
    std::vector<int> input(ex.tokens.begin(), ex.tokens.begin() + ex.prefix_len - 1);
    std::vector<int> target(ex.tokens.begin() + ex.prefix_len, ex.tokens.end());

    auto is_sentinel = [&](int id) {
      return id >= Vocab::kSentinelStart && id < Vocab::kSentinelStart + Vocab::kNumSentinels;
    };

    // Parse target into sentinel -> span map; sentinels must appear in order.
    std::map<int, std::vector<int>> span_of;
    int last_sentinel = -1;
    int cur = -1;
    for (int id : target) {
      if (is_sentinel(id)) {
        CHECK(id == (cur == -1 ? v.sentinel(0) : cur + 1));
        cur = id;
        last_sentinel = id;
        span_of[id];
      } else {
        REQUIRE(cur != -1);
        span_of[cur].push_back(id);
      }
    }
    // The final sentinel is a bare terminator.
    REQUIRE(last_sentinel != -1);
    CHECK(span_of[last_sentinel].empty());

    // Sentinels in the input appear in ascending order and match the target's.
    int expect = v.sentinel(0);
    std::vector<int> rebuilt;
    int noise_total = 0;
    for (int id : input) {
      if (is_sentinel(id)) {
        CHECK(id == expect);
        ++expect;
        REQUIRE(span_of.count(id) == 1);
        rebuilt.insert(rebuilt.end(), span_of[id].begin(), span_of[id].end());
        noise_total += static_cast<int>(span_of[id].size());
      } else {
        rebuilt.push_back(id);
      }
    }
    CHECK(rebuilt == doc);  // exact reconstruction
    CHECK(expect == last_sentinel);

    // The corrupted token budget is deterministic: round(n * density).
    CHECK(noise_total == 30);
  }
}

TEST_CASE("span corruption honors an explicit target window") {
  Vocab v = Vocab::standard();
  std::vector<int> doc = random_text_ids(v, 40, 3);
  Rng rng(1);
  TrainingExample ex = make_span_corruption_example(v, doc, 0.2, 3, rng, 32);
  CHECK(ex.target_len() == 32);
  CHECK(ex.tokens.back() == Vocab::kPad);  // natural target is shorter, so padded
  Rng rng2(1);
  CHECK_THROWS_AS(make_span_corruption_example(v, doc, 0.2, 3, rng2, 2), std::invalid_argument);
}

TEST_CASE("span corruption rejects bad parameters") {
  Vocab v = Vocab::standard();
  std::vector<int> doc = random_text_ids(v, 100, 9);
  Rng rng(4);
  CHECK_THROWS_AS(make_span_corruption_example(v, {}, 0.2, 3, rng), std::invalid_argument);
  CHECK_THROWS_AS(make_span_corruption_example(v, doc, 0.0, 3, rng), std::invalid_argument);
  CHECK_THROWS_AS(make_span_corruption_example(v, doc, 1.0, 3, rng), std::invalid_argument);
  CHECK_THROWS_AS(make_span_corruption_example(v, doc, 0.2, 0, rng), std::invalid_argument);
  // 50 length-1 spans would need 51 sentinels; the budget is 16.
  CHECK_THROWS_AS(make_span_corruption_example(v, doc, 0.5, 1, rng), std::invalid_argument);
}

TEST_CASE("task pairs are pure functions of (spec, seed, index)") {
  for (const char* name : {"copy", "reverse", "cipher", "pycode"}) {
    TaskSpec spec = TaskSpec::from_name(name);
    auto a = task_pair(spec, 42, 7);
    auto b = task_pair(spec, 42, 7);
    CHECK(a == b);
    CHECK(task_pair(spec, 43, 7) != a);
    CHECK(spec.name() == name);
    TaskSpec round = TaskSpec::from_name(spec.name());
    CHECK(round.kind == spec.kind);
  }
  CHECK(TaskSpec::from_name("pycode").target_len == 24);
  CHECK_THROWS_AS(TaskSpec::from_name("juggling"), std::invalid_argument);
}

TEST_CASE("generated pairs satisfy their own task checker") {
  for (const char* name : {"copy", "reverse", "cipher", "pycode"}) {
    TaskSpec spec = TaskSpec::from_name(name);
    auto pairs = generate_task_pairs(spec, 11, 50);
    REQUIRE(pairs.size() == 50u);
    for (const auto& [src, tgt] : pairs) {
      CHECK(check_task_output(spec, src, tgt));
      if (spec.kind != TaskKind::PythonLikeTemplate) {
        CHECK(static_cast<int>(src.size()) >= spec.min_len);
        CHECK(static_cast<int>(src.size()) <= spec.max_len);
        CHECK(src.size() == tgt.size());
      }
      CHECK(static_cast<int>(src.size()) <= task_max_source_len(spec));
    }
  }
  CHECK_THROWS_AS(generate_task_pairs(TaskSpec{}, 1, 0), std::invalid_argument);
}

TEST_CASE("task checkers reject wrong outputs") {
  TaskSpec copy = TaskSpec::from_name("copy");
  CHECK(check_task_output(copy, "abc", "abc"));
  CHECK_FALSE(check_task_output(copy, "abc", "abd"));
  CHECK_FALSE(check_task_output(copy, "abc", "ab"));

  TaskSpec rev = TaskSpec::from_name("reverse");
  CHECK(check_task_output(rev, "abc", "cba"));
  CHECK_FALSE(check_task_output(rev, "abc", "abc"));

  TaskSpec ciph = TaskSpec::from_name("cipher");
  std::string enc = cipher_apply(ciph.perm_seed, "hello");
  CHECK(check_task_output(ciph, "hello", enc));
  CHECK_FALSE(check_task_output(ciph, "hello", "hello"));
}

TEST_CASE("python-like checker accepts consistent argument renaming only") {
  TaskSpec py = TaskSpec::from_name("pycode");
  CHECK(check_task_output(py, "add 3 to x", "def f(x): return x + 3"));
  // Any single-letter argument works if used consistently.
  CHECK(check_task_output(py, "add 3 to x", "def f(q): return q + 3"));
  CHECK_FALSE(check_task_output(py, "add 3 to x", "def f(q): return x + 3"));
  CHECK_FALSE(check_task_output(py, "add 3 to x", "def g(x): return x + 3"));
  CHECK_FALSE(check_task_output(py, "add 3 to x", "def f(x): return x + 4"));
  CHECK_FALSE(check_task_output(py, "add 3 to x", "def f(x): return x - 3"));
  CHECK_FALSE(check_task_output(py, "add 3 to x", ""));
  CHECK(check_task_output(py, "subtract 7 from y", "def f(y): return y - 7"));
  CHECK(check_task_output(py, "multiply z by 2", "def f(z): return z * 2"));
  CHECK(check_task_output(py, "return w unchanged", "def f(w): return w"));
  CHECK_FALSE(check_task_output(py, "return w unchanged", "def f(w): return w + 0"));
  CHECK_FALSE(check_task_output(py, "gibberish prompt", "def f(x): return x"));
}

TEST_CASE("the substitution cipher is a self-inverse-free bijection on letters") {
  const uint64_t seed = TaskSpec{}.perm_seed;
  const std::string alphabet = "abcdefghijklmnopqrstuvwxyz";
  std::string image = cipher_apply(seed, alphabet);
  std::string sorted = image;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == alphabet);                           // permutation
  CHECK(cipher_invert(seed, image) == alphabet);       // inverse works
  CHECK(cipher_apply(seed, "a1 B!") != "a1 B!");       // lowercase mapped...
  std::string mixed = cipher_apply(seed, "a1 B!");
  CHECK(mixed.substr(1) == "1 B!");                    // ...everything else fixed
  // Different permutation seeds give different tables.
  CHECK(cipher_apply(seed, alphabet) != cipher_apply(seed + 1, alphabet));
  CHECK(cipher_invert(seed + 1, cipher_apply(seed + 1, "quick brown fox")) == "quick brown fox");
}

TEST_CASE("task rows have a fixed width shared by training and decoding") {
  TaskSpec spec = TaskSpec::from_name("reverse");
  spec.max_len = 10;
  spec.target_len = 12;
  const int row = task_row_len(spec);
  CHECK(row == 10 + 1 + 12);

  Vocab v = Vocab::standard();
  auto [src, tgt] = task_pair(spec, 5, 0);
  TrainingExample ex = task_example(v, spec, src, tgt, row);
  CHECK(static_cast<int>(ex.tokens.size()) == row);
  CHECK(ex.prefix_len == static_cast<int>(src.size()) + 1);
  CHECK(ex.tokens[static_cast<size_t>(ex.prefix_len - 1)] == Vocab::kSep);
  // Window absorbs whatever the prompt leaves free.
  CHECK(ex.target_len() == row - ex.prefix_len);
  std::vector<int> tgt_ids = v.tokenize(tgt);
  for (size_t i = 0; i < tgt_ids.size(); ++i) {
    CHECK(ex.tokens[static_cast<size_t>(ex.prefix_len) + i] == tgt_ids[i]);
  }
  for (size_t i = static_cast<size_t>(ex.prefix_len) + tgt_ids.size(); i < ex.tokens.size(); ++i) {
    CHECK(ex.tokens[i] == Vocab::kPad);
  }
  CHECK_NOTHROW(ex.validate(row));

  // pycode rows must fit the longest template source.
  TaskSpec py = TaskSpec::from_name("pycode");
  for (int i = 0; i < 200; ++i) {
    auto [s, t] = task_pair(py, 9, i);
    TrainingExample pex = task_example(v, py, s, t, task_row_len(py));
    CHECK(static_cast<int>(pex.tokens.size()) == task_row_len(py));
    CHECK_NOTHROW(pex.validate(task_row_len(py)));
  }

  CHECK_THROWS_AS(task_example(v, spec, "abcd", "longtargetxxxx", 10), std::invalid_argument);
}

TEST_CASE("task prompts are the tokenized source plus a separator") {
  Vocab v = Vocab::standard();
  std::vector<int> p = task_prompt(v, "ab");
  REQUIRE(p.size() == 3u);
  CHECK(p[0] == v.tokenize("a")[0]);
  CHECK(p[1] == v.tokenize("b")[0]);
  CHECK(p[2] == Vocab::kSep);
}

TEST_CASE("corpus documents are deterministic, tokenizable, and mixed-genre") {
  Vocab v = Vocab::standard();
  int code = 0;
  const int n = 500;
  for (int i = 0; i < n; ++i) {
    std::string doc = corpus_doc(123, i);
    CHECK(doc == corpus_doc(123, i));
    CHECK_FALSE(doc.empty());
    CHECK_NOTHROW(v.tokenize(doc));
    if (doc.rfind("def ", 0) == 0) {
      ++code;
    } else {
      CHECK(doc.back() == '.');
    }
  }
  // Nominally 20% code; allow wide statistical slack.
  CHECK(code > n / 10);
  CHECK(code < n * 3 / 10);
  CHECK(corpus_doc(123, 0) != corpus_doc(124, 0));
}

TEST_CASE("batches right-pad examples and keep padding loss-free") {
  Vocab v = Vocab::standard();
  TrainingExample a;
  a.tokens = {20, Vocab::kSep, 21, 22};
  a.prefix_len = 2;
  a.loss_mask = {0, 0, 1, 1};
  TrainingExample b;
  b.tokens = {23, 24, Vocab::kSep, 25, 26, 27};
  b.prefix_len = 3;
  b.loss_mask = {0, 0, 0, 1, 1, 1};

  Batch batch = make_batch({a, b}, 2, 8);
  CHECK(batch.batch_size == 2);
  CHECK(batch.seq_len == 8);
  CHECK(batch.token_at(0, 0) == 20);
  CHECK(batch.token_at(0, 3) == 22);
  CHECK(batch.token_at(0, 4) == Vocab::kPad);  // right padding
  CHECK(batch.token_at(1, 5) == 27);
  CHECK(batch.token_at(1, 7) == Vocab::kPad);
  CHECK(batch.prefix_len[0] == 2);
  CHECK(batch.prefix_len[1] == 3);
  CHECK(batch.masked(0, 2));
  CHECK(batch.masked(0, 3));
  CHECK_FALSE(batch.masked(0, 4));  // padding beyond the example carries no loss
  CHECK_FALSE(batch.masked(1, 0));
  CHECK(batch.masked(1, 5));
  CHECK_FALSE(batch.masked(1, 6));

  CHECK_THROWS_AS(make_batch({}, 0, 8), std::invalid_argument);
  CHECK_THROWS_AS(make_batch({a}, 2, 8), std::invalid_argument);
  CHECK_THROWS_AS(make_batch({a, b}, 2, 5), std::invalid_argument);  // b does not fit
}

TEST_CASE("pair files round-trip through JSON lines") {
  fs::path p = temp_dir() / "pairs.jsonl";
  std::vector<std::pair<std::string, std::string>> pairs = {
      {"plain", "copy"},
      {"with \"quotes\" and \\slashes\\", "tricky { } [ ] chars"},
      {"", ""},
  };
  save_pairs(p.string(), pairs);
  auto back = load_pairs(p.string());
  CHECK(back == pairs);

  fs::path gap = temp_dir() / "gappy.jsonl";
  std::ofstream(gap) << "{\"source\":\"a\",\"target\":\"b\"}\n\n{\"source\":\"c\",\"target\":\"d\"}\n";
  auto loaded = load_pairs(gap.string());
  REQUIRE(loaded.size() == 2u);
  CHECK(loaded[1].first == "c");

  fs::path bad = temp_dir() / "badpairs.jsonl";
  std::ofstream(bad) << "{\"source\":\"a\"}\n";
  CHECK_THROWS(load_pairs(bad.string()));
  CHECK_THROWS(load_pairs((temp_dir() / "nope.jsonl").string()));
}
