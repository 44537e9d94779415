#include "ardiff/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace ardiff {

using nlohmann::json;

namespace {

constexpr const char* kLower = "abcdefghijklmnopqrstuvwxyz";
constexpr const char* kDigits = "0123456789";
constexpr const char* kPunct = " .,:;!?()+-*/=<>_'\"[]{}#%";
constexpr const char* kUpper = "ABCDEFGHIJKLMNOPQRSTUVWXYZ";

}  // namespace

Vocab Vocab::standard() {
  Vocab v;
  v.id_to_token = {"<pad>", "<bos>", "<sep>"};
  for (int k = 0; k < kNumSentinels; ++k) {
    v.id_to_token.push_back("<X" + std::to_string(k) + ">");
  }
  for (const char* set : {kLower, kDigits, kPunct, kUpper}) {
    for (const char* p = set; *p != '\0'; ++p) {
      v.id_to_token.emplace_back(1, *p);
    }
  }
  for (size_t i = 0; i < v.id_to_token.size(); ++i) {
    v.token_to_id[v.id_to_token[i]] = static_cast<int>(i);
  }
  return v;
}

int Vocab::sentinel(int k) const {
  if (k < 0 || k >= kNumSentinels) {
    throw std::out_of_range("sentinel index " + std::to_string(k) + " exceeds budget of " +
                            std::to_string(kNumSentinels));
  }
  return kSentinelStart + k;
}

std::vector<int> Vocab::tokenize(const std::string& text) const {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (size_t i = 0; i < text.size(); ++i) {
    auto it = token_to_id.find(std::string(1, text[i]));
    if (it == token_to_id.end()) {
      throw std::invalid_argument("tokenize: character '" + std::string(1, text[i]) +
                                  "' at position " + std::to_string(i) +
                                  " is not in the alphabet");
    }
    ids.push_back(it->second);
  }
  return ids;
}

std::string Vocab::detokenize(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= size()) {
      throw std::invalid_argument("detokenize: invalid id " + std::to_string(id));
    }
    if (id == kPad) continue;
    out += id_to_token[id];
  }
  return out;
}

void Vocab::save(const std::string& path) const {
  json j = json::object();
  for (size_t i = 0; i < id_to_token.size(); ++i) {
    j[id_to_token[i]] = i;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write vocab: " + path);
  out << j.dump(2) << "\n";
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocab: " + path);
  json j = json::parse(in);
  Vocab v;
  v.id_to_token.resize(j.size());
  for (auto& [tok, id] : j.items()) {
    int i = id.get<int>();
    if (i < 0 || i >= static_cast<int>(v.id_to_token.size()) || !v.id_to_token[i].empty()) {
      throw std::runtime_error("vocab file ids are not a bijection onto [0, n): " + path);
    }
    v.id_to_token[i] = tok;
    v.token_to_id[tok] = i;
  }
  if (v.id_to_token.empty() || v.id_to_token[0] != "<pad>") {
    throw std::runtime_error("vocab file must map <pad> to id 0: " + path);
  }
  return v;
}

void TrainingExample::validate(int max_seq_len) const {
  if (tokens.size() != loss_mask.size()) {
    throw std::logic_error("training example: tokens/loss_mask length mismatch");
  }
  if (static_cast<int>(tokens.size()) > max_seq_len) {
    throw std::logic_error("training example exceeds max_seq_len");
  }
  if (prefix_len < 1 || prefix_len > static_cast<int>(tokens.size())) {
    throw std::logic_error("training example: prefix_len out of range");
  }
  bool any = false;
  for (size_t i = 0; i < loss_mask.size(); ++i) {
    if (loss_mask[i] && static_cast<int>(i) < prefix_len) {
      throw std::logic_error("training example: loss mask inside input region");
    }
    any = any || loss_mask[i];
  }
  if (!any) throw std::logic_error("training example: empty loss mask");
}

TrainingExample make_prefix_lm_example(const std::vector<int>& doc, int split,
                                       int total_len, int target_len) {
  const int n = static_cast<int>(doc.size());
  if (split < 1 || split >= n) {
    throw std::invalid_argument("make_prefix_lm_example: split " + std::to_string(split) +
                                " out of range [1, " + std::to_string(n) + ")");
  }
  if (target_len < 1) throw std::invalid_argument("make_prefix_lm_example: target_len must be >= 1");
  const int prefix_len = split + 1;  // input tokens plus SEP
  if (prefix_len + target_len > total_len) {
    throw std::invalid_argument("make_prefix_lm_example: example of length " +
                                std::to_string(prefix_len + target_len) +
                                " exceeds capacity " + std::to_string(total_len));
  }
  TrainingExample ex;
  ex.prefix_len = prefix_len;
  ex.tokens.assign(doc.begin(), doc.begin() + split);
  ex.tokens.push_back(Vocab::kSep);
  const int real = std::min(target_len, n - split);
  ex.tokens.insert(ex.tokens.end(), doc.begin() + split, doc.begin() + split + real);
  ex.tokens.resize(static_cast<size_t>(prefix_len) + target_len, Vocab::kPad);
  ex.loss_mask.assign(ex.tokens.size(), 0);
  std::fill(ex.loss_mask.begin() + prefix_len, ex.loss_mask.end(), uint8_t{1});
  return ex;
}

TrainingExample make_span_corruption_example(const Vocab& vocab, const std::vector<int>& doc,
                                             double noise_density, int mean_span_len,
                                             Rng& rng, int target_len) {
  const int n = static_cast<int>(doc.size());
  if (n == 0) throw std::invalid_argument("make_span_corruption_example: empty doc");
  if (!(noise_density > 0.0 && noise_density < 1.0)) {
    throw std::invalid_argument("make_span_corruption_example: noise_density must be in (0, 1)");
  }
  if (mean_span_len < 1) {
    throw std::invalid_argument("make_span_corruption_example: mean_span_len must be >= 1");
  }

  // A zero-span draw degenerates to one span of length 1 at a random spot so
  // the target is never empty.
  int num_noise = std::min<int>(n, std::max<int>(1, static_cast<int>(std::llround(n * noise_density))));
  int num_spans = static_cast<int>(std::llround(static_cast<double>(num_noise) / mean_span_len));
  num_spans = std::clamp(num_spans, 1, num_noise);
  if (num_spans + 1 > Vocab::kNumSentinels) {
    throw std::invalid_argument("make_span_corruption_example: " + std::to_string(num_spans) +
                                " spans plus terminator exceed the sentinel budget of " +
                                std::to_string(Vocab::kNumSentinels));
  }

  // Span lengths sum to num_noise; the remainder goes to the first spans.
  std::vector<int> span_len(num_spans, num_noise / num_spans);
  for (int k = 0; k < num_noise % num_spans; ++k) span_len[k] += 1;

  // Place spans by sampling the sizes of the num_spans+1 uncorrupted gaps:
  // sorted uniform cut points over the free token count.
  const int num_free = n - num_noise;
  std::vector<int> cuts(num_spans);
  for (int k = 0; k < num_spans; ++k) cuts[k] = rng.uniform_int(num_free + 1);
  std::sort(cuts.begin(), cuts.end());
  std::vector<int> gap(num_spans + 1);
  gap[0] = cuts[0];
  for (int k = 1; k < num_spans; ++k) gap[k] = cuts[k] - cuts[k - 1];
  gap[num_spans] = num_free - cuts[num_spans - 1];

  std::vector<int> input, target;
  input.reserve(n);
  target.reserve(num_noise + num_spans + 1);
  int pos = 0;
  for (int k = 0; k < num_spans; ++k) {
    input.insert(input.end(), doc.begin() + pos, doc.begin() + pos + gap[k]);
    pos += gap[k];
    input.push_back(vocab.sentinel(k));
    target.push_back(vocab.sentinel(k));
    target.insert(target.end(), doc.begin() + pos, doc.begin() + pos + span_len[k]);
    pos += span_len[k];
  }
  input.insert(input.end(), doc.begin() + pos, doc.end());
  target.push_back(vocab.sentinel(num_spans));

  const int natural = static_cast<int>(target.size());
  int tlen = target_len;
  if (tlen == 0) {
    tlen = natural;
  } else if (natural > tlen) {
    throw std::invalid_argument("make_span_corruption_example: target of length " +
                                std::to_string(natural) + " exceeds target_len " +
                                std::to_string(tlen));
  }

  TrainingExample ex;
  ex.prefix_len = static_cast<int>(input.size()) + 1;
  ex.tokens = std::move(input);
  ex.tokens.push_back(Vocab::kSep);
  ex.tokens.insert(ex.tokens.end(), target.begin(), target.end());
  ex.tokens.resize(static_cast<size_t>(ex.prefix_len) + tlen, Vocab::kPad);
  ex.loss_mask.assign(ex.tokens.size(), 0);
  std::fill(ex.loss_mask.begin() + ex.prefix_len, ex.loss_mask.end(), uint8_t{1});
  return ex;
}

// ---------------------------------------------------------------------------
// Task generators

std::string TaskSpec::name() const {
  switch (kind) {
    case TaskKind::Copy:
      return "copy";
    case TaskKind::Reverse:
      return "reverse";
    case TaskKind::SubstitutionCipher:
      return "cipher";
    case TaskKind::PythonLikeTemplate:
      return "pycode";
  }
  return "copy";
}

TaskSpec TaskSpec::from_name(const std::string& name) {
  TaskSpec s;
  if (name == "copy") {
    s.kind = TaskKind::Copy;
  } else if (name == "reverse") {
    s.kind = TaskKind::Reverse;
  } else if (name == "cipher") {
    s.kind = TaskKind::SubstitutionCipher;
  } else if (name == "pycode") {
    s.kind = TaskKind::PythonLikeTemplate;
    s.target_len = 24;
  } else {
    throw std::invalid_argument("unknown task: " + name +
                                " (expected copy|reverse|cipher|pycode)");
  }
  return s;
}

namespace {

std::string cipher_table(uint64_t perm_seed) {
  std::string table(kLower);
  Rng rng(mix64(perm_seed, 0xC1F3ull));
  for (int i = 25; i > 0; --i) {
    std::swap(table[i], table[rng.uniform_int(i + 1)]);
  }
  return table;
}

struct PyTemplate {
  // op '\0' means the identity template with no constant.
  char op;
  std::string render_source(char v, char k) const;
  std::string render_target(char v, char k, char fname = 'f') const;
};

std::string PyTemplate::render_source(char v, char k) const {
  switch (op) {
    case '+':
      return std::string("add ") + k + " to " + v;
    case '-':
      return std::string("subtract ") + k + " from " + v;
    case '*':
      return std::string("multiply ") + v + " by " + k;
    default:
      return std::string("return ") + v + " unchanged";
  }
}

std::string PyTemplate::render_target(char v, char k, char fname) const {
  std::string head = std::string("def ") + fname + "(" + v + "): return " + v;
  if (op == '\0') return head;
  return head + " " + op + " " + k;
}

constexpr PyTemplate kPyTemplates[4] = {{'+'}, {'-'}, {'*'}, {'\0'}};

uint64_t task_stream_seed(const TaskSpec& spec, uint64_t seed) {
  uint64_t h = mix64(seed, static_cast<uint64_t>(spec.kind));
  h = mix64(h, static_cast<uint64_t>(spec.min_len) * 131 + spec.max_len);
  if (spec.kind == TaskKind::SubstitutionCipher) h = mix64(h, spec.perm_seed);
  return h;
}

}  // namespace

std::string cipher_apply(uint64_t perm_seed, const std::string& text) {
  const std::string table = cipher_table(perm_seed);
  std::string out = text;
  for (char& c : out) {
    if (c >= 'a' && c <= 'z') c = table[c - 'a'];
  }
  return out;
}

std::string cipher_invert(uint64_t perm_seed, const std::string& text) {
  const std::string table = cipher_table(perm_seed);
  char inv[26];
  for (int i = 0; i < 26; ++i) inv[table[i] - 'a'] = static_cast<char>('a' + i);
  std::string out = text;
  for (char& c : out) {
    if (c >= 'a' && c <= 'z') c = inv[c - 'a'];
  }
  return out;
}

std::pair<std::string, std::string> task_pair(const TaskSpec& spec, uint64_t seed,
                                              int64_t index) {
  if (spec.min_len < 1 || spec.max_len < spec.min_len) {
    throw std::invalid_argument("task spec: bad length range");
  }
  Rng rng(mix64(task_stream_seed(spec, seed), static_cast<uint64_t>(index)));
  if (spec.kind == TaskKind::PythonLikeTemplate) {
    const PyTemplate& t = kPyTemplates[rng.uniform_int(4)];
    const char v = static_cast<char>('a' + rng.uniform_int(26));
    const char k = static_cast<char>('0' + rng.uniform_int(10));
    return {t.render_source(v, k), t.render_target(v, k)};
  }
  const int len = spec.min_len + rng.uniform_int(spec.max_len - spec.min_len + 1);
  std::string source(len, 'a');
  for (char& c : source) c = static_cast<char>('a' + rng.uniform_int(26));
  switch (spec.kind) {
    case TaskKind::Copy:
      return {source, source};
    case TaskKind::Reverse:
      return {source, std::string(source.rbegin(), source.rend())};
    case TaskKind::SubstitutionCipher:
      return {source, cipher_apply(spec.perm_seed, source)};
    default:
      throw std::logic_error("unreachable task kind");
  }
}

std::vector<std::pair<std::string, std::string>> generate_task_pairs(const TaskSpec& spec,
                                                                     uint64_t seed, int n) {
  if (n < 1) throw std::invalid_argument("generate_task_pairs: n must be >= 1");
  std::vector<std::pair<std::string, std::string>> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(task_pair(spec, seed, i));
  return out;
}

bool check_task_output(const TaskSpec& spec, const std::string& source,
                       const std::string& output) {
  switch (spec.kind) {
    case TaskKind::Copy:
      return output == source;
    case TaskKind::Reverse:
      return output == std::string(source.rbegin(), source.rend());
    case TaskKind::SubstitutionCipher:
      return output == cipher_apply(spec.perm_seed, source);
    case TaskKind::PythonLikeTemplate:
      break;
  }
  // Parse the prompt back into (op, k); accept any single-letter argument
  // name used consistently.
  std::istringstream ss(source);
  std::vector<std::string> words;
  for (std::string w; ss >> w;) words.push_back(w);
  char op = 0, k = 0;
  if (words.size() == 4 && words[0] == "add" && words[2] == "to" && words[1].size() == 1) {
    op = '+';
    k = words[1][0];
  } else if (words.size() == 4 && words[0] == "subtract" && words[2] == "from" &&
             words[1].size() == 1) {
    op = '-';
    k = words[1][0];
  } else if (words.size() == 4 && words[0] == "multiply" && words[2] == "by" &&
             words[3].size() == 1) {
    op = '*';
    k = words[3][0];
  } else if (words.size() == 3 && words[0] == "return" && words[2] == "unchanged") {
    op = '\0';
  } else {
    return false;
  }
  if (output.size() < 7 || output.compare(0, 6, "def f(") != 0) return false;
  const char v = output[6];
  if (v < 'a' || v > 'z') return false;
  PyTemplate t{op};
  return output == t.render_target(v, k);
}

int task_max_source_len(const TaskSpec& spec) {
  if (spec.kind == TaskKind::PythonLikeTemplate) {
    size_t longest = 0;
    for (const PyTemplate& t : kPyTemplates) {
      longest = std::max(longest, t.render_source('a', '0').size());
    }
    return static_cast<int>(longest);
  }
  return spec.max_len;
}

int task_row_len(const TaskSpec& spec) {
  return task_max_source_len(spec) + 1 + spec.target_len;
}

TrainingExample task_example(const Vocab& vocab, const TaskSpec& spec,
                             const std::string& source, const std::string& target,
                             int row_len) {
  std::vector<int> doc = vocab.tokenize(source);
  const int split = static_cast<int>(doc.size());
  std::vector<int> tgt = vocab.tokenize(target);
  const int window = row_len - split - 1;
  if (static_cast<int>(tgt.size()) > window) {
    throw std::invalid_argument("task target '" + target + "' does not fit the " +
                                std::to_string(window) + "-token window of a " +
                                std::to_string(row_len) + "-token row");
  }
  doc.insert(doc.end(), tgt.begin(), tgt.end());
  return make_prefix_lm_example(doc, split, row_len, window);
}

std::vector<int> task_prompt(const Vocab& vocab, const std::string& source) {
  std::vector<int> ids = vocab.tokenize(source);
  ids.push_back(Vocab::kSep);
  return ids;
}

// ---------------------------------------------------------------------------
// Synthetic pretraining corpus

namespace {

const char* kNouns[] = {"cat",  "dog",  "bird", "tree", "river", "stone",
                        "house", "cloud", "road", "child", "boat", "star"};
const char* kVerbs[] = {"sees", "finds", "likes", "follows", "paints",
                        "builds", "watches", "holds"};
const char* kAdjs[] = {"small", "old", "quiet", "bright", "green", "warm"};
const char* kPreps[] = {"near", "under", "behind", "beside"};

template <size_t N>
const char* pick(const char* (&arr)[N], Rng& rng) {
  return arr[rng.uniform_int(static_cast<int>(N))];
}

std::string text_doc(Rng& rng) {
  std::string doc;
  const int sentences = 1 + rng.uniform_int(3);
  for (int s = 0; s < sentences; ++s) {
    if (s > 0) doc += " ";
    doc += "the ";
    if (rng.uniform_int(2) == 0) doc += std::string(pick(kAdjs, rng)) + " ";
    doc += pick(kNouns, rng);
    doc += " ";
    doc += pick(kVerbs, rng);
    doc += " the ";
    doc += pick(kNouns, rng);
    if (rng.uniform_int(2) == 0) {
      doc += " ";
      doc += pick(kPreps, rng);
      doc += " the ";
      doc += pick(kNouns, rng);
    }
    doc += ".";
  }
  return doc;
}

std::string code_doc(Rng& rng) {
  const PyTemplate& t = kPyTemplates[rng.uniform_int(4)];
  const char fname = static_cast<char>('a' + rng.uniform_int(26));
  const char v = static_cast<char>('a' + rng.uniform_int(26));
  const char k = static_cast<char>('0' + rng.uniform_int(10));
  return t.render_target(v, k, fname);
}

}  // namespace

std::string corpus_doc(uint64_t seed, int64_t index) {
  Rng rng(mix64(seed, static_cast<uint64_t>(index)));
  // 80% sentence-like text, 20% python-like code.
  return rng.uniform_int(10) < 8 ? text_doc(rng) : code_doc(rng);
}

// ---------------------------------------------------------------------------
// Batching

Batch make_batch(const std::vector<TrainingExample>& examples, int batch_size, int pad_to) {
  if (examples.empty()) throw std::invalid_argument("make_batch: empty batch");
  if (static_cast<int>(examples.size()) != batch_size) {
    throw std::invalid_argument("make_batch: got " + std::to_string(examples.size()) +
                                " examples for batch_size " + std::to_string(batch_size));
  }
  Batch b;
  b.batch_size = batch_size;
  b.seq_len = pad_to;
  b.tokens.assign(static_cast<size_t>(batch_size) * pad_to, Vocab::kPad);
  b.loss_mask.assign(static_cast<size_t>(batch_size) * pad_to, 0);
  b.prefix_len.resize(batch_size);
  for (int e = 0; e < batch_size; ++e) {
    const TrainingExample& ex = examples[e];
    const int n = static_cast<int>(ex.tokens.size());
    if (n > pad_to) {
      throw std::invalid_argument("make_batch: example of length " + std::to_string(n) +
                                  " exceeds pad_to " + std::to_string(pad_to));
    }
    std::copy(ex.tokens.begin(), ex.tokens.end(),
              b.tokens.begin() + static_cast<size_t>(e) * pad_to);
    std::copy(ex.loss_mask.begin(), ex.loss_mask.end(),
              b.loss_mask.begin() + static_cast<size_t>(e) * pad_to);
    b.prefix_len[e] = ex.prefix_len;
  }
  return b;
}

void save_pairs(const std::string& path,
                const std::vector<std::pair<std::string, std::string>>& pairs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write pairs: " + path);
  for (const auto& [src, tgt] : pairs) {
    out << json{{"source", src}, {"target", tgt}}.dump() << "\n";
  }
}

std::vector<std::pair<std::string, std::string>> load_pairs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open pairs: " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, true);
    if (!j.contains("source") || !j.contains("target")) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": pair row needs source and target fields");
    }
    out.emplace_back(j["source"].get<std::string>(), j["target"].get<std::string>());
  }
  return out;
}

}  // namespace ardiff
