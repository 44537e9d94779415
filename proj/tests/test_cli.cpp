// Drives the real command-line binary end to end: flag/config merging, run
// manifests, the zero-step adapt copy, and the one-line error contract. The
// binary path arrives via the ARDIFF_CLI environment variable (ctest sets it
// to the built executable).

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <doctest.h>
#include "json.hpp"

#include "ardiff/checkpoint.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ardiff;

namespace {

const std::string& cli_path() {
  static const std::string path = [] {
    const char* p = std::getenv("ARDIFF_CLI");
    REQUIRE_MESSAGE(p != nullptr,
                    "set ARDIFF_CLI to the command-line binary under test");
    REQUIRE_MESSAGE(fs::exists(p), "ARDIFF_CLI points at a missing file");
    return std::string(p);
  }();
  return path;
}

fs::path fresh_dir(const std::string& leaf) {
  const fs::path dir = fs::temp_directory_path() / "ardiff_cli_test" / leaf;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

RunResult run_cli(const std::string& args, const fs::path& dir) {
  const fs::path out = dir / "stdout.txt";
  const fs::path err = dir / "stderr.txt";
  const std::string cmd = "\"" + cli_path() + "\" " + args + " >\"" +
                          out.string() + "\" 2>\"" + err.string() + "\"";
  const int raw = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = (raw != -1 && WIFEXITED(raw)) ? WEXITSTATUS(raw) : -1;
  r.out = read_text(out.string());
  r.err = read_text(err.string());
  return r;
}

// Small-model config file used by every case; `steps` lands in the file so a
// flag can contradict it.
fs::path write_config(const fs::path& dir, int64_t pretrain_steps) {
  const json j = {
      {"seed", 11},
      {"model",
       {{"vocab_size", 106}, {"d_model", 16}, {"n_layers", 1}, {"n_heads", 2},
        {"d_ff", 32}, {"max_seq_len", 24}, {"seed", 5}}},
      {"stages",
       {{"pretrain_steps", pretrain_steps}, {"batch_size", 2},
        {"corpus_seq_len", 16}, {"checkpoint_every", 0}}},
      {"paths",
       {{"checkpoints", (dir / "ckpt").string()},
        {"logs", (dir / "logs").string()},
        {"reports", (dir / "reports").string()}}},
  };
  const fs::path path = dir / "cfg.json";
  std::ofstream(path) << j.dump(2);
  return path;
}

// Extracts the path following "manifest: " from command output.
std::string manifest_path(const std::string& out) {
  const std::string tag = "manifest: ";
  const size_t at = out.find(tag);
  REQUIRE(at != std::string::npos);
  const size_t end = out.find('\n', at);
  return out.substr(at + tag.size(), end - at - tag.size());
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text) n += (c == '\n');
  return n;
}

}  // namespace

TEST_CASE("flags override config-file values and the manifest records the merge") {
  const fs::path dir = fresh_dir("merge");
  const fs::path cfg = write_config(dir, /*pretrain_steps=*/50);

  const RunResult r = run_cli(
      "pretrain --config \"" + cfg.string() + "\" --steps 3", dir);
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);

  // The flag, not the file, drove execution: 3 steps, so pretrain_3.ckpt.
  CHECK(fs::exists(dir / "ckpt" / "pretrain_3.ckpt"));
  CHECK(!fs::exists(dir / "ckpt" / "pretrain_50.ckpt"));

  const std::string mpath = manifest_path(r.out);
  REQUIRE(fs::exists(mpath));
  const json m = json::parse(read_text(mpath));
  CHECK(m.at("command") == "pretrain");
  CHECK(m.at("effective_config").at("stages").at("pretrain_steps") == 3);
  CHECK(m.at("effective_config").at("seed") == 11);
  CHECK(m.at("config_hash").get<std::string>().size() == 16);

  // Manifest completeness: the config file is an input, the checkpoint an
  // output, and every listed output hash matches the file on disk.
  bool cfg_in = false;
  for (const auto& in : m.at("inputs")) {
    if (in.at("path").get<std::string>().find("cfg.json") != std::string::npos) {
      cfg_in = true;
      CHECK(in.at("hash") == file_hash(cfg.string()));
    }
  }
  CHECK(cfg_in);
  bool ckpt_out = false;
  for (const auto& out : m.at("outputs")) {
    const std::string path = out.at("path").get<std::string>();
    CHECK(out.at("hash") == file_hash(path));
    if (path.find("pretrain_3.ckpt") != std::string::npos) ckpt_out = true;
  }
  CHECK(ckpt_out);

  // Seeds are recorded by name, master seed included.
  CHECK(m.at("seeds").at("seed") == 11);
  CHECK(m.at("seeds").contains("stage_seed"));
  CHECK(m.at("seeds").contains("data_seed"));

  const CheckpointMeta meta =
      read_checkpoint_meta((dir / "ckpt" / "pretrain_3.ckpt").string());
  CHECK(meta.attention_mode.to_string() == "causal");
  CHECK(meta.stage == "pretrain");
  CHECK(meta.step == 3);
}

TEST_CASE("a zero-step adapt copies the weights and flips the attention mode") {
  const fs::path dir = fresh_dir("adapt");
  const fs::path cfg = write_config(dir, /*pretrain_steps=*/3);

  REQUIRE(run_cli("pretrain --config \"" + cfg.string() + "\"", dir).exit_code == 0);
  const std::string parent_ckpt = (dir / "ckpt" / "pretrain_3.ckpt").string();

  const RunResult r = run_cli(
      "adapt --config \"" + cfg.string() + "\" --from \"" + parent_ckpt +
          "\" --steps 0",
      dir);
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("mode flipped") != std::string::npos);

  const std::string adapted = (dir / "ckpt" / "adapt_0.ckpt").string();
  REQUIRE(fs::exists(adapted));
  CheckpointMeta parent_meta, adapted_meta;
  Weights before = read_checkpoint(parent_ckpt, &parent_meta);
  Weights after = read_checkpoint(adapted, &adapted_meta);

  CHECK(adapted_meta.attention_mode.to_string() == "full_bidirectional");
  CHECK(adapted_meta.parent == parent_meta.weights_hash);

  auto ta = before.named_tensors();
  auto tb = after.named_tensors();
  REQUIRE(ta.size() == tb.size());
  for (size_t i = 0; i < ta.size(); ++i) {
    CHECK(ta[i].second->data == tb[i].second->data);
  }

  // The same copy refuses a non-causal ancestor: adapting the adapted
  // checkpoint again must fail loudly on the recorded attention mode.
  const RunResult again = run_cli(
      "adapt --config \"" + cfg.string() + "\" --from \"" + adapted +
          "\" --steps 0",
      dir);
  CHECK(again.exit_code == 1);
  CHECK(again.err.find("error: ") == 0);
  CHECK(again.err.find("attention mode") != std::string::npos);
}

TEST_CASE("failures exit nonzero with a one-line error") {
  const fs::path dir = fresh_dir("errors");
  const fs::path cfg = write_config(dir, /*pretrain_steps=*/3);

  SUBCASE("unknown subcommand") {
    const RunResult r = run_cli("frobnicate", dir);
    CHECK(r.exit_code != 0);
    CHECK(!r.err.empty());
  }

  SUBCASE("no subcommand") {
    const RunResult r = run_cli("", dir);
    CHECK(r.exit_code != 0);
  }

  SUBCASE("missing checkpoint") {
    const RunResult r = run_cli(
        "decode --config \"" + cfg.string() +
            "\" --from \"" + (dir / "nope.ckpt").string() + "\" --prompt ab",
        dir);
    CHECK(r.exit_code == 1);
    CHECK(r.err.find("error: ") == 0);
    CHECK(count_lines(r.err) == 1);
  }

  SUBCASE("config typo names the key") {
    json j = json::parse(read_text(cfg.string()));
    j["stages"]["num_stpes"] = 9;
    const fs::path broken = dir / "broken.json";
    std::ofstream(broken) << j.dump();
    const RunResult r = run_cli(
        "pretrain --config \"" + broken.string() + "\"", dir);
    CHECK(r.exit_code == 1);
    CHECK(r.err.find("error: config: unknown key 'num_stpes'") == 0);
    CHECK(count_lines(r.err) == 1);
  }

  SUBCASE("flag validation rejects a bad enum") {
    const RunResult r = run_cli(
        "pretrain --config \"" + cfg.string() + "\" --kind waffle", dir);
    CHECK(r.exit_code != 0);
    CHECK(!r.err.empty());
  }
}
