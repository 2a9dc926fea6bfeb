// End-to-end checks of the command-line binary. The binary path comes from
// the MRC_CLI_BIN environment variable (set by ctest).

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

std::string cli_bin() {
  const char* env = std::getenv("MRC_CLI_BIN");
  REQUIRE(env != nullptr);
  return env;
}

fs::path fixture(const std::string& name) {
  return fs::path(MRC_FIXTURE_DIR) / name;
}

struct RunResult {
  int exit_code = -1;
  std::string out;
};

RunResult run(const std::string& args) {
  const fs::path out_file = fs::temp_directory_path() / "mrc_cli_out.txt";
  const std::string cmd =
      cli_bin() + " " + args + " > " + out_file.string() + " 2>/dev/null";
  const int rc = std::system(cmd.c_str());
  RunResult result;
  result.exit_code = WEXITSTATUS(rc);
  std::ifstream in(out_file);
  std::ostringstream os;
  os << in.rdbuf();
  result.out = os.str();
  return result;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path temp_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("mrc_cli_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const std::string kTinyTrainFlags =
    "--demo-synthetic --tasks synth3 --seed 7 --epochs 5 --batch-size 8 "
    "--lr 3e-3 --hidden 16 --layers 1 --heads 2 --duma-heads 2 "
    "--duma-head-dim 4 --max-len 24 --ff-width 32 --eval-every 20";

}  // namespace

TEST_CASE("help exits zero, unknown flags exit one") {
  CHECK(run("--help").exit_code == 0);
  CHECK(run("train --out /tmp/x --no-such-flag").exit_code == 1);
  CHECK(run("").exit_code == 1);  // a subcommand is required
}

TEST_CASE("data-stats reports counts from DREAM and RACE fixtures") {
  auto result = run("data-stats --dream " + fixture("dream_mini.json").string() +
                    " --race " + fixture("race_mini").string());
  REQUIRE(result.exit_code == 0);
  auto j = nlohmann::json::parse(result.out);
  CHECK(j["dream"]["units"] == 2);
  CHECK(j["dream"]["questions"] == 3);
  CHECK(j["dream"]["options_per_question"]["3"] == 3);
  CHECK(j["race"]["units"] == 2);
  CHECK(j["race"]["questions"] == 3);
  CHECK(j["race"]["options_per_question"]["4"] == 3);
  CHECK(j["race"]["mean_context_words"].get<double>() > 0.0);

  CHECK(run("data-stats").exit_code == 1);
  CHECK(run("data-stats --dream /no/such/file.json").exit_code == 1);
}

TEST_CASE("train consumes the real dataset formats end to end") {
  auto dir = temp_dir("dream_train");
  auto result = run("train --out " + dir.string() + " --dream-train " +
                    fixture("dream_mini.json").string() + " --dream-dev " +
                    fixture("dream_mini.json").string() + " --race-train " +
                    fixture("race_mini").string() + " --race-dev " +
                    fixture("race_mini").string() +
                    " --tasks dream,race --seed 3 --epochs 4 --batch-size 2"
                    " --lr 1e-3 --hidden 16 --layers 1 --heads 2 --duma-heads 2"
                    " --duma-head-dim 4 --max-len 32 --ff-width 32 --eval-every 6");
  REQUIRE(result.exit_code == 0);
  auto manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  REQUIRE(manifest["datasets"].size() == 4);  // train+dev for both tasks
  CHECK(manifest["datasets"][0]["task"] == "dream");
  CHECK(manifest["datasets"][0]["items"] == 3);
  CHECK(manifest["datasets"][0]["content_hash"].get<std::string>().size() == 16);
  CHECK(manifest["datasets"][2]["task"] == "race");

  CHECK(run("train --out " + dir.string() + " --demo-synthetic --tasks nosuch")
            .exit_code == 1);
}

TEST_CASE("gradcheck passes on the micro model") {
  auto result = run("gradcheck --seeds 1");
  CHECK(result.exit_code == 0);
  std::istringstream lines(result.out);
  std::string line, last;
  while (std::getline(lines, line))
    if (!line.empty()) last = line;
  auto summary = nlohmann::json::parse(last);
  CHECK(summary["pass"] == true);
  CHECK(summary["worst_rel_err"].get<double>() < 1e-4);
}

TEST_CASE("config precedence: defaults, then config file, then flags") {
  auto dir = temp_dir("precedence");
  std::ofstream(dir / "cfg.json") << R"({
    "model": {"hidden": 16, "layers": 1, "heads": 2, "duma_heads": 2,
              "duma_head_dim": 4, "max_len": 24, "ff_width": 32},
    "train": {"peak_lr": 0.001, "batch_size": 4, "epochs": 2, "eval_every": 10,
              "seed": 3,
              "tasks": [{"name": "synth3", "kind": "synthetic",
                         "synthetic_train": 16, "synthetic_dev": 8,
                         "synthetic_options": 3, "synthetic_vocab": 20,
                         "synthetic_seed": 2}]}
  })";
  auto result = run("train --out " + (dir / "out").string() + " --config " +
                    (dir / "cfg.json").string() + " --lr 0.002");
  REQUIRE(result.exit_code == 0);
  auto echoed = nlohmann::json::parse(result.out.substr(0, result.out.find('\n')));
  CHECK(echoed["model"]["hidden"] == 16);        // from the config file
  CHECK(echoed["train"]["peak_lr"] == 0.002);    // flag wins over the file
  CHECK(echoed["train"]["batch_size"] == 4);     // file wins over the default
  CHECK(echoed["train"]["tasks"][0]["name"] == "synth3");
}

TEST_CASE("train runs are byte-identical under one seed and manifest") {
  auto dir_a = temp_dir("train_a");
  auto dir_b = temp_dir("train_b");
  auto dir_c = temp_dir("train_c");

  auto a = run("train --out " + dir_a.string() + " " + kTinyTrainFlags);
  REQUIRE(a.exit_code == 0);
  REQUIRE(fs::exists(dir_a / "manifest.json"));
  REQUIRE(fs::exists(dir_a / "metrics.jsonl"));
  REQUIRE(fs::exists(dir_a / "vocab.txt"));
  REQUIRE(fs::exists(dir_a / "best.ckpt"));

  auto b = run("train --out " + dir_b.string() + " " + kTinyTrainFlags);
  REQUIRE(b.exit_code == 0);
  CHECK(read_file(dir_a / "metrics.jsonl") == read_file(dir_b / "metrics.jsonl"));
  CHECK(read_file(dir_a / "best.ckpt") == read_file(dir_b / "best.ckpt"));

  auto c = run("train --out " + dir_c.string() + " --from-manifest " +
               (dir_a / "manifest.json").string());
  REQUIRE(c.exit_code == 0);
  CHECK(read_file(dir_a / "metrics.jsonl") == read_file(dir_c / "metrics.jsonl"));

  SUBCASE("eval and predict consume the trained artifacts") {
    auto eval = run("eval --checkpoint " + (dir_a / "best.ckpt").string() +
                    " --vocab " + (dir_a / "vocab.txt").string() +
                    " --synthetic --synthetic-options 3 --synthetic-vocab 40" +
                    " --synthetic-seed 4242");
    REQUIRE(eval.exit_code == 0);
    auto j = nlohmann::json::parse(eval.out);
    CHECK(j["questions"] == 300);
    CHECK(j["accuracy"].get<double>() >= 0.0);

    const fs::path dump = dir_a / "preds.jsonl";
    auto predict = run("predict --checkpoint " + (dir_a / "best.ckpt").string() +
                       " --vocab " + (dir_a / "vocab.txt").string() +
                       " --synthetic --out " + dump.string());
    REQUIRE(predict.exit_code == 0);
    std::ifstream in(dump);
    std::string line;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
      auto p = nlohmann::json::parse(line);
      CHECK(p.contains("example_id"));
      CHECK(p["probabilities"].size() == 3);
      ++rows;
    }
    CHECK(rows == 300);
  }

  SUBCASE("corrupt checkpoints are a user error, not a crash") {
    const fs::path broken = dir_a / "broken.ckpt";
    std::ofstream(broken, std::ios::binary) << "not a checkpoint";
    auto r = run("eval --checkpoint " + broken.string() + " --vocab " +
                 (dir_a / "vocab.txt").string() + " --synthetic");
    CHECK(r.exit_code == 1);
  }
}
