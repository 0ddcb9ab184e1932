#include <gtest/gtest.h>
#include <sys/wait.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "srpvqa_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string(SRPVQA_CLI_PATH) + " " + args + " > " + (workdir() / "stdout.txt").string() +
                          " 2> " + (workdir() / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string path(const std::string& name) { return (workdir() / name).string(); }

std::size_t line_count(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

}  // namespace

TEST(Cli, GenIsByteIdenticalAcrossRuns) {
  ASSERT_EQ(run("gen --n-scenes 40 --seed 9 --out " + path("a.jsonl")), 0);
  ASSERT_EQ(run("gen --n-scenes 40 --seed 9 --out " + path("b.jsonl")), 0);
  EXPECT_EQ(slurp(path("a.jsonl")), slurp(path("b.jsonl")));
  ASSERT_EQ(run("gen --n-scenes 40 --seed 10 --out " + path("c.jsonl")), 0);
  EXPECT_NE(slurp(path("a.jsonl")), slurp(path("c.jsonl")));
}

TEST(Cli, GenWritesRequestedSceneCount) {
  ASSERT_EQ(run("gen --n-scenes 100 --out " + path("hundred.jsonl")), 0);
  EXPECT_EQ(line_count(slurp(path("hundred.jsonl"))), 101u);  // header + records
}

TEST(Cli, AlphaBelowBetaFailsWithoutWriting) {
  const int code = run("gen --n-scenes 5 --alpha 0.3 --beta 0.5 --out " + path("never.jsonl"));
  EXPECT_EQ(code, 1);
  EXPECT_FALSE(fs::exists(path("never.jsonl")));
  EXPECT_NE(slurp(workdir() / "stderr.txt").find("alpha"), std::string::npos);
}

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("train --dataset x.jsonl"), 1);
  EXPECT_EQ(run("gen --n-scenes 5 --inputs everything --out " + path("bad.jsonl")), 1);
}

TEST(Cli, MissingOrCorruptInputsExitTwo) {
  EXPECT_EQ(run("train --dataset " + path("does_not_exist.jsonl") + " --out " + path("m.ckpt")), 2);
  std::ofstream(path("garbage.jsonl")) << "{\"schema_version\": 7}\n";
  EXPECT_EQ(run("train --dataset " + path("garbage.jsonl") + " --out " + path("m.ckpt")), 2);
  EXPECT_NE(slurp(workdir() / "stderr.txt").find("schema_version"), std::string::npos);
}

TEST(Cli, TrainEvalVisualizeEndToEnd) {
  ASSERT_EQ(run("gen --n-scenes 25 --seed 4 --out " + path("small.jsonl")), 0);
  ASSERT_EQ(run("train --dataset " + path("small.jsonl") + " --epochs 2 --out " + path("small.ckpt")), 0);
  EXPECT_EQ(line_count(slurp(path("small.ckpt.log.jsonl"))), 2u);
  ASSERT_EQ(run("eval --checkpoint " + path("small.ckpt") + " --dataset " + path("small.jsonl") + " --out " +
                path("metrics.json") + " --dump " + path("dump.jsonl")),
            0);
  const auto metrics = nlohmann::json::parse(slurp(path("metrics.json")));
  EXPECT_EQ(metrics["schema_version"], 1);
  // The dump recounts to the reported totals.
  std::istringstream dump(slurp(path("dump.jsonl")));
  std::string line;
  std::size_t total = 0, correct = 0;
  while (std::getline(dump, line)) {
    const auto j = nlohmann::json::parse(line);
    ++total;
    correct += j["predicted"] == j["answer"];
  }
  EXPECT_EQ(metrics["overall"]["total"], total);
  EXPECT_EQ(metrics["overall"]["correct"], correct);

  ASSERT_EQ(run("visualize --checkpoint " + path("small.ckpt") + " --dataset " + path("small.jsonl") +
                " --example 2 --out " + path("vis")),
            0);
  EXPECT_TRUE(fs::exists(path("vis/example_2_triplets.json")));
  EXPECT_TRUE(fs::exists(path("vis/example_2_self.pgm")));

  // A checkpoint whose answers differ from the dataset is refused.
  ASSERT_EQ(run("gen --n-scenes 2 --seed 5 --out " + path("tiny.jsonl")), 0);
  const auto tiny_vocab = nlohmann::json::parse(slurp(path("tiny.jsonl")).substr(0, slurp(path("tiny.jsonl")).find('\n')));
  const auto small_vocab =
      nlohmann::json::parse(slurp(path("small.jsonl")).substr(0, slurp(path("small.jsonl")).find('\n')));
  if (tiny_vocab["answer_vocab"] != small_vocab["answer_vocab"]) {
    EXPECT_EQ(run("eval --checkpoint " + path("small.ckpt") + " --dataset " + path("tiny.jsonl")), 2);
  }

  // Corrupting the checkpoint is a data error.
  std::string bytes = slurp(path("small.ckpt"));
  bytes[bytes.size() - 10] ^= 0x20;
  std::ofstream(path("bad.ckpt"), std::ios::binary) << bytes;
  EXPECT_EQ(run("eval --checkpoint " + path("bad.ckpt") + " --dataset " + path("small.jsonl")), 2);
}

TEST(Cli, DivergentTrainingExitsThree) {
  ASSERT_EQ(run("gen --n-scenes 10 --seed 4 --out " + path("div.jsonl")), 0);
  EXPECT_EQ(run("train --dataset " + path("div.jsonl") + " --epochs 2 --lr 1e300 --out " + path("div.ckpt")), 3);
  EXPECT_FALSE(fs::exists(path("div.ckpt")));
}
