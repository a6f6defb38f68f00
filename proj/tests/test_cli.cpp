#include <gtest/gtest.h>

#include <chrono>
#include <csignal>
#include <sstream>
#include <thread>

#include <sys/wait.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "dialectid/cli.hpp"
#include "support/fixtures.hpp"

using testing_support::TempDir;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Result r;
  r.code = dialectid::cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

/// Small synthetic corpus shared by the tests in this file.
class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir();
    const auto r = run({"synth", "--classes", "2", "--sentences", "60", "--divergence", "1", "--lexicon-size", "100",
                        "--sentences-per-document", "10", "--out", (dir_->path() / "corpus").string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static std::string manifest() { return (dir_->path() / "corpus" / "manifest.tsv").string(); }
  static fs::path path(const std::string& name) { return dir_->path() / name; }

  static inline TempDir* dir_ = nullptr;
};

const std::vector<std::string> kSmall{"--min-variety-tokens", "0"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST(Cli, HelpExitsZero) {
  const auto r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("evaluate"), std::string::npos);
  EXPECT_EQ(run({"train", "--help"}).code, 0);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({"stats", "/nonexistent/manifest.tsv"}).code, 2);
  EXPECT_EQ(run({"synth", "--divergence", "1.5", "--out", "/tmp/never-written"}).code, 2);
  EXPECT_FALSE(fs::exists("/tmp/never-written"));
}

TEST_F(CliTest, UnknownArchitectureListsValidOnes) {
  const auto r = run({"train", "rnn", manifest(), "--out", path("x").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("textcat, svm, cnn, lstm, clstm"), std::string::npos) << r.err;
}

TEST_F(CliTest, NeuralFlagsRejectedForOtherArchitectures) {
  const auto r = run(with({"train", "textcat", manifest(), "--epochs", "3", "--out", path("x").string()}, kSmall));
  EXPECT_EQ(r.code, 2);
}

TEST_F(CliTest, StatsCsvAndJson) {
  const auto csv = run({"stats", manifest(), "--out", path("stats").string()});
  ASSERT_EQ(csv.code, 0) << csv.err;
  EXPECT_EQ(csv.out.substr(0, csv.out.find('\n')), "label,docs,tokens,chars,ratio");
  EXPECT_TRUE(fs::exists(path("stats") / "stats.csv"));

  const auto js = run({"stats", manifest(), "--json", "--out", path("stats").string()});
  ASSERT_EQ(js.code, 0) << js.err;
  const auto j = nlohmann::json::parse(testing_support::read_file(path("stats") / "stats.json"));
  EXPECT_EQ(j.at("varieties").size(), 2u);
  EXPECT_EQ(j.at("varieties")[0].at("docs"), 6);
}

TEST_F(CliTest, TrainThenClassify) {
  const auto model = path("model-textcat").string();
  const auto t = run(with({"train", "textcat", manifest(), "--model", model}, kSmall));
  ASSERT_EQ(t.code, 0) << t.err;

  const auto lines = testing_support::read_file(path("corpus") / "docs" / "HP-0000.txt");
  const auto first = lines.substr(0, lines.find('\n'));
  testing_support::write_file(path("input.txt"), first + "\n\n" + first + "\n");
  const auto c = run({"classify", model, path("input.txt").string(), "--top", "2"});
  ASSERT_EQ(c.code, 0) << c.err;
  std::istringstream in(c.out);
  std::string l1, l2, l3;
  std::getline(in, l1);
  std::getline(in, l2);
  std::getline(in, l3);
  EXPECT_EQ(l1.substr(0, 5), "1\tHP\t");
  EXPECT_EQ(std::count(l1.begin(), l1.end(), '\t'), 3);
  EXPECT_EQ(l2, "2\tSKIP");
  EXPECT_EQ(l3.substr(0, 5), "3\tHP\t");
}

TEST_F(CliTest, TrainLstmWritesLogAndArtifacts) {
  const auto model = path("model-lstm");
  const auto t = run(with({"train", "lstm", manifest(), "--model", model.string(), "--epochs", "1", "--dim", "8",
                           "--hidden-size", "8", "--embedding-epochs", "1", "--buckets", "4096"},
                          kSmall));
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_TRUE(fs::exists(model / "manifest.json"));
  EXPECT_TRUE(fs::exists(model / "embeddings.bin"));
  EXPECT_TRUE(fs::exists(model / "classifier.bin"));
  const auto log = testing_support::read_file(model / "train_log.csv");
  EXPECT_EQ(log.substr(0, log.find('\n')), "epoch,train_loss,heldout_loss");

  const auto d = run({"dump", model.string(), "zzz", "-k", "2"});
  EXPECT_EQ(d.code, 0) << d.err;
}

TEST_F(CliTest, ForeignEmbeddingsAreADataError) {
  const auto small = path("model-svm8");
  const auto wide = path("model-svm6");
  ASSERT_EQ(run(with({"train", "svm", manifest(), "--model", small.string(), "--dim", "8", "--embedding-epochs", "1",
                      "--buckets", "4096"},
                     kSmall))
                .code,
            0);
  ASSERT_EQ(run(with({"train", "svm", manifest(), "--model", wide.string(), "--dim", "6", "--embedding-epochs", "1",
                      "--buckets", "4096"},
                     kSmall))
                .code,
            0);
  testing_support::write_file(path("one.txt"), "abcde fghij klmno\n");
  const auto r = run({"classify", small.string(), path("one.txt").string(), "--embeddings",
                      (wide / "embeddings.bin").string()});
  EXPECT_EQ(r.code, 3) << r.err;
}

TEST_F(CliTest, EvaluateIsReproducible) {
  auto args = [&](const std::string& out) {
    return with({"evaluate", manifest(), "--arch", "textcat,svm", "--runs", "2", "--dim", "8", "--embedding-epochs",
                 "1", "--buckets", "4096", "--out", out},
                kSmall);
  };
  ASSERT_EQ(run(args(path("eval-a").string())).code, 0);
  ASSERT_EQ(run(args(path("eval-b").string())).code, 0);
  for (const auto* name : {"textcat_report.json", "svm_report.json", "merged_report.csv", "svm_confusion_run1.csv"}) {
    EXPECT_EQ(testing_support::read_file(path("eval-a") / name), testing_support::read_file(path("eval-b") / name))
        << name;
  }
  const auto j = nlohmann::json::parse(testing_support::read_file(path("eval-a") / "svm_report.json"));
  EXPECT_EQ(j.at("seed"), dialectid::cli::kDefaultSeed);
  EXPECT_EQ(j.at("run_seeds").size(), 2u);
}

TEST_F(CliTest, FailedEvaluateLeavesNoOutput) {
  const auto out = path("eval-fail");
  // Every variety falls under the token threshold.
  const auto r = run({"evaluate", manifest(), "--arch", "textcat", "--out", out.string(), "--min-variety-tokens",
                      "100000000"});
  EXPECT_NE(r.code, 0);
  EXPECT_FALSE(fs::exists(out));
}

TEST_F(CliTest, InterruptRemovesPartialOutputAndExitsNonZero) {
  const auto out = path("eval-interrupted");
  const std::string big = path("big").string();
  ASSERT_EQ(run({"synth", "--classes", "4", "--sentences", "400", "--divergence", "0.5", "--out", big}).code, 0);

  const pid_t pid = ::fork();
  ASSERT_GE(pid, 0);
  if (pid == 0) {
    std::freopen("/dev/null", "w", stdout);
    std::freopen("/dev/null", "w", stderr);
    const std::string manifest_path = big + "/manifest.tsv";
    const std::string out_path = out.string();
    ::execl(DIALECTID_CLI_PATH, "dialectid", "evaluate", manifest_path.c_str(), "--arch", "textcat,lstm", "--runs", "5",
            "--min-variety-tokens", "0", "--out", out_path.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  const auto staging_prefix = "." + out.filename().string() + ".partial-";
  auto staging_exists = [&] {
    for (const auto& e : fs::directory_iterator(out.parent_path())) {
      if (e.path().filename().string().rfind(staging_prefix, 0) == 0) return true;
    }
    return false;
  };
  // TextCat finishes and stages its reports within a second; the LSTM runs take minutes.
  std::this_thread::sleep_for(std::chrono::seconds(2));
  ::kill(pid, SIGINT);

  int status = 0;
  pid_t done = 0;
  const auto kill_deadline = std::chrono::steady_clock::now() + std::chrono::seconds(30);
  while ((done = ::waitpid(pid, &status, WNOHANG)) == 0 && std::chrono::steady_clock::now() < kill_deadline) {
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  if (done == 0) {
    ::kill(pid, SIGKILL);
    ::waitpid(pid, &status, 0);
    FAIL() << "process did not stop after SIGINT";
  }
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 4);
  EXPECT_FALSE(fs::exists(out));
  EXPECT_FALSE(staging_exists());
}
