// Exercises the installed binary end to end through popen; NON_CLI_PATH is
// injected by the build so the tests always spawn the freshly built tool.

#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <regex>
#include <sstream>
#include <string>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CmdResult {
  int status = -1;
  std::string out;  // stdout and stderr combined
};

CmdResult run_cli(const std::string& args) {
  CmdResult r;
  const std::string cmd = std::string(NON_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) r.out.append(buf, n);
  const int rc = pclose(pipe);
  if (WIFEXITED(rc)) r.status = WEXITSTATUS(rc);
  return r;
}

class CliFlow : public ::testing::Test {
 protected:
  static fs::path root_;

  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("non-cli-" + std::to_string(::getpid()));
    fs::create_directories(root_ / "data");
    write_dataset();
  }

  static void TearDownTestSuite() { fs::remove_all(root_); }

  static void write_dataset() {
    std::mt19937 rng(11);
    std::uniform_int_distribution<int> cat(0, 9);
    std::normal_distribution<double> num(0.0, 1.0);
    std::uniform_real_distribution<double> drop(0.0, 1.0);
    auto gen = [&](const fs::path& p, int n) {
      std::ofstream f(p);
      f << "c0,c1,x0,y\n";
      for (int i = 0; i < n; ++i) {
        const int a = cat(rng), b = cat(rng);
        const double x = num(rng);
        const double score = (a - 4.5) / 3.0 + (b % 3 - 1) * 0.8 + 0.9 * x;
        f << (drop(rng) > 0.03 ? "a" + std::to_string(a) : "") << ','
          << (drop(rng) > 0.03 ? "b" + std::to_string(b) : "") << ','
          << (drop(rng) > 0.03 ? std::to_string(x) : "") << ',' << (score > 0 ? 1 : 0)
          << '\n';
      }
    };
    gen(root_ / "data" / "train.csv", 400);
    gen(root_ / "data" / "test.csv", 150);

    std::ofstream schema(root_ / "data" / "schema.txt");
    schema << "delimiter comma\nlabel y\n"
              "field c0 categorical\nfield c1 categorical\nfield x0 numerical\n";

    json cfg{
        {"data",
         {{"train", "train.csv"},
          {"test", "test.csv"},
          {"schema", "schema.txt"},
          {"min_frequency", 2},
          {"valid_fraction", 0.2},
          {"seed", 7}}},
        {"model",
         {{"embedding_dim", 8},
          {"field_wise", {{"multipliers", {1.0}}, {"refine", "none"}}},
          {"operations", {"lr", "dnn"}},
          {"dnn_widths", {32, 16}},
          {"fusion_widths", {16}}}},
        {"training",
         {{"learning_rate", 0.1},
          {"batch_size", 64},
          {"epochs", 5},
          {"patience", 3},
          {"alpha", 0.3}}},
        {"search",
         {{"n_trials", 3},
          {"workers", 2},
          {"space",
           {{"embedding_dims", {4, 8}},
            {"dnn_widths", {16, 32}},
            {"max_dnn_depth", 2},
            {"fieldwise_multipliers", {1.0}},
            {"max_fieldwise_depth", 1}}}}}};
    std::ofstream(root_ / "data" / "run.json") << cfg.dump(2);
  }

  static std::string config() { return (root_ / "data" / "run.json").string(); }

  // every test works in its own artifact directory to stay order-independent
  std::string out_dir(const std::string& name) {
    const fs::path p = root_ / name;
    fs::create_directories(p);
    return p.string();
  }

  static std::string base_args(const std::string& out) {
    return "--config " + config() + " --out " + out;
  }
};

fs::path CliFlow::root_;

double extract_auc(const std::string& text) {
  std::smatch m;
  if (!std::regex_search(text, m, std::regex(R"(AUC: (\d\.\d{4}))"))) return -1.0;
  return std::stod(m[1]);
}

}  // namespace

TEST_F(CliFlow, PrepareTrainEvaluatePipeline) {
  const std::string out = out_dir("pipeline");

  auto prep = run_cli("prepare " + base_args(out));
  ASSERT_EQ(prep.status, 0) << prep.out;
  EXPECT_TRUE(fs::exists(fs::path(out) / "vocab.json"));
  EXPECT_TRUE(fs::exists(fs::path(out) / "stats.json"));

  auto train = run_cli("train " + base_args(out));
  ASSERT_EQ(train.status, 0) << train.out;
  EXPECT_TRUE(fs::exists(fs::path(out) / "checkpoint.json"));
  EXPECT_TRUE(fs::exists(fs::path(out) / "metrics.jsonl"));
  // one metric record per epoch, each a parsable JSON line
  std::ifstream metrics(fs::path(out) / "metrics.jsonl");
  std::string line;
  std::size_t epochs = 0;
  while (std::getline(metrics, line)) {
    json j = json::parse(line);
    EXPECT_EQ(j.at("epoch").get<std::size_t>(), ++epochs);
    EXPECT_TRUE(j.contains("valid_auc"));
  }
  EXPECT_EQ(epochs, 5u);

  auto eval = run_cli("evaluate " + base_args(out));
  ASSERT_EQ(eval.status, 0) << eval.out;
  // the headline number is printed with exactly 4 decimals
  const double test_auc = extract_auc(eval.out);
  ASSERT_GE(test_auc, 0.0) << eval.out;
  EXPECT_GT(test_auc, 0.8);  // the synthetic task is easy

  // the validation score seen by evaluate matches the best epoch from train,
  // i.e. both commands derive the same split from the same master seed
  std::smatch m;
  std::string train_out = train.out;
  ASSERT_TRUE(std::regex_search(train_out, m,
                                std::regex(R"(best epoch \d+  valid AUC (\d\.\d{4}))")));
  const std::string best_valid = m[1];
  auto eval_valid = run_cli("evaluate " + base_args(out) + " --split valid");
  ASSERT_EQ(eval_valid.status, 0) << eval_valid.out;
  EXPECT_NE(eval_valid.out.find("AUC: " + best_valid), std::string::npos) << eval_valid.out;

  // --json-lines switches to machine format
  auto eval_json = run_cli("evaluate " + base_args(out) + " --json-lines");
  ASSERT_EQ(eval_json.status, 0);
  json j = json::parse(eval_json.out);
  EXPECT_EQ(j.at("split"), "test");
  EXPECT_NEAR(j.at("auc").get<double>(), test_auc, 5e-5);
}

TEST_F(CliFlow, EvaluateIsReproducibleAndSeedSensitive) {
  const std::string out = out_dir("seeds");
  ASSERT_EQ(run_cli("prepare " + base_args(out)).status, 0);
  ASSERT_EQ(run_cli("train " + base_args(out)).status, 0);

  auto a = run_cli("evaluate " + base_args(out) + " --split valid");
  auto b = run_cli("evaluate " + base_args(out) + " --split valid");
  ASSERT_EQ(a.status, 0);
  EXPECT_EQ(a.out, b.out);  // same config seed, same split, same score

  // a different master seed draws a different validation split
  auto c = run_cli("evaluate " + base_args(out) + " --split valid --seed 8");
  ASSERT_EQ(c.status, 0);
  EXPECT_NE(c.out, a.out);
}

TEST_F(CliFlow, SearchHonorsFixedOperationsAndFeedsReport) {
  const std::string out = out_dir("search");
  ASSERT_EQ(run_cli("prepare " + base_args(out)).status, 0);

  auto search = run_cli("search " + base_args(out) + " --fix-operations lr,dnn");
  ASSERT_EQ(search.status, 0) << search.out;
  EXPECT_TRUE(fs::exists(fs::path(out) / "best-checkpoint.json"));

  std::ifstream trials(fs::path(out) / "trials.jsonl");
  std::string line;
  std::size_t n_trials = 0;
  bool saw_summary = false;
  while (std::getline(trials, line)) {
    json j = json::parse(line);
    if (j.value("summary", false)) {
      saw_summary = true;
      EXPECT_TRUE(j.contains("best_trial"));
      continue;
    }
    ++n_trials;
    // the pinned operation set shows up verbatim in every trial record
    EXPECT_EQ(j.at("config").at("model").at("operations"), json({"lr", "dnn"}));
    EXPECT_FALSE(j.at("failed").get<bool>());
  }
  EXPECT_EQ(n_trials, 3u);
  EXPECT_TRUE(saw_summary);

  auto report = run_cli("report --out " + out);
  ASSERT_EQ(report.status, 0) << report.out;
  EXPECT_NE(report.out.find("best: trial"), std::string::npos);
  auto report_json = run_cli("report --out " + out + " --json-lines");
  ASSERT_EQ(report_json.status, 0);
  EXPECT_EQ(json::parse(report_json.out).at("trials").get<int>(), 3);
}

TEST_F(CliFlow, AnalyzeRefusesUntrainedCheckpointsWithoutOverride) {
  const std::string out = out_dir("analyze");
  ASSERT_EQ(run_cli("prepare " + base_args(out)).status, 0);
  ASSERT_EQ(run_cli("train " + base_args(out)).status, 0);

  auto ok = run_cli("analyze " + base_args(out));
  ASSERT_EQ(ok.status, 0) << ok.out;
  EXPECT_NE(ok.out.find("micro average"), std::string::npos);
  EXPECT_TRUE(fs::exists(fs::path(out) / "similarity.json"));
  EXPECT_TRUE(fs::exists(fs::path(out) / "embeddings.tsv"));

  // flip the checkpoint back to untrained and expect a refusal
  const fs::path ck_path = fs::path(out) / "checkpoint.json";
  json ck;
  std::ifstream(ck_path) >> ck;
  ck["trained"] = false;
  std::ofstream(ck_path) << ck.dump();

  auto refused = run_cli("analyze " + base_args(out));
  EXPECT_EQ(refused.status, 1);
  EXPECT_NE(refused.out.find("--allow-untrained"), std::string::npos) << refused.out;

  auto forced = run_cli("analyze " + base_args(out) + " --allow-untrained");
  EXPECT_EQ(forced.status, 0) << forced.out;
}

TEST_F(CliFlow, MissingArtifactsNameThePrerequisiteCommand) {
  const std::string fresh = out_dir("fresh");
  auto train = run_cli("train " + base_args(fresh));
  EXPECT_EQ(train.status, 2);
  EXPECT_NE(train.out.find("non prepare"), std::string::npos) << train.out;

  auto report = run_cli("report --out " + fresh);
  EXPECT_EQ(report.status, 2);
  EXPECT_NE(report.out.find("non search"), std::string::npos) << report.out;

  const std::string prepared = out_dir("prepared-only");
  ASSERT_EQ(run_cli("prepare " + base_args(prepared)).status, 0);
  auto eval = run_cli("evaluate " + base_args(prepared));
  EXPECT_EQ(eval.status, 2);
  EXPECT_NE(eval.out.find("non train"), std::string::npos) << eval.out;
}

TEST_F(CliFlow, UsageAndConfigProblemsExitOne) {
  EXPECT_EQ(run_cli("").status, 1);                        // no subcommand
  EXPECT_EQ(run_cli("train").status, 1);                   // --config is required
  EXPECT_EQ(run_cli("frobnicate --config x").status, 1);   // unknown subcommand
  EXPECT_EQ(run_cli("--help").status, 0);

  auto missing = run_cli("prepare --config " + (root_ / "nope.json").string());
  EXPECT_EQ(missing.status, 1);

  // unknown keys in the config document are rejected, not ignored
  const fs::path bad = root_ / "bad.json";
  json cfg;
  std::ifstream(config()) >> cfg;
  cfg["data"]["typo"] = 1;
  std::ofstream(bad) << cfg.dump();
  auto rejected = run_cli("prepare --config " + bad.string() + " --out " + out_dir("bad"));
  EXPECT_EQ(rejected.status, 1);
  EXPECT_NE(rejected.out.find("typo"), std::string::npos) << rejected.out;

  auto bad_split = run_cli("evaluate " + base_args(out_dir("bad2")) + " --split nope");
  EXPECT_EQ(bad_split.status, 1);
}
