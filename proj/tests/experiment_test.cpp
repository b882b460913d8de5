#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "laav/experiment.hpp"
#include "support/sentiment_mock.hpp"

using namespace laav;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class ExperimentTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("laav_experiment_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    cfg_path_ = laav::testing::write_sentiment_fixture(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  RunConfig config(std::vector<std::string> overrides = {}) const { return load_run_config(cfg_path_, overrides); }

  int cli(const std::string& args) const {
    const auto cmd = std::string(LAAV_CLI_PATH) + " " + args + " > " + (dir_ / "cli.out").string() + " 2> " +
                     (dir_ / "cli.err").string();
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  }

  fs::path dir_;
  fs::path cfg_path_;
};

}  // namespace

TEST_F(ExperimentTest, BuildVerbalizerIsByteIdenticalAndBounded) {
  const auto cfg = config();
  const auto a = slurp(cmd_build_verbalizer(cfg, 4, 13));
  const auto b = slurp(cmd_build_verbalizer(cfg, 4, 13, dir_ / "again.json"));
  EXPECT_EQ(a, b);
  const auto j = nlohmann::json::parse(a);
  EXPECT_EQ(j["provenance"]["method"], "laav");
  EXPECT_EQ(j["provenance"]["template"], "{TEXT} It was {LABEL} {CONJ} {MASK}.");
  EXPECT_EQ(j["provenance"]["seed"], 13);
  EXPECT_EQ(j["provenance"]["k"], 3);
  std::set<int> seen;
  for (const auto& [cls, toks] : j["verbalizer"]["classes"].items()) {
    EXPECT_LE(toks.size(), 3u);
    for (const auto& t : toks) EXPECT_TRUE(seen.insert(t["token_id"].get<int>()).second);
  }
}

TEST_F(ExperimentTest, PetMultiTokenLabelIsApplicabilityError) {
  nlohmann::json table{{"vocab", {"[CLS]", "good", "napa", "##kasama"}}, {"special_tokens", {"[CLS]"}}};
  std::ofstream(dir_ / "pieces.json") << table.dump();
  const auto cfg = config({"backend=mock:pieces.json", "method=pet", "label_words.negative=napakasama"});
  try {
    (void)cmd_build_verbalizer(cfg, 4, 13);
    FAIL();
  } catch (const ApplicabilityError& e) {
    EXPECT_NE(std::string(e.what()).find("napakasama"), std::string::npos);
  }
  EXPECT_EQ(cli("build-verbalizer -c " + cfg_path_.string() +
                " --set backend=mock:pieces.json --set method=pet --set label_words.negative=napakasama"),
            2);
  EXPECT_NE(slurp(dir_ / "cli.err").find("napakasama"), std::string::npos);
}

TEST_F(ExperimentTest, SingleSeedHasNoStd) {
  const auto cfg = config({"shots=4", "seeds=7"});
  const auto rec = cmd_run_experiment(cfg);
  ASSERT_EQ(rec.cells.size(), 1u);
  EXPECT_EQ(rec.cells[0].status, "completed");
  const auto agg = nlohmann::json::parse(slurp(cfg.run_dir() / "aggregate.json"));
  ASSERT_EQ(agg["rows"].size(), 1u);
  EXPECT_EQ(agg["rows"][0]["seeds"], 1);
  EXPECT_TRUE(agg["rows"][0]["std_macro_f1"].is_null());
  for (const auto& a : rec.cells[0].artifacts) EXPECT_TRUE(fs::exists(a)) << a;
  for (const auto& a : rec.report_artifacts) EXPECT_TRUE(fs::exists(a)) << a;
}

TEST_F(ExperimentTest, FiveSeedsGiveMeanAndStd) {
  const auto cfg = config({"shots=4", "seeds=1,2,3,4,5"});
  const auto rec = cmd_run_experiment(cfg);
  EXPECT_EQ(rec.cells.size(), 5u);
  const auto table = slurp(cfg.run_dir() / "table.txt");
  EXPECT_NE(table.find("100.0 (0.0)"), std::string::npos) << table;
  EXPECT_TRUE(fs::exists(cfg.run_dir() / "plots" / (cfg.run_id() + "_aggregate.svg")));
}

TEST_F(ExperimentTest, ResumeRerunsOnlyIncompleteCells) {
  const auto cfg = config({"shots=4", "seeds=13,21"});
  (void)cmd_run_experiment(cfg);
  const auto keep = cell_paths(cfg, 4, 13);
  const auto hit = cell_paths(cfg, 4, 21);
  const auto keep_status = slurp(keep.status);
  // Simulate a worker killed mid-cell.
  auto st = nlohmann::json::parse(slurp(hit.status));
  st["status"] = "running";
  std::ofstream(hit.status) << st.dump();
  fs::remove(hit.eval);
  EXPECT_EQ(read_cell_status(cfg, 4, 21).status, "failed");

  std::ostringstream log;
  const auto rec = cmd_run_experiment(cfg, log);
  EXPECT_NE(log.str().find("laav_4shot_seed13: completed earlier, skipped"), std::string::npos) << log.str();
  EXPECT_NE(log.str().find("laav_4shot_seed21: running"), std::string::npos);
  EXPECT_EQ(slurp(keep.status), keep_status);
  EXPECT_EQ(rec.failed(), 0u);
  EXPECT_TRUE(fs::exists(hit.eval));
}

TEST_F(ExperimentTest, FailedCellsAreRecordedAndSkippedInAggregation) {
  // 10-shot needs 20 examples per class; the pool has 16.
  const auto cfg = config({"shots=4,10", "seeds=13"});
  std::ostringstream log;
  const auto rec = cmd_run_experiment(cfg, log);
  ASSERT_EQ(rec.cells.size(), 2u);
  EXPECT_EQ(rec.cells[0].status, "completed");
  EXPECT_EQ(rec.cells[1].status, "failed");
  EXPECT_EQ(rec.cells[1].error_kind, "config");
  EXPECT_NE(rec.cells[1].error.find("needed"), std::string::npos);
  EXPECT_NE(log.str().find("warning"), std::string::npos);
  const auto run = nlohmann::json::parse(slurp(cfg.run_dir() / "run.json"));
  EXPECT_EQ(run["cells"][1]["status"], "failed");
  const auto agg = nlohmann::json::parse(slurp(cfg.run_dir() / "aggregate.json"));
  EXPECT_EQ(agg["rows"].size(), 1u);
}

TEST_F(ExperimentTest, SnapshotReproducesCell) {
  const auto cfg = config({"shots=4", "seeds=21"});
  (void)cmd_run_experiment(cfg);
  const auto snap = resolve_config(KeyValueConfig::load(cfg.run_dir() / "config.txt"));
  EXPECT_EQ(snap.run_id(), cfg.run_id());
  const auto p = cell_paths(cfg, 4, 21);
  const auto split = slurp(p.split);
  const auto verb = slurp(p.verbalizer);
  (void)cmd_train(snap, 4, 21);
  EXPECT_EQ(slurp(p.split), split);
  EXPECT_EQ(slurp(p.verbalizer), verb);
  // The snapshot is immutable.
  std::ofstream(cfg.run_dir() / "config.txt", std::ios::app) << "k = 5\n";
  EXPECT_THROW(cmd_train(cfg, 4, 21), ConfigError);
}

TEST_F(ExperimentTest, InterpretAverageIsMeanOfEmittedTokens) {
  const auto cfg = config();
  const auto out = cmd_interpret(cfg, 4, 13, {"laav", "amulap"});
  ASSERT_EQ(out.reports.size(), 2u);
  EXPECT_GT(out.reports[0].average_difference, out.reports[1].average_difference);
  for (const auto& f : out.files) {
    if (f.extension() != ".json") continue;
    const auto j = nlohmann::json::parse(slurp(f));
    std::vector<double> diffs;
    for (const auto& cls : j["per_class"]) {
      for (const auto& t : cls) diffs.push_back(t["difference"].get<double>());
    }
    ASSERT_FALSE(diffs.empty());
    const double mean = std::accumulate(diffs.begin(), diffs.end(), 0.0) / static_cast<double>(diffs.size());
    EXPECT_NEAR(j["average_difference"].get<double>(), mean, 1e-9);
  }
  EXPECT_TRUE(fs::exists(out.plot));
  EXPECT_NE(out.plot.filename().string().find(cfg.run_id() + "_logits_difference"), std::string::npos);
}

TEST_F(ExperimentTest, SearchConjunctionRanksAndFirst) {
  const auto out = cmd_search_conjunction(config(), 4, 13, true);
  ASSERT_FALSE(out.report.ranked.empty());
  EXPECT_EQ(out.report.ranked.front().token, "and");
  ASSERT_EQ(out.shortlist.size(), 2u);  // "and", "of"; the top hit is already listed
  EXPECT_EQ(out.shortlist[0].conj, "and");
  EXPECT_TRUE(fs::exists(out.json));
}

TEST_F(ExperimentTest, CliExitCodes) {
  const auto c = "-c " + cfg_path_.string();
  EXPECT_EQ(cli("run-experiment " + c + " --set shots=4 --set seeds=13"), 0);
  EXPECT_EQ(cli("report " + c + " --set shots=4 --set seeds=13"), 0);
  EXPECT_NE(slurp(dir_ / "cli.out").find("Sample Size"), std::string::npos);
  EXPECT_EQ(cli("evaluate " + c + " --set shots=4 --set seeds=13"), 0);
  EXPECT_EQ(cli("train " + c + " --set nonsense=1"), 2);
  EXPECT_EQ(cli("train " + c + " --set backend=mock:missing.json"), 2);
  EXPECT_EQ(cli("frobnicate"), 2);
  // A test example the mock table has no row for is a backend fault.
  std::ofstream(dir_ / "odd.jsonl") << "{\"text\": \"unseen\", \"label\": \"positive\"}\n";
  const auto cell = config({"shots=4", "seeds=13"}).run_dir() / "cells/laav_4shot_seed13";
  EXPECT_EQ(cli("evaluate " + c + " --set shots=4 --set seeds=13 --set data.test=odd.jsonl --checkpoint " +
                (cell / "checkpoint.bin").string() + " --verbalizer " + (cell / "verbalizer.json").string()),
            1);
  EXPECT_NE(slurp(dir_ / "cli.err").find("internal error"), std::string::npos);
  const std::string env = "LAAV_DEVICE=gpu " + std::string(LAAV_CLI_PATH) + " report " + c + " > /dev/null 2>&1";
  const int rc = std::system(env.c_str());
  EXPECT_EQ(WEXITSTATUS(rc), 2);
}
