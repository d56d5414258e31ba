// Runs the pcgrpo binary end to end in a scratch directory.

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "pcgrpo/io.hpp"
#include "pcgrpo/plot.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("pcgrpo_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  Result run(const std::string& args) const {
    const std::string out = path("stdout.txt"), err = path("stderr.txt");
    const std::string cmd = "cd '" + dir_.string() + "' && '" PCGRPO_CLI "' " + args + " >'" + out + "' 2>'" + err + "'";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, pcgrpo::read_file(out), pcgrpo::read_file(err)};
  }

  fs::path dir_;
};

const std::string kFixtures = PCGRPO_FIXTURES;

}  // namespace

TEST_F(Cli, HelpExitsZero) {
  EXPECT_EQ(run("--help").code, 0);
  EXPECT_EQ(run("train --help").code, 0);
}

TEST_F(Cli, UsageErrorsExitTwoWithUsage) {
  for (const std::string args : {"", "frobnicate", "gen-data --kind rotation", "gen-data --kind cube --out x",
                                 "eval --checkpoint a --dataset b --bogus 1", "rac --records r --window x"}) {
    const auto r = run(args);
    EXPECT_EQ(r.code, 2) << args;
    EXPECT_NE(r.err.find("Usage:"), std::string::npos) << args;
  }
}

TEST_F(Cli, GenDataIsByteIdentical) {
  ASSERT_EQ(run("gen-data --kind mix --mix jigsaw=5,patchfit=5,rotation=5 --seed 7 --out a.jsonl").code, 0);
  ASSERT_EQ(run("gen-data --kind mix --mix jigsaw=5,patchfit=5,rotation=5 --seed 7 --out b.jsonl").code, 0);
  ASSERT_EQ(run("gen-data --kind mix --mix jigsaw=5,patchfit=5,rotation=5 --seed 8 --out c.jsonl").code, 0);
  const auto a = pcgrpo::read_file(path("a.jsonl"));
  EXPECT_EQ(a, pcgrpo::read_file(path("b.jsonl")));
  EXPECT_NE(a, pcgrpo::read_file(path("c.jsonl")));
  std::map<std::string, int> kinds;
  for (const auto& line : pcgrpo::split_lines(a))
    if (!line.empty()) ++kinds[nlohmann::json::parse(line)["kind"].get<std::string>()];
  EXPECT_EQ(kinds, (std::map<std::string, int>{{"jigsaw", 5}, {"patchfit", 5}, {"rotation", 5}}));
}

TEST_F(Cli, GenDataCountZeroIsEmpty) {
  ASSERT_EQ(run("gen-data --kind jigsaw --count 0 --out e.jsonl").code, 0);
  EXPECT_TRUE(fs::exists(path("e.jsonl")));
  EXPECT_EQ(fs::file_size(path("e.jsonl")), 0u);
}

TEST_F(Cli, GenDataFixedParams) {
  ASSERT_EQ(run("gen-data --kind jigsaw --rows 2 --cols 3 --count 4 --out j.jsonl").code, 0);
  for (const auto& line : pcgrpo::split_lines(pcgrpo::read_file(path("j.jsonl"))))
    if (!line.empty()) {
      const auto j = nlohmann::json::parse(line);
      EXPECT_EQ(j["params"]["rows"], 2);
      EXPECT_EQ(j["params"]["cols"], 3);
    }
  EXPECT_EQ(run("gen-data --kind jigsaw --rows 2 --cols 5 --count 1 --out j.jsonl").code, 2);
  EXPECT_EQ(run("gen-data --kind patchfit --decoys 4 --count 1 --out p.jsonl").code, 2);
  EXPECT_EQ(run("gen-data --kind rotation --count 1 --source-dir missing --out r.jsonl").code, 2);
}

TEST_F(Cli, TrainEvalPipeline) {
  ASSERT_EQ(run("gen-data --kind rotation --count 64 --seed 1 --out train.jsonl").code, 0);
  ASSERT_EQ(run("gen-data --kind rotation --count 1000 --seed 2 --out test.jsonl").code, 0);
  fs::create_directories(path("ck0"));
  {
    std::ofstream cfg(path("untrained.json"));
    cfg << R"({"dataset_path": "train.jsonl", "max_steps": 1, "checkpoint_dir": "ck0",
               "grpo": {"learning_rate": 0.0}})";
  }
  const auto tr = run("train --config untrained.json");
  ASSERT_EQ(tr.code, 0) << tr.err;
  const std::string ckpt = path("ck0/final.ckpt");
  const auto before = pcgrpo::read_file(ckpt);

  const auto ev = run("eval --checkpoint ck0/final.ckpt --dataset test.jsonl --samples 8 --out ev.json");
  ASSERT_EQ(ev.code, 0) << ev.err;
  const auto report = nlohmann::json::parse(pcgrpo::read_file(path("ev.json")));
  EXPECT_EQ(report, nlohmann::json::parse(ev.out));
  EXPECT_EQ(report["rotation"]["items"], 1000);
  EXPECT_NEAR(report["rotation"]["sampled_reward"].get<double>(), 0.25, 0.02);
  EXPECT_EQ(pcgrpo::read_file(ckpt), before);

  ASSERT_EQ(run("gen-data --kind jigsaw --rows 2 --cols 2 --count 3 --out jig.jsonl").code, 0);
  EXPECT_EQ(run("eval --checkpoint ck0/final.ckpt --dataset jig.jsonl").code, 2);
  EXPECT_EQ(run("eval --checkpoint missing.ckpt --dataset test.jsonl").code, 2);
}

TEST_F(Cli, TrainWritesMetricsRecordsAndResumes) {
  ASSERT_EQ(run("gen-data --kind rotation --count 32 --seed 3 --out train.jsonl").code, 0);
  fs::create_directories(path("ck"));
  {
    std::ofstream cfg(path("cfg.json"));
    cfg << R"({"dataset_path": "train.jsonl", "epochs": 2, "checkpoint_dir": "ck", "checkpoint_every": 4,
               "metrics_path": "metrics.csv", "records_path": "records.jsonl", "rac_sample_rate": 1.0,
               "grpo": {"batch_size": 4, "learning_rate": 0.5}, "care": {"enabled": true}})";
  }
  ASSERT_EQ(run("train --config cfg.json").code, 0);
  const auto metrics = pcgrpo::read_file(path("metrics.csv"));
  const auto final_ckpt = pcgrpo::read_file(path("ck/final.ckpt"));
  const auto records = pcgrpo::read_file(path("records.jsonl"));
  EXPECT_EQ(pcgrpo::plot::parse_csv(metrics).rows(), 16u);
  EXPECT_FALSE(pcgrpo::read_file(path("records.jsonl")).empty());

  ASSERT_EQ(run("train --config cfg.json --resume ck/step-000008.ckpt").code, 0);
  EXPECT_EQ(pcgrpo::read_file(path("ck/final.ckpt")), final_ckpt);
  EXPECT_EQ(pcgrpo::read_file(path("metrics.csv")), metrics);
  EXPECT_EQ(pcgrpo::read_file(path("records.jsonl")), records);

  const auto rac = run("rac --records records.jsonl --window 4 --out rac.csv");
  ASSERT_EQ(rac.code, 0) << rac.err;
  const auto series = pcgrpo::plot::parse_csv(pcgrpo::read_file(path("rac.csv")));
  EXPECT_EQ(series.header, (std::vector<std::string>{"step", "rac"}));
  EXPECT_EQ(series.rows(), 16u);
  for (const auto& v : series.columns[1]) EXPECT_EQ(v, 1.0);

  std::ofstream(path("bad.json")) << R"({"dataset_path": "train.jsonl", "grpo": {"G": 1}})";
  EXPECT_EQ(run("train --config bad.json").code, 2);
  std::ofstream(path("unknown.json")) << R"({"dataset_path": "train.jsonl", "colour": 3})";
  EXPECT_EQ(run("train --config unknown.json").code, 2);
}

TEST_F(Cli, PlotWindowOneReproducesMetrics) {
  const std::string csv = "step,reward_mean,rac\n0,0.25,1\n1,0.5,\n2,0.75,0.5\n3,0.75,1\n";
  std::ofstream(path("metrics.csv")) << csv;
  ASSERT_EQ(run("plot --metrics metrics.csv --window 1 --out m.svg").code, 0);
  EXPECT_EQ(pcgrpo::read_file(path("m.csv")), csv);
  EXPECT_NE(pcgrpo::read_file(path("m.svg")).find("<polyline"), std::string::npos);

  std::ofstream(path("bad.csv")) << "step,a\n0,zz\n";
  EXPECT_EQ(run("plot --metrics bad.csv --out b.svg").code, 2);
  EXPECT_EQ(run("plot --metrics metrics.csv --window 0 --out b.svg").code, 2);
}

TEST_F(Cli, HeuristicRacOnConsistentFixture) {
  const auto r = run("rac --records '" + kFixtures + "/consistent_records.jsonl' --window 3");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "step,rac\n0,1\n1,1\n2,1\n");
}

TEST_F(Cli, ExternalRacOverExec) {
  std::ofstream(path("tmpl.txt")) << "Q: {question} R: {rationale} A: {answer}";
  const auto r = run("rac --records '" + kFixtures +
                     "/consistent_records.jsonl' --judge external --endpoint 'exec:while read l; do echo 0; done' "
                     "--template @tmpl.txt --window 2");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "step,rac\n0,0\n1,0\n2,0\n");
  EXPECT_EQ(run("rac --records '" + kFixtures + "/consistent_records.jsonl' --judge external --endpoint 'exec:true' "
                "--template @tmpl.txt")
                .code,
            1);
  EXPECT_EQ(run("rac --records '" + kFixtures + "/consistent_records.jsonl' --judge external --template x").code, 2);
}

TEST_F(Cli, AuditOracleFixture) {
  const auto r = run("audit --items '" + kFixtures + "/audit_oracle.jsonl' --pool r2,oracle,r1 --out report.json");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = nlohmann::json::parse(pcgrpo::read_file(path("report.json")));
  EXPECT_EQ(report["best_committee"], nlohmann::json({"oracle"}));
  EXPECT_EQ(report["K"], 1);
  EXPECT_DOUBLE_EQ(report["objective"].get<double>(), 1.3);
  EXPECT_TRUE(fs::exists(path("report.kept.jsonl")));
  EXPECT_TRUE(fs::exists(path("report.removed.jsonl")));
  const auto kept = pcgrpo::split_lines(pcgrpo::read_file(path("report.kept.jsonl")));
  const auto removed = pcgrpo::split_lines(pcgrpo::read_file(path("report.removed.jsonl")));
  auto count = [](const std::vector<std::string>& ls) {
    return std::count_if(ls.begin(), ls.end(), [](const std::string& l) { return !l.empty(); });
  };
  EXPECT_EQ(count(kept) + count(removed), 6);

  const auto all = run("audit --items '" + kFixtures + "/audit_oracle.jsonl' --out all.json");
  ASSERT_EQ(all.code, 0) << all.err;
  EXPECT_EQ(nlohmann::json::parse(pcgrpo::read_file(path("all.json")))["best_committee"],
            nlohmann::json({"oracle"}));
  EXPECT_EQ(run("audit --items '" + kFixtures + "/audit_oracle.jsonl' --pool ghost --out x.json").code, 2);
}
