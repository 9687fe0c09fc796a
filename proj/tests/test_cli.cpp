#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "support/fixtures.hpp"
#include "support/run.hpp"
#include "support/synthetic.hpp"
#include "vqaforge/evalmetric.hpp"

using namespace vqaforge;
using namespace vqaforge::testsupport;
namespace fs = std::filesystem;

namespace {

const std::string kCli = VQAFORGE_CLI_PATH;

struct Workspace {
  fs::path dir;
  VQAFixture fx;
  Workspace() {
    dir = fs::temp_directory_path() / ("vqaforge_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fx = write_vqa_fixture(dir);
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string p(const std::string& name) const { return (dir / name).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::string train_command(const Workspace& ws, const std::string& extra) {
  return kCli + " train --model 4 --questions " + ws.fx.questions_path + " --annotations " +
         ws.fx.annotations_path + " --features " + ws.fx.features_path + " --vocab " +
         ws.p("vocab.txt") + " --weights " + ws.p("model.vqaw") + " --log " + ws.p("loss.csv") +
         " --maxlen 8 --seed 7 " + extra;
}

}  // namespace

TEST_CASE("train writes weights and a loss CSV") {
  Workspace ws;
  RunResult r = run_command(train_command(ws, "--epochs 2"));
  INFO(r.output);
  CHECK(r.exit_code == 0);
  CHECK(fs::exists(ws.p("model.vqaw")));
  CHECK(fs::exists(ws.p("vocab.txt")));

  std::istringstream csv(slurp(ws.p("loss.csv")));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "epoch,train_loss,val_loss,seconds");
  int rows = 0;
  while (std::getline(csv, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 2);
}

TEST_CASE("train with zero epochs leaves an empty log body") {
  Workspace ws;
  RunResult r = run_command(train_command(ws, "--epochs 0"));
  CHECK(r.exit_code == 0);
  CHECK(slurp(ws.p("loss.csv")) == "epoch,train_loss,val_loss,seconds\n");
}

TEST_CASE("identical seeds give byte-identical CSVs and weights") {
  Workspace ws;
  REQUIRE(run_command(train_command(ws, "--epochs 2")).exit_code == 0);
  std::string csv1 = slurp(ws.p("loss.csv"));
  std::string w1 = slurp(ws.p("model.vqaw"));
  REQUIRE(run_command(train_command(ws, "--epochs 2")).exit_code == 0);
  CHECK(slurp(ws.p("loss.csv")) == csv1);
  CHECK(slurp(ws.p("model.vqaw")) == w1);
}

TEST_CASE("train never mutates its input files") {
  Workspace ws;
  std::string q = slurp(ws.fx.questions_path);
  std::string a = slurp(ws.fx.annotations_path);
  std::string f = slurp(ws.fx.features_path);
  REQUIRE(run_command(train_command(ws, "--epochs 1")).exit_code == 0);
  CHECK(slurp(ws.fx.questions_path) == q);
  CHECK(slurp(ws.fx.annotations_path) == a);
  CHECK(slurp(ws.fx.features_path) == f);
}

TEST_CASE("every model preset trains, predicts, and evaluates end to end") {
  Workspace ws;
  for (int tag : {1, 2, 3, 5}) {
    std::string t = std::to_string(tag);
    RunResult train = run_command(
        kCli + " train --model " + t + " --questions " + ws.fx.questions_path +
        " --annotations " + ws.fx.annotations_path + " --features " + ws.fx.features_path +
        " --vocab " + ws.p("vocab" + t + ".txt") + " --weights " + ws.p("m" + t + ".vqaw") +
        " --log " + ws.p("m" + t + ".csv") + " --maxlen 8 --epochs 1 --seed 3");
    INFO("model " << tag << ": " << train.output);
    REQUIRE(train.exit_code == 0);

    RunResult predict = run_command(
        kCli + " predict --model " + t + " --questions " + ws.fx.questions_path +
        " --features " + ws.fx.features_path + " --vocab " + ws.p("vocab" + t + ".txt") +
        " --weights " + ws.p("m" + t + ".vqaw") + " --results " + ws.p("r" + t + ".json"));
    INFO("model " << tag << ": " << predict.output);
    REQUIRE(predict.exit_code == 0);

    RunResult eval = run_command(kCli + " evaluate --results " + ws.p("r" + t + ".json") +
                                 " --annotations " + ws.fx.annotations_path);
    INFO("model " << tag << ": " << eval.output);
    CHECK(eval.exit_code == 0);
    CHECK(eval.output.find("Overall") != std::string::npos);
  }
}

TEST_CASE("train with a validation split logs val losses and honors the move fraction") {
  Workspace ws;
  RunResult r = run_command(train_command(
      ws, "--epochs 2 --val-questions " + ws.fx.questions_path + " --val-annotations " +
              ws.fx.annotations_path + " --val-into-train 0.5"));
  INFO(r.output);
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("split plan: 18 train / 6 validation") != std::string::npos);
  std::istringstream csv(slurp(ws.p("loss.csv")));
  std::string line;
  std::getline(csv, line);  // header
  std::getline(csv, line);
  CHECK(line.find("nan") == std::string::npos);  // val loss is a number
}

TEST_CASE("missing input files exit with the missing-file code") {
  Workspace ws;
  RunResult r = run_command(kCli + " train --model 4 --questions " + ws.p("nope.json") +
                            " --annotations " + ws.fx.annotations_path + " --features " +
                            ws.fx.features_path + " --weights " + ws.p("w.vqaw") + " --log " +
                            ws.p("l.csv"));
  CHECK(r.exit_code == 3);
}

TEST_CASE("predict writes results sorted by question id") {
  Workspace ws;
  REQUIRE(run_command(train_command(ws, "--epochs 2")).exit_code == 0);
  RunResult r = run_command(kCli + " predict --model 4 --questions " + ws.fx.questions_path +
                            " --features " + ws.fx.features_path + " --vocab " +
                            ws.p("vocab.txt") + " --weights " + ws.p("model.vqaw") +
                            " --results " + ws.p("results.json"));
  INFO(r.output);
  CHECK(r.exit_code == 0);
  std::vector<ResultRecord> results = read_results(ws.p("results.json"));
  CHECK(static_cast<int>(results.size()) == ws.fx.question_count);
  for (std::size_t i = 1; i < results.size(); ++i)
    CHECK(results[i - 1].question_id < results[i].question_id);
}

TEST_CASE("predict rejects incompatible weights without writing results") {
  Workspace ws;
  REQUIRE(run_command(train_command(ws, "--epochs 1")).exit_code == 0);
  RunResult r = run_command(kCli + " predict --model 1 --questions " + ws.fx.questions_path +
                            " --features " + ws.fx.features_path + " --vocab " +
                            ws.p("vocab.txt") + " --weights " + ws.p("model.vqaw") +
                            " --results " + ws.p("never.json"));
  CHECK(r.exit_code == 6);
  CHECK(r.output.find("architecture") != std::string::npos);
  CHECK_FALSE(fs::exists(ws.p("never.json")));
}

TEST_CASE("evaluate prints the four-column report and honors the metric flag") {
  Workspace ws;
  // hand-scored: q1 exact match (acc 1), q2 miss (0), q3 match (1) -> 66.67
  std::vector<ResultRecord> results;
  {
    std::vector<Annotation> anns = load_annotations(ws.fx.annotations_path);
    results.push_back({1, anns[0].canonical_answer});
    results.push_back({2, "zebra"});
    results.push_back({3, anns[2].canonical_answer});
  }
  write_results(results, ws.p("results.json"));

  RunResult r = run_command(kCli + " evaluate --results " + ws.p("results.json") +
                            " --annotations " + ws.fx.annotations_path + " --report " +
                            ws.p("report.json"));
  INFO(r.output);
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("Yes/No") != std::string::npos);
  CHECK(r.output.find("66.67") != std::string::npos);
  CHECK(slurp(ws.p("report.json")).find("\"overall\": 66.67") != std::string::npos);

  RunResult s = run_command(kCli + " evaluate --results " + ws.p("results.json") +
                            " --annotations " + ws.fx.annotations_path + " --metric script");
  CHECK(s.exit_code == 0);
  CHECK(s.output.find("66.67") != std::string::npos);  // 10 matches saturate both variants
}

TEST_CASE("evaluate rejects an empty results file") {
  Workspace ws;
  std::ofstream(ws.p("empty.json")) << "[]";
  RunResult r = run_command(kCli + " evaluate --results " + ws.p("empty.json") +
                            " --annotations " + ws.fx.annotations_path);
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("no records") != std::string::npos);
}

TEST_CASE("gradcheck passes clean and fails only the corrupted layer") {
  RunResult clean = run_command(kCli + " gradcheck");
  INFO(clean.output);
  CHECK(clean.exit_code == 0);
  CHECK(clean.output.find("all ok") != std::string::npos);

  RunResult corrupt = run_command(kCli + " gradcheck --corrupt merge_lstm");
  CHECK(corrupt.exit_code == 1);
  std::istringstream lines(corrupt.output);
  std::string line;
  int fail_rows = 0;
  while (std::getline(lines, line)) {
    if (line.find("FAIL") == std::string::npos || line.find("checks in") != std::string::npos)
      continue;
    ++fail_rows;
    CHECK(line.find("merge_lstm") != std::string::npos);
  }
  CHECK(fail_rows > 0);
}

TEST_CASE("babi-train learns and reports accuracy") {
  Workspace ws;
  {
    std::ofstream out(ws.p("qa1.txt"), std::ios::binary);
    out << generate_babi_qa1(60, 11);
  }
  RunResult r = run_command(kCli + " babi-train --data " + ws.p("qa1.txt") + " --weights " +
                            ws.p("babi.vqaw") + " --log " + ws.p("babi.csv") +
                            " --epochs 5 --embed-dim 24 --seed 3");
  INFO(r.output);
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("training answer accuracy") != std::string::npos);
  CHECK(fs::exists(ws.p("babi.vqaw")));
  CHECK(fs::exists(ws.p("babi.csv")));
}

TEST_CASE("config precedence: defaults < config file < flags") {
  Workspace ws;
  {
    std::ofstream out(ws.p("run.cfg"));
    out << "[train]\nepochs=1\n";
  }
  auto csv_rows = [&] {
    std::istringstream csv(slurp(ws.p("loss.csv")));
    std::string line;
    int rows = -1;  // header
    while (std::getline(csv, line))
      if (!line.empty()) ++rows;
    return rows;
  };

  // the config file overrides the default epoch count
  RunResult base = run_command(train_command(ws, "--config " + ws.p("run.cfg")));
  INFO(base.output);
  CHECK(base.exit_code == 0);
  CHECK(csv_rows() == 1);

  // an explicit flag overrides the config file
  RunResult r = run_command(train_command(ws, "--config " + ws.p("run.cfg") + " --epochs 2"));
  INFO(r.output);
  CHECK(r.exit_code == 0);
  CHECK(csv_rows() == 2);
}
