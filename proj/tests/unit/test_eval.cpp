#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "trajdemo/eval.hpp"
#include "trajdemo/harness.hpp"
#include "trajdemo/scripted.hpp"

using namespace trajdemo;
namespace fs = std::filesystem;

namespace {

RunRecord run(bool passed, int steps = 4, std::int64_t in = 100, std::int64_t out = 10) {
  return RunRecord{passed, steps, in, out};
}

Task task(const std::string& scenario, int variant) {
  return Task{scenario + "." + std::to_string(variant), scenario, variant, "x", Split::test_normal};
}

// Scenario A: every variant passes both runs. Scenario B: variant 1 passes
// its first run only; variants 2 and 3 fail.
std::pair<std::map<std::string, std::vector<RunRecord>>, std::vector<Task>> two_scenarios() {
  std::map<std::string, std::vector<RunRecord>> results;
  std::vector<Task> tasks;
  for (int v = 1; v <= 3; ++v) {
    tasks.push_back(task("A", v));
    results["A." + std::to_string(v)] = {run(true, 3), run(true, 3)};
    tasks.push_back(task("B", v));
    results["B." + std::to_string(v)] = {run(v == 1, 5), run(false, 8)};
  }
  return {results, tasks};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "trajdemo_eval_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ExperimentConfig experiment(const std::string& method, int k, int runs = 1, int seed = 0) {
  ExperimentConfig c = ExperimentConfig::defaults();
  c.set("method", method);
  c.set("k", std::to_string(k));
  c.set("runs", std::to_string(runs));
  c.set("seed", std::to_string(seed));
  return c;
}

int cli(const std::string& args) {
  const std::string cmd = std::string(TRAJDEMO_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Metrics, TwoScenarioFixture) {
  const auto [results, tasks] = two_scenarios();
  const EvalReport r = evaluate(results, tasks, 2);
  EXPECT_NEAR(r.aggregates.tgc, 66.7, 0.05);
  EXPECT_DOUBLE_EQ(r.aggregates.tgc, 400.0 / 6.0);
  EXPECT_DOUBLE_EQ(r.aggregates.rtgc, 50.0);
  EXPECT_DOUBLE_EQ(r.aggregates.sgc, 50.0);
  // first runs: 3, 3, 3 (A) and 5, 5, 5 (B)
  EXPECT_DOUBLE_EQ(r.aggregates.avg_steps, 4.0);
  EXPECT_DOUBLE_EQ(r.aggregates.avg_steps_all, 4.0);
  ASSERT_TRUE(r.aggregates.avg_steps_solved);
  EXPECT_DOUBLE_EQ(*r.aggregates.avg_steps_solved, (3.0 * 3 + 5.0) / 4.0);
  EXPECT_DOUBLE_EQ(r.aggregates.avg_tokens, 110.0);
  EXPECT_EQ(r.n_runs, 2);
  ASSERT_EQ(r.per_task.size(), 6u);
  EXPECT_EQ(r.per_task[0].task_id, "A.1");
  EXPECT_EQ(r.per_task[5].task_id, "B.3");
}

TEST(Metrics, AllPass) {
  std::map<std::string, std::vector<RunRecord>> results{{"A.1", {run(true)}}, {"A.2", {run(true)}}};
  const EvalReport r = evaluate(results, {task("A", 1), task("A", 2)}, 1);
  EXPECT_DOUBLE_EQ(r.aggregates.tgc, 100.0);
  EXPECT_DOUBLE_EQ(r.aggregates.rtgc, 100.0);
  EXPECT_DOUBLE_EQ(r.aggregates.sgc, 100.0);
}

TEST(Metrics, NothingSolvedHasNoSolvedAverage) {
  std::map<std::string, std::vector<RunRecord>> results{{"A.1", {run(false, 9)}}};
  const EvalReport r = evaluate(results, {task("A", 1)}, 1);
  EXPECT_DOUBLE_EQ(r.aggregates.tgc, 0.0);
  EXPECT_FALSE(r.aggregates.avg_steps_solved);
  EXPECT_DOUBLE_EQ(r.aggregates.avg_steps, 9.0);
}

TEST(Metrics, Errors) {
  auto [results, tasks] = two_scenarios();
  EXPECT_THROW(evaluate(results, tasks, 3), IntegrityError);
  EXPECT_THROW(evaluate(results, tasks, 0), DomainError);
  auto missing = results;
  missing.erase("B.2");
  EXPECT_THROW(evaluate(missing, tasks, 2), IntegrityError);
  auto extra = results;
  extra["C.1"] = {run(true), run(true)};
  EXPECT_THROW(evaluate(extra, tasks, 2), IntegrityError);
  auto dup = tasks;
  dup.push_back(tasks[0]);
  EXPECT_THROW(evaluate(results, dup, 2), IntegrityError);
}

TEST(Metrics, SingleRunCollapsesReliableToPlain) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::map<std::string, std::vector<RunRecord>> results;
    std::vector<Task> tasks;
    const int scenarios = 1 + static_cast<int>(rng() % 4);
    for (int s = 0; s < scenarios; ++s) {
      const int variants = 1 + static_cast<int>(rng() % 3);
      for (int v = 1; v <= variants; ++v) {
        Task t = task("S" + std::to_string(s), v);
        results[t.task_id] = {run(rng() % 2 == 0, static_cast<int>(rng() % 20))};
        tasks.push_back(t);
      }
    }
    const EvalReport r = evaluate(results, tasks, 1);
    EXPECT_EQ(r.aggregates.rtgc, r.aggregates.tgc);
    EXPECT_GE(r.aggregates.tgc, 0.0);
    EXPECT_LE(r.aggregates.tgc, 100.0);
    EXPECT_LE(r.aggregates.sgc, 100.0);
  }
}

TEST(Metrics, RecomputableAndOrderInvariant) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    std::map<std::string, std::vector<RunRecord>> results;
    std::vector<Task> tasks;
    for (int s = 0; s < 3; ++s) {
      for (int v = 1; v <= 3; ++v) {
        Task t = task("S" + std::to_string(s), v);
        results[t.task_id] = {run(rng() % 2 == 0, static_cast<int>(rng() % 9), rng() % 500, rng() % 50),
                              run(rng() % 2 == 0)};
        tasks.push_back(t);
      }
    }
    const EvalReport a = evaluate(results, tasks, 2);
    EXPECT_EQ(aggregate(a.per_task), a.aggregates);
    std::shuffle(tasks.begin(), tasks.end(), rng);
    const EvalReport b = evaluate(results, tasks, 2);
    EXPECT_EQ(a, b);
    auto rows = a.per_task;
    std::shuffle(rows.begin(), rows.end(), rng);
    EXPECT_EQ(aggregate(rows), a.aggregates);
  }
}

TEST(Report, JsonRoundTripAndFieldNames) {
  const auto [results, tasks] = two_scenarios();
  EvalReport r = evaluate(results, tasks, 2);
  r.config_fingerprint = "abc";
  const auto j = report_to_json(r);
  for (const char* k : {"per_task", "aggregates", "n_runs", "config_fingerprint"}) EXPECT_TRUE(j.contains(k)) << k;
  for (const char* k : {"tgc", "rtgc", "sgc", "avg_steps", "avg_steps_all", "avg_steps_solved", "avg_tokens"}) {
    EXPECT_TRUE(j["aggregates"].contains(k)) << k;
  }
  for (const char* k : {"task_id", "scenario_id", "variant", "runs"}) EXPECT_TRUE(j["per_task"][0].contains(k)) << k;
  for (const char* k : {"passed", "steps", "input_tokens", "output_tokens"}) {
    EXPECT_TRUE(j["per_task"][0]["runs"][0].contains(k)) << k;
  }
  EXPECT_EQ(report_from_json(j), r);
  const fs::path p = scratch_dir("report") / "report.json";
  write_report(r, p);
  EXPECT_EQ(read_report(p), r);
}

TEST(Config, ParseDefaultsAndErrors) {
  const ExperimentConfig c = ExperimentConfig::parse("# comment\n\nmethod = bsr\n  k=2  \nsnippets = true\n");
  EXPECT_EQ(c.get("method"), "bsr");
  EXPECT_EQ(c.get_int("k"), 2);
  EXPECT_TRUE(c.get_bool("snippets"));
  EXPECT_EQ(c.get("split"), "test_normal");
  EXPECT_EQ(c.get_int("runs"), 2);
  EXPECT_DOUBLE_EQ(c.get_double("snippet_threshold"), 0.85);
  EXPECT_THROW(ExperimentConfig::parse("colour = blue\n"), ConfigError);
  try {
    ExperimentConfig::parse("k = 1\nno equals sign\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  ExperimentConfig d = ExperimentConfig::defaults();
  d.set("k", "two");
  EXPECT_THROW(d.get_int("k"), ConfigError);
  EXPECT_EQ(ExperimentConfig::parse(c.dump()).values, c.values);
}

TEST(Config, FingerprintIgnoresPlumbing) {
  ExperimentConfig a = ExperimentConfig::defaults();
  ExperimentConfig b = a;
  b.set("provider", "replay:/tmp/x");
  b.set("record", "/tmp/y");
  b.set("out", "/tmp/z");
  b.set("base_url", "http://elsewhere");
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  b.set("k", "3");
  EXPECT_NE(a.fingerprint(), b.fingerprint());
}

TEST(Experiment, ZeroshotSolvesNothing) {
  const ExperimentOutput out = run_experiment(experiment("zeroshot", 0));
  EXPECT_DOUBLE_EQ(out.report.aggregates.tgc, 0.0);
  EXPECT_EQ(out.report.per_task.size(), 6u);
  EXPECT_GT(out.provider_calls, 0);
}

TEST(Experiment, SimilarityDemosSolveEverything) {
  for (const char* method : {"cos", "bsr", "set_bsr"}) {
    const ExperimentOutput out = run_experiment(experiment(method, 1));
    EXPECT_DOUBLE_EQ(out.report.aggregates.tgc, 100.0) << method;
    EXPECT_DOUBLE_EQ(out.report.aggregates.sgc, 100.0) << method;
  }
}

TEST(Experiment, RandomSitsBetween) {
  const ExperimentOutput out = run_experiment(experiment("random", 1, 1, 1));
  EXPECT_GT(out.report.aggregates.tgc, 0.0);
  EXPECT_LT(out.report.aggregates.tgc, 100.0);
}

TEST(Experiment, ByteIdenticalReruns) {
  ExperimentConfig c = experiment("random", 1, 2, 3);
  const fs::path a = scratch_dir("rerun_a"), b = scratch_dir("rerun_b");
  c.set("out", a.string());
  run_experiment(c);
  c.set("out", b.string());
  run_experiment(c);
  EXPECT_EQ(slurp(a / "report.json"), slurp(b / "report.json"));
  EXPECT_FALSE(slurp(a / "report.json").empty());
  EXPECT_TRUE(fs::exists(a / "transcripts" / "test_normal.repay_friend.1.run2.jsonl"));
  EXPECT_TRUE(fs::exists(a / "annotation.log"));
}

TEST(Experiment, ReplayReproducesReportWithoutLiveCalls) {
  const fs::path dir = scratch_dir("replay");
  ExperimentConfig c = experiment("bsr", 1, 2);
  c.set("snippets", "true");
  c.set("record", (dir / "session.jsonl").string());
  c.set("out", (dir / "live").string());
  const ExperimentOutput live = run_experiment(c);

  ExperimentConfig r = experiment("bsr", 1, 2);
  r.set("snippets", "true");
  r.set("out", (dir / "replayed").string());
  ReplayProvider replay(dir / "session.jsonl");
  auto emb = make_embedder(r);
  const ExperimentOutput again = run_experiment(r, replay, *emb);
  EXPECT_EQ(slurp(dir / "live" / "report.json"), slurp(dir / "replayed" / "report.json"));
  EXPECT_EQ(replay.served(), live.provider_calls);
}

TEST(Experiment, ConfigErrorsBeforeAnyCall) {
  auto scripted = make_miniworld_provider();
  HashEmbedder emb;
  ExperimentConfig c = experiment("cos", 1);
  c.set("split", "nowhere");
  EXPECT_THROW(run_experiment(c, *scripted, emb), ConfigError);
  c = experiment("cos", 1);
  c.set("runs", "0");
  EXPECT_THROW(run_experiment(c, *scripted, emb), ConfigError);
  c = experiment("fixed", 1);
  c.set("pool", "/nonexistent/pool.jsonl");
  EXPECT_THROW(run_experiment(c, *scripted, emb), IoError);
  EXPECT_EQ(scripted->calls(), 0);
}

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch_dir("cli");
  const std::string pool = (dir / "pool.jsonl").string();
  EXPECT_EQ(cli("catalog export --split train --out " + (dir / "train.jsonl").string()), 0);
  EXPECT_EQ(cli("annotate --tasks " + (dir / "train.jsonl").string() + " --pool " + pool), 0);
  EXPECT_EQ(cli("pool stats " + pool), 0);
  EXPECT_EQ(cli("select --key \"send money to bob\" --method bsr --k 2 --pool " + pool), 0);
  EXPECT_EQ(cli("select --key \"send money\" --kind snippet --k 2 --pool " + pool), 0);
  EXPECT_EQ(cli("run --task test_normal.repay_friend.1 --method cos --k 1 --pool " + pool), 0);
  EXPECT_EQ(cli("eval --split test_normal --method zeroshot --k 0 --runs 1 --pool " + pool + " --out " +
                (dir / "eval").string()),
            0);
  EXPECT_TRUE(fs::exists(dir / "eval" / "report.json"));

  EXPECT_EQ(cli("run --task nope.task.1 --pool " + pool), 2);
  {
    std::ofstream bad(dir / "bad.jsonl");
    bad << "{not json\n";
  }
  EXPECT_EQ(cli("pool stats " + (dir / "bad.jsonl").string()), 2);
  {
    std::ofstream cfg(dir / "bad.cfg");
    cfg << "colour = blue\n";
  }
  EXPECT_EQ(cli("eval --config " + (dir / "bad.cfg").string()), 2);
  EXPECT_EQ(cli("select --key x --method nonsense --pool " + pool), 2);
  EXPECT_NE(cli("pool stats " + (dir / "absent.jsonl").string()), 0);
  EXPECT_NE(cli("frobnicate"), 0);
}
