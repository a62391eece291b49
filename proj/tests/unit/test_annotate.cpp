#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "trajdemo/annotate.hpp"

using namespace trajdemo;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

Task task(const std::string& id, const std::string& scenario, int variant) {
  return Task{id, scenario, variant, "instruction for " + id, Split::train};
}

AnnotationRecord solved(const Task& t) {
  AnnotationRecord r;
  r.task = t;
  r.kind = SolverKind::react;
  Trajectory tr;
  tr.task_id = t.task_id;
  tr.steps = {Step{1, "finish", "final()", "Task marked complete.", 10, 2}};
  tr.terminal = Terminal::completed;
  r.trajectory = tr;
  return r;
}

SolveOutcome success(const Task& t) { return SolveOutcome{Terminal::completed, solved(t), 1, 12}; }
SolveOutcome failure() { return SolveOutcome{Terminal::exhausted, std::nullopt, 5, 60}; }

// t1: C (taught by B), t2: B (taught by A), t3/t4: A (zero-shot),
// t5: D (never), t6: B (taught by A).
std::vector<Task> ladder_tasks() {
  return {task("t1", "C", 1), task("t2", "B", 1), task("t3", "A", 1),
          task("t4", "A", 2), task("t5", "D", 1), task("t6", "B", 2)};
}

const std::map<std::string, std::string> kTeacher{{"C", "B"}, {"B", "A"}};

struct Ladder {
  std::atomic<int> calls{0};
  std::vector<std::string> attempted;  // sequential mode only
  std::mutex mu;

  Solver solver() {
    return [this](const Task& t, const SelectionResult& demos, const AnnotationPool& pool) {
      ++calls;
      {
        std::lock_guard lock(mu);
        attempted.push_back(t.task_id);
      }
      if (t.scenario_id == "A") return success(t);
      auto it = kTeacher.find(t.scenario_id);
      if (it == kTeacher.end()) return failure();
      for (const auto& id : demos.ids()) {
        if (pool.find(id)->task.scenario_id == it->second) return success(t);
      }
      return failure();
    };
  }
};

// Every record in the pool is offered as a demonstration.
Selector all_records() {
  return [](const Task&, const AnnotationPool& pool) {
    SelectionResult r;
    r.method = SelectionMethod::fixed;
    for (const auto& rec : pool.records) r.items.push_back({rec.task.task_id, 1.0});
    return r;
  };
}

Checker accept_all() {
  return [](const AnnotationRecord&) { return true; };
}

std::map<std::string, int> rounds_of(const AnnotationPool& pool) {
  std::map<std::string, int> out;
  for (const auto& r : pool.records) out[r.task.task_id] = r.annotated_in_round;
  return out;
}

std::set<std::string> unannotated_ids(const AnnotationPool& pool) {
  std::set<std::string> out;
  for (const auto& t : pool.unannotated) out.insert(t.task_id);
  return out;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "trajdemo_annotate_test";
  fs::create_directories(dir);
  fs::remove(dir / name);
  fs::remove(progress_path(dir / name));
  return dir / name;
}

AnnotationConfig quiet(std::ostream& log, int rounds = 3) {
  AnnotationConfig c;
  c.rounds = rounds;
  c.log = &log;
  return c;
}

}  // namespace

TEST(Config, Validation) {
  AnnotationConfig c;
  EXPECT_NO_THROW(c.validate());
  c.rounds = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Loop, AlwaysSucceedingSolverCallsOncePerTask) {
  std::ostringstream log;
  int calls = 0;
  Solver s = [&](const Task& t, const SelectionResult&, const AnnotationPool&) {
    ++calls;
    return success(t);
  };
  const AnnotationPool pool = run_annotation(ladder_tasks(), s, accept_all(), all_records(), quiet(log));
  EXPECT_EQ(calls, 6);
  EXPECT_EQ(pool.size(), 6u);
  EXPECT_TRUE(pool.unannotated.empty());
  for (const auto& r : pool.records) EXPECT_EQ(r.annotated_in_round, 1);
}

TEST(Loop, AlwaysFailingSolverUsesEveryRound) {
  std::ostringstream log;
  int calls = 0;
  Solver s = [&](const Task&, const SelectionResult&, const AnnotationPool&) {
    ++calls;
    return failure();
  };
  const AnnotationPool pool = run_annotation(ladder_tasks(), s, accept_all(), all_records(), quiet(log, 4));
  EXPECT_EQ(calls, 24);
  EXPECT_EQ(pool.size(), 0u);
  EXPECT_EQ(pool.unannotated.size(), 6u);
}

TEST(Loop, SequentialScheduleUsesFreshAdmissions) {
  std::ostringstream log;
  Ladder l;
  const AnnotationPool pool = run_annotation(ladder_tasks(), l.solver(), accept_all(), all_records(), quiet(log));
  EXPECT_EQ(rounds_of(pool), (std::map<std::string, int>{{"t1", 2}, {"t2", 2}, {"t3", 1}, {"t4", 1}, {"t6", 1}}));
  EXPECT_EQ(unannotated_ids(pool), (std::set<std::string>{"t5"}));
  EXPECT_EQ(l.calls.load(), 10);
  EXPECT_EQ(l.attempted, (std::vector<std::string>{"t1", "t2", "t3", "t4", "t5", "t6", "t1", "t2", "t5", "t5"}));
}

TEST(Loop, ParallelScheduleUsesRoundSnapshot) {
  std::ostringstream log;
  Ladder l;
  AnnotationConfig c = quiet(log);
  c.parallel = true;
  const AnnotationPool pool = run_annotation(ladder_tasks(), l.solver(), accept_all(), all_records(), c);
  EXPECT_EQ(rounds_of(pool), (std::map<std::string, int>{{"t1", 3}, {"t2", 2}, {"t3", 1}, {"t4", 1}, {"t6", 2}}));
  EXPECT_EQ(unannotated_ids(pool), (std::set<std::string>{"t5"}));
  EXPECT_EQ(l.calls.load(), 6 + 4 + 2);
}

TEST(Loop, InputOrderDoesNotMatter) {
  std::ostringstream log;
  auto tasks = ladder_tasks();
  std::reverse(tasks.begin(), tasks.end());
  Ladder a, b;
  const AnnotationPool x = run_annotation(tasks, a.solver(), accept_all(), all_records(), quiet(log));
  const AnnotationPool y = run_annotation(ladder_tasks(), b.solver(), accept_all(), all_records(), quiet(log));
  EXPECT_EQ(x, y);
}

TEST(Loop, CheckerGatesAdmission) {
  std::ostringstream log;
  Solver s = [](const Task& t, const SelectionResult&, const AnnotationPool&) { return success(t); };
  Checker odd_only = [](const AnnotationRecord& r) { return r.task.task_id == "t1" || r.task.task_id == "t3"; };
  const AnnotationPool pool = run_annotation(ladder_tasks(), s, odd_only, all_records(), quiet(log, 2));
  EXPECT_EQ(rounds_of(pool), (std::map<std::string, int>{{"t1", 1}, {"t3", 1}}));
  EXPECT_EQ(pool.unannotated.size(), 4u);
  std::istringstream lines(log.str());
  std::string line;
  int rejected = 0;
  while (std::getline(lines, line)) rejected += json::parse(line)["outcome"] == "rejected";
  EXPECT_EQ(rejected, 8);
}

TEST(Loop, SolverExceptionLeavesTaskUnannotated) {
  std::ostringstream log;
  int calls = 0;
  Solver s = [&](const Task& t, const SelectionResult&, const AnnotationPool&) -> SolveOutcome {
    ++calls;
    if (t.task_id == "t2" && calls < 7) throw ProviderError("flaky");
    return success(t);
  };
  const AnnotationPool pool = run_annotation(ladder_tasks(), s, accept_all(), all_records(), quiet(log));
  EXPECT_EQ(rounds_of(pool).at("t2"), 2);
  EXPECT_EQ(calls, 7);
  EXPECT_NE(log.str().find("\"outcome\":\"error\""), std::string::npos);
  EXPECT_NE(log.str().find("flaky"), std::string::npos);
}

TEST(Loop, LogHasOneLinePerAttempt) {
  std::ostringstream log;
  Ladder l;
  run_annotation(ladder_tasks(), l.solver(), accept_all(), all_records(), quiet(log));
  std::istringstream lines(log.str());
  std::string line;
  std::vector<json> entries;
  while (std::getline(lines, line)) entries.push_back(json::parse(line));
  ASSERT_EQ(entries.size(), 10u);
  EXPECT_EQ(entries[0], (json{{"round", 1}, {"task_id", "t1"}, {"outcome", "exhausted"}, {"steps", 5}, {"tokens", 60}}));
  EXPECT_EQ(entries[2], (json{{"round", 1}, {"task_id", "t3"}, {"outcome", "admitted"}, {"steps", 1}, {"tokens", 12}}));
  EXPECT_EQ(entries[9]["round"], 3);
}

TEST(Loop, PartitionAndSoundnessHoldForRandomSolvers) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    std::mt19937_64 rng(seed);
    std::vector<Task> tasks;
    const int n = 1 + static_cast<int>(rng() % 12);
    for (int i = 0; i < n; ++i) tasks.push_back(task("task" + std::to_string(100 + i), "s" + std::to_string(i), 1));
    const int rounds = 1 + static_cast<int>(rng() % 4);
    std::set<std::string> vetted;
    Solver s = [&](const Task& t, const SelectionResult&, const AnnotationPool&) {
      return rng() % 3 == 0 ? success(t) : failure();
    };
    Checker c = [&](const AnnotationRecord& r) {
      const bool ok = rng() % 2 == 0;
      if (ok) vetted.insert(r.task.task_id);
      return ok;
    };
    std::ostringstream log;
    const fs::path ckpt = scratch("random.jsonl");
    AnnotationConfig cfg = quiet(log, rounds);
    cfg.checkpoint_path = ckpt;
    const AnnotationPool pool = run_annotation(tasks, s, c, all_records(), cfg);
    EXPECT_NO_THROW(pool.validate());
    std::set<std::string> all;
    for (const auto& r : pool.records) {
      EXPECT_TRUE(all.insert(r.task.task_id).second);
      EXPECT_TRUE(vetted.count(r.task.task_id));
      EXPECT_GE(r.annotated_in_round, 1);
      EXPECT_LE(r.annotated_in_round, rounds);
    }
    for (const auto& t : pool.unannotated) EXPECT_TRUE(all.insert(t.task_id).second);
    EXPECT_EQ(all.size(), tasks.size());
    EXPECT_EQ(load_pool(ckpt), pool);
  }
}

TEST(Checkpoint, ResumeAfterFinishDoesNothing) {
  std::ostringstream log;
  const fs::path ckpt = scratch("done.jsonl");
  AnnotationConfig c = quiet(log);
  c.checkpoint_path = ckpt;
  int calls = 0;
  Solver s = [&](const Task& t, const SelectionResult&, const AnnotationPool&) {
    ++calls;
    return success(t);
  };
  const AnnotationPool first = run_annotation(ladder_tasks(), s, accept_all(), all_records(), c);
  calls = 0;
  const AnnotationPool again = resume_annotation(ckpt, ladder_tasks(), s, accept_all(), all_records(), c);
  EXPECT_EQ(calls, 0);
  EXPECT_EQ(again, first);
}

TEST(Checkpoint, ProgressSidecarTracksPosition) {
  std::ostringstream log;
  const fs::path ckpt = scratch("sidecar.jsonl");
  AnnotationConfig c = quiet(log);
  c.checkpoint_path = ckpt;
  Ladder l;
  run_annotation(ladder_tasks(), l.solver(), accept_all(), all_records(), c);
  std::ifstream in(progress_path(ckpt));
  const json p = json::parse(in);
  EXPECT_EQ(p["round"], 4);
  EXPECT_EQ(p["attempted_through"], "");
}

class Interrupted : public ::testing::TestWithParam<std::tuple<int, bool>> {};

// The selector throws on the n-th attempt; resuming must give the same pool
// as an uninterrupted run.
TEST_P(Interrupted, ResumeMatchesUninterruptedRun) {
  const auto [kill_at, parallel] = GetParam();
  std::ostringstream log;
  Ladder reference;
  AnnotationConfig ref_cfg = quiet(log);
  ref_cfg.parallel = parallel;
  const AnnotationPool expected =
      run_annotation(ladder_tasks(), reference.solver(), accept_all(), all_records(), ref_cfg);

  const fs::path ckpt = scratch("killed.jsonl");
  AnnotationConfig c = quiet(log);
  c.checkpoint_path = ckpt;
  c.parallel = parallel;
  std::atomic<int> selections{0};
  Selector dying = [&](const Task& t, const AnnotationPool& pool) {
    if (++selections == kill_at) throw std::runtime_error("killed");
    return all_records()(t, pool);
  };
  Ladder first;
  EXPECT_THROW(run_annotation(ladder_tasks(), first.solver(), accept_all(), dying, c), std::runtime_error);

  Ladder second;
  const AnnotationPool resumed = resume_annotation(ckpt, ladder_tasks(), second.solver(), accept_all(), all_records(), c);
  EXPECT_EQ(resumed, expected);
  EXPECT_EQ(load_pool(ckpt), expected);
  if (!parallel) EXPECT_EQ(first.calls.load() + second.calls.load(), 10);
}

INSTANTIATE_TEST_SUITE_P(KillPoints, Interrupted,
                         ::testing::Values(std::tuple{4, false}, std::tuple{7, false}, std::tuple{9, false},
                                           std::tuple{1, false}, std::tuple{7, true}, std::tuple{11, true}));

TEST(Checkpoint, ResumeWithoutSidecarUsesRecordedRounds) {
  std::ostringstream log;
  const fs::path ckpt = scratch("nosidecar.jsonl");
  AnnotationConfig c = quiet(log, 1);
  c.checkpoint_path = ckpt;
  Ladder a;
  run_annotation(ladder_tasks(), a.solver(), accept_all(), all_records(), c);
  fs::remove(progress_path(ckpt));
  c.rounds = 3;
  Ladder b;
  const AnnotationPool pool = resume_annotation(ckpt, ladder_tasks(), b.solver(), accept_all(), all_records(), c);
  EXPECT_EQ(unannotated_ids(pool), (std::set<std::string>{"t5"}));
  EXPECT_EQ(pool.size(), 5u);
}

TEST(Checkpoint, TaskSetMismatchIsIntegrityError) {
  std::ostringstream log;
  const fs::path ckpt = scratch("mismatch.jsonl");
  AnnotationConfig c = quiet(log, 1);
  c.checkpoint_path = ckpt;
  Ladder l;
  run_annotation(ladder_tasks(), l.solver(), accept_all(), all_records(), c);
  auto fewer = ladder_tasks();
  fewer.pop_back();
  EXPECT_THROW(resume_annotation(ckpt, fewer, l.solver(), accept_all(), all_records(), c), IntegrityError);
  auto more = ladder_tasks();
  more.push_back(task("t7", "E", 1));
  EXPECT_THROW(resume_annotation(ckpt, more, l.solver(), accept_all(), all_records(), c), IntegrityError);
  EXPECT_THROW(resume_annotation(scratch("absent.jsonl"), ladder_tasks(), l.solver(), accept_all(), all_records(), c),
               IoError);
}
