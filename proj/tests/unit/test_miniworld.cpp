#include <gtest/gtest.h>

#include <numeric>
#include <random>
#include <set>

#include "trajdemo/miniworld.hpp"

using namespace trajdemo;
using namespace trajdemo::miniworld;

namespace {

std::int64_t ledger_total(const WorldState& s) {
  std::int64_t total = 0;
  for (const auto& [user, balance] : s.ledger) total += balance;
  return total;
}

CheckResult run_steps(const MiniTask& task, const std::vector<GoldStep>& steps, std::int64_t seed) {
  WorldState s = reset(task, seed);
  std::optional<std::string> answer;
  for (const auto& step : steps) {
    const ExecResult r = execute(s, step.action);
    EXPECT_EQ(r.observation.rfind("Error", 0), std::string::npos) << task.task.task_id << ": " << step.action
                                                                  << " -> " << r.observation;
    if (r.terminal) {
      answer = r.final_answer;
      break;
    }
  }
  return check(task, s, answer);
}

}  // namespace

TEST(Reset, IsDeterministic) {
  for (const auto& t : catalog()) {
    for (std::int64_t seed : {0, 1, 7, 12345}) EXPECT_EQ(reset(t, seed), reset(t, seed));
  }
}

TEST(Reset, OpeningBalances) {
  const WorldState s = reset(require_task("train.pay_friend.1"), 0);
  EXPECT_EQ(s.ledger.at("alice"), 10000);
  EXPECT_EQ(s.ledger.at("bob"), 10000);
  EXPECT_TRUE(s.mutation_log.empty());
  EXPECT_TRUE(s.variables.empty());
}

TEST(Execute, BalanceQueryBindsVariable) {
  WorldState s = reset(require_task("train.check_balance.1"), 0);
  const ExecResult r = execute(s, "b = ledger.balance(user=\"alice\")");
  EXPECT_FALSE(r.terminal);
  EXPECT_NE(r.observation.find("10000"), std::string::npos);
  ASSERT_TRUE(s.variables.count("b"));
  EXPECT_EQ(s.variables.at("b").at("balance"), 10000);
  const ExecResult f = execute(s, "final(answer=b.balance)");
  EXPECT_TRUE(f.terminal);
  EXPECT_EQ(f.final_answer, "10000");
}

TEST(Execute, InsufficientFundsLeavesStateUnchanged) {
  WorldState s = reset(require_task("train.pay_friend.1"), 0);
  const WorldState before = s;
  const ExecResult r = execute(s, "ledger.transfer(src=\"alice\", dst=\"bob\", amount=999999)");
  EXPECT_EQ(r.observation.rfind("Error: ValueError: insufficient funds", 0), 0u) << r.observation;
  EXPECT_FALSE(r.terminal);
  EXPECT_EQ(s, before);
}

TEST(Execute, MalformedActionsBecomeErrorObservations) {
  WorldState s = reset(require_task("train.save_note.1"), 0);
  const WorldState before = s;
  for (const char* bad : {"", "notes.create(", "x = = 1", "bank.pay()", "notes.fly()", "notes.read(note_id=missing)",
                          "notes.read(note_id=\"n99\")", "notes.create(title=\"a\", title=\"b\", body=\"c\")",
                          "notes.create(title=\"a\")", "ledger.transfer(src=\"alice\", dst=\"alice\", amount=1)",
                          "ledger.transfer(src=\"alice\", dst=\"bob\", amount=-5)", "final(answer=1, x=2)",
                          "y = final()", "\"unterminated"}) {
    const ExecResult r = execute(s, bad);
    EXPECT_EQ(r.observation.rfind("Error: ", 0), 0u) << bad << " -> " << r.observation;
    EXPECT_FALSE(r.terminal) << bad;
    EXPECT_EQ(s, before) << bad;
  }
}

TEST(Execute, FinalWithoutAnswer) {
  WorldState s = reset(require_task("train.pay_friend.1"), 0);
  const ExecResult r = execute(s, "final()");
  EXPECT_TRUE(r.terminal);
  EXPECT_FALSE(r.final_answer.has_value());
}

TEST(Check, TransferExamples) {
  const MiniTask& t = require_task("train.pay_friend.1");
  WorldState s = reset(t, 0);
  execute(s, "ledger.transfer(src=\"alice\", dst=\"bob\", amount=3000)");
  EXPECT_EQ(s.ledger.at("alice"), 7000);
  EXPECT_EQ(s.ledger.at("bob"), 13000);
  CheckResult c = check(t, s, "done");
  EXPECT_TRUE(c.passed);
  EXPECT_TRUE(c.failed.empty());

  execute(s, "notes.create(title=\"extra\", body=\"x\")");
  c = check(t, s, "done");
  EXPECT_FALSE(c.passed);
  EXPECT_EQ(c.failed, (std::vector<std::string>{"no_extraneous_changes"}));

  c = check(t, reset(t, 0), "done");
  EXPECT_FALSE(c.passed);
  EXPECT_EQ(c.failed, (std::vector<std::string>{"balance[alice]", "balance[bob]"}));
}

TEST(Check, TwoTransfersWhereOneIsAllowed) {
  const MiniTask& t = require_task("train.pay_friend.1");
  WorldState s = reset(t, 0);
  execute(s, "ledger.transfer(src=\"alice\", dst=\"bob\", amount=1500)");
  execute(s, "ledger.transfer(src=\"alice\", dst=\"bob\", amount=1500)");
  const CheckResult c = check(t, s, "done");
  EXPECT_FALSE(c.passed);
  EXPECT_EQ(c.failed, (std::vector<std::string>{"no_extraneous_changes"}));
}

TEST(Catalog, Shape) {
  EXPECT_EQ(catalog().size(), 24u);
  EXPECT_EQ(list_tasks(Split::train).size(), 12u);
  EXPECT_EQ(list_tasks(Split::test_normal).size(), 6u);
  EXPECT_EQ(list_tasks(Split::test_challenge).size(), 6u);
  EXPECT_EQ(list_tasks("train").size(), 12u);
  EXPECT_THROW(list_tasks("nope"), DomainError);

  std::map<std::string, std::set<int>> variants;
  std::set<std::string> ids;
  for (const auto& t : catalog()) {
    variants[t.task.scenario_id].insert(t.task.variant);
    EXPECT_TRUE(ids.insert(t.task.task_id).second);
    EXPECT_FALSE(t.gold_plan.empty());
    EXPECT_FALSE(t.checker.empty());
    EXPECT_EQ(t.checker.back().name, "no_extraneous_changes");
    const bool uses_mail = std::count(t.apps.begin(), t.apps.end(), "mail") > 0;
    if (t.task.split == Split::test_challenge) EXPECT_TRUE(uses_mail) << t.task.task_id;
    if (t.task.split == Split::train) EXPECT_FALSE(uses_mail) << t.task.task_id;
  }
  EXPECT_EQ(variants.size(), 8u);
  for (const auto& [scenario, vs] : variants) EXPECT_EQ(vs, (std::set<int>{1, 2, 3})) << scenario;
}

TEST(Catalog, Lookup) {
  EXPECT_EQ(find_task("nope"), nullptr);
  EXPECT_THROW(require_task("nope"), IntegrityError);
  EXPECT_EQ(require_task("test_normal.repay_friend.2").task.scenario_id, "repay_friend");
}

TEST(Catalog, GoldSequencesPass) {
  for (const auto& t : catalog()) {
    for (std::int64_t seed : {0, 3}) {
      const CheckResult c = run_steps(t, t.gold_steps(), seed);
      EXPECT_TRUE(c.passed) << t.task.task_id << " seed " << seed;
    }
  }
}

TEST(Catalog, GoldSubtaskSequencesPassInOneWorld) {
  for (const auto& t : catalog()) {
    WorldState s = reset(t, 0);
    std::optional<std::string> answer;
    for (std::size_t i = 0; i < t.gold_plan.size(); ++i) {
      const auto steps = t.gold_subtask_steps(i);
      ASSERT_FALSE(steps.empty());
      EXPECT_EQ(steps.back().action.rfind("final(", 0), 0u);
      for (const auto& step : steps) {
        const ExecResult r = execute(s, step.action);
        if (r.terminal) answer = r.final_answer;
      }
    }
    EXPECT_TRUE(check(t, s, answer).passed) << t.task.task_id;
  }
}

TEST(Catalog, CheckerRejectsUntouchedWorld) {
  for (const auto& t : catalog()) EXPECT_FALSE(check(t, reset(t, 0), std::nullopt).passed) << t.task.task_id;
}

TEST(Fuzz, RandomActionsNeverThrowAndConserveMoney) {
  std::mt19937_64 rng(99);
  const std::vector<std::string> pieces{"ledger", "notes", "mail", ".", "(", ")", "=", ",", "\"alice\"", "\"bob\"",
                                        "user", "src", "dst", "amount", "transfer", "balance", "create", "title",
                                        "body", "1", "300", "-2", "x", "x.balance", "[0]", "final", " ", "\"", "read"};
  const MiniTask& t = require_task("test_normal.transfer_then_note.1");
  WorldState s = reset(t, 0);
  const std::int64_t total = ledger_total(s);
  for (int i = 0; i < 3000; ++i) {
    std::string action;
    const int n = 1 + static_cast<int>(rng() % 12);
    for (int j = 0; j < n; ++j) action += pieces[rng() % pieces.size()];
    ExecResult r;
    EXPECT_NO_THROW(r = execute(s, action)) << action;
    EXPECT_EQ(ledger_total(s), total) << action;
  }
  for (int i = 0; i < 200; ++i) {
    const std::string amount = std::to_string(rng() % 4000);
    execute(s, "ledger.transfer(src=\"alice\", dst=\"carol\", amount=" + amount + ")");
    execute(s, "ledger.transfer(src=\"carol\", dst=\"bob\", amount=" + amount + ")");
    EXPECT_EQ(ledger_total(s), total);
    for (const auto& [user, balance] : s.ledger) EXPECT_GE(balance, 0) << user;
  }
}

TEST(Dsl, VariablesAndIndexing) {
  WorldState s = reset(require_task("train.note_lookup.1"), 0);
  EXPECT_EQ(execute(s, "r = notes.search(query=\"books\")").observation.rfind("Error", 0), std::string::npos);
  const ExecResult n = execute(s, "n = notes.read(note_id=r[0].note_id)");
  EXPECT_NE(n.observation.find("dune and emma"), std::string::npos) << n.observation;
  EXPECT_EQ(execute(s, "final(answer=n.body)").final_answer, "dune and emma");
  EXPECT_EQ(execute(s, "q = notes.read(note_id=r[5].note_id)").observation.rfind("Error: IndexError", 0), 0u);
  EXPECT_EQ(execute(s, "q = notes.read(note_id=zz)").observation.rfind("Error: NameError", 0), 0u);
}

TEST(Dsl, MailSearchIsNewestFirst) {
  WorldState s = reset(require_task("test_challenge.mail_subject.1"), 0);
  const ExecResult r = execute(s, "m = mail.search(user=\"alice\", sender=\"bob\")");
  ASSERT_TRUE(s.variables.count("m"));
  EXPECT_EQ(s.variables.at("m")[0].at("subject"), "movie night");
  EXPECT_EQ(s.variables.at("m")[1].at("subject"), "lunch on friday");
}

TEST(Environment, AdapterTracksFinalAnswer) {
  const MiniTask& t = require_task("train.check_balance.1");
  MiniWorld w(t, 0);
  const ActionOutcome a = w.execute("b = ledger.balance(user=\"alice\")");
  EXPECT_FALSE(a.terminal);
  const ActionOutcome f = w.execute("final(answer=b.balance)");
  EXPECT_TRUE(f.terminal);
  EXPECT_EQ(w.final_answer(), "10000");
  EXPECT_TRUE(check(t, w.state(), w.final_answer()).passed);
}

TEST(ReplayCheck, GoldRecordPassesAndUnknownTaskFails) {
  const MiniTask& t = require_task("train.pay_friend.2");
  AnnotationRecord rec;
  rec.task = t.task;
  rec.kind = SolverKind::react;
  Trajectory traj;
  traj.task_id = t.task.task_id;
  traj.terminal = Terminal::completed;
  int i = 1;
  for (const auto& g : t.gold_steps()) traj.steps.push_back(Step{i++, g.thought, g.action, "ok"});
  rec.trajectory = traj;
  EXPECT_TRUE(replay_check(rec, 0));
  rec.trajectory->steps.erase(rec.trajectory->steps.begin());
  EXPECT_FALSE(replay_check(rec, 0));
  rec.task.task_id = "elsewhere.1";
  EXPECT_FALSE(replay_check(rec, 0));
}
