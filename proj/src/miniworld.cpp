#include <algorithm>

#include "trajdemo/miniworld.hpp"

namespace trajdemo::miniworld {

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

const std::map<std::string, std::int64_t> kOpeningBalances{
    {"alice", 10000}, {"bob", 10000}, {"carol", 8000}, {"dave", 6000}};

const std::map<std::string, Note> kOpeningNotes{
    {"n1", {"groceries", "milk, eggs and bread"}},
    {"n2", {"books", "dune and emma"}},
    {"n3", {"travel", "pack the passport"}},
};

const std::vector<Mail> kAliceInbox{
    {"bob", "lunch on friday", "are you free for lunch on friday?"},
    {"carol", "book club", "the next book is dune"},
    {"bob", "movie night", "movie night at 8 on saturday"},
    {"dave", "trip photos", "photos from the lake trip"},
    {"carol", "recipe", "the soup recipe you asked for"},
};

// Shared thought texts: analogous steps in different scenarios reason alike.
constexpr const char* kTransferThought =
    "I should move the requested amount from alice to the friend with ledger.transfer.";
constexpr const char* kBalanceThought =
    "I need to look up the ledger balance of the requested user before answering.";
constexpr const char* kCreateNoteThought =
    "I should create the note with the requested title and body using notes.create.";
constexpr const char* kSearchNoteThought =
    "I need to search the notes for the requested title to find its id.";
constexpr const char* kReadNoteThought =
    "I should read the note found by the search and use its body as the answer.";
constexpr const char* kSearchMailThought =
    "I need to search the inbox of alice for mails from the requested sender.";
constexpr const char* kSendMailThought = "I should email the balance to the friend with mail.send.";

std::string quoted(const std::string& s) { return "\"" + s + "\""; }

Assertion balance_is(const std::string& user, std::int64_t expected) {
  return {"balance[" + user + "]", [=](const WorldState& s, const std::optional<std::string>&) {
            auto it = s.ledger.find(user);
            return it != s.ledger.end() && it->second == expected;
          }};
}

Assertion note_exists(const std::string& title, const std::string& body) {
  return {"note[" + title + "]", [=](const WorldState& s, const std::optional<std::string>&) {
            return std::any_of(s.notes.begin(), s.notes.end(), [&](const auto& kv) {
              return kv.second.title == title && kv.second.body == body;
            });
          }};
}

Assertion mail_received(const std::string& to, const Mail& mail) {
  return {"mail[" + to + ":" + mail.subject + "]", [=](const WorldState& s, const std::optional<std::string>&) {
            auto it = s.inbox.find(to);
            return it != s.inbox.end() && std::find(it->second.begin(), it->second.end(), mail) != it->second.end();
          }};
}

Assertion answer_is(const std::string& expected) {
  return {"answer", [=](const WorldState&, const std::optional<std::string>& answer) {
            return answer && *answer == expected;
          }};
}

// Every logged mutation must consume a distinct entry of the allowed set.
Assertion no_extraneous_changes(std::vector<Value> allowed) {
  return {"no_extraneous_changes", [allowed = std::move(allowed)](const WorldState& s,
                                                                   const std::optional<std::string>&) {
            std::vector<bool> used(allowed.size(), false);
            for (const auto& m : s.mutation_log) {
              bool matched = false;
              for (std::size_t i = 0; i < allowed.size() && !matched; ++i) {
                if (!used[i] && allowed[i] == m) used[i] = matched = true;
              }
              if (!matched) return false;
            }
            return true;
          }};
}

Value transfer_mutation(const std::string& src, const std::string& dst, std::int64_t amount) {
  return Value{{"app", "ledger"}, {"op", "transfer"}, {"src", src}, {"dst", dst}, {"amount", amount}};
}

Value note_mutation(const std::string& title, const std::string& body) {
  return Value{{"app", "notes"}, {"op", "create"}, {"title", title}, {"body", body}};
}

struct TaskBuilder {
  MiniTask t;

  TaskBuilder(Split split, const std::string& scenario, int variant, std::string instruction) {
    t.task.task_id = std::string(to_string(split)) + "." + scenario + "." + std::to_string(variant);
    t.task.scenario_id = scenario;
    t.task.variant = variant;
    t.task.instruction = std::move(instruction);
    t.task.split = split;
  }
  TaskBuilder& apps(std::vector<std::string> a) {
    t.apps = std::move(a);
    return *this;
  }
  TaskBuilder& subtask(std::string statement, std::vector<GoldStep> steps, bool needs_summary = false) {
    t.gold_plan.push_back({std::move(statement), std::move(steps), needs_summary});
    return *this;
  }
  TaskBuilder& answer(std::string expr) {
    t.answer_expr = std::move(expr);
    return *this;
  }
  TaskBuilder& expect(Assertion a) {
    t.checker.push_back(std::move(a));
    return *this;
  }
  TaskBuilder& allow(Value mutation) {
    t.allowed_mutations.push_back(std::move(mutation));
    return *this;
  }
  TaskBuilder& taught_by(std::vector<std::string> scenarios, bool zero_shot = false) {
    t.teacher_scenarios = std::move(scenarios);
    t.zero_shot_solvable = zero_shot;
    return *this;
  }
  MiniTask build() {
    t.checker.push_back(no_extraneous_changes(t.allowed_mutations));
    return std::move(t);
  }
};

GoldSubtask transfer_subtask(const std::string& friend_name, std::int64_t amount) {
  return {"Transfer " + std::to_string(amount) + " cents from alice to " + friend_name + " with the ledger app.",
          {{kTransferThought, "ledger.transfer(src=\"alice\", dst=" + quoted(friend_name) +
                                  ", amount=" + std::to_string(amount) + ")"}},
          false};
}

GoldSubtask create_note_subtask(const std::string& title, const std::string& body) {
  return {"Create a note titled " + title + " saying " + body + ".",
          {{kCreateNoteThought, "notes.create(title=" + quoted(title) + ", body=" + quoted(body) + ")"}},
          false};
}

void add_transfer(TaskBuilder& b, const std::string& friend_name, std::int64_t amount) {
  auto sub = transfer_subtask(friend_name, amount);
  b.subtask(sub.statement, sub.steps)
      .expect(balance_is("alice", kOpeningBalances.at("alice") - amount))
      .expect(balance_is(friend_name, kOpeningBalances.at(friend_name) + amount))
      .allow(transfer_mutation("alice", friend_name, amount));
}

void add_note(TaskBuilder& b, const std::string& title, const std::string& body) {
  auto sub = create_note_subtask(title, body);
  b.subtask(sub.statement, sub.steps).expect(note_exists(title, body)).allow(note_mutation(title, body));
}

std::vector<MiniTask> build_catalog() {
  std::vector<MiniTask> out;
  const std::vector<std::string> friends{"bob", "carol", "dave"};

  // Train: ledger + notes. Variant 1 of every train scenario can be solved
  // without demonstrations; the other variants need a same-scenario demo.
  {
    const std::vector<std::int64_t> amounts{3000, 2500, 1200};
    for (int v = 1; v <= 3; ++v) {
      const auto& f = friends[v - 1];
      const auto amount = amounts[v - 1];
      TaskBuilder b(Split::train, "pay_friend", v,
                    "Send " + std::to_string(amount) + " cents to " + f + " from my ledger account.");
      b.apps({"ledger"}).answer("\"done\"").taught_by({"pay_friend"}, v == 1);
      add_transfer(b, f, amount);
      out.push_back(b.build());
    }
  }
  for (int v = 1; v <= 3; ++v) {
    const auto& user = friends[v - 1];
    TaskBuilder b(Split::train, "check_balance", v, "Tell me how many cents " + user + " has in the ledger.");
    b.apps({"ledger"})
        .subtask("Look up the ledger balance of " + user + ".",
                 {{kBalanceThought, "b = ledger.balance(user=" + quoted(user) + ")"}})
        .answer("b.balance")
        .expect(answer_is(std::to_string(kOpeningBalances.at(user))))
        .taught_by({"check_balance"}, v == 1);
    out.push_back(b.build());
  }
  {
    const std::vector<std::pair<std::string, std::string>> notes{
        {"rent", "pay rent on friday"}, {"gym", "leg day on monday"}, {"call", "call mom on sunday"}};
    for (int v = 1; v <= 3; ++v) {
      const auto& [title, body] = notes[v - 1];
      TaskBuilder b(Split::train, "save_note", v, "Create a note titled " + title + " saying " + body + ".");
      b.apps({"notes"}).answer("\"done\"").taught_by({"save_note"}, v == 1);
      add_note(b, title, body);
      out.push_back(b.build());
    }
  }
  {
    const std::vector<std::string> titles{"groceries", "books", "travel"};
    for (int v = 1; v <= 3; ++v) {
      const auto& title = titles[v - 1];
      const auto it = std::find_if(kOpeningNotes.begin(), kOpeningNotes.end(),
                                   [&](const auto& kv) { return kv.second.title == title; });
      TaskBuilder b(Split::train, "note_lookup", v, "What does my note titled " + title + " say?");
      b.apps({"notes"})
          .subtask("Search the notes for the note titled " + title + ".",
                   {{kSearchNoteThought, "r = notes.search(query=" + quoted(title) + ")"}})
          .subtask("Read the note found by the search and report its body.",
                   {{kReadNoteThought, "n = notes.read(note_id=r[0].note_id)"}}, true)
          .answer("n.body")
          .expect(answer_is(it->second.body))
          .taught_by({"note_lookup"}, v == 1);
      out.push_back(b.build());
    }
  }

  // Test-normal: unseen scenarios over the train apps.
  {
    const std::vector<std::int64_t> amounts{1800, 900, 4200};
    for (int v = 1; v <= 3; ++v) {
      const auto& f = friends[v - 1];
      const auto amount = amounts[v - 1];
      TaskBuilder b(Split::test_normal, "repay_friend", v,
                    "Send " + std::to_string(amount) + " cents to " + f +
                        " from my ledger account to pay them back for lunch.");
      b.apps({"ledger"}).answer("\"done\"").taught_by({"pay_friend"});
      add_transfer(b, f, amount);
      out.push_back(b.build());
    }
  }
  {
    struct V {
      std::int64_t amount;
      std::string title, body;
    };
    const std::vector<V> vs{{3000, "payments", "sent bob 3000"}, {700, "loans", "lent carol 700"},
                            {2000, "gifts", "gift for dave"}};
    for (int v = 1; v <= 3; ++v) {
      const auto& f = friends[v - 1];
      const auto& x = vs[v - 1];
      TaskBuilder b(Split::test_normal, "transfer_then_note", v,
                    "Send " + std::to_string(x.amount) + " cents to " + f +
                        " from my ledger account, then create a note titled " + x.title + " saying " + x.body + ".");
      b.apps({"ledger", "notes"}).answer("\"done\"").taught_by({"pay_friend", "save_note"});
      add_transfer(b, f, x.amount);
      add_note(b, x.title, x.body);
      out.push_back(b.build());
    }
  }

  // Test-challenge: both scenarios need the mail app, which train never uses.
  {
    const std::vector<std::string> subjects{"movie night", "recipe", "trip photos"};
    for (int v = 1; v <= 3; ++v) {
      const auto& sender = friends[v - 1];
      TaskBuilder b(Split::test_challenge, "mail_subject", v,
                    "What is the subject of the latest email from " + sender + " in my inbox?");
      b.apps({"mail"})
          .subtask("Search the inbox of alice for mails from " + sender + ".",
                   {{kSearchMailThought, "m = mail.search(user=\"alice\", sender=" + quoted(sender) + ")"}})
          .subtask("Report the subject of the latest mail found by the search.", {}, true)
          .answer("m[0].subject")
          .expect(answer_is(subjects[v - 1]))
          .taught_by({"note_lookup"});
      out.push_back(b.build());
    }
  }
  for (int v = 1; v <= 3; ++v) {
    const auto& f = friends[v - 1];
    const std::string body = std::to_string(kOpeningBalances.at("alice"));
    TaskBuilder b(Split::test_challenge, "email_balance", v,
                  "Email " + f + " my current ledger balance with the subject balance.");
    b.apps({"ledger", "mail"})
        .subtask("Look up the ledger balance of alice.", {{kBalanceThought, "b = ledger.balance(user=\"alice\")"}})
        .subtask("Email " + f + " the balance with the subject balance.",
                 {{kSendMailThought,
                   "mail.send(sender=\"alice\", to=" + quoted(f) + ", subject=\"balance\", body=b.balance)"}},
                 true)
        .answer("\"done\"")
        .expect(mail_received(f, Mail{"alice", "balance", body}))
        .allow(Value{{"app", "mail"}, {"op", "send"}, {"from", "alice"}, {"to", f}, {"subject", "balance"}, {"body", body}})
        .taught_by({"check_balance"});
    out.push_back(b.build());
  }
  return out;
}

}  // namespace

std::vector<GoldStep> MiniTask::gold_steps() const {
  std::vector<GoldStep> steps;
  for (const auto& sub : gold_plan) steps.insert(steps.end(), sub.steps.begin(), sub.steps.end());
  steps.push_back({std::string(kFinishThought), "final(answer=" + answer_expr + ")"});
  return steps;
}

std::vector<GoldStep> MiniTask::gold_subtask_steps(std::size_t index) const {
  std::vector<GoldStep> steps = gold_plan.at(index).steps;
  if (index + 1 == gold_plan.size()) {
    steps.push_back({std::string(kFinishThought), "final(answer=" + answer_expr + ")"});
  } else {
    steps.push_back({std::string(kSubtaskDoneThought), "final(answer=\"done\")"});
  }
  return steps;
}

WorldState reset(const MiniTask&, std::int64_t seed) {
  WorldState s;
  s.ledger = kOpeningBalances;
  // A seed-dependent bystander account; no task depends on it.
  s.ledger["erin"] = 5000 + 100 * static_cast<std::int64_t>(mix(static_cast<std::uint64_t>(seed)) % 50);
  s.notes = kOpeningNotes;
  s.next_note_id = static_cast<int>(kOpeningNotes.size()) + 1;
  s.inbox["alice"] = kAliceInbox;
  return s;
}

CheckResult check(const MiniTask& task, const WorldState& state, const std::optional<std::string>& final_answer) {
  CheckResult r;
  for (const auto& a : task.checker) {
    if (!a.holds(state, final_answer)) r.failed.push_back(a.name);
  }
  r.passed = r.failed.empty();
  return r;
}

const std::vector<MiniTask>& catalog() {
  static const std::vector<MiniTask> kCatalog = build_catalog();
  return kCatalog;
}

std::vector<MiniTask> list_tasks(Split split) {
  std::vector<MiniTask> out;
  for (const auto& t : catalog()) {
    if (t.task.split == split) out.push_back(t);
  }
  return out;
}

std::vector<MiniTask> list_tasks(std::string_view split) {
  try {
    return list_tasks(parse_split(split));
  } catch (const ParseError&) {
    throw DomainError("unknown split '" + std::string(split) + "'");
  }
}

const MiniTask* find_task(std::string_view task_id) {
  for (const auto& t : catalog()) {
    if (t.task.task_id == task_id) return &t;
  }
  return nullptr;
}

const MiniTask& require_task(std::string_view task_id) {
  if (const MiniTask* t = find_task(task_id)) return *t;
  throw IntegrityError("task '" + std::string(task_id) + "' is not in the miniworld catalog");
}

ActionOutcome MiniWorld::execute(std::string_view action) {
  ExecResult r = miniworld::execute(state_, action);
  if (r.terminal) final_answer_ = r.final_answer;
  return {std::move(r.observation), r.terminal, std::move(r.final_answer)};
}

bool replay_check(const AnnotationRecord& record, std::int64_t seed) {
  const MiniTask* task = find_task(record.task.task_id);
  if (!task) return false;
  WorldState state = reset(*task, seed);
  std::optional<std::string> answer;
  auto replay = [&](const Trajectory& traj) {
    for (const auto& step : traj.steps) {
      ExecResult r = miniworld::execute(state, step.action);
      if (r.terminal) answer = r.final_answer;
    }
  };
  if (record.trajectory) replay(*record.trajectory);
  for (const auto& traj : record.subtask_trajectories) replay(traj);
  return check(*task, state, answer).passed;
}

}  // namespace trajdemo::miniworld
