#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "trajdemo/core.hpp"

// A small deterministic stand-in for a multi-app benchmark: a ledger, a
// notes app and a mail app driven by a one-line action language.
namespace trajdemo::miniworld {

using Value = nlohmann::json;

struct Note {
  std::string title;
  std::string body;
  bool operator==(const Note&) const = default;
};

struct Mail {
  std::string from;
  std::string subject;
  std::string body;
  bool operator==(const Mail&) const = default;
};

struct WorldState {
  std::map<std::string, std::int64_t> ledger;  // user -> balance in cents
  std::map<std::string, Note> notes;           // note_id -> note
  std::map<std::string, std::vector<Mail>> inbox;  // user -> mails, oldest first
  std::map<std::string, Value> variables;
  std::vector<Value> mutation_log;
  int next_note_id = 1;

  bool operator==(const WorldState&) const = default;
};

struct GoldStep {
  std::string thought;
  std::string action;
};

struct GoldSubtask {
  std::string statement;
  std::vector<GoldStep> steps;        // work steps, without the closing final()
  bool needs_previous_summary = false;  // uses variables bound by earlier subtasks
};

struct Assertion {
  std::string name;
  std::function<bool(const WorldState&, const std::optional<std::string>& answer)> holds;
};

struct MiniTask {
  Task task;
  std::vector<std::string> apps;
  std::vector<Assertion> checker;
  std::vector<Value> allowed_mutations;  // multiset of permitted log entries
  std::vector<GoldSubtask> gold_plan;
  std::string answer_expr;  // value expression passed to the closing final()

  // Facts used only by the scripted test provider's rule table.
  bool zero_shot_solvable = false;
  std::vector<std::string> teacher_scenarios;  // demos of these scenarios teach the task

  // Gold ReAct action sequence: every subtask's steps, then final().
  std::vector<GoldStep> gold_steps() const;
  // Gold executor steps for one subtask, closed by final().
  std::vector<GoldStep> gold_subtask_steps(std::size_t index) const;
};

inline constexpr std::string_view kFinishThought =
    "I have finished what was asked, so I will submit the answer.";
inline constexpr std::string_view kSubtaskDoneThought =
    "This subtask is complete, so I will mark it as done.";

WorldState reset(const MiniTask& task, std::int64_t seed);

struct ExecResult {
  std::string observation;
  bool terminal = false;
  std::optional<std::string> final_answer;
};

// Runs one action. Never throws for bad input: syntax errors, unknown
// apps/methods, bad arguments and failed guards all become error
// observations and leave the world unchanged.
ExecResult execute(WorldState& state, std::string_view action);

struct CheckResult {
  bool passed = false;
  std::vector<std::string> failed;
};

CheckResult check(const MiniTask& task, const WorldState& state,
                  const std::optional<std::string>& final_answer);

// Built-in catalog: 8 scenarios x 3 variants.
const std::vector<MiniTask>& catalog();
std::vector<MiniTask> list_tasks(Split split);
// Accepts split names; throws DomainError for unknown ones.
std::vector<MiniTask> list_tasks(std::string_view split);
const MiniTask* find_task(std::string_view task_id);
const MiniTask& require_task(std::string_view task_id);

// Environment adapter owning one WorldState.
class MiniWorld final : public Environment {
 public:
  MiniWorld(const MiniTask& task, std::int64_t seed) : state_(reset(task, seed)) {}
  ActionOutcome execute(std::string_view action) override;
  const WorldState& state() const { return state_; }
  const std::optional<std::string>& final_answer() const { return final_answer_; }

 private:
  WorldState state_;
  std::optional<std::string> final_answer_;
};

// Replays every action of a stored solution against a fresh world and runs
// the task checker. Returns false for tasks outside the catalog.
bool replay_check(const AnnotationRecord& record, std::int64_t seed);

}  // namespace trajdemo::miniworld
