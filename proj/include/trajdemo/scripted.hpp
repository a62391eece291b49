#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "trajdemo/provider.hpp"

namespace trajdemo {

// What the scripted miniworld provider reads out of a prompt.
struct PromptFacts {
  bool planner = false;
  std::optional<std::string> task_id;
  std::optional<std::string> subtask_statement;
  std::string task_text;
  std::vector<std::string> demo_scenarios;     // DEMO[...] markers in any message
  std::vector<std::string> snippet_scenarios;  // SNIPPET[...] markers in the final message
  std::vector<std::string> history_actions;    // actions of earlier agent turns
};

PromptFacts read_prompt(const ChatRequest& request);

// Rule-table provider for the built-in catalog. It reproduces the gold step
// for a task only when the task is solvable without demonstrations, or when
// the prompt carries a demonstration or snippet from one of the task's
// teaching scenarios. Otherwise it keeps the gold thought but emits an action
// the environment rejects. The planner follows the same rule and falls back
// to a single subtask holding the instruction.
std::shared_ptr<ScriptedProvider> make_miniworld_provider();

}  // namespace trajdemo
