#include "trajdemo/scripted.hpp"

#include <algorithm>

#include <json.hpp>

#include "trajdemo/agent.hpp"
#include "trajdemo/miniworld.hpp"

namespace trajdemo {

using nlohmann::json;

namespace {

bool starts_with(std::string_view s, std::string_view prefix) { return s.substr(0, prefix.size()) == prefix; }

// Collects the bracketed names following each occurrence of `marker`.
void collect_markers(std::string_view text, std::string_view marker, std::vector<std::string>& out) {
  for (auto pos = text.find(marker); pos != std::string_view::npos; pos = text.find(marker, pos + 1)) {
    const auto start = pos + marker.size();
    const auto end = text.find(']', start);
    if (end == std::string_view::npos) break;
    out.emplace_back(text.substr(start, end - start));
  }
}

bool any_in(const std::vector<std::string>& found, const std::vector<std::string>& wanted) {
  return std::any_of(found.begin(), found.end(),
                     [&](const std::string& s) { return std::find(wanted.begin(), wanted.end(), s) != wanted.end(); });
}

std::string agent_turn(const std::string& thought, const std::string& action) {
  return json{{"thought", thought}, {"action", action}}.dump();
}

std::string plan_reply(const miniworld::MiniTask& task, bool knows) {
  json subtasks = json::array();
  if (knows) {
    for (std::size_t i = 0; i < task.gold_plan.size(); ++i) {
      subtasks.push_back({{"subtask_id", "s" + std::to_string(i + 1)}, {"statement", task.gold_plan[i].statement}});
    }
  } else {
    subtasks.push_back({{"subtask_id", "s1"}, {"statement", task.task.instruction}});
  }
  return json{{"subtasks", subtasks}}.dump();
}

std::string step_reply(const miniworld::MiniTask& task, const PromptFacts& facts) {
  bool knows = task.zero_shot_solvable || any_in(facts.demo_scenarios, task.teacher_scenarios) ||
               any_in(facts.snippet_scenarios, task.teacher_scenarios);

  std::vector<miniworld::GoldStep> gold = task.gold_steps();
  if (facts.subtask_statement) {
    const auto& plan = task.gold_plan;
    auto it = std::find_if(plan.begin(), plan.end(),
                           [&](const miniworld::GoldSubtask& s) { return s.statement == *facts.subtask_statement; });
    if (it != plan.end()) {
      const auto j = static_cast<std::size_t>(it - plan.begin());
      gold = task.gold_subtask_steps(j);
      if (j > 0 && it->needs_previous_summary) {
        for (const auto& prev : plan[j - 1].steps) {
          if (facts.task_text.find(prev.action) == std::string::npos) knows = false;
        }
      }
    }
  }

  std::size_t progress = 0;
  for (const auto& a : facts.history_actions) {
    if (progress < gold.size() && a == gold[progress].action) ++progress;
  }
  const auto& next = gold[std::min(progress, gold.size() - 1)];
  if (knows) return agent_turn(next.thought, next.action);
  return agent_turn(next.thought, task.apps.front() + ".help()");
}

}  // namespace

PromptFacts read_prompt(const ChatRequest& request) {
  PromptFacts f;
  const auto& msgs = request.messages;
  if (!msgs.empty() && msgs.front().role == Role::system) f.planner = starts_with(msgs.front().content, kPlannerSetupHead);
  for (const auto& m : msgs) {
    if (m.role == Role::assistant) {
      json j = json::parse(m.content, nullptr, false);
      if (j.is_object() && j.contains("action") && j["action"].is_string()) f.history_actions.push_back(j["action"]);
      continue;
    }
    if (starts_with(m.content, kDemoHeader)) {
      collect_markers(m.content, kDemoHeader, f.demo_scenarios);
    } else if (starts_with(m.content, kTaskHeader) && !f.task_id) {
      f.task_text = m.content;
      const auto end = m.content.find(']');
      f.task_id = m.content.substr(kTaskHeader.size(), end - kTaskHeader.size());
      if (auto pos = m.content.find(kCurrentSubtaskHeader); pos != std::string::npos) {
        const auto nl = m.content.find('\n', pos);
        if (nl != std::string::npos) f.subtask_statement = m.content.substr(nl + 1);
      }
    }
  }
  if (!msgs.empty() && starts_with(msgs.back().content, kSnippetHeader)) {
    collect_markers(msgs.back().content, kSnippetMarker, f.snippet_scenarios);
  }
  return f;
}

std::shared_ptr<ScriptedProvider> make_miniworld_provider() {
  auto known = [](const ChatRequest& r) {
    const PromptFacts f = read_prompt(r);
    return f.task_id && miniworld::find_task(*f.task_id) != nullptr;
  };
  std::vector<ScriptedProvider::Rule> rules;
  rules.push_back({"planner",
                   [known](const ChatRequest& r) { return known(r) && read_prompt(r).planner; },
                   [](const ChatRequest& r) {
                     const PromptFacts f = read_prompt(r);
                     const auto& task = miniworld::require_task(*f.task_id);
                     return plan_reply(task, task.zero_shot_solvable || any_in(f.demo_scenarios, task.teacher_scenarios));
                   }});
  rules.push_back({"step", known, [](const ChatRequest& r) {
                     const PromptFacts f = read_prompt(r);
                     return step_reply(miniworld::require_task(*f.task_id), f);
                   }});
  rules.push_back({"unknown-task", nullptr, [](const ChatRequest&) {
                     return agent_turn("I do not recognise this task, so I will stop.", "final(answer=\"unknown\")");
                   }});
  return std::make_shared<ScriptedProvider>(std::move(rules), "scripted-miniworld");
}

}  // namespace trajdemo
