#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "trajdemo/core.hpp"
#include "trajdemo/embed.hpp"
#include "trajdemo/provider.hpp"
#include "trajdemo/select.hpp"

namespace trajdemo {

// Text markers shared by the renderers and by anything that inspects prompts.
inline constexpr std::string_view kObservationHidden = "[observation hidden]";
inline constexpr std::string_view kTaskHeader = "### Task [";
inline constexpr std::string_view kCurrentSubtaskHeader = "### Current subtask [";
inline constexpr std::string_view kDemoHeader = "### Demonstration DEMO[";
inline constexpr std::string_view kSnippetHeader = "### Reference snippets for step ";
inline constexpr std::string_view kSnippetMarker = "SNIPPET[";
inline constexpr std::string_view kPlannerSetupHead = "You are a planner.";

// Observations in the newest steps are never hidden by truncation.
inline constexpr std::size_t kKeepRecentSteps = 3;
// Observations at least this long are hidden first.
inline constexpr std::int64_t kLongObservationTokens = 500;

struct AgentConfig {
  int max_steps = 50;
  std::int64_t max_context_length = 40000;
  double temperature = 0.1;
  double top_p = 0.5;
  int max_output_tokens = 2000;
  int parse_retries = 2;

  // Throws ConfigError unless every field is positive (parse_retries >= 0).
  void validate() const;

  static AgentConfig annotation_react();
  static AgentConfig annotation_executor();
  static AgentConfig evaluation_react();
  static AgentConfig evaluation_executor();
  static AgentConfig planner();
};

struct PromptBundle {
  std::vector<Message> general_context;  // setup, then demonstrations
  Message task_context;
  std::vector<Step> history;  // observations may carry kObservationHidden
  std::optional<Message> snippet_postfix;

  // Flattened message list in provider order.
  std::vector<Message> messages() const;
  std::int64_t estimated_tokens() const;
};

std::string render_trajectory_demo(const AnnotationRecord& record);
std::string render_plan_demo(const AnnotationRecord& record);
std::string render_subtask_demo(const AnnotationRecord& record, std::string_view subtask_id);
std::string render_snippets(const std::vector<Snippet>& snippets, int step);
std::string render_task(const Task& task);
// Agent turn as stored in the history: {"thought": ..., "action": ...}.
std::string render_agent_turn(const Step& step);

PromptBundle assemble_prompt(std::string_view setup, const std::vector<std::string>& demos,
                             std::string_view task_text, const std::vector<Step>& history,
                             const std::vector<Snippet>& snippets, int step);
PromptBundle assemble_prompt(std::string_view setup, const std::vector<std::string>& demos, const Task& task,
                             const std::vector<Step>& history, const std::vector<Snippet>& snippets);

// Hides observations outside the newest kKeepRecentSteps until the prompt
// fits: long ones first (longest first), then the rest (oldest first).
// Throws ContextOverflowError when hiding everything allowed is not enough.
PromptBundle truncate_prompt(const PromptBundle& bundle, std::int64_t limit);

struct AgentOutput {
  std::string thought;
  std::string action;
};

// Finds the outermost JSON object in `completion` and reads its "thought"
// and "action" strings. Throws OutputParseError.
AgentOutput parse_agent_output(std::string_view completion);

// Concatenates a subtask's actions under its statement, leaving out the
// closing final() step.
std::string summarize_subtask(std::string_view statement, const Trajectory& trajectory);

// One JSON line per provider call.
class TranscriptWriter {
 public:
  explicit TranscriptWriter(const std::filesystem::path& path);
  void write(const std::string& run_id, int call, int step, std::string_view purpose, const ChatRequest& request,
             const ChatResponse& response);

 private:
  std::mutex mutex_;
  std::ofstream out_;
};

struct RunOptions {
  std::optional<SnippetConfig> snippets;
  EmbeddingProvider* embedder = nullptr;  // needed for snippets and pne selection
  TranscriptWriter* transcript = nullptr;
  std::string run_id;
  std::optional<std::int64_t> seed;
};

struct RunResult {
  Trajectory trajectory;
  Terminal outcome = Terminal::aborted;
  std::int64_t total_input_tokens = 0;   // sum over steps
  std::int64_t total_output_tokens = 0;  // sum over steps
  SelectionResult demos_used;
  std::vector<std::vector<Snippet>> snippets_used;  // one entry per step
  std::string error;                                // abort reason

  // Plan-and-execute only.
  std::optional<Plan> plan;
  std::vector<Trajectory> subtask_trajectories;
  std::vector<SelectionResult> subtask_demos;
  std::int64_t planner_input_tokens = 0;
  std::int64_t planner_output_tokens = 0;

  std::int64_t all_tokens() const {
    return total_input_tokens + total_output_tokens + planner_input_tokens + planner_output_tokens;
  }
};

std::string react_setup();
std::string executor_setup();
std::string planner_setup();

// Thought/action/observation loop. `demos` ids name react records in `pool`.
RunResult run_react(const Task& task, const SelectionResult& demos, const AnnotationPool& pool, Environment& env,
                    ChatProvider& provider, const AgentConfig& config, const RunOptions& options = {});

struct PlanResult {
  Plan plan;
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;
};

// One planner call (plus parse retries). Throws PlanError.
PlanResult plan(const Task& task, const std::vector<const AnnotationRecord*>& plan_demos, ChatProvider& provider,
                const AgentConfig& config, const RunOptions& options = {});

struct PneConfig {
  AgentConfig planner = AgentConfig::planner();
  AgentConfig executor = AgentConfig::evaluation_executor();
  SelectionSpec plan_demos{SelectionMethod::bsr, 4, 0, {}};
  SelectionSpec subtask_demos{SelectionMethod::bsr, 3, 0, {}};
  bool include_summaries = true;
};

RunResult run_pne(const Task& task, const AnnotationPool& pool, Environment& env, ChatProvider& provider,
                  const PneConfig& config, const RunOptions& options = {});

}  // namespace trajdemo
