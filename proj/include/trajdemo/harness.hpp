#pragma once

#include <optional>
#include <vector>

#include "trajdemo/agent.hpp"
#include "trajdemo/annotate.hpp"
#include "trajdemo/miniworld.hpp"

// Glue between the generic loops and the built-in miniworld catalog.
namespace trajdemo {

std::vector<Task> catalog_tasks(Split split);
// "builtin:train+dev" style lists; each part is a split name.
std::vector<Task> catalog_tasks(std::string_view spec);

// Callers keep the providers alive for as long as the returned functors.
Solver react_solver(ChatProvider& provider, const AgentConfig& config, const RunOptions& options,
                    std::int64_t env_seed);
Solver pne_solver(ChatProvider& provider, const PneConfig& config, const RunOptions& options, std::int64_t env_seed);
Selector trajectory_selector(const SelectionSpec& spec, EmbeddingProvider& embedder);
// Replays the stored actions on a fresh world; tasks outside the catalog fail.
Checker miniworld_checker(std::int64_t env_seed);

// Planner and executor settings used while annotating: cosine-selected
// demos, 4 task-plan pairs and 3 subtask trajectories.
PneConfig annotation_pne_config();

struct AnnotateSetup {
  SolverKind solver = SolverKind::react;
  int rounds = 3;
  std::int64_t seed = 0;
  SelectionSpec react_demos{SelectionMethod::cosine, 1, 0, {}};
  PneConfig pne = annotation_pne_config();
  AgentConfig react = AgentConfig::annotation_react();
  std::filesystem::path checkpoint;
  bool parallel = false;
  std::ostream* log = nullptr;
};

// Annotates catalog tasks with the given chat provider.
AnnotationPool annotate_catalog(const std::vector<Task>& tasks, ChatProvider& provider, EmbeddingProvider& embedder,
                                const AnnotateSetup& setup, bool resume = false);

struct TaskRun {
  RunResult result;
  bool passed = false;
  std::vector<std::string> failed_assertions;
};

struct RunSetup {
  SolverKind solver = SolverKind::react;
  SelectionSpec demos{SelectionMethod::cosine, 1, 0, {}};  // react: trajectories; pne: plan demos
  PneConfig pne;
  AgentConfig react = AgentConfig::evaluation_react();
  std::optional<SnippetConfig> snippets;
  std::int64_t env_seed = 0;
};

// One isolated run of a catalog task, checked against its unit tests.
TaskRun run_catalog_task(const miniworld::MiniTask& task, const AnnotationPool& pool, ChatProvider& provider,
                         EmbeddingProvider& embedder, const RunSetup& setup, TranscriptWriter* transcript = nullptr,
                         const std::string& run_id = {});

}  // namespace trajdemo
