#include "trajdemo/harness.hpp"

#include <sstream>

namespace trajdemo {

std::vector<Task> catalog_tasks(Split split) {
  std::vector<Task> out;
  for (const auto& t : miniworld::list_tasks(split)) out.push_back(t.task);
  return out;
}

std::vector<Task> catalog_tasks(std::string_view spec) {
  constexpr std::string_view prefix = "builtin:";
  if (spec.substr(0, prefix.size()) == prefix) spec.remove_prefix(prefix.size());
  std::vector<Task> out;
  std::stringstream parts{std::string(spec)};
  for (std::string part; std::getline(parts, part, '+');) {
    for (const auto& t : miniworld::list_tasks(std::string_view(part))) out.push_back(t.task);
  }
  return out;
}

namespace {

SolveOutcome outcome_of(const RunResult& r) {
  SolveOutcome o;
  o.outcome = r.outcome;
  o.steps = static_cast<int>(r.trajectory.steps.size());
  o.tokens = r.all_tokens();
  return o;
}

}  // namespace

Solver react_solver(ChatProvider& provider, const AgentConfig& config, const RunOptions& options,
                    std::int64_t env_seed) {
  return [&provider, config, options, env_seed](const Task& task, const SelectionResult& demos,
                                                const AnnotationPool& pool) {
    const auto& mt = miniworld::require_task(task.task_id);
    miniworld::MiniWorld env(mt, env_seed);
    RunResult r = run_react(task, demos, pool, env, provider, config, options);
    SolveOutcome o = outcome_of(r);
    if (r.outcome == Terminal::completed) {
      AnnotationRecord rec;
      rec.task = task;
      rec.kind = SolverKind::react;
      rec.trajectory = std::move(r.trajectory);
      o.record = std::move(rec);
    }
    return o;
  };
}

Solver pne_solver(ChatProvider& provider, const PneConfig& config, const RunOptions& options, std::int64_t env_seed) {
  return [&provider, config, options, env_seed](const Task& task, const SelectionResult&, const AnnotationPool& pool) {
    const auto& mt = miniworld::require_task(task.task_id);
    miniworld::MiniWorld env(mt, env_seed);
    RunResult r = run_pne(task, pool, env, provider, config, options);
    SolveOutcome o = outcome_of(r);
    if (r.outcome == Terminal::completed && r.plan) {
      AnnotationRecord rec;
      rec.task = task;
      rec.kind = SolverKind::pne;
      rec.plan = std::move(r.plan);
      rec.subtask_trajectories = std::move(r.subtask_trajectories);
      o.record = std::move(rec);
    }
    return o;
  };
}

Selector trajectory_selector(const SelectionSpec& spec, EmbeddingProvider& embedder) {
  return [spec, &embedder](const Task& task, const AnnotationPool& pool) {
    return select_trajectory_demos(task, pool, spec, embedder);
  };
}

Checker miniworld_checker(std::int64_t env_seed) {
  return [env_seed](const AnnotationRecord& record) { return miniworld::replay_check(record, env_seed); };
}

PneConfig annotation_pne_config() {
  PneConfig c;
  c.planner = AgentConfig::planner();
  c.executor = AgentConfig::annotation_executor();
  c.plan_demos = {SelectionMethod::cosine, 4, 0, {}};
  c.subtask_demos = {SelectionMethod::cosine, 3, 0, {}};
  return c;
}

AnnotationPool annotate_catalog(const std::vector<Task>& tasks, ChatProvider& provider, EmbeddingProvider& embedder,
                                const AnnotateSetup& setup, bool resume) {
  AnnotationConfig config;
  config.rounds = setup.rounds;
  config.solver_kind = setup.solver;
  config.demos = setup.react_demos;
  config.seed = setup.seed;
  config.checkpoint_path = setup.checkpoint;
  config.parallel = setup.parallel;
  config.log = setup.log;

  RunOptions options;
  options.embedder = &embedder;
  options.seed = setup.seed;

  Solver solver;
  Selector selector;
  if (setup.solver == SolverKind::react) {
    solver = react_solver(provider, setup.react, options, setup.seed);
    selector = trajectory_selector(setup.react_demos, embedder);
  } else {
    solver = pne_solver(provider, setup.pne, options, setup.seed);
  }
  const Checker checker = miniworld_checker(setup.seed);
  if (resume) {
    if (setup.checkpoint.empty()) throw ConfigError("resume needs a checkpoint path");
    return resume_annotation(setup.checkpoint, tasks, solver, checker, selector, config);
  }
  return run_annotation(tasks, solver, checker, selector, config);
}

TaskRun run_catalog_task(const miniworld::MiniTask& task, const AnnotationPool& pool, ChatProvider& provider,
                         EmbeddingProvider& embedder, const RunSetup& setup, TranscriptWriter* transcript,
                         const std::string& run_id) {
  RunOptions options;
  options.embedder = &embedder;
  options.snippets = setup.snippets;
  options.transcript = transcript;
  options.run_id = run_id;
  options.seed = setup.env_seed;

  miniworld::MiniWorld env(task, setup.env_seed);
  TaskRun out;
  if (setup.solver == SolverKind::react) {
    const SelectionResult demos = select_trajectory_demos(task.task, pool, setup.demos, embedder);
    out.result = run_react(task.task, demos, pool, env, provider, setup.react, options);
  } else {
    PneConfig pne = setup.pne;
    pne.plan_demos = setup.demos;
    pne.subtask_demos.method = setup.demos.method;
    pne.subtask_demos.seed = setup.demos.seed;
    pne.subtask_demos.fixed_ids.clear();
    for (const auto& id : setup.demos.fixed_ids) {
      const AnnotationRecord* r = pool.find(id);
      if (!r || !r->plan) throw ConfigError("fixed demo '" + id + "' is not a plan record");
      for (const auto& sub : r->plan->subtasks) pne.subtask_demos.fixed_ids.push_back(id + "/" + sub.subtask_id);
    }
    out.result = run_pne(task.task, pool, env, provider, pne, options);
  }
  if (out.result.outcome == Terminal::completed) {
    const auto verdict = miniworld::check(task, env.state(), env.final_answer());
    out.passed = verdict.passed;
    out.failed_assertions = verdict.failed;
  } else {
    out.failed_assertions = {"not_completed"};
  }
  return out;
}

}  // namespace trajdemo
