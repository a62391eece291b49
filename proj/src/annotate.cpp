#include "trajdemo/annotate.hpp"

#include <algorithm>
#include <fstream>
#include <future>
#include <iostream>
#include <set>

#include <json.hpp>

namespace trajdemo {

using nlohmann::json;

void AnnotationConfig::validate() const {
  if (rounds < 1) throw ConfigError("rounds must be >= 1");
  if (demos.k < 0) throw ConfigError("demo count must be >= 0");
}

std::filesystem::path progress_path(const std::filesystem::path& checkpoint) {
  return checkpoint.string() + ".progress";
}

namespace {

void write_progress(const std::filesystem::path& checkpoint, const AnnotationProgress& p) {
  if (checkpoint.empty()) return;
  const auto path = progress_path(checkpoint);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out << json{{"round", p.round}, {"attempted_through", p.attempted_through}}.dump() << "\n";
    if (!out) throw IoError("cannot write " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot replace " + path.string() + ": " + ec.message());
}

std::optional<AnnotationProgress> read_progress(const std::filesystem::path& checkpoint) {
  std::ifstream in(progress_path(checkpoint));
  if (!in) return std::nullopt;
  try {
    json j = json::parse(in);
    return AnnotationProgress{j.at("round").get<int>(), j.at("attempted_through").get<std::string>()};
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad progress file: ") + e.what());
  }
}

void log_attempt(const AnnotationConfig& config, int round, const std::string& task_id, std::string_view outcome,
                 int steps, std::int64_t tokens) {
  std::ostream& out = config.log ? *config.log : std::cerr;
  out << json{{"round", round}, {"task_id", task_id}, {"outcome", outcome}, {"steps", steps}, {"tokens", tokens}}.dump()
      << "\n";
}

struct Attempt {
  SolveOutcome outcome;
  std::string error;
};

Attempt attempt_task(const Task& task, const Solver& solver, const Selector& selector, const AnnotationPool& view) {
  const SelectionResult demos = selector ? selector(task, view) : SelectionResult{};
  Attempt a;
  try {
    a.outcome = solver(task, demos, view);
  } catch (const std::exception& e) {
    a.error = e.what();
  }
  return a;
}

// Applies one attempt to the pool; returns true when the task was admitted.
bool settle(AnnotationPool& pool, const Task& task, Attempt attempt, const Checker& checker,
            const AnnotationConfig& config, int round) {
  const auto& o = attempt.outcome;
  std::string_view verdict = "rejected";
  bool admitted = false;
  if (!attempt.error.empty()) {
    verdict = "error";
  } else if (o.outcome != Terminal::completed || !o.record) {
    verdict = o.outcome == Terminal::exhausted ? "exhausted" : "aborted";
  } else if (checker(*o.record)) {
    AnnotationRecord record = std::move(*attempt.outcome.record);
    record.task = task;
    record.annotated_in_round = round;
    pool.admit(std::move(record));
    if (!config.checkpoint_path.empty()) save_pool(pool, config.checkpoint_path);
    verdict = "admitted";
    admitted = true;
  }
  log_attempt(config, round, task.task_id, verdict, attempt.outcome.steps, attempt.outcome.tokens);
  if (!attempt.error.empty()) {
    std::ostream& out = config.log ? *config.log : std::cerr;
    out << json{{"round", round}, {"task_id", task.task_id}, {"error", attempt.error}}.dump() << "\n";
  }
  return admitted;
}

std::vector<Task> pending_in_order(const AnnotationPool& pool, const std::string& after) {
  std::vector<Task> out;
  for (const auto& t : pool.unannotated) {
    if (after.empty() || t.task_id > after) out.push_back(t);
  }
  std::sort(out.begin(), out.end(), [](const Task& a, const Task& b) { return a.task_id < b.task_id; });
  return out;
}

AnnotationPool continue_annotation(AnnotationPool pool, AnnotationProgress from, const Solver& solver,
                                   const Checker& checker, const Selector& selector, const AnnotationConfig& config) {
  for (int round = from.round; round <= config.rounds && !pool.unannotated.empty(); ++round) {
    const std::string after = round == from.round ? from.attempted_through : std::string{};
    const std::vector<Task> order = pending_in_order(pool, after);

    if (config.parallel) {
      const AnnotationPool snapshot = pool;
      std::vector<std::future<Attempt>> running;
      for (const auto& t : order) {
        running.push_back(std::async(std::launch::async, [&, t] { return attempt_task(t, solver, selector, snapshot); }));
      }
      for (std::size_t i = 0; i < order.size(); ++i) {
        settle(pool, order[i], running[i].get(), checker, config, round);
      }
      if (!order.empty()) write_progress(config.checkpoint_path, {round, order.back().task_id});
    } else {
      for (const auto& t : order) {
        settle(pool, t, attempt_task(t, solver, selector, pool), checker, config, round);
        write_progress(config.checkpoint_path, {round, t.task_id});
      }
    }
    write_progress(config.checkpoint_path, {round + 1, ""});
  }
  return pool;
}

}  // namespace

AnnotationPool run_annotation(const std::vector<Task>& tasks, const Solver& solver, const Checker& checker,
                              const Selector& selector, const AnnotationConfig& config) {
  config.validate();
  AnnotationPool pool;
  std::vector<Task> sorted = tasks;
  std::sort(sorted.begin(), sorted.end(), [](const Task& a, const Task& b) { return a.task_id < b.task_id; });
  for (auto& t : sorted) pool.add_unannotated(std::move(t));
  pool.validate();
  if (!config.checkpoint_path.empty()) {
    save_pool(pool, config.checkpoint_path);
    write_progress(config.checkpoint_path, {1, ""});
  }
  return continue_annotation(std::move(pool), {1, ""}, solver, checker, selector, config);
}

AnnotationPool resume_annotation(const std::filesystem::path& checkpoint, const std::vector<Task>& tasks,
                                 const Solver& solver, const Checker& checker, const Selector& selector,
                                 const AnnotationConfig& config) {
  config.validate();
  AnnotationPool pool = load_pool(checkpoint);

  std::set<std::string> expected;
  for (const auto& t : tasks) expected.insert(t.task_id);
  std::set<std::string> stored;
  for (const auto& r : pool.records) stored.insert(r.task.task_id);
  for (const auto& t : pool.unannotated) stored.insert(t.task_id);
  for (const auto& id : stored) {
    if (!expected.count(id)) throw IntegrityError("checkpoint task '" + id + "' is not in the task list");
  }
  for (const auto& id : expected) {
    if (!stored.count(id)) throw IntegrityError("task '" + id + "' is missing from the checkpoint");
  }

  AnnotationProgress from;
  if (auto p = read_progress(checkpoint)) {
    from = *p;
  } else {
    for (const auto& r : pool.records) from.round = std::max(from.round, r.annotated_in_round);
  }
  AnnotationConfig cfg = config;
  cfg.checkpoint_path = checkpoint;
  return continue_annotation(std::move(pool), from, solver, checker, selector, cfg);
}

}  // namespace trajdemo
