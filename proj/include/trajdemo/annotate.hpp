#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include "trajdemo/core.hpp"
#include "trajdemo/select.hpp"

namespace trajdemo {

struct AnnotationConfig {
  int rounds = 3;
  SolverKind solver_kind = SolverKind::react;
  SelectionSpec demos{SelectionMethod::cosine, 1, 0, {}};
  std::int64_t seed = 0;
  std::filesystem::path checkpoint_path;  // empty: no checkpointing
  // Runs each round's tasks concurrently against the pool as it stood when
  // the round began. Off by default.
  bool parallel = false;
  std::ostream* log = nullptr;  // one JSON line per attempt; null: std::cerr

  void validate() const;
};

// A solver's attempt. `record` is set only for completed runs; the loop
// fills in annotated_in_round.
struct SolveOutcome {
  Terminal outcome = Terminal::aborted;
  std::optional<AnnotationRecord> record;
  int steps = 0;
  std::int64_t tokens = 0;
};

using Selector = std::function<SelectionResult(const Task&, const AnnotationPool&)>;
using Solver = std::function<SolveOutcome(const Task&, const SelectionResult&, const AnnotationPool&)>;
using Checker = std::function<bool(const AnnotationRecord&)>;

// Round/position bookkeeping stored next to the checkpoint as
// "<checkpoint>.progress".
struct AnnotationProgress {
  int round = 1;
  std::string attempted_through;  // last task id attempted in `round`
};

std::filesystem::path progress_path(const std::filesystem::path& checkpoint);

// Every round walks the unannotated tasks in ascending task_id order and
// admits a solution iff the checker accepts it. Stops after config.rounds
// rounds or once nothing is left.
AnnotationPool run_annotation(const std::vector<Task>& tasks, const Solver& solver, const Checker& checker,
                              const Selector& selector, const AnnotationConfig& config);

// Continues an interrupted run from its checkpoint. Throws IntegrityError
// unless the checkpoint holds exactly the given task ids.
AnnotationPool resume_annotation(const std::filesystem::path& checkpoint, const std::vector<Task>& tasks,
                                 const Solver& solver, const Checker& checker, const Selector& selector,
                                 const AnnotationConfig& config);

}  // namespace trajdemo
