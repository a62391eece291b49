#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "trajdemo/error.hpp"

namespace trajdemo {

enum class Split { train, dev, test_normal, test_challenge };
enum class Terminal { completed, exhausted, aborted };
enum class SolverKind { react, pne };

std::string_view to_string(Split s);
std::string_view to_string(Terminal t);
std::string_view to_string(SolverKind k);
Split parse_split(std::string_view s);
Terminal parse_terminal(std::string_view s);
SolverKind parse_solver_kind(std::string_view s);

struct Task {
  std::string task_id;
  std::string scenario_id;
  int variant = 1;
  std::string instruction;
  Split split = Split::train;

  bool operator==(const Task&) const = default;
};

// One thought/action/observation triple. Token counts are the usage of the
// provider call(s) that produced this step.
struct Step {
  int index = 1;
  std::string thought;
  std::string action;
  std::string observation;
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;

  bool operator==(const Step&) const = default;
};

struct Trajectory {
  std::string task_id;
  std::vector<Step> steps;
  Terminal terminal = Terminal::aborted;
  std::optional<std::string> final_answer;

  bool operator==(const Trajectory&) const = default;

  std::int64_t input_tokens() const;
  std::int64_t output_tokens() const;
};

struct Subtask {
  std::string subtask_id;
  std::string statement;

  bool operator==(const Subtask&) const = default;
};

struct Plan {
  std::string task_id;
  std::vector<Subtask> subtasks;

  bool operator==(const Plan&) const = default;
};

// A task joined with its verified solution. For react records `trajectory`
// is set; for pne records `plan` is set and `subtask_trajectories[i]`
// solves `plan->subtasks[i]`.
struct AnnotationRecord {
  Task task;
  SolverKind kind = SolverKind::react;
  std::optional<Trajectory> trajectory;
  std::optional<Plan> plan;
  std::vector<Trajectory> subtask_trajectories;
  int annotated_in_round = 1;

  bool operator==(const AnnotationRecord&) const = default;

  // Throws IntegrityError when the record breaks a type invariant.
  void validate() const;
};

// T* (records) and U (unannotated) of the annotation loop.
struct AnnotationPool {
  std::vector<AnnotationRecord> records;
  std::vector<Task> unannotated;

  bool operator==(const AnnotationPool&) const = default;

  const AnnotationRecord* find(std::string_view task_id) const;
  bool contains(std::string_view task_id) const;
  std::size_t size() const { return records.size(); }

  // Adds a verified record. Rejects duplicates and non-completed solutions;
  // removes the task from `unannotated` if it is listed there.
  void admit(AnnotationRecord record);
  void add_unannotated(Task task);

  // Checks every pool invariant; throws IntegrityError on violation.
  void validate() const;
};

AnnotationPool load_pool(const std::filesystem::path& path);
void save_pool(const AnnotationPool& pool, const std::filesystem::path& path);

// Line-level codec used by load_pool/save_pool and by the CLI for task lists.
std::string encode_record(const AnnotationRecord& record);
std::string encode_task_line(const Task& task);
AnnotationPool decode_pool(std::string_view text);
std::string encode_pool(const AnnotationPool& pool);

// What an environment reports back after running one action.
struct ActionOutcome {
  std::string observation;
  bool terminal = false;
  std::optional<std::string> final_answer;
};

class Environment {
 public:
  virtual ~Environment() = default;
  virtual ActionOutcome execute(std::string_view action) = 0;
};

// ceil(characters / 4); used wherever a provider does not report usage.
std::int64_t estimate_tokens(std::string_view text);

// 64-bit FNV-1a. Stable across platforms and runs.
std::uint64_t stable_hash(std::string_view text, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

}  // namespace trajdemo
