#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "trajdemo/core.hpp"
#include "trajdemo/embed.hpp"

namespace trajdemo {

// Where a candidate's payload lives inside an AnnotationPool.
struct PayloadRef {
  std::string record_id;
  std::optional<std::string> subtask_id;
  std::optional<int> step_index;

  bool operator==(const PayloadRef&) const = default;
};

struct Candidate {
  std::string candidate_id;
  std::string key_text;
  PayloadRef payload;
};

enum class SelectionMethod { zeroshot, fixed, random, cosine, bsr, set_bsr };

std::string_view to_string(SelectionMethod m);
// Accepts the CLI spellings: zeroshot, fixed, random, cos|cosine, bsr, set_bsr.
SelectionMethod parse_selection_method(std::string_view s);

struct ScoredCandidate {
  std::string candidate_id;
  double score = 0.0;

  bool operator==(const ScoredCandidate&) const = default;
};

struct SelectionResult {
  std::vector<ScoredCandidate> items;
  SelectionMethod method = SelectionMethod::zeroshot;
  int k_requested = 0;

  bool operator==(const SelectionResult&) const = default;
  std::vector<std::string> ids() const;
};

struct SelectionSpec {
  SelectionMethod method = SelectionMethod::cosine;
  int k = 1;
  std::uint64_t seed = 0;
  std::vector<std::string> fixed_ids;  // method == fixed
};

struct Snippet {
  PayloadRef source;
  std::string scenario_id;  // scenario of the source record
  std::vector<Step> steps;  // matched step, then its successor if any
  double match_score = 0.0;

  bool operator==(const Snippet&) const = default;
};

struct SnippetConfig {
  int k = 2;
  double threshold = 0.85;
};

// Mean over key tokens of the best (non-negative) cosine against any
// candidate token. Throws DomainError when `key` has no tokens; a candidate
// without tokens scores 0.
double bsr_score(const EmbeddedText& key, const EmbeddedText& candidate);
double bsr_score(std::string_view key, std::string_view candidate, EmbeddingProvider& provider);

// Set-level BSR: every key token takes its best match over the union of the
// candidates' tokens. The empty set covers 0.
double set_coverage(const EmbeddedText& key, std::span<const EmbeddedText> selected);

SelectionResult rank_cosine(std::string_view key, std::span<const Candidate> candidates, int k,
                            EmbeddingProvider& provider);
SelectionResult rank_bsr(std::string_view key, std::span<const Candidate> candidates, int k,
                         EmbeddingProvider& provider);
// Greedy maximization of set_coverage. Items are listed in pick order with
// their marginal gain as the score.
SelectionResult set_bsr_select(std::string_view key, std::span<const Candidate> candidates, int k,
                               EmbeddingProvider& provider);
// Seeded uniform sample without replacement; `salt` decorrelates queries
// that share a seed.
SelectionResult select_random(std::span<const Candidate> candidates, int k, std::uint64_t seed,
                              std::string_view salt = {});
SelectionResult select_fixed(std::span<const Candidate> candidates,
                             const std::vector<std::string>& ids, int k);

// Dispatches on spec.method. `salt` feeds the random method only.
SelectionResult select_candidates(std::string_view key, std::span<const Candidate> candidates,
                                  const SelectionSpec& spec, EmbeddingProvider& provider,
                                  std::string_view salt = {});

// Candidate builders over a pool. The excluded task never becomes a candidate.
std::vector<Candidate> trajectory_candidates(const AnnotationPool& pool, std::string_view exclude_task_id);
std::vector<Candidate> plan_candidates(const AnnotationPool& pool, std::string_view exclude_task_id);
std::vector<Candidate> subtask_candidates(const AnnotationPool& pool, std::string_view exclude_task_id);

// Whole-trajectory demos keyed by the task instruction (react records).
SelectionResult select_trajectory_demos(const Task& task, const AnnotationPool& pool,
                                        const SelectionSpec& spec, EmbeddingProvider& provider);
// Task-plan demos for the planner (pne records), keyed by the instruction.
SelectionResult select_plan_demos(const Task& task, const AnnotationPool& pool,
                                  const SelectionSpec& spec, EmbeddingProvider& provider);
// Subtask-trajectory demos for the executor, keyed by the subtask statement.
// Candidate ids are "<task_id>/<subtask_id>".
SelectionResult select_subtask_demos(std::string_view statement, const AnnotationPool& pool,
                                     const SelectionSpec& spec, EmbeddingProvider& provider,
                                     std::string_view exclude_task_id);

// Step-level snippets retrieved by thought similarity over react
// trajectories; at most one snippet per source trajectory.
std::vector<Snippet> select_snippets(std::string_view current_thought, const AnnotationPool& pool,
                                     const SnippetConfig& config, EmbeddingProvider& provider,
                                     std::string_view exclude_task_id = {});

}  // namespace trajdemo
