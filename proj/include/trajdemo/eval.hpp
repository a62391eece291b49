#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "trajdemo/core.hpp"
#include "trajdemo/embed.hpp"
#include "trajdemo/provider.hpp"

namespace trajdemo {

struct RunRecord {
  bool passed = false;
  int steps = 0;
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;

  bool operator==(const RunRecord&) const = default;
};

struct TaskRow {
  std::string task_id;
  std::string scenario_id;
  int variant = 1;
  std::vector<RunRecord> runs;

  bool operator==(const TaskRow&) const = default;
};

struct Aggregates {
  double tgc = 0.0;   // % of tasks whose first run passed
  double rtgc = 0.0;  // % of tasks whose every run passed
  double sgc = 0.0;   // % of scenarios whose variants all passed on the first run
  double avg_steps = 0.0;      // first runs, all tasks
  double avg_steps_all = 0.0;  // same as avg_steps
  std::optional<double> avg_steps_solved;  // first runs that passed
  double avg_tokens = 0.0;                 // first runs, input + output

  bool operator==(const Aggregates&) const = default;
};

struct EvalReport {
  std::vector<TaskRow> per_task;  // ascending task_id
  Aggregates aggregates;
  int n_runs = 1;
  std::string config_fingerprint;

  bool operator==(const EvalReport&) const = default;
};

// `results` maps task_id to its runs. Throws IntegrityError when a task has
// other than n_runs results, and DomainError for n_runs < 1.
EvalReport evaluate(const std::map<std::string, std::vector<RunRecord>>& results, const std::vector<Task>& tasks,
                    int n_runs);
Aggregates aggregate(const std::vector<TaskRow>& rows);

nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);
void write_report(const EvalReport& report, const std::filesystem::path& path);
EvalReport read_report(const std::filesystem::path& path);

// Flat key = value experiment description. Unknown keys are rejected.
struct ExperimentConfig {
  std::map<std::string, std::string> values;

  static ExperimentConfig defaults();
  static ExperimentConfig parse(std::string_view text);
  static ExperimentConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  // Stable hash over the experiment keys. Skips provider, record, base_url,
  // api_key_env and out.
  std::string fingerprint() const;
  std::string dump() const;
};

// Builds the chat provider named by the config: "scripted", "remote" or
// "replay:<store>"; wrapped in a recorder when `record` is set.
std::shared_ptr<ChatProvider> make_chat_provider(const ExperimentConfig& config);
std::shared_ptr<EmbeddingProvider> make_embedder(const ExperimentConfig& config);

struct ExperimentOutput {
  EvalReport report;
  std::int64_t provider_calls = 0;
};

// Runs every task of the configured split `runs` times, writes
// <out>/report.json and per-run transcripts under <out>/transcripts/.
ExperimentOutput run_experiment(const ExperimentConfig& config, ChatProvider& provider, EmbeddingProvider& embedder);
ExperimentOutput run_experiment(const ExperimentConfig& config);

}  // namespace trajdemo
