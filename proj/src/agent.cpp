#include "trajdemo/agent.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace trajdemo {

using nlohmann::json;

void AgentConfig::validate() const {
  if (max_steps < 1) throw ConfigError("max_steps must be positive");
  if (max_context_length < 1) throw ConfigError("max_context_length must be positive");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (!(top_p > 0.0)) throw ConfigError("top_p must be positive");
  if (max_output_tokens < 1) throw ConfigError("max_output_tokens must be positive");
  if (parse_retries < 0) throw ConfigError("parse_retries must be >= 0");
}

AgentConfig AgentConfig::annotation_react() { return {50, 40000, 0.1, 0.5, 2000, 2}; }
AgentConfig AgentConfig::annotation_executor() { return {20, 20000, 0.3, 0.5, 2000, 2}; }
AgentConfig AgentConfig::evaluation_react() { return {50, 1000000, 0.1, 0.5, 2000, 2}; }
AgentConfig AgentConfig::evaluation_executor() { return {50, 1000000, 0.1, 0.5, 2000, 2}; }
AgentConfig AgentConfig::planner() { return {1, 1000000, 0.1, 0.5, 2000, 2}; }

namespace {

std::string observation_message(std::string_view observation) {
  return "Observation: " + std::string(observation);
}

void render_steps(std::ostringstream& out, const std::vector<Step>& steps) {
  for (const auto& s : steps) {
    out << "Step " << s.index << "\nThought: " << s.thought << "\nAction: " << s.action
        << "\nObservation: " << s.observation << "\n";
  }
}

}  // namespace

std::vector<Message> PromptBundle::messages() const {
  std::vector<Message> out = general_context;
  out.push_back(task_context);
  for (const auto& s : history) {
    out.push_back({Role::assistant, render_agent_turn(s)});
    out.push_back({Role::user, observation_message(s.observation)});
  }
  if (snippet_postfix) out.push_back(*snippet_postfix);
  return out;
}

std::int64_t PromptBundle::estimated_tokens() const { return estimate_input_tokens(messages()); }

std::string render_trajectory_demo(const AnnotationRecord& record) {
  std::ostringstream out;
  out << kDemoHeader << record.task.scenario_id << "]\nTask: " << record.task.instruction << "\n";
  if (record.trajectory) render_steps(out, record.trajectory->steps);
  return out.str();
}

std::string render_plan_demo(const AnnotationRecord& record) {
  json subtasks = json::array();
  if (record.plan) {
    for (const auto& s : record.plan->subtasks) subtasks.push_back({{"subtask_id", s.subtask_id}, {"statement", s.statement}});
  }
  std::ostringstream out;
  out << kDemoHeader << record.task.scenario_id << "]\nTask: " << record.task.instruction
      << "\nPlan: " << json{{"subtasks", subtasks}}.dump() << "\n";
  return out.str();
}

std::string render_subtask_demo(const AnnotationRecord& record, std::string_view subtask_id) {
  if (!record.plan) throw IntegrityError("record " + record.task.task_id + " has no plan");
  const auto& subs = record.plan->subtasks;
  auto it = std::find_if(subs.begin(), subs.end(), [&](const Subtask& s) { return s.subtask_id == subtask_id; });
  if (it == subs.end()) {
    throw IntegrityError("record " + record.task.task_id + " has no subtask " + std::string(subtask_id));
  }
  std::ostringstream out;
  out << kDemoHeader << record.task.scenario_id << "]\nSubtask: " << it->statement << "\n";
  render_steps(out, record.subtask_trajectories.at(static_cast<std::size_t>(it - subs.begin())).steps);
  return out.str();
}

std::string render_snippets(const std::vector<Snippet>& snippets, int step) {
  std::ostringstream out;
  out << kSnippetHeader << step << "\nThese steps come from other solved tasks and serve as examples only.\n";
  for (const auto& sn : snippets) {
    out << kSnippetMarker << sn.scenario_id << "] " << sn.source.record_id;
    if (sn.source.step_index) out << " step " << *sn.source.step_index;
    out << "\n";
    for (const auto& s : sn.steps) {
      out << "Thought: " << s.thought << "\nAction: " << s.action << "\nObservation: " << s.observation << "\n";
    }
  }
  return out.str();
}

std::string render_task(const Task& task) {
  return std::string(kTaskHeader) + task.task_id + "]\n" + task.instruction;
}

std::string render_agent_turn(const Step& step) {
  return json{{"thought", step.thought}, {"action", step.action}}.dump();
}

PromptBundle assemble_prompt(std::string_view setup, const std::vector<std::string>& demos,
                             std::string_view task_text, const std::vector<Step>& history,
                             const std::vector<Snippet>& snippets, int step) {
  PromptBundle b;
  b.general_context.push_back({Role::system, std::string(setup)});
  for (const auto& d : demos) b.general_context.push_back({Role::user, d});
  b.task_context = {Role::user, std::string(task_text)};
  b.history = history;
  if (!snippets.empty()) b.snippet_postfix = Message{Role::user, render_snippets(snippets, step)};
  return b;
}

PromptBundle assemble_prompt(std::string_view setup, const std::vector<std::string>& demos, const Task& task,
                             const std::vector<Step>& history, const std::vector<Snippet>& snippets) {
  return assemble_prompt(setup, demos, render_task(task), history, snippets, static_cast<int>(history.size()) + 1);
}

PromptBundle truncate_prompt(const PromptBundle& bundle, std::int64_t limit) {
  std::int64_t total = bundle.estimated_tokens();
  if (total <= limit) return bundle;

  PromptBundle out = bundle;
  const std::size_t n = out.history.size();
  const std::size_t eligible = n > kKeepRecentSteps ? n - kKeepRecentSteps : 0;
  const std::int64_t hidden_cost = estimate_tokens(observation_message(kObservationHidden));

  auto hide = [&](std::size_t i) {
    auto& obs = out.history[i].observation;
    total += hidden_cost - estimate_tokens(observation_message(obs));
    obs = kObservationHidden;
  };

  std::vector<std::size_t> long_ones;
  for (std::size_t i = 0; i < eligible; ++i) {
    if (estimate_tokens(out.history[i].observation) >= kLongObservationTokens) long_ones.push_back(i);
  }
  std::stable_sort(long_ones.begin(), long_ones.end(), [&](std::size_t a, std::size_t b) {
    return out.history[a].observation.size() > out.history[b].observation.size();
  });
  for (std::size_t i : long_ones) {
    if (total <= limit) return out;
    hide(i);
  }
  for (std::size_t i = 0; i < eligible; ++i) {
    if (total <= limit) return out;
    if (out.history[i].observation != kObservationHidden) hide(i);
  }
  if (total > limit) {
    throw ContextOverflowError("prompt needs " + std::to_string(total) + " tokens after truncation, limit is " +
                               std::to_string(limit));
  }
  return out;
}

namespace {

// End of the JSON object starting at `open`, or npos.
std::size_t matching_brace(std::string_view s, std::size_t open) {
  int depth = 0;
  bool in_string = false;
  for (std::size_t i = open; i < s.size(); ++i) {
    const char c = s[i];
    if (in_string) {
      if (c == '\\') ++i;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    else if (c == '{') ++depth;
    else if (c == '}' && --depth == 0) return i;
  }
  return std::string_view::npos;
}

// First parseable JSON object in the text, scanning left to right.
std::optional<json> find_object(std::string_view text) {
  for (std::size_t pos = text.find('{'); pos != std::string_view::npos; pos = text.find('{', pos + 1)) {
    const std::size_t end = matching_brace(text, pos);
    if (end == std::string_view::npos) continue;
    json j = json::parse(text.substr(pos, end - pos + 1), nullptr, false);
    if (!j.is_discarded() && j.is_object()) return j;
  }
  return std::nullopt;
}

}  // namespace

AgentOutput parse_agent_output(std::string_view completion) {
  auto obj = find_object(completion);
  if (!obj) throw OutputParseError("no JSON object in completion");
  auto field = [&](const char* name) {
    auto it = obj->find(name);
    if (it == obj->end() || !it->is_string()) throw OutputParseError(std::string("missing string field '") + name + "'");
    std::string v = it->get<std::string>();
    if (v.empty()) throw OutputParseError(std::string("empty field '") + name + "'");
    return v;
  };
  AgentOutput out;
  out.thought = field("thought");
  out.action = field("action");
  return out;
}

std::string summarize_subtask(std::string_view statement, const Trajectory& trajectory) {
  std::string out = "Subtask: " + std::string(statement);
  std::size_t n = trajectory.steps.size();
  if (trajectory.terminal == Terminal::completed && n > 0) --n;
  for (std::size_t i = 0; i < n; ++i) out += "\n" + trajectory.steps[i].action;
  return out;
}

TranscriptWriter::TranscriptWriter(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, std::ios::app);
  if (!out_) throw IoError("cannot open transcript " + path.string());
}

void TranscriptWriter::write(const std::string& run_id, int call, int step, std::string_view purpose,
                             const ChatRequest& request, const ChatResponse& response) {
  json msgs = json::array();
  for (const auto& m : request.messages) msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  json line{{"run", run_id},
            {"call", call},
            {"step", step},
            {"purpose", purpose},
            {"messages", std::move(msgs)},
            {"response", response.content},
            {"input_tokens", response.input_tokens},
            {"output_tokens", response.output_tokens}};
  std::lock_guard lock(mutex_);
  out_ << line.dump() << "\n";
  out_.flush();
}

std::string react_setup() {
  return "You solve tasks by calling apps one action at a time.\n"
         "Apps: ledger (users, balance, transfer), notes (list, search, read, create, update, delete), "
         "mail (inbox, search, read, send).\n"
         "Action syntax: name = app.method(key=value, ...) or app.method(...). Values are string, integer or "
         "boolean literals, or earlier variables with .field and [index] access.\n"
         "Finish with final(answer=value).\n"
         "Reply with one JSON object: {\"thought\": \"...\", \"action\": \"...\"}.";
}

std::string executor_setup() {
  return "You execute one subtask of a larger plan by calling apps one action at a time.\n"
         "Apps: ledger (users, balance, transfer), notes (list, search, read, create, update, delete), "
         "mail (inbox, search, read, send).\n"
         "Action syntax: name = app.method(key=value, ...) or app.method(...). Variables bound by earlier "
         "subtasks stay available.\n"
         "When the current subtask is done, call final(answer=value).\n"
         "Reply with one JSON object: {\"thought\": \"...\", \"action\": \"...\"}.";
}

std::string planner_setup() {
  return std::string(kPlannerSetupHead) +
         " Break the task into an ordered list of subtasks that an executor can solve one by one.\n"
         "Reply with one JSON object: {\"subtasks\": [{\"subtask_id\": \"s1\", \"statement\": \"...\"}]}.";
}

namespace {

struct LoopSpec {
  std::string setup;
  std::vector<std::string> demos;
  std::string task_text;
  std::string purpose;
  std::string exclude_task_id;
};

ChatRequest make_request(std::vector<Message> messages, const AgentConfig& config, const RunOptions& options) {
  ChatRequest req;
  req.messages = std::move(messages);
  req.temperature = config.temperature;
  req.top_p = config.top_p;
  req.max_output_tokens = config.max_output_tokens;
  req.seed = options.seed;
  return req;
}

RunResult run_loop(const LoopSpec& spec, const AnnotationPool& pool, Environment& env, ChatProvider& provider,
                   const AgentConfig& config, const RunOptions& options, int& calls) {
  config.validate();
  if (options.snippets && !options.embedder) throw ConfigError("snippets need an embedding provider");

  RunResult out;
  out.outcome = Terminal::exhausted;
  auto& steps = out.trajectory.steps;

  for (int t = 1; t <= config.max_steps; ++t) {
    std::vector<Snippet> snippets;
    if (options.snippets && t > 1) {
      snippets = select_snippets(steps.back().thought, pool, *options.snippets, *options.embedder,
                                 spec.exclude_task_id);
    }
    PromptBundle bundle = assemble_prompt(spec.setup, spec.demos, spec.task_text, steps, snippets, t);

    Step step;
    step.index = t;
    std::optional<AgentOutput> parsed;
    std::string parse_error;
    try {
      bundle = truncate_prompt(bundle, config.max_context_length);
      for (int attempt = 0; attempt <= config.parse_retries && !parsed; ++attempt) {
        ChatRequest req = make_request(bundle.messages(), config, options);
        ChatResponse resp = provider.chat(req);
        ++calls;
        if (options.transcript) options.transcript->write(options.run_id, calls, t, spec.purpose, req, resp);
        step.input_tokens += resp.input_tokens;
        step.output_tokens += resp.output_tokens;
        try {
          parsed = parse_agent_output(resp.content);
        } catch (const OutputParseError& e) {
          parse_error = e.what();
        }
      }
    } catch (const ContextOverflowError& e) {
      out.outcome = Terminal::aborted;
      out.error = e.what();
      break;
    } catch (const ProviderError& e) {
      out.outcome = Terminal::aborted;
      out.error = e.what();
      out.total_input_tokens += step.input_tokens;
      out.total_output_tokens += step.output_tokens;
      break;
    }
    out.snippets_used.push_back(std::move(snippets));

    if (!parsed) {
      step.thought = "[parse error]";
      step.action = "[none]";
      step.observation = "Error: could not parse the reply (" + parse_error + ")";
      steps.push_back(std::move(step));
      continue;
    }
    step.thought = std::move(parsed->thought);
    step.action = std::move(parsed->action);
    ActionOutcome result = env.execute(step.action);
    step.observation = std::move(result.observation);
    steps.push_back(std::move(step));
    if (result.terminal) {
      out.outcome = Terminal::completed;
      out.trajectory.final_answer = std::move(result.final_answer);
      break;
    }
  }
  out.trajectory.terminal = out.outcome;
  for (const auto& s : steps) {
    out.total_input_tokens += s.input_tokens;
    out.total_output_tokens += s.output_tokens;
  }
  return out;
}

const AnnotationRecord& require_record(const AnnotationPool& pool, std::string_view id) {
  const AnnotationRecord* r = pool.find(id);
  if (!r) throw IntegrityError("demo '" + std::string(id) + "' is not in the pool");
  return *r;
}

bool needs_embedder(const SelectionSpec& spec) {
  return spec.k > 0 && (spec.method == SelectionMethod::cosine || spec.method == SelectionMethod::bsr ||
                        spec.method == SelectionMethod::set_bsr);
}

}  // namespace

RunResult run_react(const Task& task, const SelectionResult& demos, const AnnotationPool& pool, Environment& env,
                    ChatProvider& provider, const AgentConfig& config, const RunOptions& options) {
  LoopSpec spec;
  spec.setup = react_setup();
  for (const auto& id : demos.ids()) spec.demos.push_back(render_trajectory_demo(require_record(pool, id)));
  spec.task_text = render_task(task);
  spec.purpose = "react";
  spec.exclude_task_id = task.task_id;
  int calls = 0;
  RunResult out = run_loop(spec, pool, env, provider, config, options, calls);
  out.trajectory.task_id = task.task_id;
  out.demos_used = demos;
  return out;
}

namespace {

Plan parse_plan(std::string_view completion, const std::string& task_id) {
  auto obj = find_object(completion);
  if (!obj) throw PlanError("no JSON object in planner reply");
  auto it = obj->find("subtasks");
  if (it == obj->end() || !it->is_array()) throw PlanError("planner reply has no subtasks array");
  Plan p;
  p.task_id = task_id;
  for (const auto& item : *it) {
    Subtask s;
    s.subtask_id = "s" + std::to_string(p.subtasks.size() + 1);
    if (item.is_string()) {
      s.statement = item.get<std::string>();
    } else if (item.is_object() && item.contains("statement") && item["statement"].is_string()) {
      s.statement = item["statement"].get<std::string>();
      if (item.contains("subtask_id") && item["subtask_id"].is_string()) s.subtask_id = item["subtask_id"];
    } else {
      throw PlanError("subtask entry is neither a string nor an object with a statement");
    }
    if (s.statement.empty() || s.subtask_id.empty()) throw PlanError("empty subtask");
    for (const auto& prev : p.subtasks) {
      if (prev.subtask_id == s.subtask_id) throw PlanError("duplicate subtask id " + s.subtask_id);
    }
    p.subtasks.push_back(std::move(s));
  }
  if (p.subtasks.empty()) throw PlanError("planner returned no subtasks");
  return p;
}

PlanResult plan_impl(const Task& task, const std::vector<const AnnotationRecord*>& plan_demos, ChatProvider& provider,
                     const AgentConfig& config, const RunOptions& options, int& calls) {
  config.validate();
  std::vector<Message> messages{{Role::system, planner_setup()}};
  for (const auto* r : plan_demos) messages.push_back({Role::user, render_plan_demo(*r)});
  messages.push_back({Role::user, render_task(task)});

  PlanResult out;
  std::string last_error;
  for (int attempt = 0; attempt <= config.parse_retries; ++attempt) {
    ChatRequest req = make_request(messages, config, options);
    ChatResponse resp = provider.chat(req);
    ++calls;
    if (options.transcript) options.transcript->write(options.run_id, calls, 0, "planner", req, resp);
    out.input_tokens += resp.input_tokens;
    out.output_tokens += resp.output_tokens;
    try {
      out.plan = parse_plan(resp.content, task.task_id);
      return out;
    } catch (const PlanError& e) {
      last_error = e.what();
    }
  }
  throw PlanError("no usable plan after " + std::to_string(config.parse_retries + 1) + " attempts: " + last_error);
}

}  // namespace

PlanResult plan(const Task& task, const std::vector<const AnnotationRecord*>& plan_demos, ChatProvider& provider,
                const AgentConfig& config, const RunOptions& options) {
  int calls = 0;
  return plan_impl(task, plan_demos, provider, config, options, calls);
}

RunResult run_pne(const Task& task, const AnnotationPool& pool, Environment& env, ChatProvider& provider,
                  const PneConfig& config, const RunOptions& options) {
  if ((needs_embedder(config.plan_demos) || needs_embedder(config.subtask_demos)) && !options.embedder) {
    throw ConfigError("similarity-based demo selection needs an embedding provider");
  }
  RunResult out;
  out.trajectory.task_id = task.task_id;
  int calls = 0;

  HashEmbedder unused;
  EmbeddingProvider& embedder = options.embedder ? *options.embedder : static_cast<EmbeddingProvider&>(unused);
  out.demos_used = select_plan_demos(task, pool, config.plan_demos, embedder);
  std::vector<const AnnotationRecord*> plan_demos;
  for (const auto& id : out.demos_used.ids()) plan_demos.push_back(&require_record(pool, id));

  PlanResult planned;
  try {
    planned = plan_impl(task, plan_demos, provider, config.planner, options, calls);
  } catch (const PlanError& e) {
    out.error = e.what();
    out.trajectory.terminal = out.outcome = Terminal::aborted;
    return out;
  } catch (const ProviderError& e) {
    out.error = e.what();
    out.trajectory.terminal = out.outcome = Terminal::aborted;
    return out;
  }
  out.plan = planned.plan;
  out.planner_input_tokens = planned.input_tokens;
  out.planner_output_tokens = planned.output_tokens;

  std::string plan_text = "\n\nPlan:";
  for (std::size_t i = 0; i < planned.plan.subtasks.size(); ++i) {
    const auto& s = planned.plan.subtasks[i];
    plan_text += "\n" + std::to_string(i + 1) + ". [" + s.subtask_id + "] " + s.statement;
  }

  std::vector<std::string> summaries;
  out.outcome = Terminal::completed;
  for (const auto& sub : planned.plan.subtasks) {
    SelectionResult demos = select_subtask_demos(sub.statement, pool, config.subtask_demos, embedder, task.task_id);
    LoopSpec spec;
    spec.setup = executor_setup();
    for (const auto& item : demos.items) {
      const auto slash = item.candidate_id.rfind('/');
      spec.demos.push_back(render_subtask_demo(require_record(pool, item.candidate_id.substr(0, slash)),
                                               item.candidate_id.substr(slash + 1)));
    }
    spec.task_text = render_task(task) + plan_text;
    if (config.include_summaries && !summaries.empty()) {
      spec.task_text += "\n\nCompleted subtasks:";
      for (const auto& s : summaries) spec.task_text += "\n" + s;
    }
    spec.task_text += "\n\n" + std::string(kCurrentSubtaskHeader) + sub.subtask_id + "]\n" + sub.statement;
    spec.purpose = "executor:" + sub.subtask_id;
    spec.exclude_task_id = task.task_id;

    RunResult part = run_loop(spec, pool, env, provider, config.executor, options, calls);
    part.trajectory.task_id = sub.subtask_id;
    out.subtask_demos.push_back(std::move(demos));
    for (auto s : part.trajectory.steps) {
      s.index = static_cast<int>(out.trajectory.steps.size()) + 1;
      out.trajectory.steps.push_back(std::move(s));
    }
    for (auto& sn : part.snippets_used) out.snippets_used.push_back(std::move(sn));
    out.total_input_tokens += part.total_input_tokens;
    out.total_output_tokens += part.total_output_tokens;
    out.subtask_trajectories.push_back(part.trajectory);
    if (part.outcome != Terminal::completed) {
      out.outcome = Terminal::aborted;
      out.error = "subtask " + sub.subtask_id + " ended " + std::string(to_string(part.outcome)) +
                  (part.error.empty() ? "" : ": " + part.error);
      break;
    }
    out.trajectory.final_answer = part.trajectory.final_answer;
    summaries.push_back(summarize_subtask(sub.statement, part.trajectory));
  }
  if (out.outcome != Terminal::completed) out.trajectory.final_answer.reset();
  out.trajectory.terminal = out.outcome;
  return out;
}

}  // namespace trajdemo
