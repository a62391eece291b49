#include "trajdemo/core.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <set>
#include <sstream>
#include <utility>

#include <json.hpp>

namespace trajdemo {

using nlohmann::json;

namespace {

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view text, const std::array<std::pair<std::string_view, Enum>, N>& table,
                const char* what) {
  for (const auto& [name, value] : table) {
    if (name == text) return value;
  }
  throw ParseError(std::string("unknown ") + what + " '" + std::string(text) + "'");
}

constexpr std::array<std::pair<std::string_view, Split>, 4> kSplits{{
    {"train", Split::train},
    {"dev", Split::dev},
    {"test_normal", Split::test_normal},
    {"test_challenge", Split::test_challenge},
}};
constexpr std::array<std::pair<std::string_view, Terminal>, 3> kTerminals{{
    {"completed", Terminal::completed},
    {"exhausted", Terminal::exhausted},
    {"aborted", Terminal::aborted},
}};
constexpr std::array<std::pair<std::string_view, SolverKind>, 2> kKinds{{
    {"react", SolverKind::react},
    {"pne", SolverKind::pne},
}};

void validate_task(const Task& t) {
  if (t.task_id.empty()) throw IntegrityError("task with empty task_id");
  if (t.scenario_id.empty()) throw IntegrityError("task " + t.task_id + " has empty scenario_id");
  if (t.variant < 1) throw IntegrityError("task " + t.task_id + " has variant < 1");
  if (t.instruction.empty()) throw IntegrityError("task " + t.task_id + " has empty instruction");
}

void validate_trajectory(const Trajectory& traj, const std::string& owner) {
  if (traj.steps.empty()) throw IntegrityError(owner + ": stored trajectory has no steps");
  if (traj.terminal != Terminal::completed) {
    throw IntegrityError(owner + ": only completed trajectories can be stored");
  }
  int prev = 0;
  for (std::size_t i = 0; i < traj.steps.size(); ++i) {
    const Step& s = traj.steps[i];
    if (s.index <= prev) throw IntegrityError(owner + ": step indices not strictly increasing");
    prev = s.index;
    if (s.input_tokens < 0 || s.output_tokens < 0) {
      throw IntegrityError(owner + ": negative token count");
    }
    const bool terminal_step = i + 1 == traj.steps.size();
    if (!terminal_step && (s.thought.empty() || s.action.empty())) {
      throw IntegrityError(owner + ": non-terminal step with empty thought or action");
    }
  }
}

json task_fields(const Task& t) {
  return json{{"task_id", t.task_id},
              {"scenario_id", t.scenario_id},
              {"variant", t.variant},
              {"instruction", t.instruction},
              {"split", to_string(t.split)}};
}

json steps_to_json(const std::vector<Step>& steps) {
  json arr = json::array();
  for (const Step& s : steps) {
    arr.push_back(json{{"index", s.index},
                       {"thought", s.thought},
                       {"action", s.action},
                       {"observation", s.observation},
                       {"input_tokens", s.input_tokens},
                       {"output_tokens", s.output_tokens}});
  }
  return arr;
}

json optional_text(const std::optional<std::string>& s) { return s ? json(*s) : json(nullptr); }

Task task_from_json(const json& j) {
  Task t;
  t.task_id = j.at("task_id").get<std::string>();
  t.scenario_id = j.at("scenario_id").get<std::string>();
  t.variant = j.at("variant").get<int>();
  t.instruction = j.at("instruction").get<std::string>();
  t.split = parse_split(j.at("split").get<std::string>());
  return t;
}

std::vector<Step> steps_from_json(const json& arr) {
  std::vector<Step> steps;
  for (const json& s : arr) {
    Step step;
    step.index = s.at("index").get<int>();
    step.thought = s.at("thought").get<std::string>();
    step.action = s.at("action").get<std::string>();
    step.observation = s.at("observation").get<std::string>();
    step.input_tokens = s.at("input_tokens").get<std::int64_t>();
    step.output_tokens = s.at("output_tokens").get<std::int64_t>();
    steps.push_back(std::move(step));
  }
  return steps;
}

std::optional<std::string> optional_text_from(const json& j, const char* key) {
  const json& v = j.at(key);
  if (v.is_null()) return std::nullopt;
  return v.get<std::string>();
}

Trajectory trajectory_from_json(const json& j, const std::string& owner_id) {
  Trajectory traj;
  traj.task_id = owner_id;
  traj.steps = steps_from_json(j.at("steps"));
  traj.terminal = parse_terminal(j.at("terminal").get<std::string>());
  traj.final_answer = optional_text_from(j, "final_answer");
  return traj;
}

void append_trajectory_fields(json& j, const Trajectory& traj) {
  j["steps"] = steps_to_json(traj.steps);
  j["terminal"] = to_string(traj.terminal);
  j["final_answer"] = optional_text(traj.final_answer);
}

}  // namespace

std::string_view to_string(Split s) {
  for (const auto& [name, value] : kSplits) {
    if (value == s) return name;
  }
  return "train";
}

std::string_view to_string(Terminal t) {
  for (const auto& [name, value] : kTerminals) {
    if (value == t) return name;
  }
  return "aborted";
}

std::string_view to_string(SolverKind k) { return k == SolverKind::react ? "react" : "pne"; }

Split parse_split(std::string_view s) { return parse_enum(s, kSplits, "split"); }
Terminal parse_terminal(std::string_view s) { return parse_enum(s, kTerminals, "terminal"); }
SolverKind parse_solver_kind(std::string_view s) { return parse_enum(s, kKinds, "kind"); }

std::int64_t Trajectory::input_tokens() const {
  std::int64_t total = 0;
  for (const Step& s : steps) total += s.input_tokens;
  return total;
}

std::int64_t Trajectory::output_tokens() const {
  std::int64_t total = 0;
  for (const Step& s : steps) total += s.output_tokens;
  return total;
}

void AnnotationRecord::validate() const {
  validate_task(task);
  const std::string& id = task.task_id;
  if (annotated_in_round < 1) throw IntegrityError(id + ": annotated_in_round < 1");
  if (kind == SolverKind::react) {
    if (!trajectory || plan || !subtask_trajectories.empty()) {
      throw IntegrityError(id + ": react record must hold exactly one trajectory");
    }
    if (trajectory->task_id != id) throw IntegrityError(id + ": trajectory task_id mismatch");
    validate_trajectory(*trajectory, id);
    return;
  }
  if (trajectory || !plan) throw IntegrityError(id + ": pne record must hold a plan");
  if (plan->task_id != id) throw IntegrityError(id + ": plan task_id mismatch");
  if (plan->subtasks.empty()) throw IntegrityError(id + ": plan has no subtasks");
  if (plan->subtasks.size() != subtask_trajectories.size()) {
    throw IntegrityError(id + ": every subtask needs exactly one trajectory");
  }
  std::set<std::string> seen;
  for (std::size_t i = 0; i < plan->subtasks.size(); ++i) {
    const Subtask& sub = plan->subtasks[i];
    if (sub.subtask_id.empty() || !seen.insert(sub.subtask_id).second) {
      throw IntegrityError(id + ": subtask ids must be non-empty and unique");
    }
    if (subtask_trajectories[i].task_id != sub.subtask_id) {
      throw IntegrityError(id + ": subtask trajectory id mismatch for " + sub.subtask_id);
    }
    validate_trajectory(subtask_trajectories[i], id + "/" + sub.subtask_id);
  }
}

const AnnotationRecord* AnnotationPool::find(std::string_view task_id) const {
  for (const auto& r : records) {
    if (r.task.task_id == task_id) return &r;
  }
  return nullptr;
}

bool AnnotationPool::contains(std::string_view task_id) const {
  if (find(task_id)) return true;
  for (const auto& t : unannotated) {
    if (t.task_id == task_id) return true;
  }
  return false;
}

namespace {

void check_scenario_variant(const AnnotationPool& pool, const Task& task) {
  auto clash = [&](const Task& other) {
    return other.task_id != task.task_id && other.scenario_id == task.scenario_id && other.variant == task.variant;
  };
  const bool taken = std::any_of(pool.records.begin(), pool.records.end(),
                                 [&](const AnnotationRecord& r) { return clash(r.task); }) ||
                     std::any_of(pool.unannotated.begin(), pool.unannotated.end(), clash);
  if (taken) throw IntegrityError("duplicate (scenario_id, variant) for " + task.task_id);
}

}  // namespace

void AnnotationPool::admit(AnnotationRecord record) {
  record.validate();
  const std::string& id = record.task.task_id;
  if (find(id)) throw IntegrityError("duplicate task_id " + id);
  check_scenario_variant(*this, record.task);
  std::erase_if(unannotated, [&](const Task& t) { return t.task_id == id; });
  records.push_back(std::move(record));
}

void AnnotationPool::add_unannotated(Task task) {
  validate_task(task);
  if (contains(task.task_id)) throw IntegrityError("duplicate task_id " + task.task_id);
  check_scenario_variant(*this, task);
  unannotated.push_back(std::move(task));
}

void AnnotationPool::validate() const {
  std::set<std::string> ids;
  std::set<std::pair<std::string, int>> scenario_variants;
  auto claim = [&](const Task& t) {
    if (!ids.insert(t.task_id).second) throw IntegrityError("duplicate task_id " + t.task_id);
    if (!scenario_variants.emplace(t.scenario_id, t.variant).second) {
      throw IntegrityError("duplicate (scenario_id, variant) for " + t.task_id);
    }
  };
  for (const auto& r : records) {
    r.validate();
    claim(r.task);
  }
  for (const auto& t : unannotated) {
    validate_task(t);
    claim(t);
  }
}

std::string encode_record(const AnnotationRecord& record) {
  json j{{"kind", to_string(record.kind)}};
  j.update(task_fields(record.task));
  if (record.kind == SolverKind::react) {
    append_trajectory_fields(j, *record.trajectory);
  } else {
    json subtasks = json::array();
    for (std::size_t i = 0; i < record.plan->subtasks.size(); ++i) {
      const Subtask& sub = record.plan->subtasks[i];
      json s{{"subtask_id", sub.subtask_id}, {"statement", sub.statement}};
      append_trajectory_fields(s, record.subtask_trajectories.at(i));
      subtasks.push_back(std::move(s));
    }
    j["plan"] = json{{"subtasks", std::move(subtasks)}};
  }
  j["annotated_in_round"] = record.annotated_in_round;
  return j.dump();
}

std::string encode_task_line(const Task& task) {
  json j{{"kind", "unannotated"}};
  j.update(task_fields(task));
  return j.dump();
}

std::string encode_pool(const AnnotationPool& pool) {
  std::string out;
  for (const auto& r : pool.records) out += encode_record(r) + "\n";
  for (const auto& t : pool.unannotated) out += encode_task_line(t) + "\n";
  return out;
}

AnnotationPool decode_pool(std::string_view text) {
  AnnotationPool pool;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(std::string("malformed record: ") + e.what(), line_no);
    }
    try {
      const std::string kind = j.at("kind").get<std::string>();
      Task task = task_from_json(j);
      if (!ids.insert(task.task_id).second) {
        throw IntegrityError("line " + std::to_string(line_no) + ": duplicate task_id " +
                             task.task_id);
      }
      if (kind == "unannotated") {
        pool.unannotated.push_back(std::move(task));
        continue;
      }
      AnnotationRecord record;
      record.kind = parse_solver_kind(kind);
      record.annotated_in_round = j.at("annotated_in_round").get<int>();
      if (record.kind == SolverKind::react) {
        record.trajectory = trajectory_from_json(j, task.task_id);
      } else {
        Plan plan;
        plan.task_id = task.task_id;
        for (const json& s : j.at("plan").at("subtasks")) {
          Subtask sub{s.at("subtask_id").get<std::string>(), s.at("statement").get<std::string>()};
          record.subtask_trajectories.push_back(trajectory_from_json(s, sub.subtask_id));
          plan.subtasks.push_back(std::move(sub));
        }
        record.plan = std::move(plan);
      }
      record.task = std::move(task);
      pool.records.push_back(std::move(record));
    } catch (const json::exception& e) {
      throw ParseError(std::string("bad field: ") + e.what(), line_no);
    } catch (const ParseError& e) {
      if (e.line() != 0) throw;
      throw ParseError(e.what(), line_no);
    }
  }
  pool.validate();
  return pool;
}

AnnotationPool load_pool(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open pool file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_pool(buf.str());
}

void save_pool(const AnnotationPool& pool, const std::filesystem::path& path) {
  const std::string text = encode_pool(pool);
  // write, then rename
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write pool file " + path.string());
    out << text;
    out.flush();
    if (!out) throw IoError("write failed for " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot replace " + path.string() + ": " + ec.message());
}

std::int64_t estimate_tokens(std::string_view text) {
  return static_cast<std::int64_t>((text.size() + 3) / 4);
}

std::uint64_t stable_hash(std::string_view text, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[value & 0xf];
    value >>= 4;
  }
  return out;
}

}  // namespace trajdemo
