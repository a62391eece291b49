#include "trajdemo/eval.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "trajdemo/harness.hpp"
#include "trajdemo/remote.hpp"
#include "trajdemo/scripted.hpp"

namespace trajdemo {

using nlohmann::json;

Aggregates aggregate(const std::vector<TaskRow>& rows) {
  Aggregates a;
  if (rows.empty()) return a;
  std::size_t first_pass = 0, all_pass = 0, solved_steps = 0;
  double steps = 0.0, tokens = 0.0;
  std::map<std::string, bool> scenario_ok;
  for (const auto& row : rows) {
    const RunRecord& first = row.runs.front();
    const bool every = std::all_of(row.runs.begin(), row.runs.end(), [](const RunRecord& r) { return r.passed; });
    first_pass += first.passed;
    all_pass += every;
    steps += first.steps;
    tokens += static_cast<double>(first.input_tokens + first.output_tokens);
    if (first.passed) solved_steps += static_cast<std::size_t>(first.steps);
    auto [it, inserted] = scenario_ok.emplace(row.scenario_id, first.passed);
    if (!inserted) it->second = it->second && first.passed;
  }
  const double n = static_cast<double>(rows.size());
  a.tgc = 100.0 * static_cast<double>(first_pass) / n;
  a.rtgc = 100.0 * static_cast<double>(all_pass) / n;
  const auto ok = std::count_if(scenario_ok.begin(), scenario_ok.end(), [](const auto& kv) { return kv.second; });
  a.sgc = 100.0 * static_cast<double>(ok) / static_cast<double>(scenario_ok.size());
  a.avg_steps = a.avg_steps_all = steps / n;
  if (first_pass > 0) a.avg_steps_solved = static_cast<double>(solved_steps) / static_cast<double>(first_pass);
  a.avg_tokens = tokens / n;
  return a;
}

EvalReport evaluate(const std::map<std::string, std::vector<RunRecord>>& results, const std::vector<Task>& tasks,
                    int n_runs) {
  if (n_runs < 1) throw DomainError("n_runs must be >= 1");
  EvalReport report;
  report.n_runs = n_runs;
  std::set<std::string> seen;
  for (const auto& t : tasks) {
    if (!seen.insert(t.task_id).second) throw IntegrityError("task '" + t.task_id + "' listed twice");
    auto it = results.find(t.task_id);
    if (it == results.end()) throw IntegrityError("no runs for task '" + t.task_id + "'");
    if (static_cast<int>(it->second.size()) != n_runs) {
      throw IntegrityError("task '" + t.task_id + "' has " + std::to_string(it->second.size()) + " runs, expected " +
                           std::to_string(n_runs));
    }
    report.per_task.push_back({t.task_id, t.scenario_id, t.variant, it->second});
  }
  for (const auto& [id, runs] : results) {
    if (!seen.count(id)) throw IntegrityError("runs reported for unknown task '" + id + "'");
  }
  std::sort(report.per_task.begin(), report.per_task.end(),
            [](const TaskRow& a, const TaskRow& b) { return a.task_id < b.task_id; });
  report.aggregates = aggregate(report.per_task);
  return report;
}

json report_to_json(const EvalReport& report) {
  json rows = json::array();
  for (const auto& row : report.per_task) {
    json runs = json::array();
    for (const auto& r : row.runs) {
      runs.push_back({{"passed", r.passed}, {"steps", r.steps}, {"input_tokens", r.input_tokens},
                      {"output_tokens", r.output_tokens}});
    }
    rows.push_back({{"task_id", row.task_id}, {"scenario_id", row.scenario_id}, {"variant", row.variant},
                    {"runs", std::move(runs)}});
  }
  const auto& a = report.aggregates;
  json agg{{"tgc", a.tgc},
           {"rtgc", a.rtgc},
           {"sgc", a.sgc},
           {"avg_steps", a.avg_steps},
           {"avg_steps_all", a.avg_steps_all},
           {"avg_steps_solved", a.avg_steps_solved ? json(*a.avg_steps_solved) : json(nullptr)},
           {"avg_tokens", a.avg_tokens}};
  return json{{"per_task", std::move(rows)},
              {"aggregates", std::move(agg)},
              {"n_runs", report.n_runs},
              {"config_fingerprint", report.config_fingerprint}};
}

EvalReport report_from_json(const json& j) {
  try {
    EvalReport r;
    for (const auto& row : j.at("per_task")) {
      TaskRow t{row.at("task_id"), row.at("scenario_id"), row.at("variant"), {}};
      for (const auto& run : row.at("runs")) {
        t.runs.push_back({run.at("passed"), run.at("steps"), run.at("input_tokens"), run.at("output_tokens")});
      }
      r.per_task.push_back(std::move(t));
    }
    const auto& a = j.at("aggregates");
    r.aggregates.tgc = a.at("tgc");
    r.aggregates.rtgc = a.at("rtgc");
    r.aggregates.sgc = a.at("sgc");
    r.aggregates.avg_steps = a.at("avg_steps");
    r.aggregates.avg_steps_all = a.at("avg_steps_all");
    if (!a.at("avg_steps_solved").is_null()) r.aggregates.avg_steps_solved = a.at("avg_steps_solved").get<double>();
    r.aggregates.avg_tokens = a.at("avg_tokens");
    r.n_runs = j.at("n_runs");
    r.config_fingerprint = j.at("config_fingerprint");
    return r;
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad report: ") + e.what());
  }
}

void write_report(const EvalReport& report, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << report_to_json(report).dump(2) << "\n";
  if (!out) throw IoError("cannot write " + path.string());
}

EvalReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ParseError("report is not valid JSON: " + path.string());
  return report_from_json(j);
}

// ---- experiment config ----

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig c;
  c.values = {
      {"split", "test_normal"},
      {"solver", "react"},
      {"method", "cos"},
      {"k", "1"},
      {"fixed_ids", ""},
      {"seed", "0"},
      {"runs", "2"},
      {"snippets", "false"},
      {"snippet_k", "2"},
      {"snippet_threshold", "0.85"},
      {"pool", "builtin"},
      {"annotation_rounds", "3"},
      {"max_steps", "50"},
      {"max_context_length", "1000000"},
      {"provider", "scripted"},
      {"record", ""},
      {"out", ""},
      {"base_url", "http://127.0.0.1:8000"},
      {"model", ""},
      {"api_key_env", "OPENAI_API_KEY"},
      {"embedder", "hash"},
      {"embed_model", ""},
      {"embed_dim", "256"},
  };
  return c;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

const std::set<std::string> kPlumbingKeys{"provider", "record", "out", "base_url", "api_key_env"};

}  // namespace

ExperimentConfig ExperimentConfig::parse(std::string_view text) {
  ExperimentConfig c = defaults();
  std::istringstream in{std::string(text)};
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ParseError("expected key = value", line_no);
    c.set(trim(std::string_view(t).substr(0, eq)), trim(std::string_view(t).substr(eq + 1)));
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  static const auto known = defaults().values;
  if (!values.empty() && !known.count(key)) throw ConfigError("unknown config key '" + key + "'");
  values[key] = value;
}

const std::string& ExperimentConfig::get(const std::string& key) const {
  auto it = values.find(key);
  if (it == values.end()) throw ConfigError("missing config key '" + key + "'");
  return it->second;
}

int ExperimentConfig::get_int(const std::string& key) const {
  const auto& v = get(key);
  try {
    std::size_t used = 0;
    const int out = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' needs an integer, got '" + v + "'");
  }
}

double ExperimentConfig::get_double(const std::string& key) const {
  const auto& v = get(key);
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' needs a number, got '" + v + "'");
  }
}

bool ExperimentConfig::get_bool(const std::string& key) const {
  const auto& v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off" || v.empty()) return false;
  throw ConfigError("config key '" + key + "' needs a boolean, got '" + v + "'");
}

std::string ExperimentConfig::dump() const {
  std::string out;
  for (const auto& [k, v] : values) out += k + " = " + v + "\n";
  return out;
}

std::string ExperimentConfig::fingerprint() const {
  std::string canon;
  for (const auto& [k, v] : values) {
    if (!kPlumbingKeys.count(k)) canon += k + "=" + v + "\n";
  }
  return hex64(stable_hash(canon));
}

namespace {

RemoteConfig remote_config(const ExperimentConfig& c, const std::string& model) {
  RemoteConfig r;
  r.base_url = c.get("base_url");
  r.model = model;
  r.api_key_env = c.get("api_key_env");
  return r;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

std::shared_ptr<ChatProvider> make_chat_provider(const ExperimentConfig& config) {
  const std::string& name = config.get("provider");
  std::shared_ptr<ChatProvider> p;
  if (name == "scripted") {
    p = make_miniworld_provider();
  } else if (name == "remote") {
    p = std::make_shared<RemoteChatProvider>(remote_config(config, config.get("model")));
  } else if (name.rfind("replay:", 0) == 0) {
    p = std::make_shared<ReplayProvider>(name.substr(7));
  } else {
    throw ConfigError("unknown provider '" + name + "' (scripted, remote, replay:<store>)");
  }
  if (!config.get("record").empty()) p = std::make_shared<RecordingProvider>(p, config.get("record"));
  return p;
}

std::shared_ptr<EmbeddingProvider> make_embedder(const ExperimentConfig& config) {
  const std::string& name = config.get("embedder");
  std::shared_ptr<EmbeddingProvider> inner;
  if (name == "hash") {
    inner = std::make_shared<HashEmbedder>(static_cast<std::size_t>(config.get_int("embed_dim")));
  } else if (name == "remote") {
    inner = std::make_shared<RemoteEmbedder>(remote_config(config, config.get("embed_model")),
                                             static_cast<std::size_t>(config.get_int("embed_dim")));
  } else {
    throw ConfigError("unknown embedder '" + name + "' (hash, remote)");
  }
  return std::make_shared<CachingEmbedder>(inner);
}

ExperimentOutput run_experiment(const ExperimentConfig& config, ChatProvider& provider, EmbeddingProvider& embedder) {
  // Read and check every setting before any provider call.
  const Split split = [&] {
    try {
      return parse_split(config.get("split"));
    } catch (const ParseError&) {
      throw ConfigError("unknown split '" + config.get("split") + "'");
    }
  }();
  const SolverKind solver = [&] {
    try {
      return parse_solver_kind(config.get("solver"));
    } catch (const ParseError&) {
      throw ConfigError("unknown solver '" + config.get("solver") + "'");
    }
  }();
  SelectionSpec demos;
  demos.method = parse_selection_method(config.get("method"));
  demos.k = config.get_int("k");
  demos.fixed_ids = split_list(config.get("fixed_ids"));
  const int seed = config.get_int("seed");
  const int runs = config.get_int("runs");
  if (runs < 1) throw ConfigError("runs must be >= 1");
  if (demos.k < 0) throw ConfigError("k must be >= 0");
  std::optional<SnippetConfig> snippets;
  if (config.get_bool("snippets")) {
    snippets = SnippetConfig{config.get_int("snippet_k"), config.get_double("snippet_threshold")};
  }
  AgentConfig react = AgentConfig::evaluation_react();
  react.max_steps = config.get_int("max_steps");
  react.max_context_length = config.get_int("max_context_length");
  react.validate();
  PneConfig pne;
  pne.executor.max_steps = react.max_steps;
  pne.executor.max_context_length = react.max_context_length;
  const int rounds = config.get_int("annotation_rounds");
  const std::filesystem::path out_dir = config.get("out");

  const auto tasks = miniworld::list_tasks(split);
  AnnotationPool pool;
  const std::string& pool_src = config.get("pool");
  if (pool_src != "builtin") {
    pool = load_pool(pool_src);
  }
  if (demos.method == SelectionMethod::fixed && pool_src != "builtin") {
    for (const auto& id : demos.fixed_ids) {
      if (!pool.contains(id)) throw ConfigError("fixed demo id '" + id + "' is not in the pool");
    }
  }

  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  CountingProvider counted(std::shared_ptr<ChatProvider>(&provider, [](ChatProvider*) {}));

  if (pool_src == "builtin") {
    AnnotateSetup setup;
    setup.solver = solver;
    setup.rounds = rounds;
    setup.seed = seed;
    std::ostringstream discard;
    std::ofstream log_file;
    if (!out_dir.empty()) log_file.open(out_dir / "annotation.log", std::ios::trunc);
    setup.log = log_file.is_open() ? static_cast<std::ostream*>(&log_file) : &discard;
    std::vector<Task> train = catalog_tasks(Split::train);
    for (auto& t : catalog_tasks(Split::dev)) train.push_back(std::move(t));
    pool = annotate_catalog(train, counted, embedder, setup);
  }

  std::map<std::string, std::vector<RunRecord>> results;
  for (const auto& task : tasks) {
    for (int r = 0; r < runs; ++r) {
      RunSetup setup;
      setup.solver = solver;
      setup.demos = demos;
      setup.demos.seed = static_cast<std::uint64_t>(seed + r);
      setup.react = react;
      setup.pne = pne;
      setup.snippets = snippets;
      setup.env_seed = seed + r;
      const std::string run_id = task.task.task_id + ".run" + std::to_string(r + 1);
      std::unique_ptr<TranscriptWriter> transcript;
      if (!out_dir.empty()) {
        const auto path = out_dir / "transcripts" / (run_id + ".jsonl");
        std::filesystem::remove(path);
        transcript = std::make_unique<TranscriptWriter>(path);
      }
      const TaskRun run = run_catalog_task(task, pool, counted, embedder, setup, transcript.get(), run_id);
      const auto& res = run.result;
      results[task.task.task_id].push_back({run.passed, static_cast<int>(res.trajectory.steps.size()),
                                            res.total_input_tokens + res.planner_input_tokens,
                                            res.total_output_tokens + res.planner_output_tokens});
    }
  }

  std::vector<Task> plain;
  for (const auto& t : tasks) plain.push_back(t.task);
  ExperimentOutput out;
  out.report = evaluate(results, plain, runs);
  out.report.config_fingerprint = config.fingerprint();
  out.provider_calls = counted.calls();
  if (!out_dir.empty()) write_report(out.report, out_dir / "report.json");
  return out;
}

ExperimentOutput run_experiment(const ExperimentConfig& config) {
  auto provider = make_chat_provider(config);
  auto embedder = make_embedder(config);
  return run_experiment(config, *provider, *embedder);
}

}  // namespace trajdemo
