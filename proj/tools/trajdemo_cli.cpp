// trajdemo: annotate, run, evaluate and inspect demonstration pools.
#include <iostream>
#include <map>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "trajdemo/eval.hpp"
#include "trajdemo/harness.hpp"

using namespace trajdemo;
using nlohmann::json;

namespace {

struct ProviderOpts {
  std::string provider = "scripted";
  std::string record;
  std::string base_url = "http://127.0.0.1:8000";
  std::string model;
  std::string api_key_env = "OPENAI_API_KEY";
  std::string embedder = "hash";
  std::string embed_model;
  int embed_dim = 256;

  void attach(CLI::App* app) {
    app->add_option("--provider", provider, "scripted | remote | replay:<store>");
    app->add_option("--record", record, "append every exchange to this replay store");
    app->add_option("--base-url", base_url, "remote endpoint base url");
    app->add_option("--model", model, "remote chat model");
    app->add_option("--api-key-env", api_key_env, "environment variable holding the bearer token");
    app->add_option("--embedder", embedder, "hash | remote");
    app->add_option("--embed-model", embed_model, "remote embedding model");
    app->add_option("--embed-dim", embed_dim, "embedding dimension");
  }

  void apply(ExperimentConfig& c) const {
    c.set("provider", provider);
    c.set("record", record);
    c.set("base_url", base_url);
    c.set("model", model);
    c.set("api_key_env", api_key_env);
    c.set("embedder", embedder);
    c.set("embed_model", embed_model);
    c.set("embed_dim", std::to_string(embed_dim));
  }
};

json selection_json(const SelectionResult& r) {
  json items = json::array();
  for (const auto& it : r.items) items.push_back({{"candidate_id", it.candidate_id}, {"score", it.score}});
  return {{"method", to_string(r.method)}, {"k_requested", r.k_requested}, {"items", items}};
}

json pool_stats(const AnnotationPool& pool) {
  std::set<std::string> scenarios;
  std::map<std::string, int> rounds;
  std::size_t react = 0, pne = 0, steps = 0;
  for (const auto& r : pool.records) {
    scenarios.insert(r.task.scenario_id);
    ++rounds[std::to_string(r.annotated_in_round)];
    if (r.kind == SolverKind::react) {
      ++react;
      steps += r.trajectory->steps.size();
    } else {
      ++pne;
      for (const auto& t : r.subtask_trajectories) steps += t.steps.size();
    }
  }
  return {{"records", pool.records.size()}, {"react", react},       {"pne", pne},
          {"unannotated", pool.unannotated.size()}, {"scenarios", scenarios.size()},
          {"steps", steps},                   {"by_round", rounds}};
}

std::vector<Task> load_tasks(const std::string& spec) {
  if (spec.rfind("builtin:", 0) == 0) return catalog_tasks(std::string_view(spec));
  AnnotationPool file = load_pool(spec);
  std::vector<Task> tasks = file.unannotated;
  for (const auto& r : file.records) tasks.push_back(r.task);
  return tasks;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Demonstration pools for ReAct and plan-and-execute agents"};
  app.require_subcommand(1);

  // annotate
  auto* annotate = app.add_subcommand("annotate", "annotate tasks with verified solutions");
  std::string tasks_spec = "builtin:train+dev", solver_name = "react", pool_path, method_name = "cos";
  int rounds = 3, k = -1;
  std::int64_t seed = 0;
  bool parallel = false, resume = false;
  ProviderOpts annotate_prov;
  annotate->add_option("--tasks", tasks_spec, "task file or builtin:<split>[+<split>]");
  annotate->add_option("--solver", solver_name, "react | pne");
  annotate->add_option("--rounds", rounds, "annotation rounds");
  annotate->add_option("--pool", pool_path, "output pool / checkpoint path")->required();
  annotate->add_option("--method", method_name, "demo selection method");
  annotate->add_option("--k", k, "demos per task (react)");
  annotate->add_option("--seed", seed, "environment and selection seed");
  annotate->add_flag("--parallel", parallel, "solve each round's tasks concurrently");
  annotate->add_flag("--resume", resume, "continue from the checkpoint at --pool");
  annotate_prov.attach(annotate);

  // run
  auto* run = app.add_subcommand("run", "run one catalog task");
  std::string run_task, run_method = "cos", run_pool, run_solver = "react", transcript_path;
  int run_k = 1;
  bool run_snippets = false;
  std::int64_t run_seed = 0;
  ProviderOpts run_prov;
  run->add_option("--task", run_task, "task id")->required();
  run->add_option("--method", run_method, "zeroshot | fixed | random | cos | bsr | set_bsr");
  run->add_option("--k", run_k, "number of demos");
  run->add_flag("--snippets", run_snippets, "retrieve step snippets");
  run->add_option("--pool", run_pool, "annotation pool")->required();
  run->add_option("--solver", run_solver, "react | pne");
  run->add_option("--seed", run_seed, "environment and selection seed");
  run->add_option("--transcript", transcript_path, "write provider calls here");
  run_prov.attach(run);

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a split and write a report");
  std::string config_path;
  std::map<std::string, std::string> eval_opts;
  std::vector<std::pair<std::string, std::string>> eval_keys{
      {"--split", "split"},   {"--method", "method"}, {"--k", "k"},          {"--runs", "runs"},
      {"--out", "out"},       {"--solver", "solver"}, {"--pool", "pool"},    {"--seed", "seed"},
      {"--provider", "provider"}, {"--record", "record"}, {"--base-url", "base_url"}, {"--model", "model"},
      {"--fixed-ids", "fixed_ids"}, {"--embedder", "embedder"}};
  eval->add_option("--config", config_path, "flat key = value experiment file");
  for (const auto& [flag, key] : eval_keys) eval->add_option(flag, eval_opts[key], key);
  bool eval_snippets = false;
  eval->add_flag("--snippets", eval_snippets, "retrieve step snippets");

  // select
  auto* sel = app.add_subcommand("select", "rank pool demos for a key");
  std::string key, sel_method = "cos", sel_pool, kind = "trajectory";
  int sel_k = 1;
  std::uint64_t sel_seed = 0;
  sel->add_option("--key", key, "retrieval key")->required();
  sel->add_option("--method", sel_method, "selection method");
  sel->add_option("--k", sel_k, "number of demos");
  sel->add_option("--pool", sel_pool, "annotation pool")->required();
  sel->add_option("--kind", kind, "trajectory | plan | subtask | snippet");
  sel->add_option("--seed", sel_seed, "seed for random selection");

  // pool stats
  auto* pool_cmd = app.add_subcommand("pool", "pool utilities");
  pool_cmd->require_subcommand(1);
  auto* stats = pool_cmd->add_subcommand("stats", "summarize a pool file");
  std::string stats_path;
  stats->add_option("path", stats_path, "pool file")->required();

  // catalog export
  auto* catalog_cmd = app.add_subcommand("catalog", "built-in task catalog");
  catalog_cmd->require_subcommand(1);
  auto* export_cmd = catalog_cmd->add_subcommand("export", "write catalog tasks as pool task lines");
  std::string export_split = "train", export_out;
  export_cmd->add_option("--split", export_split, "split name");
  export_cmd->add_option("--out", export_out, "output file (stdout if omitted)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (annotate->parsed()) {
      ExperimentConfig c = ExperimentConfig::defaults();
      annotate_prov.apply(c);
      auto provider = make_chat_provider(c);
      auto embedder = make_embedder(c);
      AnnotateSetup setup;
      setup.solver = parse_solver_kind(solver_name);
      setup.rounds = rounds;
      setup.seed = seed;
      setup.react_demos.method = parse_selection_method(method_name);
      if (k >= 0) setup.react_demos.k = k;
      setup.pne.plan_demos.method = setup.pne.subtask_demos.method = setup.react_demos.method;
      setup.checkpoint = pool_path;
      setup.parallel = parallel;
      const AnnotationPool pool = annotate_catalog(load_tasks(tasks_spec), *provider, *embedder, setup, resume);
      save_pool(pool, pool_path);
      std::cout << pool_stats(pool).dump() << "\n";
    } else if (run->parsed()) {
      ExperimentConfig c = ExperimentConfig::defaults();
      run_prov.apply(c);
      auto provider = make_chat_provider(c);
      auto embedder = make_embedder(c);
      const AnnotationPool pool = load_pool(run_pool);
      RunSetup setup;
      setup.solver = parse_solver_kind(run_solver);
      setup.demos = {parse_selection_method(run_method), run_k, static_cast<std::uint64_t>(run_seed), {}};
      if (run_snippets) setup.snippets = SnippetConfig{};
      setup.env_seed = run_seed;
      std::unique_ptr<TranscriptWriter> transcript;
      if (!transcript_path.empty()) transcript = std::make_unique<TranscriptWriter>(transcript_path);
      const TaskRun r = run_catalog_task(miniworld::require_task(run_task), pool, *provider, *embedder, setup,
                                         transcript.get(), run_task);
      json steps = json::array();
      for (const auto& s : r.result.trajectory.steps) {
        steps.push_back({{"index", s.index}, {"thought", s.thought}, {"action", s.action}, {"observation", s.observation}});
      }
      std::cout << json{{"task_id", run_task},
                        {"outcome", to_string(r.result.outcome)},
                        {"passed", r.passed},
                        {"failed", r.failed_assertions},
                        {"demos", selection_json(r.result.demos_used)},
                        {"steps", steps},
                        {"input_tokens", r.result.total_input_tokens + r.result.planner_input_tokens},
                        {"output_tokens", r.result.total_output_tokens + r.result.planner_output_tokens}}
                       .dump(2)
                << "\n";
    } else if (eval->parsed()) {
      ExperimentConfig c = config_path.empty() ? ExperimentConfig::defaults() : ExperimentConfig::load(config_path);
      for (const auto& [flag, key] : eval_keys) {
        if (eval->count(flag) > 0) c.set(key, eval_opts[key]);
      }
      if (eval_snippets) c.set("snippets", "true");
      const ExperimentOutput out = run_experiment(c);
      std::cout << report_to_json(out.report).at("aggregates").dump() << "\n";
    } else if (sel->parsed()) {
      const AnnotationPool pool = load_pool(sel_pool);
      CachingEmbedder embedder(std::make_shared<HashEmbedder>());
      const SelectionSpec spec{parse_selection_method(sel_method), sel_k, sel_seed, {}};
      if (kind == "snippet") {
        json out = json::array();
        for (const auto& sn : select_snippets(key, pool, SnippetConfig{sel_k, 0.85}, embedder)) {
          out.push_back({{"record_id", sn.source.record_id}, {"step", sn.source.step_index.value_or(0)},
                         {"steps", sn.steps.size()}, {"match_score", sn.match_score}});
        }
        std::cout << out.dump(2) << "\n";
      } else {
        std::vector<Candidate> candidates;
        if (kind == "trajectory") candidates = trajectory_candidates(pool, {});
        else if (kind == "plan") candidates = plan_candidates(pool, {});
        else if (kind == "subtask") candidates = subtask_candidates(pool, {});
        else throw ConfigError("unknown kind '" + kind + "'");
        std::cout << selection_json(select_candidates(key, candidates, spec, embedder, key)).dump(2) << "\n";
      }
    } else if (stats->parsed()) {
      std::cout << pool_stats(load_pool(stats_path)).dump(2) << "\n";
    } else if (export_cmd->parsed()) {
      AnnotationPool p;
      for (auto& t : catalog_tasks(std::string_view(export_split))) p.add_unannotated(std::move(t));
      if (export_out.empty()) {
        std::cout << encode_pool(p);
      } else {
        save_pool(p, export_out);
      }
    }
  } catch (const IntegrityError& e) {
    std::cerr << "integrity error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
