#include "trajdemo/select.hpp"

#include <algorithm>
#include <array>
#include <numeric>
#include <utility>

namespace trajdemo {

namespace {

constexpr std::array<std::pair<std::string_view, SelectionMethod>, 7> kMethods{{
    {"zeroshot", SelectionMethod::zeroshot},
    {"fixed", SelectionMethod::fixed},
    {"random", SelectionMethod::random},
    {"cos", SelectionMethod::cosine},
    {"cosine", SelectionMethod::cosine},
    {"bsr", SelectionMethod::bsr},
    {"set_bsr", SelectionMethod::set_bsr},
}};

void require_k(int k) {
  if (k < 1) throw DomainError("selection requires k >= 1");
}

// best[u] = max(0, max_v cos(key_u, cand_v)) for every key token u.
std::vector<double> token_recall(const EmbeddedText& key, const EmbeddedText& candidate) {
  std::vector<double> best(key.tokens.size(), 0.0);
  for (std::size_t u = 0; u < key.tokens.size(); ++u) {
    for (const auto& v : candidate.tokens) {
      best[u] = std::max(best[u], cosine(key.tokens[u].vector, v.vector));
    }
  }
  return best;
}

double mean_left_to_right(const std::vector<double>& values) {
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

EmbeddedText embed_key(std::string_view key, EmbeddingProvider& provider) {
  EmbeddedText e = embed_text(key, provider);
  if (e.tokens.empty()) throw DomainError("retrieval key has no tokens");
  return e;
}

// Sort by score descending, then candidate id ascending; keep the top k.
void rank_and_truncate(std::vector<ScoredCandidate>& items, int k) {
  std::sort(items.begin(), items.end(), [](const ScoredCandidate& a, const ScoredCandidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.candidate_id < b.candidate_id;
  });
  if (items.size() > static_cast<std::size_t>(k)) items.resize(static_cast<std::size_t>(k));
}

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::string_view to_string(SelectionMethod m) {
  switch (m) {
    case SelectionMethod::zeroshot: return "zeroshot";
    case SelectionMethod::fixed: return "fixed";
    case SelectionMethod::random: return "random";
    case SelectionMethod::cosine: return "cos";
    case SelectionMethod::bsr: return "bsr";
    case SelectionMethod::set_bsr: return "set_bsr";
  }
  return "zeroshot";
}

SelectionMethod parse_selection_method(std::string_view s) {
  for (const auto& [name, m] : kMethods) {
    if (name == s) return m;
  }
  throw ConfigError("unknown selection method '" + std::string(s) + "'");
}

std::vector<std::string> SelectionResult::ids() const {
  std::vector<std::string> out;
  for (const auto& item : items) out.push_back(item.candidate_id);
  return out;
}

double bsr_score(const EmbeddedText& key, const EmbeddedText& candidate) {
  if (key.tokens.empty()) throw DomainError("bsr_score: key has no tokens");
  return mean_left_to_right(token_recall(key, candidate));
}

double bsr_score(std::string_view key, std::string_view candidate, EmbeddingProvider& provider) {
  return bsr_score(embed_key(key, provider), embed_text(candidate, provider));
}

double set_coverage(const EmbeddedText& key, std::span<const EmbeddedText> selected) {
  if (key.tokens.empty()) throw DomainError("set_coverage: key has no tokens");
  std::vector<double> best(key.tokens.size(), 0.0);
  for (const auto& cand : selected) {
    const auto recall = token_recall(key, cand);
    for (std::size_t u = 0; u < best.size(); ++u) best[u] = std::max(best[u], recall[u]);
  }
  return mean_left_to_right(best);
}

SelectionResult rank_cosine(std::string_view key, std::span<const Candidate> candidates, int k,
                            EmbeddingProvider& provider) {
  require_k(k);
  SelectionResult result{{}, SelectionMethod::cosine, k};
  if (candidates.empty()) return result;
  const EmbeddedText key_emb = embed_key(key, provider);
  for (const auto& c : candidates) {
    const EmbeddedText e = embed_text(c.key_text, provider);
    const double score = e.sequence_vector.empty() ? 0.0 : cosine(key_emb.sequence_vector, e.sequence_vector);
    result.items.push_back({c.candidate_id, score});
  }
  rank_and_truncate(result.items, k);
  return result;
}

SelectionResult rank_bsr(std::string_view key, std::span<const Candidate> candidates, int k,
                         EmbeddingProvider& provider) {
  require_k(k);
  SelectionResult result{{}, SelectionMethod::bsr, k};
  if (candidates.empty()) return result;
  const EmbeddedText key_emb = embed_key(key, provider);
  for (const auto& c : candidates) {
    result.items.push_back({c.candidate_id, bsr_score(key_emb, embed_text(c.key_text, provider))});
  }
  rank_and_truncate(result.items, k);
  return result;
}

SelectionResult set_bsr_select(std::string_view key, std::span<const Candidate> candidates, int k,
                               EmbeddingProvider& provider) {
  require_k(k);
  SelectionResult result{{}, SelectionMethod::set_bsr, k};
  if (candidates.empty()) return result;
  const EmbeddedText key_emb = embed_key(key, provider);

  std::vector<std::vector<double>> recall;
  recall.reserve(candidates.size());
  for (const auto& c : candidates) recall.push_back(token_recall(key_emb, embed_text(c.key_text, provider)));

  // Visit candidates in ascending id order so the first maximum wins ties.
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return candidates[a].candidate_id < candidates[b].candidate_id;
  });

  std::vector<double> covered(key_emb.tokens.size(), 0.0);
  double coverage = 0.0;
  std::vector<bool> taken(candidates.size(), false);
  std::vector<double> trial(covered.size());
  while (result.items.size() < static_cast<std::size_t>(k)) {
    std::optional<std::size_t> best;
    double best_gain = 0.0;
    double best_cov = coverage;
    for (std::size_t idx : order) {
      if (taken[idx]) continue;
      for (std::size_t u = 0; u < covered.size(); ++u) trial[u] = std::max(covered[u], recall[idx][u]);
      const double cov = mean_left_to_right(trial);
      const double gain = cov - coverage;
      if (!best || gain > best_gain) {
        best = idx;
        best_gain = gain;
        best_cov = cov;
      }
    }
    // First pick is unconditional.
    if (!best || (best_gain <= 0.0 && !result.items.empty())) break;
    taken[*best] = true;
    for (std::size_t u = 0; u < covered.size(); ++u) covered[u] = std::max(covered[u], recall[*best][u]);
    coverage = best_cov;
    result.items.push_back({candidates[*best].candidate_id, best_gain});
  }
  return result;
}

SelectionResult select_random(std::span<const Candidate> candidates, int k, std::uint64_t seed,
                              std::string_view salt) {
  require_k(k);
  SelectionResult result{{}, SelectionMethod::random, k};
  // Canonical order first, so the sample does not depend on input order.
  std::vector<std::string> ids;
  for (const auto& c : candidates) ids.push_back(c.candidate_id);
  std::sort(ids.begin(), ids.end());
  std::uint64_t state = mix(seed ^ stable_hash(salt));
  const std::size_t take = std::min(ids.size(), static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < take; ++i) {
    state = mix(state);
    const std::size_t j = i + static_cast<std::size_t>(state % (ids.size() - i));
    std::swap(ids[i], ids[j]);
    result.items.push_back({ids[i], 0.0});
  }
  return result;
}

SelectionResult select_fixed(std::span<const Candidate> candidates,
                             const std::vector<std::string>& ids, int k) {
  require_k(k);
  SelectionResult result{{}, SelectionMethod::fixed, k};
  for (const auto& id : ids) {
    if (result.items.size() >= static_cast<std::size_t>(k)) break;
    const bool present = std::any_of(candidates.begin(), candidates.end(),
                                     [&](const Candidate& c) { return c.candidate_id == id; });
    if (present) result.items.push_back({id, 0.0});
  }
  return result;
}

SelectionResult select_candidates(std::string_view key, std::span<const Candidate> candidates,
                                  const SelectionSpec& spec, EmbeddingProvider& provider,
                                  std::string_view salt) {
  if (spec.method == SelectionMethod::zeroshot || spec.k < 1) {
    return SelectionResult{{}, spec.method, std::max(spec.k, 0)};
  }
  switch (spec.method) {
    case SelectionMethod::fixed: return select_fixed(candidates, spec.fixed_ids, spec.k);
    case SelectionMethod::random: return select_random(candidates, spec.k, spec.seed, salt);
    case SelectionMethod::cosine: return rank_cosine(key, candidates, spec.k, provider);
    case SelectionMethod::bsr: return rank_bsr(key, candidates, spec.k, provider);
    case SelectionMethod::set_bsr: return set_bsr_select(key, candidates, spec.k, provider);
    case SelectionMethod::zeroshot: break;
  }
  return {};
}

std::vector<Candidate> trajectory_candidates(const AnnotationPool& pool, std::string_view exclude_task_id) {
  std::vector<Candidate> out;
  for (const auto& r : pool.records) {
    if (r.kind != SolverKind::react || r.task.task_id == exclude_task_id) continue;
    out.push_back({r.task.task_id, r.task.instruction, PayloadRef{r.task.task_id, {}, {}}});
  }
  return out;
}

std::vector<Candidate> plan_candidates(const AnnotationPool& pool, std::string_view exclude_task_id) {
  std::vector<Candidate> out;
  for (const auto& r : pool.records) {
    if (r.kind != SolverKind::pne || r.task.task_id == exclude_task_id) continue;
    out.push_back({r.task.task_id, r.task.instruction, PayloadRef{r.task.task_id, {}, {}}});
  }
  return out;
}

std::vector<Candidate> subtask_candidates(const AnnotationPool& pool, std::string_view exclude_task_id) {
  std::vector<Candidate> out;
  for (const auto& r : pool.records) {
    if (r.kind != SolverKind::pne || r.task.task_id == exclude_task_id) continue;
    for (const auto& sub : r.plan->subtasks) {
      out.push_back({r.task.task_id + "/" + sub.subtask_id, sub.statement,
                     PayloadRef{r.task.task_id, sub.subtask_id, {}}});
    }
  }
  return out;
}

namespace {

void check_fixed_ids(const SelectionSpec& spec, const std::vector<Candidate>& all) {
  if (spec.method != SelectionMethod::fixed) return;
  if (spec.fixed_ids.empty()) throw ConfigError("method=fixed needs at least one demo id");
  for (const auto& id : spec.fixed_ids) {
    const bool known = std::any_of(all.begin(), all.end(), [&](const Candidate& c) { return c.candidate_id == id; });
    if (!known) throw ConfigError("fixed demo id '" + id + "' is not in the pool");
  }
}

}  // namespace

SelectionResult select_trajectory_demos(const Task& task, const AnnotationPool& pool,
                                        const SelectionSpec& spec, EmbeddingProvider& provider) {
  check_fixed_ids(spec, trajectory_candidates(pool, {}));
  const auto candidates = trajectory_candidates(pool, task.task_id);
  return select_candidates(task.instruction, candidates, spec, provider, task.task_id);
}

SelectionResult select_plan_demos(const Task& task, const AnnotationPool& pool,
                                  const SelectionSpec& spec, EmbeddingProvider& provider) {
  check_fixed_ids(spec, plan_candidates(pool, {}));
  const auto candidates = plan_candidates(pool, task.task_id);
  return select_candidates(task.instruction, candidates, spec, provider, task.task_id);
}

SelectionResult select_subtask_demos(std::string_view statement, const AnnotationPool& pool,
                                     const SelectionSpec& spec, EmbeddingProvider& provider,
                                     std::string_view exclude_task_id) {
  check_fixed_ids(spec, subtask_candidates(pool, {}));
  const auto candidates = subtask_candidates(pool, exclude_task_id);
  std::string salt = std::string(exclude_task_id) + "|" + std::string(statement);
  return select_candidates(statement, candidates, spec, provider, salt);
}

std::vector<Snippet> select_snippets(std::string_view current_thought, const AnnotationPool& pool,
                                     const SnippetConfig& config, EmbeddingProvider& provider,
                                     std::string_view exclude_task_id) {
  std::vector<Snippet> out;
  if (config.k < 1) return out;
  const EmbeddedText key = embed_text(current_thought, provider);
  if (key.tokens.empty()) return out;

  struct Match {
    const AnnotationRecord* record;
    std::size_t step;
    double score;
  };
  std::vector<Match> best_per_record;
  for (const auto& r : pool.records) {
    if (r.kind != SolverKind::react || r.task.task_id == exclude_task_id) continue;
    std::optional<Match> best;
    const auto& steps = r.trajectory->steps;
    for (std::size_t i = 0; i < steps.size(); ++i) {
      if (steps[i].thought.empty()) continue;
      const double score = bsr_score(key, embed_text(steps[i].thought, provider));
      if (score < config.threshold) continue;
      if (!best || score > best->score) best = Match{&r, i, score};
    }
    if (best) best_per_record.push_back(*best);
  }
  std::sort(best_per_record.begin(), best_per_record.end(), [](const Match& a, const Match& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.record->task.task_id != b.record->task.task_id) return a.record->task.task_id < b.record->task.task_id;
    return a.step < b.step;
  });
  for (const auto& m : best_per_record) {
    if (out.size() >= static_cast<std::size_t>(config.k)) break;
    const auto& steps = m.record->trajectory->steps;
    Snippet s;
    s.source = PayloadRef{m.record->task.task_id, {}, steps[m.step].index};
    s.scenario_id = m.record->task.scenario_id;
    s.steps.push_back(steps[m.step]);
    if (m.step + 1 < steps.size()) s.steps.push_back(steps[m.step + 1]);
    s.match_score = m.score;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace trajdemo
