#include "trajdemo/embed.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <mutex>
#include <numbers>

#include "trajdemo/core.hpp"

namespace trajdemo {

namespace {

// splitmix64: small, portable, and good enough for hash-seeded vectors.
struct SplitMix64 {
  std::uint64_t state;
  std::uint64_t next() {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  // Uniform in (0, 1].
  double uniform() { return (static_cast<double>(next() >> 11) + 1.0) * 0x1.0p-53; }
};

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (unsigned char c : text) {
    if (c < 0x80 && std::isalnum(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DomainError("cosine: dimension mismatch");
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw DomainError("cosine: zero vector");
  // sqrt(na * nb) makes cosine(x, x) exactly 1.
  const double c = dot / std::sqrt(na * nb);
  return std::clamp(c, -1.0, 1.0);
}

void normalize(Vector& v) {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm == 0.0) throw DomainError("normalize: zero vector");
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
}

Vector HashEmbedder::token_vector(std::string_view token) {
  SplitMix64 rng{stable_hash(token)};
  Vector v(dimension_);
  // Box-Muller pairs.
  for (std::size_t i = 0; i < dimension_; i += 2) {
    const double r = std::sqrt(-2.0 * std::log(rng.uniform()));
    const double theta = 2.0 * std::numbers::pi * rng.uniform();
    v[i] = r * std::cos(theta);
    if (i + 1 < dimension_) v[i + 1] = r * std::sin(theta);
  }
  normalize(v);
  return v;
}

Vector HashEmbedder::sequence_vector(std::string_view, const std::vector<TokenEmbedding>& tokens) {
  if (tokens.empty()) return {};
  Vector mean(dimension_, 0.0);
  for (const auto& t : tokens) {
    for (std::size_t i = 0; i < dimension_; ++i) mean[i] += t.vector[i];
  }
  for (double& x : mean) x /= static_cast<double>(tokens.size());
  normalize(mean);
  return mean;
}

Vector CachingEmbedder::token_vector(std::string_view token) {
  Key key{inner_->id(), std::string(token)};
  {
    std::shared_lock lock(mutex_);
    if (auto it = tokens_.find(key); it != tokens_.end()) return it->second;
  }
  Vector v = inner_->token_vector(token);
  std::unique_lock lock(mutex_);
  return tokens_.try_emplace(std::move(key), std::move(v)).first->second;
}

Vector CachingEmbedder::sequence_vector(std::string_view text,
                                        const std::vector<TokenEmbedding>& tokens) {
  Key key{inner_->id(), std::string(text)};
  {
    std::shared_lock lock(mutex_);
    if (auto it = sequences_.find(key); it != sequences_.end()) return it->second;
  }
  Vector v = inner_->sequence_vector(text, tokens);
  std::unique_lock lock(mutex_);
  return sequences_.try_emplace(std::move(key), std::move(v)).first->second;
}

std::size_t CachingEmbedder::cached_entries() const {
  std::shared_lock lock(mutex_);
  return tokens_.size() + sequences_.size();
}

EmbeddedText embed_text(std::string_view text, EmbeddingProvider& provider) {
  EmbeddedText out;
  out.text = std::string(text);
  for (std::string& tok : tokenize(text)) {
    Vector v = provider.token_vector(tok);
    out.tokens.push_back(TokenEmbedding{std::move(tok), std::move(v)});
  }
  out.sequence_vector = provider.sequence_vector(text, out.tokens);
  return out;
}

}  // namespace trajdemo
