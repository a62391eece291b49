#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "trajdemo/error.hpp"

namespace trajdemo {

using Vector = std::vector<double>;

struct TokenEmbedding {
  std::string token;
  Vector vector;
};

struct EmbeddedText {
  std::string text;
  std::vector<TokenEmbedding> tokens;
  Vector sequence_vector;  // empty when the text has no tokens
};

// Lowercase, split on runs of non-alphanumeric bytes. Duplicates kept.
std::vector<std::string> tokenize(std::string_view text);

// dot(a,b) / (|a||b|), accumulated left to right. Throws DomainError on a
// dimension mismatch or a zero vector.
double cosine(std::span<const double> a, std::span<const double> b);

// Scales `v` to unit L2 norm in place; throws DomainError for a zero vector.
void normalize(Vector& v);

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;

  // Identity used for cache keys; two providers with the same id must embed
  // identically.
  virtual std::string id() const = 0;
  virtual std::size_t dimension() const = 0;

  // Unit-norm vector for a single token.
  virtual Vector token_vector(std::string_view token) = 0;

  // Unit-norm vector for a whole text, given its already-embedded tokens.
  virtual Vector sequence_vector(std::string_view text, const std::vector<TokenEmbedding>& tokens) = 0;
};

// Context-free hash embedder: every distinct token maps to a Gaussian random
// unit vector seeded by a stable hash of the token. Needs no files or network.
class HashEmbedder final : public EmbeddingProvider {
 public:
  explicit HashEmbedder(std::size_t dimension = 256) : dimension_(dimension) {}

  std::string id() const override { return "hash-" + std::to_string(dimension_); }
  std::size_t dimension() const override { return dimension_; }
  Vector token_vector(std::string_view token) override;
  // L2-normalized mean of the token vectors.
  Vector sequence_vector(std::string_view text, const std::vector<TokenEmbedding>& tokens) override;

 private:
  std::size_t dimension_;
};

// Memoizes another provider's vectors, keyed by (provider id, text).
// Concurrent lookups share a lock; inserts are serialized.
class CachingEmbedder final : public EmbeddingProvider {
 public:
  explicit CachingEmbedder(std::shared_ptr<EmbeddingProvider> inner) : inner_(std::move(inner)) {}

  std::string id() const override { return inner_->id(); }
  std::size_t dimension() const override { return inner_->dimension(); }
  Vector token_vector(std::string_view token) override;
  Vector sequence_vector(std::string_view text, const std::vector<TokenEmbedding>& tokens) override;

  std::size_t cached_entries() const;

 private:
  using Key = std::pair<std::string, std::string>;
  std::shared_ptr<EmbeddingProvider> inner_;
  mutable std::shared_mutex mutex_;
  std::map<Key, Vector> tokens_;
  std::map<Key, Vector> sequences_;
};

EmbeddedText embed_text(std::string_view text, EmbeddingProvider& provider);

}  // namespace trajdemo
