#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "grasp/kg.hpp"

namespace grasp {

using Vector = std::vector<double>;

class EmbeddingError : public std::runtime_error {
 public:
  EmbeddingError(const std::string& what, int attempts);
  int attempts() const { return attempts_; }

 private:
  int attempts_;
};

enum class ProviderKind { deterministic_hash, table_file, http_service };

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;

  virtual ProviderKind kind() const = 0;
  virtual std::size_t dimension() const = 0;
  // Throws std::invalid_argument when `text` is blank.
  virtual Vector embed(std::string_view text) const = 0;
};

// Lowercased whitespace tokens with leading/trailing ASCII punctuation removed.
std::vector<std::string> tokenize(std::string_view text);

/// Feature-hashing text embedder.
///
/// Each token adds +-1 to one of `dimension` buckets; the bucket and the sign
/// come from two independently seeded FNV-1a hashes. The sum is L2-normalized.
class HashEmbedder final : public EmbeddingProvider {
 public:
  explicit HashEmbedder(std::size_t dimension = 256);

  ProviderKind kind() const override { return ProviderKind::deterministic_hash; }
  std::size_t dimension() const override { return dimension_; }
  Vector embed(std::string_view text) const override;

 private:
  std::size_t dimension_;
};

// Rows from a `label<TAB>v1,...,vd` file; unknown labels fall back to hashing.
class TableEmbedder final : public EmbeddingProvider {
 public:
  static TableEmbedder from_file(const std::filesystem::path& path);
  static TableEmbedder from_stream(std::istream& in);

  ProviderKind kind() const override { return ProviderKind::table_file; }
  std::size_t dimension() const override { return dimension_; }
  Vector embed(std::string_view text) const override;
  std::size_t size() const { return rows_.size(); }

 private:
  TableEmbedder(std::size_t dimension, std::unordered_map<std::string, Vector> rows);

  std::size_t dimension_;
  std::unordered_map<std::string, Vector> rows_;
  HashEmbedder fallback_;
};

struct HttpEmbedderConfig {
  std::string url;    // http://host:port/path
  std::string token;  // sent as a bearer token when non-empty
  std::size_t dimension = 256;
  int max_attempts = 3;
  int timeout_seconds = 10;

  // GRASP_EMBED_URL, GRASP_EMBED_TOKEN, GRASP_EMBED_DIM.
  static HttpEmbedderConfig from_env();
};

// POST {"texts": [...]} -> {"vectors": [[...], ...]}.
class HttpEmbedder final : public EmbeddingProvider {
 public:
  explicit HttpEmbedder(HttpEmbedderConfig config);

  ProviderKind kind() const override { return ProviderKind::http_service; }
  std::size_t dimension() const override { return config_.dimension; }
  Vector embed(std::string_view text) const override;
  std::vector<Vector> embed_batch(const std::vector<std::string>& texts) const;

 private:
  HttpEmbedderConfig config_;
};

// Memoizing decorator. Concurrent inserts of the same key are harmless since
// the wrapped provider is pure.
class CachingEmbedder final : public EmbeddingProvider {
 public:
  explicit CachingEmbedder(std::shared_ptr<const EmbeddingProvider> inner);

  ProviderKind kind() const override { return inner_->kind(); }
  std::size_t dimension() const override { return inner_->dimension(); }
  Vector embed(std::string_view text) const override;

 private:
  std::shared_ptr<const EmbeddingProvider> inner_;
  mutable std::shared_mutex mutex_;
  mutable std::unordered_map<std::string, Vector> cache_;
};

struct Relevance {
  double score = 0.0;
  bool degenerate = false;  // a zero-norm input; score is then 0
};

// Cosine similarity. Throws std::invalid_argument on a dimension mismatch.
Relevance relevance(std::span<const double> q, std::span<const double> e);

struct Candidate {
  EntityId entity = 0;
  Vector embedding;
};

struct ScoredEntity {
  EntityId entity = 0;
  double score = 0.0;

  bool operator==(const ScoredEntity&) const = default;
};

// Highest relevance first; equal scores go to the lower entity id.
std::vector<ScoredEntity> top_k(std::span<const double> q, std::span<const Candidate> candidates,
                                std::size_t k);

std::shared_ptr<const EmbeddingProvider> make_default_provider(std::size_t dimension = 256);

}  // namespace grasp
