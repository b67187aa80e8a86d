#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace grasp {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;

struct Triple {
  EntityId head = 0;
  RelationId relation = 0;
  EntityId tail = 0;

  auto operator<=>(const Triple&) const = default;
};

enum class Direction { out, in, both };
enum class EdgeDirection { out, in };

struct Neighbor {
  RelationId relation = 0;
  EntityId entity = 0;
  EdgeDirection direction = EdgeDirection::out;

  bool operator==(const Neighbor&) const = default;
};

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public GraphError {
 public:
  ParseError(std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class EmptyGraphError : public GraphError {
 public:
  using GraphError::GraphError;
};

class NotFoundError : public GraphError {
 public:
  using GraphError::GraphError;
};

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Dense id <-> label table; ids are assigned in first-appearance order.
class Catalog {
 public:
  std::uint32_t intern(std::string_view label);
  std::optional<std::uint32_t> find(std::string_view label) const;
  const std::string& label(std::uint32_t id) const;
  std::size_t size() const { return labels_.size(); }
  const std::vector<std::string>& labels() const { return labels_; }

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

struct AdjacencyEntry {
  RelationId relation = 0;
  EntityId neighbor = 0;

  auto operator<=>(const AdjacencyEntry&) const = default;
};

/**
 * Immutable directed labeled graph.
 *
 * Out- and in-adjacency are stored in CSR form and sorted by
 * (relation, neighbor). Inverse traversal goes through the in-index; there
 * are no materialized inverse triples.
 */
class KnowledgeGraph {
 public:
  KnowledgeGraph() = default;

  // Sorts and deduplicates `triples`; every id must be covered by the catalogs.
  static KnowledgeGraph build(Catalog entities, Catalog relations, std::vector<Triple> triples);

  std::size_t num_entities() const { return entities_.size(); }
  std::size_t num_relations() const { return relations_.size(); }
  std::size_t num_triples() const { return triples_.size(); }

  const std::vector<Triple>& triples() const { return triples_; }
  const Catalog& entities() const { return entities_; }
  const Catalog& relations() const { return relations_; }

  std::span<const AdjacencyEntry> out_edges(EntityId e) const;
  std::span<const AdjacencyEntry> in_edges(EntityId e) const;

  // Out entries precede in entries for Direction::both.
  std::vector<Neighbor> neighbors(EntityId e, Direction dir) const;

  bool contains(EntityId e) const { return e < entities_.size(); }
  bool has_triple(const Triple& t) const;

  const std::string& entity_label(EntityId e) const;
  const std::string& relation_label(RelationId r) const;
  std::optional<EntityId> find_entity(std::string_view label) const { return entities_.find(label); }
  // Exact match first, then ASCII case-insensitive; ties go to the lowest id.
  std::optional<EntityId> resolve_entity(std::string_view label) const;
  EntityId require_entity(std::string_view label) const;

  // Stable textual dump: catalogs in id order, then sorted triples.
  std::string serialize() const;
  void write_tsv(std::ostream& out) const;

 private:
  void check_entity(EntityId e) const;

  Catalog entities_;
  Catalog relations_;
  std::vector<Triple> triples_;
  std::vector<std::size_t> out_offsets_;
  std::vector<AdjacencyEntry> out_entries_;
  std::vector<std::size_t> in_offsets_;
  std::vector<AdjacencyEntry> in_entries_;
};

// Tab-separated head/relation/tail lines; '#' starts a comment line.
KnowledgeGraph ingest(std::istream& in);
KnowledgeGraph ingest(const std::filesystem::path& path);
KnowledgeGraph ingest_text(std::string_view text);

enum class PerturbScope { topic_entity_edges, all_edges };

struct PerturbationSpec {
  double removal_ratio = 0.0;
  PerturbScope scope = PerturbScope::topic_entity_edges;
  std::uint64_t seed = 0;
};

// Candidate edges for removal, in sorted triple order.
std::vector<Triple> perturbation_candidates(const KnowledgeGraph& graph, PerturbScope scope,
                                            std::span<const EntityId> topics);

// Edges removed by `perturb`: the first floor(ratio * |candidates|) entries of
// a seeded Fisher-Yates permutation of the candidates. Prefixes nest across
// ratios for a fixed seed.
std::vector<Triple> removed_edges(const KnowledgeGraph& graph, const PerturbationSpec& spec,
                                  std::span<const EntityId> topics);

KnowledgeGraph perturb(const KnowledgeGraph& graph, const PerturbationSpec& spec,
                       std::span<const EntityId> topics);

// Unbiased draw in [0, bound) from mt19937_64 by rejection. Shared by every
// seeded shuffle in the project so results do not depend on the standard
// library's distribution implementations.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed);
  std::uint64_t next();
  std::uint64_t below(std::uint64_t bound);
  double uniform();  // [0, 1)
  double normal();   // Box-Muller

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

template <typename T>
void seeded_shuffle(std::vector<T>& items, SeededRng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace grasp
