#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "grasp/embedding.hpp"
#include "grasp/kg.hpp"

namespace grasp {

enum class TraversalDirection { out, both };

struct ExtractionConfig {
  int hops = 2;
  std::size_t k1 = 20;  // width of hop 1
  std::size_t k2 = 10;  // width of every later hop, pooled over the frontier
  TraversalDirection direction = TraversalDirection::both;

  void validate() const;
};

struct SubgraphNode {
  EntityId entity = 0;
  int hop = 0;
  double score = 0.0;  // relevance to the question
};

struct SubgraphEdge {
  std::size_t head = 0;  // index into Subgraph::nodes
  RelationId relation = 0;
  std::size_t tail = 0;

  auto operator<=>(const SubgraphEdge&) const = default;
};

// Root first, then nodes hop by hop in the order they were ranked.
struct Subgraph {
  EntityId root = 0;
  int hops = 0;
  std::vector<SubgraphNode> nodes;
  std::vector<SubgraphEdge> edges;
  bool isolated_root = false;

  std::size_t size() const { return nodes.size(); }
  std::optional<std::size_t> index_of(EntityId e) const;
  std::vector<EntityId> entity_ids() const;
};

/**
 * Relevance-filtered l-hop expansion from `topic`.
 *
 * Hop 1 keeps the k1 neighbors of the root closest to the question by cosine
 * similarity; each later hop pools the unseen neighbors of the previous
 * frontier and keeps the top k2. The result holds every source edge among
 * the kept nodes.
 */
Subgraph extract(const KnowledgeGraph& graph, const EmbeddingProvider& provider,
                 std::string_view question, EntityId topic, const ExtractionConfig& cfg);

// Source triples with both endpoints in `nodes`, sorted.
std::vector<Triple> induced_edges(const KnowledgeGraph& graph, std::span<const EntityId> nodes);

nlohmann::json subgraph_to_json(const KnowledgeGraph& graph, const Subgraph& subgraph);

}  // namespace grasp
