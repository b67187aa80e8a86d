#include "grasp/subgraph.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <unordered_map>
#include <unordered_set>

namespace grasp {

void ExtractionConfig::validate() const {
  if (hops < 1) throw std::invalid_argument("extraction hops must be >= 1");
  if (k1 < 1 || k2 < 1) throw std::invalid_argument("extraction widths k1, k2 must be >= 1");
}

std::optional<std::size_t> Subgraph::index_of(EntityId e) const {
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].entity == e) return i;
  }
  return std::nullopt;
}

std::vector<EntityId> Subgraph::entity_ids() const {
  std::vector<EntityId> ids;
  ids.reserve(nodes.size());
  for (const auto& n : nodes) ids.push_back(n.entity);
  return ids;
}

Subgraph extract(const KnowledgeGraph& graph, const EmbeddingProvider& provider,
                 std::string_view question, EntityId topic, const ExtractionConfig& cfg) {
  cfg.validate();
  if (!graph.contains(topic)) throw NotFoundError("topic entity " + std::to_string(topic) + " not in graph");

  const Vector q = provider.embed(question);
  const Direction dir = cfg.direction == TraversalDirection::both ? Direction::both : Direction::out;

  Subgraph sg;
  sg.root = topic;
  sg.hops = cfg.hops;
  sg.nodes.push_back({topic, 0, relevance(q, provider.embed(graph.entity_label(topic))).score});

  std::unordered_set<EntityId> kept{topic};
  std::vector<EntityId> frontier{topic};
  for (int hop = 1; hop <= cfg.hops && !frontier.empty(); ++hop) {
    std::vector<EntityId> pool;
    std::unordered_set<EntityId> pooled;
    for (EntityId f : frontier) {
      for (const auto& nb : graph.neighbors(f, dir)) {
        if (!kept.contains(nb.entity) && pooled.insert(nb.entity).second) pool.push_back(nb.entity);
      }
    }
    std::vector<Candidate> candidates;
    candidates.reserve(pool.size());
    for (EntityId e : pool) candidates.push_back({e, provider.embed(graph.entity_label(e))});
    const auto ranked = top_k(q, candidates, hop == 1 ? cfg.k1 : cfg.k2);

    frontier.clear();
    for (const auto& r : ranked) {
      kept.insert(r.entity);
      frontier.push_back(r.entity);
      sg.nodes.push_back({r.entity, hop, r.score});
    }
  }
  if (sg.nodes.size() == 1) {
    sg.isolated_root = true;
    spdlog::warn("topic '{}' has no neighbors; subgraph is the root alone", graph.entity_label(topic));
  }

  const auto ids = sg.entity_ids();
  std::unordered_map<EntityId, std::size_t> index;
  for (std::size_t i = 0; i < ids.size(); ++i) index.emplace(ids[i], i);
  for (const auto& t : induced_edges(graph, ids)) {
    sg.edges.push_back({index.at(t.head), t.relation, index.at(t.tail)});
  }
  return sg;
}

std::vector<Triple> induced_edges(const KnowledgeGraph& graph, std::span<const EntityId> nodes) {
  std::unordered_set<EntityId> members(nodes.begin(), nodes.end());
  std::vector<Triple> out;
  for (EntityId h : members) {
    for (const auto& a : graph.out_edges(h)) {
      if (members.contains(a.neighbor)) out.push_back({h, a.relation, a.neighbor});
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

nlohmann::json subgraph_to_json(const KnowledgeGraph& graph, const Subgraph& subgraph) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : subgraph.nodes) {
    nodes.push_back({{"id", n.entity},
                     {"label", graph.entity_label(n.entity)},
                     {"hop", n.hop},
                     {"score", n.score}});
  }
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : subgraph.edges) {
    edges.push_back({{"head", e.head},
                     {"relation", graph.relation_label(e.relation)},
                     {"tail", e.tail}});
  }
  return {{"root", graph.entity_label(subgraph.root)},
          {"hops", subgraph.hops},
          {"isolated_root", subgraph.isolated_root},
          {"nodes", std::move(nodes)},
          {"edges", std::move(edges)}};
}

}  // namespace grasp
