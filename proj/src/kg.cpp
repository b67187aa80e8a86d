#include "grasp/kg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>
#include <sstream>
#include <unordered_set>

namespace grasp {

namespace {

std::string lower_ascii(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

void build_csr(std::size_t num_nodes, const std::vector<std::pair<EntityId, AdjacencyEntry>>& rows,
               std::vector<std::size_t>& offsets, std::vector<AdjacencyEntry>& entries) {
  offsets.assign(num_nodes + 1, 0);
  for (const auto& [node, _] : rows) ++offsets[node + 1];
  for (std::size_t i = 0; i < num_nodes; ++i) offsets[i + 1] += offsets[i];
  entries.resize(rows.size());
  std::vector<std::size_t> cursor(offsets.begin(), offsets.end() - 1);
  for (const auto& [node, entry] : rows) entries[cursor[node]++] = entry;
  for (std::size_t i = 0; i < num_nodes; ++i) {
    std::sort(entries.begin() + static_cast<std::ptrdiff_t>(offsets[i]),
              entries.begin() + static_cast<std::ptrdiff_t>(offsets[i + 1]));
  }
}

}  // namespace

ParseError::ParseError(std::size_t line, const std::string& what)
    : GraphError("line " + std::to_string(line) + ": " + what), line_(line) {}

std::uint32_t Catalog::intern(std::string_view label) {
  auto it = index_.find(std::string(label));
  if (it != index_.end()) return it->second;
  const auto id = static_cast<std::uint32_t>(labels_.size());
  labels_.emplace_back(label);
  index_.emplace(labels_.back(), id);
  return id;
}

std::optional<std::uint32_t> Catalog::find(std::string_view label) const {
  auto it = index_.find(std::string(label));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& Catalog::label(std::uint32_t id) const {
  if (id >= labels_.size()) throw NotFoundError("unknown catalog id " + std::to_string(id));
  return labels_[id];
}

KnowledgeGraph KnowledgeGraph::build(Catalog entities, Catalog relations, std::vector<Triple> triples) {
  KnowledgeGraph g;
  g.entities_ = std::move(entities);
  g.relations_ = std::move(relations);
  for (const auto& t : triples) {
    if (t.head >= g.entities_.size() || t.tail >= g.entities_.size() ||
        t.relation >= g.relations_.size()) {
      throw GraphError("triple references an id outside the catalogs");
    }
  }
  std::sort(triples.begin(), triples.end());
  triples.erase(std::unique(triples.begin(), triples.end()), triples.end());
  g.triples_ = std::move(triples);

  std::vector<std::pair<EntityId, AdjacencyEntry>> out_rows;
  std::vector<std::pair<EntityId, AdjacencyEntry>> in_rows;
  out_rows.reserve(g.triples_.size());
  in_rows.reserve(g.triples_.size());
  for (const auto& t : g.triples_) {
    out_rows.push_back({t.head, {t.relation, t.tail}});
    in_rows.push_back({t.tail, {t.relation, t.head}});
  }
  build_csr(g.entities_.size(), out_rows, g.out_offsets_, g.out_entries_);
  build_csr(g.entities_.size(), in_rows, g.in_offsets_, g.in_entries_);
  return g;
}

void KnowledgeGraph::check_entity(EntityId e) const {
  if (!contains(e)) throw NotFoundError("unknown entity id " + std::to_string(e));
}

std::span<const AdjacencyEntry> KnowledgeGraph::out_edges(EntityId e) const {
  check_entity(e);
  return {out_entries_.data() + out_offsets_[e], out_offsets_[e + 1] - out_offsets_[e]};
}

std::span<const AdjacencyEntry> KnowledgeGraph::in_edges(EntityId e) const {
  check_entity(e);
  return {in_entries_.data() + in_offsets_[e], in_offsets_[e + 1] - in_offsets_[e]};
}

std::vector<Neighbor> KnowledgeGraph::neighbors(EntityId e, Direction dir) const {
  std::vector<Neighbor> out;
  if (dir == Direction::out || dir == Direction::both) {
    for (const auto& a : out_edges(e)) out.push_back({a.relation, a.neighbor, EdgeDirection::out});
  }
  if (dir == Direction::in || dir == Direction::both) {
    for (const auto& a : in_edges(e)) out.push_back({a.relation, a.neighbor, EdgeDirection::in});
  }
  return out;
}

bool KnowledgeGraph::has_triple(const Triple& t) const {
  return std::binary_search(triples_.begin(), triples_.end(), t);
}

const std::string& KnowledgeGraph::entity_label(EntityId e) const { return entities_.label(e); }

const std::string& KnowledgeGraph::relation_label(RelationId r) const { return relations_.label(r); }

std::optional<EntityId> KnowledgeGraph::resolve_entity(std::string_view label) const {
  if (auto id = entities_.find(label)) return id;
  const std::string wanted = lower_ascii(label);
  const auto& labels = entities_.labels();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (lower_ascii(labels[i]) == wanted) return static_cast<EntityId>(i);
  }
  return std::nullopt;
}

EntityId KnowledgeGraph::require_entity(std::string_view label) const {
  auto id = find_entity(label);
  if (!id) throw NotFoundError("unknown entity '" + std::string(label) + "'");
  return *id;
}

std::string KnowledgeGraph::serialize() const {
  std::ostringstream os;
  os << "entities " << entities_.size() << '\n';
  for (const auto& l : entities_.labels()) os << l << '\n';
  os << "relations " << relations_.size() << '\n';
  for (const auto& l : relations_.labels()) os << l << '\n';
  os << "triples " << triples_.size() << '\n';
  for (const auto& t : triples_) os << t.head << ' ' << t.relation << ' ' << t.tail << '\n';
  return os.str();
}

void KnowledgeGraph::write_tsv(std::ostream& out) const {
  for (const auto& t : triples_) {
    out << entity_label(t.head) << '\t' << relation_label(t.relation) << '\t' << entity_label(t.tail)
        << '\n';
  }
}

KnowledgeGraph ingest(std::istream& in) {
  Catalog entities;
  Catalog relations;
  std::vector<Triple> triples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    while (true) {
      const auto tab = rest.find('\t');
      fields.push_back(rest.substr(0, tab));
      if (tab == std::string_view::npos) break;
      rest.remove_prefix(tab + 1);
    }
    if (fields.size() != 3) {
      throw ParseError(line_no, "expected 3 tab-separated fields, found " + std::to_string(fields.size()));
    }
    for (const auto f : fields) {
      if (f.empty()) throw ParseError(line_no, "empty field");
    }
    const EntityId h = entities.intern(fields[0]);
    const RelationId r = relations.intern(fields[1]);
    const EntityId t = entities.intern(fields[2]);
    triples.push_back({h, r, t});
  }
  if (triples.empty()) throw EmptyGraphError("triple file contains no triples");
  return KnowledgeGraph::build(std::move(entities), std::move(relations), std::move(triples));
}

KnowledgeGraph ingest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw GraphError("cannot open triple file " + path.string());
  return ingest(in);
}

KnowledgeGraph ingest_text(std::string_view text) {
  std::istringstream in{std::string(text)};
  return ingest(in);
}

std::vector<Triple> perturbation_candidates(const KnowledgeGraph& graph, PerturbScope scope,
                                            std::span<const EntityId> topics) {
  if (scope == PerturbScope::all_edges) return graph.triples();
  std::unordered_set<EntityId> topic_set(topics.begin(), topics.end());
  std::vector<Triple> out;
  for (const auto& t : graph.triples()) {
    if (topic_set.contains(t.head) || topic_set.contains(t.tail)) out.push_back(t);
  }
  return out;
}

std::vector<Triple> removed_edges(const KnowledgeGraph& graph, const PerturbationSpec& spec,
                                  std::span<const EntityId> topics) {
  if (!(spec.removal_ratio >= 0.0 && spec.removal_ratio <= 1.0)) {
    throw ValidationError("removal ratio must lie in [0, 1]");
  }
  if (spec.scope == PerturbScope::topic_entity_edges && topics.empty()) {
    throw ValidationError("topic-entity scope needs at least one topic entity");
  }
  auto candidates = perturbation_candidates(graph, spec.scope, topics);
  SeededRng rng(spec.seed);
  seeded_shuffle(candidates, rng);
  const auto count = static_cast<std::size_t>(
      std::floor(spec.removal_ratio * static_cast<double>(candidates.size())));
  candidates.resize(count);
  std::sort(candidates.begin(), candidates.end());
  return candidates;
}

KnowledgeGraph perturb(const KnowledgeGraph& graph, const PerturbationSpec& spec,
                       std::span<const EntityId> topics) {
  const auto removed = removed_edges(graph, spec, topics);
  std::vector<Triple> kept;
  kept.reserve(graph.num_triples() - removed.size());
  std::set_difference(graph.triples().begin(), graph.triples().end(), removed.begin(), removed.end(),
                      std::back_inserter(kept));
  return KnowledgeGraph::build(graph.entities(), graph.relations(), std::move(kept));
}

SeededRng::SeededRng(std::uint64_t seed) : engine_(seed) {}

std::uint64_t SeededRng::next() { return engine_(); }

std::uint64_t SeededRng::below(std::uint64_t bound) {
  if (bound == 0) throw ValidationError("SeededRng::below needs a positive bound");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return x % bound;
}

double SeededRng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double SeededRng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(theta);
  has_spare_ = true;
  return radius * std::cos(theta);
}

}  // namespace grasp
