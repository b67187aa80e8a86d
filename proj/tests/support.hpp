// Shared fixtures and independent reference implementations for the tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include "grasp/embedding.hpp"
#include "grasp/encoder.hpp"
#include "grasp/kg.hpp"
#include "grasp/selector.hpp"
#include "grasp/subgraph.hpp"
#include "grasp/tensor.hpp"

namespace grasp::testing {

// Random graph over `n` entities named e0..e{n-1} with `m` random triples over `r` relations.
inline KnowledgeGraph random_graph(std::size_t n, std::size_t m, std::size_t r, std::uint64_t seed,
                                   bool allow_self_loops = false) {
  SeededRng rng(seed);
  Catalog ents, rels;
  for (std::size_t i = 0; i < n; ++i) ents.intern("e" + std::to_string(i));
  for (std::size_t i = 0; i < r; ++i) rels.intern("rel " + std::to_string(i));
  std::vector<Triple> triples;
  while (triples.size() < m) {
    const auto h = static_cast<EntityId>(rng.below(n));
    const auto t = static_cast<EntityId>(rng.below(n));
    if (h == t && !allow_self_loops) continue;
    triples.push_back({h, static_cast<RelationId>(rng.below(r)), t});
  }
  return KnowledgeGraph::build(std::move(ents), std::move(rels), std::move(triples));
}

// Subgraph holding every entity of `graph` with all of its triples, root 0.
inline Subgraph whole_graph_subgraph(const KnowledgeGraph& graph, int hops) {
  Subgraph sg;
  sg.root = 0;
  sg.hops = hops;
  for (EntityId e = 0; e < graph.num_entities(); ++e) sg.nodes.push_back({e, e == 0 ? 0 : 1, 0.0});
  for (const auto& t : graph.triples()) sg.edges.push_back({t.head, t.relation, t.tail});
  std::sort(sg.edges.begin(), sg.edges.end());
  return sg;
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, SeededRng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& x : m.data()) x = scale * (2.0 * rng.uniform() - 1.0);
  return m;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  return worst;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Attention rows recomputed pair by pair with scalar loops (scaled dot score).
inline Matrix loop_attention(const Matrix& q, const Matrix& h, const GraphStructure& gs, const Matrix& w,
                             std::size_t d_hidden) {
  const std::size_t n = gs.n;
  auto project = [&](std::span<const double> left, std::span<const double> right) {
    std::vector<double> out(w.cols(), 0.0);
    for (std::size_t c = 0; c < w.cols(); ++c) {
      for (std::size_t k = 0; k < left.size(); ++k) out[c] += left[k] * w(k, c);
      for (std::size_t k = 0; k < right.size(); ++k) out[c] += right[k] * w(left.size() + k, c);
    }
    return out;
  };
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> pair_index;
  for (std::size_t k = 0; k < gs.pairs.size(); ++k) pair_index[gs.pairs[k]] = k;
  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto left = project(q.row(0), h.row(i));
    std::vector<std::pair<std::size_t, double>> scores;
    for (std::size_t j = 0; j < n; ++j) {
      if (gs.mask(i, j) == 0.0) continue;
      const auto right = project(h.row(j), gs.relations.row(pair_index.at({i, j})));
      scores.emplace_back(j, dot(left, right) / std::sqrt(static_cast<double>(d_hidden)));
    }
    if (scores.empty()) continue;
    double top = scores[0].second;
    for (const auto& [_, s] : scores) top = std::max(top, s);
    double z = 0.0;
    for (const auto& [_, s] : scores) z += std::exp(s - top);
    for (const auto& [j, s] : scores) a(i, j) = std::exp(s - top) / z;
  }
  return a;
}

// h'_i = sigma(sum_j a_ij / sqrt(deg_i deg_j) * (h_j W) + b), one node at a time.
inline Matrix loop_gat_layer(const Matrix& h, const Matrix& a, const GraphStructure& gs, const Matrix& w,
                             const Matrix& b, Activation act) {
  const std::size_t n = gs.n;
  Matrix out(n, w.cols());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < w.cols(); ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (gs.mask(i, j) == 0.0) continue;
        double hw = 0.0;
        for (std::size_t k = 0; k < h.cols(); ++k) hw += h(j, k) * w(k, c);
        acc += a(i, j) / std::sqrt(gs.degree[i] * gs.degree[j]) * hw;
      }
      out(i, c) = activate(act, acc + b(0, c));
    }
  }
  return out;
}

inline Matrix loop_affine(const Matrix& x, const Matrix& w, const Matrix& b, Activation act) {
  Matrix out(x.rows(), w.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t c = 0; c < w.cols(); ++c) {
      double acc = b(0, c);
      for (std::size_t k = 0; k < x.cols(); ++k) acc += x(i, k) * w(k, c);
      out(i, c) = activate(act, acc);
    }
  }
  return out;
}

// Tape-free encoder: attention, layer and feed-forward recomputed with loops.
inline Matrix loop_encode(const EncoderInputs& in, const ParameterStore& p, const EncoderConfig& cfg) {
  Matrix h = in.states;
  for (int l = 0; l < cfg.layers; ++l) {
    const Matrix a = loop_attention(in.question, h, in.structure, p.value(gnn_slot(l, "att_w")), cfg.d_hidden);
    h = loop_gat_layer(h, a, in.structure, p.value(gnn_slot(l, "w")), p.value(gnn_slot(l, "b")), cfg.activation);
  }
  const Matrix hidden = loop_affine(h, p.value("ffn.w1"), p.value("ffn.b1"), cfg.activation);
  return loop_affine(hidden, p.value("ffn.w2"), p.value("ffn.b2"), Activation::identity);
}

// Every vertex on some shortest undirected topic->answer path, found by walking
// back from each answer through BFS predecessor lists.
inline std::set<EntityId> shortest_path_vertices(const KnowledgeGraph& g, EntityId topic,
                                                 const std::vector<EntityId>& answers) {
  const std::size_t n = g.num_entities();
  std::vector<std::set<EntityId>> adj(n);
  for (const auto& t : g.triples()) {
    if (t.head == t.tail) continue;
    adj[t.head].insert(t.tail);
    adj[t.tail].insert(t.head);
  }
  std::vector<int> dist(n, -1);
  std::vector<std::vector<EntityId>> preds(n);
  std::queue<EntityId> frontier;
  dist[topic] = 0;
  frontier.push(topic);
  while (!frontier.empty()) {
    const EntityId u = frontier.front();
    frontier.pop();
    for (EntityId v : adj[u]) {
      if (dist[v] < 0) {
        dist[v] = dist[u] + 1;
        frontier.push(v);
      }
      if (dist[v] == dist[u] + 1) preds[v].push_back(u);
    }
  }
  std::set<EntityId> out;
  for (EntityId a : answers) {
    if (dist[a] <= 0) continue;
    std::vector<EntityId> stack{a};
    std::set<EntityId> seen{a};
    while (!stack.empty()) {
      const EntityId v = stack.back();
      stack.pop_back();
      if (v != topic) out.insert(v);
      for (EntityId p : preds[v]) {
        if (seen.insert(p).second) stack.push_back(p);
      }
    }
  }
  return out;
}

// Cosine scores for all candidates, sorted, then truncated.
inline std::vector<ScoredEntity> full_sort_top_k(std::span<const double> q, std::span<const Candidate> cands,
                                                 std::size_t k) {
  std::vector<ScoredEntity> all;
  const double qn = std::sqrt(dot(q, q));
  for (const auto& c : cands) {
    const double en = std::sqrt(dot(c.embedding, c.embedding));
    const double s = (qn == 0.0 || en == 0.0) ? 0.0 : dot(q, c.embedding) / (qn * en);
    all.push_back({c.entity, s});
  }
  std::sort(all.begin(), all.end(), [](const ScoredEntity& a, const ScoredEntity& b) {
    return a.score != b.score ? a.score > b.score : a.entity < b.entity;
  });
  if (all.size() > k) all.resize(k);
  return all;
}

// Same entities in the same order with scores equal up to rounding.
inline bool same_ranking(const std::vector<ScoredEntity>& a, const std::vector<ScoredEntity>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].entity != b[i].entity || std::abs(a[i].score - b[i].score) > 1e-12) return false;
  }
  return true;
}

inline std::vector<Triple> full_scan_induced(const KnowledgeGraph& g, const std::vector<EntityId>& nodes) {
  const std::set<EntityId> keep(nodes.begin(), nodes.end());
  std::vector<Triple> out;
  for (const auto& t : g.triples()) {
    if (keep.contains(t.head) && keep.contains(t.tail)) out.push_back(t);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Small pipeline used for gradient checks: 8-d text, 6-d hidden, glorot weights.
inline PipelineConfig toy_pipeline(int layers) {
  PipelineConfig cfg;
  cfg.encoder.layers = layers;
  cfg.encoder.d_in = 8;
  cfg.encoder.d_hidden = 6;
  cfg.encoder.d_ffn = 6;
  cfg.encoder.d_prompt = 8;
  cfg.encoder.init = WeightInit::glorot;
  cfg.extraction.hops = layers;
  cfg.selector.diagonal_gain = 1.0;
  return cfg;
}

// Whole-graph example on a connected random toy graph with one or two label rows.
inline PreparedExample toy_example(const KnowledgeGraph& g, const EmbeddingProvider& provider,
                                   const PipelineConfig& cfg, std::uint64_t seed) {
  const Subgraph sg = whole_graph_subgraph(g, cfg.encoder.layers);
  PreparedExample ex;
  ex.id = "toy";
  ex.inputs = prepare_inputs(sg, "which e1 relates to rel 0", g, provider, cfg.encoder);
  ex.rows = candidate_rows(sg, cfg.selector);
  SeededRng rng(seed);
  ex.target.push_back(static_cast<std::size_t>(rng.below(ex.rows.size())));
  const auto second = static_cast<std::size_t>(rng.below(ex.rows.size()));
  if (second != ex.target[0]) ex.target.push_back(second);
  return ex;
}

}  // namespace grasp::testing
