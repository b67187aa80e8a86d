#include "grasp/encoder.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <map>

namespace grasp {

namespace {

std::size_t layer_input_dim(const EncoderConfig& cfg, int layer) {
  return layer == 0 ? cfg.d_in : cfg.d_hidden;
}

Matrix diag_inv_sqrt(const std::vector<double>& degree) {
  Matrix d(degree.size(), degree.size());
  for (std::size_t i = 0; i < degree.size(); ++i) {
    d(i, i) = degree[i] > 0.0 ? 1.0 / std::sqrt(degree[i]) : 0.0;
  }
  return d;
}

}  // namespace

EncoderConfig EncoderConfig::large_profile() {
  EncoderConfig cfg;
  cfg.d_in = 768;
  cfg.d_hidden = 128;
  cfg.d_ffn = 128;
  cfg.d_prompt = 2880;
  cfg.init = WeightInit::glorot;
  return cfg;
}

void EncoderConfig::validate() const {
  if (layers < 1) throw ConfigError("encoder needs at least one layer");
  if (d_in == 0 || d_hidden == 0 || d_ffn == 0 || d_prompt == 0) {
    throw ConfigError("encoder dimensions must be positive");
  }
}

std::string gnn_slot(int layer, std::string_view what) {
  return "gnn." + std::to_string(layer) + "." + std::string(what);
}

Matrix eye(std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < std::min(rows, cols); ++i) m(i, i) = 1.0;
  return m;
}

void init_encoder_params(ParameterStore& params, const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::uint64_t s = seed;
  // Identity init consumes the same seeds so attention weights match either way.
  auto state_map = [&](std::size_t rows, std::size_t cols) {
    Matrix g = glorot(rows, cols, ++s);
    return cfg.init == WeightInit::identity ? eye(rows, cols) : g;
  };
  for (int l = 0; l < cfg.layers; ++l) {
    const std::size_t d_l = layer_input_dim(cfg, l);
    params.add(gnn_slot(l, "att_w"), glorot(cfg.d_in + d_l, cfg.d_hidden, ++s));
    if (!cfg.shared_projection) params.add(gnn_slot(l, "att_w_key"), glorot(d_l + cfg.d_in, cfg.d_hidden, ++s));
    if (cfg.score == AttentionScore::additive) params.add(gnn_slot(l, "att_a"), glorot(cfg.d_hidden, 1, ++s));
    params.add(gnn_slot(l, "w"), state_map(d_l, cfg.d_hidden));
    params.add(gnn_slot(l, "b"), Matrix(1, cfg.d_hidden));
  }
  params.add("ffn.w1", state_map(cfg.d_hidden, cfg.d_ffn));
  params.add("ffn.b1", Matrix(1, cfg.d_ffn));
  params.add("ffn.w2", state_map(cfg.d_ffn, cfg.d_prompt));
  params.add("ffn.b2", Matrix(1, cfg.d_prompt));
}

GraphStructure build_structure(const Subgraph& subgraph, const KnowledgeGraph& graph,
                               const EmbeddingProvider& provider, bool self_loops) {
  const std::size_t n = subgraph.size();
  const std::size_t d = provider.dimension();
  GraphStructure gs;
  gs.n = n;
  gs.mask = Matrix(n, n);

  std::map<std::pair<std::size_t, std::size_t>, std::vector<RelationId>> joined;
  for (const auto& e : subgraph.edges) {
    joined[{e.head, e.tail}].push_back(e.relation);
    if (e.head != e.tail) joined[{e.tail, e.head}].push_back(e.relation);
  }
  for (const auto& [ij, _] : joined) gs.mask(ij.first, ij.second) = 1.0;
  if (self_loops) {
    for (std::size_t i = 0; i < n; ++i) gs.mask(i, i) = 1.0;
  }

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (gs.mask(i, j) != 0.0) gs.pairs.emplace_back(i, j);
    }
  }
  gs.relations = Matrix(gs.pairs.size(), d);
  for (std::size_t k = 0; k < gs.pairs.size(); ++k) {
    auto it = joined.find(gs.pairs[k]);
    if (it == joined.end()) continue;
    auto row = gs.relations.row(k);
    for (RelationId r : it->second) {
      const Vector v = provider.embed(graph.relation_label(r));
      for (std::size_t c = 0; c < d; ++c) row[c] += v[c];
    }
    for (double& x : row) x /= static_cast<double>(it->second.size());
  }

  gs.degree.assign(n, 0.0);
  gs.isolated.assign(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) gs.degree[i] += gs.mask(i, j);
    gs.isolated[i] = gs.degree[i] == 0.0;
  }
  return gs;
}

Matrix init_states(const Subgraph& subgraph, const KnowledgeGraph& graph,
                   const EmbeddingProvider& provider) {
  if (subgraph.size() == 0) throw std::invalid_argument("init_states: empty subgraph");
  Matrix h(subgraph.size(), provider.dimension());
  for (std::size_t i = 0; i < subgraph.size(); ++i) {
    const Vector v = provider.embed(graph.entity_label(subgraph.nodes[i].entity));
    std::copy(v.begin(), v.end(), h.row(i).begin());
  }
  return h;
}

EncoderInputs prepare_inputs(const Subgraph& subgraph, std::string_view question,
                             const KnowledgeGraph& graph, const EmbeddingProvider& provider,
                             const EncoderConfig& cfg) {
  if (provider.dimension() != cfg.d_in) {
    throw ConfigError("provider dimension " + std::to_string(provider.dimension()) +
                      " != encoder d_in " + std::to_string(cfg.d_in));
  }
  EncoderInputs in;
  in.states = init_states(subgraph, graph, provider);
  in.question = Matrix::row_vector(provider.embed(question));
  in.structure = build_structure(subgraph, graph, provider, cfg.self_loops);
  in.hops = subgraph.hops;
  return in;
}

Var attention_weights(Var question, Var states, const GraphStructure& structure, int layer,
                      const EncoderConfig& cfg) {
  Tape& tape = states.tape();
  const std::size_t n = states.rows();
  if (n != structure.n) {
    throw DimensionError("attention_weights: " + std::to_string(n) + " state rows for a " +
                         std::to_string(structure.n) + "-node structure");
  }
  std::vector<std::size_t> src;
  std::vector<std::size_t> dst;
  src.reserve(structure.pairs.size());
  dst.reserve(structure.pairs.size());
  for (const auto& [i, j] : structure.pairs) {
    src.push_back(i);
    dst.push_back(j);
  }
  if (structure.pairs.empty()) return tape.constant(Matrix(n, n));

  Var w = tape.param(gnn_slot(layer, "att_w"));
  Var w_key = cfg.shared_projection ? w : tape.param(gnn_slot(layer, "att_w_key"));

  // W(q || h_i) for every node, then picked per pair.
  const std::vector<std::size_t> zeros(n, 0);
  Var query_side = matmul(concat_cols(gather_rows(question, zeros), states), w);
  Var left = gather_rows(query_side, src);
  // W(h_j || r_ij) per pair.
  Var right = matmul(concat_cols(gather_rows(states, dst), tape.constant(structure.relations)), w_key);

  Var scores;
  if (cfg.score == AttentionScore::scaled_dot) {
    scores = scale(sum_rows(mul(left, right)), 1.0 / std::sqrt(static_cast<double>(cfg.d_hidden)));
  } else {
    scores = matmul(activation(add(left, right), Activation::leaky_relu), tape.param(gnn_slot(layer, "att_a")));
  }
  return row_softmax(scatter(scores, structure.pairs, n, n), structure.mask);
}

Var gat_layer(Var states, Var attention, const GraphStructure& structure, int layer,
              const EncoderConfig& cfg) {
  Tape& tape = states.tape();
  Var d = tape.constant(diag_inv_sqrt(structure.degree));
  Var normalized = matmul(matmul(d, attention), d);
  Var z = matmul(matmul(normalized, states), tape.param(gnn_slot(layer, "w")));
  for (std::size_t i = 0; i < structure.n; ++i) {
    if (structure.isolated[i]) {
      spdlog::debug("gat layer {}: node {} has no neighbors; output is sigma(b)", layer, i);
    }
  }
  return activation(add_row(z, tape.param(gnn_slot(layer, "b"))), cfg.activation);
}

Var feed_forward(Var states, const EncoderConfig& cfg) {
  Tape& tape = states.tape();
  Var hidden = activation(add_row(matmul(states, tape.param("ffn.w1")), tape.param("ffn.b1")), cfg.activation);
  return add_row(matmul(hidden, tape.param("ffn.w2")), tape.param("ffn.b2"));
}

EncoderTrace encode(Tape& tape, const EncoderInputs& inputs, const EncoderConfig& cfg) {
  cfg.validate();
  int layers = cfg.layers;
  if (inputs.hops != cfg.layers) {
    layers = std::min(cfg.layers, std::max(inputs.hops, 1));
    spdlog::warn("encoder has {} layers but the subgraph has {} hops; running {}", cfg.layers,
                 inputs.hops, layers);
  }
  EncoderTrace trace;
  Var q = tape.constant(inputs.question);
  Var h = tape.constant(inputs.states);
  trace.states.push_back(h);
  for (int l = 0; l < layers; ++l) {
    Var a = attention_weights(q, h, inputs.structure, l, cfg);
    h = gat_layer(h, a, inputs.structure, l, cfg);
    trace.attention.push_back(a);
    trace.states.push_back(h);
  }
  trace.soft_prompt = feed_forward(h, cfg);
  trace.layers_run = layers;
  return trace;
}

Matrix encode(const Subgraph& subgraph, std::string_view question, const KnowledgeGraph& graph,
              const EmbeddingProvider& provider, const ParameterStore& params,
              const EncoderConfig& cfg) {
  const auto inputs = prepare_inputs(subgraph, question, graph, provider, cfg);
  Tape tape;
  tape.bind(params);
  return encode(tape, inputs, cfg).soft_prompt.value();
}

nlohmann::json dump_attention(const EncoderTrace& trace, const Subgraph& subgraph,
                              const KnowledgeGraph& graph) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < trace.attention.size(); ++l) {
    const Matrix& a = trace.attention[l].value();
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < a.rows(); ++i) {
      nlohmann::json weights = nlohmann::json::object();
      for (std::size_t j = 0; j < a.cols(); ++j) {
        if (a(i, j) != 0.0) weights[graph.entity_label(subgraph.nodes[j].entity)] = a(i, j);
      }
      rows.push_back({{"node", graph.entity_label(subgraph.nodes[i].entity)}, {"weights", weights}});
    }
    layers.push_back({{"layer", l}, {"rows", rows}});
  }
  return layers;
}

}  // namespace grasp
