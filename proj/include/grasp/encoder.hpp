#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "grasp/embedding.hpp"
#include "grasp/kg.hpp"
#include "grasp/subgraph.hpp"
#include "grasp/tensor.hpp"

namespace grasp {

enum class AttentionScore { scaled_dot, additive };

// identity: state maps (layer W, both FFN matrices) start as rectangular
// identities so an untrained encoder passes label embeddings through and
// soft-prompt rows stay comparable with the question embedding.
enum class WeightInit { glorot, identity };

struct EncoderConfig {
  int layers = 2;
  std::size_t d_in = 256;
  std::size_t d_hidden = 256;
  std::size_t d_ffn = 256;
  std::size_t d_prompt = 256;
  bool self_loops = true;
  Activation activation = Activation::elu;
  AttentionScore score = AttentionScore::scaled_dot;
  // One projection for both sides of the attention score; false adds a key-side matrix.
  bool shared_projection = true;
  WeightInit init = WeightInit::identity;

  // 768-d text encoder, 128-d GNN, 128 x 2880 prompt projection.
  static EncoderConfig large_profile();
  void validate() const;
};

// Parameter slot names, e.g. "gnn.0.w".
std::string gnn_slot(int layer, std::string_view what);

// Rectangular identity: ones on the leading diagonal.
Matrix eye(std::size_t rows, std::size_t cols);

void init_encoder_params(ParameterStore& params, const EncoderConfig& cfg, std::uint64_t seed);

/**
 * Message-passing structure of a subgraph.
 *
 * Edges are undirected for message passing. `pairs` lists every (i, j) with
 * mask(i, j) == 1 in row-major order and `relations` holds the matching
 * relation embedding: the mean over all edges joining i and j, or zero for a
 * pure self-loop.
 */
struct GraphStructure {
  std::size_t n = 0;
  Matrix mask;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  Matrix relations;
  std::vector<double> degree;
  std::vector<bool> isolated;
};

GraphStructure build_structure(const Subgraph& subgraph, const KnowledgeGraph& graph,
                               const EmbeddingProvider& provider, bool self_loops);

// Row i is the embedding of node i's label.
Matrix init_states(const Subgraph& subgraph, const KnowledgeGraph& graph,
                   const EmbeddingProvider& provider);

struct EncoderInputs {
  Matrix states;    // n x d_in
  Matrix question;  // 1 x d_in
  GraphStructure structure;
  int hops = 0;
};

EncoderInputs prepare_inputs(const Subgraph& subgraph, std::string_view question,
                             const KnowledgeGraph& graph, const EmbeddingProvider& provider,
                             const EncoderConfig& cfg);

// Question-conditioned attention over the mask for one layer.
Var attention_weights(Var question, Var states, const GraphStructure& structure, int layer,
                      const EncoderConfig& cfg);

// sigma(D^-1/2 A D^-1/2 H W + b) with D counted from the binary mask.
Var gat_layer(Var states, Var attention, const GraphStructure& structure, int layer,
              const EncoderConfig& cfg);

Var feed_forward(Var states, const EncoderConfig& cfg);

struct EncoderTrace {
  Var soft_prompt;
  std::vector<Var> attention;
  std::vector<Var> states;
  int layers_run = 0;
};

// Builds the encoder on `tape`, whose bound store supplies the weights.
EncoderTrace encode(Tape& tape, const EncoderInputs& inputs, const EncoderConfig& cfg);

// Inference convenience over a read-only parameter snapshot.
Matrix encode(const Subgraph& subgraph, std::string_view question, const KnowledgeGraph& graph,
              const EmbeddingProvider& provider, const ParameterStore& params,
              const EncoderConfig& cfg);

// Attention rows per layer, for inspection.
nlohmann::json dump_attention(const EncoderTrace& trace, const Subgraph& subgraph,
                              const KnowledgeGraph& graph);

}  // namespace grasp
