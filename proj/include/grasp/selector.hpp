#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "grasp/embedding.hpp"
#include "grasp/encoder.hpp"
#include "grasp/kg.hpp"
#include "grasp/subgraph.hpp"
#include "grasp/tensor.hpp"

namespace grasp {

// Instruction that heads the text part of the selection prompt.
inline constexpr std::string_view kSelectionInstruction =
    "You are given a question, a list of candidate entities from a knowledge graph, and a "
    "graph soft prompt with one vector per candidate. Select the entities most relevant for "
    "answering the question.";

// diagonal: logit = sum_k w_k * row_k * q_k, a learned per-dimension weighting of
// the match between a soft-prompt row and the question; needs d_prompt == d_in.
enum class HeadKind { linear, mlp, bilinear, diagonal };

struct SelectorConfig {
  std::size_t top_m = 3;
  HeadKind head = HeadKind::diagonal;
  std::size_t d_head = 32;         // hidden width of the mlp and bilinear heads
  double diagonal_gain = 16.0;     // initial weight of every diagonal-head dimension
  // The root is the current topic; it stays in the encoder but is not offered
  // as a candidate unless this is set (or it is the only node).
  bool include_root = false;
};

struct PipelineConfig {
  ExtractionConfig extraction;
  EncoderConfig encoder;
  SelectorConfig selector;
};

// Sets the encoder input width to the provider's; the diagonal head also
// follows it with the soft-prompt width.
PipelineConfig fit_to_dimension(PipelineConfig cfg, std::size_t d_text);

void init_selector_params(ParameterStore& params, const EncoderConfig& enc, const SelectorConfig& cfg,
                          std::uint64_t seed);
void init_pipeline_params(ParameterStore& params, const PipelineConfig& cfg, std::uint64_t seed);

struct PromptBundle {
  std::string instruction;
  std::string question;
  std::vector<std::pair<EntityId, std::string>> candidates;  // subgraph node order
  Matrix soft_prompt;                                         // one row per subgraph node
  Matrix question_embedding;                                  // 1 x d_in
  std::unordered_map<EntityId, std::size_t> row_of;           // candidate -> soft-prompt row
};

PromptBundle assemble_prompt(const Subgraph& subgraph, const KnowledgeGraph& graph,
                             std::string_view question, Matrix soft_prompt,
                             Matrix question_embedding, const SelectorConfig& cfg);

// Candidate soft-prompt rows in candidate order.
std::vector<std::size_t> candidate_rows(const Subgraph& subgraph, const SelectorConfig& cfg);

// 1 x c logits: head applied to (soft-prompt row || question embedding).
Var candidate_logits(Var soft_prompt, Var question, const std::vector<std::size_t>& rows,
                     const SelectorConfig& cfg);

struct RankedEntity {
  EntityId entity = 0;
  double probability = 0.0;
};

struct SelectionResult {
  std::vector<RankedEntity> ranked;  // descending probability, ties by entity id
  std::vector<EntityId> selected;    // first top_m of ranked
  std::map<EntityId, std::vector<Triple>> relations;  // subgraph edges incident to each selected entity
};

// Ranks by probability and attaches incident relations from the subgraph.
SelectionResult make_selection(std::vector<RankedEntity> ranked, std::size_t top_m,
                               const Subgraph& subgraph, const KnowledgeGraph& graph);

SelectionResult score_candidates(const PromptBundle& bundle, const ParameterStore& params,
                                 const SelectorConfig& cfg, const Subgraph& subgraph,
                                 const KnowledgeGraph& graph);

// Request body for a soft-prompt-accepting selection endpoint.
nlohmann::json selection_request(const PromptBundle& bundle);

// Selection stage backed by an external model that consumes soft prompts.
class ExternalSelector {
 public:
  virtual ~ExternalSelector() = default;
  virtual std::vector<EntityId> select(const PromptBundle& bundle) = 0;
};

// Returns the first `count` candidates and keeps the last request it saw.
class MockExternalSelector final : public ExternalSelector {
 public:
  explicit MockExternalSelector(std::size_t count) : count_(count) {}
  std::vector<EntityId> select(const PromptBundle& bundle) override;
  const nlohmann::json& last_request() const { return last_request_; }

 private:
  std::size_t count_;
  nlohmann::json last_request_;
};

class UnlabelableError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SelectionLabel {
  std::vector<EntityId> relevant;  // sorted
};

/**
 * Entities on any shortest undirected path from `topic` to an answer,
 * excluding the topic. For an answer adjacent to the topic this is just the
 * answer.
 */
SelectionLabel build_labels(const KnowledgeGraph& graph, EntityId topic,
                            const std::vector<EntityId>& answers);

std::string verbalize(const SelectionResult& result, const Subgraph& subgraph, const KnowledgeGraph& graph);

struct QaRecord {
  std::string id;
  std::string question;
  std::string topic;
  std::vector<std::string> answers;
  int depth = 0;  // 0 when unknown
};

// JSON lines: {"question", "topic_entity", "answers", optional "id", "depth"}.
std::vector<QaRecord> read_dataset(std::istream& in);
std::vector<QaRecord> read_dataset(const std::filesystem::path& path);
void write_dataset(std::ostream& out, const std::vector<QaRecord>& records);

enum class OptimizerKind { sgd, adam };

struct TrainingConfig {
  PipelineConfig pipeline;
  int epochs = 50;
  OptimizerKind optimizer = OptimizerKind::sgd;
  double lr = 3e-3;
  AdamConfig adam;  // moment settings; the step size is `lr`
  double holdout_fraction = 0.2;
  // Share of the training records set aside to pick the returned epoch: the
  // first epoch reaching the highest validation top-1.
  double validation_fraction = 1.0 / 6.0;
  int patience = 5;  // stop after this many epochs without a better pick; 0 runs every epoch
  std::uint64_t seed = 7;
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints
  bool freeze_head = false;
};

// `key = value` lines; unknown keys are an error.
TrainingConfig parse_training_config(std::istream& in);
TrainingConfig load_training_config(const std::filesystem::path& path);

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double validation_hit = 0.0;
  double validation_loss = 0.0;
  double heldout_hit = 0.0;  // top-1 candidate in the label set
};

struct TrainingReport {
  std::vector<EpochStats> epochs;
  std::size_t train_examples = 0;
  std::size_t heldout_examples = 0;
  std::size_t validation_examples = 0;
  int selected_epoch = 0;  // epoch whose parameters were returned
  std::size_t unlabelable = 0;
  std::size_t label_outside_subgraph = 0;
  double initial_loss = 0.0;
  double seconds = 0.0;

  // Held-out top-1 of the returned parameters.
  double final_heldout_hit() const;
  nlohmann::json to_json() const;
};

// A labeled training example with its extraction and encoder inputs precomputed.
struct PreparedExample {
  std::string id;
  EncoderInputs inputs;
  std::vector<std::size_t> rows;    // candidate soft-prompt rows
  std::vector<std::size_t> target;  // label positions within `rows`
};

// Extracts, encodes inputs and labels; unusable records are counted in `report`.
std::vector<PreparedExample> prepare_examples(const std::vector<QaRecord>& records,
                                              const KnowledgeGraph& graph,
                                              const EmbeddingProvider& provider,
                                              const PipelineConfig& cfg, TrainingReport& report);

// Mean negative log-probability of the label candidates.
Var selection_loss(Tape& tape, const PreparedExample& example, const PipelineConfig& cfg);

// Held-out metric: whether the arg-max candidate is a label.
bool top1_hit(const PreparedExample& example, const ParameterStore& params, const PipelineConfig& cfg);

// Seeded record-level split into (train, held-out); held-out gets floor(fraction * n).
std::pair<std::vector<QaRecord>, std::vector<QaRecord>> split_holdout(const std::vector<QaRecord>& dataset,
                                                                      double fraction, std::uint64_t seed);

TrainingReport train(const std::vector<QaRecord>& dataset, const KnowledgeGraph& graph,
                     const EmbeddingProvider& provider, ParameterStore& params, const TrainingConfig& cfg);

}  // namespace grasp
