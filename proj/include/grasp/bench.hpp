#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "grasp/embedding.hpp"
#include "grasp/kg.hpp"
#include "grasp/orchestrator.hpp"
#include "grasp/selector.hpp"
#include "grasp/tensor.hpp"

namespace grasp {

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SyntheticSpec {
  std::size_t num_entities = 2000;
  std::size_t num_relations = 40;
  std::array<std::size_t, 3> questions_per_depth{0, 300, 0};  // depths 1, 2, 3
  double distractor_density = 3.0;  // random extra out-edges per entity
  std::size_t type_vocabulary = 20;  // type phrases per role pool (topic, bridge, answer, distractor)
  // Distinct name words shared across entities; labels stay unique as (type, name)
  // pairs. A small pool keeps names from identifying individual entities.
  std::size_t name_pool = 100;
  // Share of questions whose topic -> first-hop edge is left out; the answer
  // stays reachable through the auxiliary route.
  double missing_direct_fraction = 0.0;
  std::uint64_t seed = 1;

  std::size_t num_questions() const;
  void validate() const;
  nlohmann::json to_json() const;
  static SyntheticSpec from_json(const nlohmann::json& doc);
  // 2,000 entities, 300 two-hop questions, density 3.
  static SyntheticSpec standard(std::uint64_t seed = 1);
};

struct PlantedQuestion {
  std::string id;
  int depth = 0;
  std::vector<std::string> path;  // topic, bridges..., answer
  std::string aux;                // topic -> aux -> first hop
  bool direct_missing = false;
};

struct SyntheticBenchmark {
  SyntheticSpec spec;
  KnowledgeGraph graph;
  std::vector<QaRecord> dataset;
  std::vector<PlantedQuestion> planted;
  ScriptedBackend backend;

  // graph.tsv, dataset.jsonl, script.jsonl, spec.json
  void write(const std::filesystem::path& dir) const;
};

// Throws GenerationError when the questions need more path entities than exist.
SyntheticBenchmark generate(const SyntheticSpec& spec);

// Lowercase, punctuation removed, whitespace collapsed and trimmed.
std::string normalize_answer(std::string_view text);

struct EvalRecord {
  std::string id;
  int depth = 0;
  std::string predicted;
  std::vector<std::string> gold;
  bool hit = false;
  Terminal terminal = Terminal::failed;
  std::size_t iterations = 0;
  std::size_t select_calls = 0;
  std::size_t answer_calls = 0;
  double seconds = 0.0;
};

struct DepthStats {
  std::size_t questions = 0;
  std::size_t hits = 0;
  double hits_at_1() const { return questions == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(questions); }
};

struct Metrics {
  std::size_t questions = 0;
  double hits_at_1 = 0.0;
  std::map<int, DepthStats> per_depth;
  std::map<std::string, std::size_t> terminals;
  double mean_select_calls = 0.0;
  double mean_answer_calls = 0.0;
  double mean_seconds = 0.0;
  double total_seconds = 0.0;
  std::vector<EvalRecord> records;  // dataset order
  std::vector<ReasoningTrace> traces;

  nlohmann::json to_json(bool with_records = false) const;
};

struct EvalOptions {
  ReasonConfig reason;
  std::size_t workers = 1;
  bool match_entity_ids = false;  // resolve both sides to entities instead of comparing text
  bool oracle_selection = false;  // select shortest-path labels instead of the learned head
  bool allow_untrained = false;   // run with freshly initialized parameters when none are given
  std::uint64_t init_seed = 0;
  bool keep_traces = false;
};

/**
 * Runs the reasoning loop for every record and scores Hits@1. `params` may be
 * null only with `allow_untrained` or `oracle_selection`.
 */
Metrics evaluate(const std::vector<QaRecord>& dataset, const KnowledgeGraph& graph,
                 const EmbeddingProvider& provider, const ParameterStore* params, const EvalOptions& options,
                 const AnswerBackend& backend);

struct CurvePoint {
  double ratio = 0.0;
  std::size_t removed_edges = 0;
  Metrics metrics;
};

struct IncompletenessCurve {
  std::vector<CurvePoint> points;
  std::string to_csv() const;  // ratio,removed_edges,hits_at_1,mean_select_calls,mean_answer_calls
  double drop_at(double ratio) const;  // hits at the first point minus hits at `ratio`
};

// Removes nested, seeded samples of topic-entity edges per ratio and evaluates
// on each perturbed graph.
IncompletenessCurve sweep_incompleteness(const std::vector<QaRecord>& dataset, const KnowledgeGraph& graph,
                                         const EmbeddingProvider& provider, const ParameterStore* params,
                                         const EvalOptions& options, const AnswerBackend& backend,
                                         const std::vector<double>& ratios, std::uint64_t seed);

// Pipeline config with extraction hops and encoder layers both set to `hops`.
PipelineConfig with_hops(PipelineConfig cfg, int hops);

struct AblationRow {
  int hops = 0;
  Metrics metrics;
};

struct AblationTable {
  std::string dataset_name;
  std::vector<AblationRow> rows;
  std::vector<std::string> columns() const;
  std::string to_csv() const;
  nlohmann::json to_json() const;
};

// Evaluates every hop setting on the same dataset; throws ConfigError listing
// hop settings without parameters.
AblationTable hop_ablation(const std::vector<QaRecord>& dataset, const KnowledgeGraph& graph,
                           const EmbeddingProvider& provider, const std::map<int, ParameterStore>& params_per_hop,
                           const std::vector<int>& hops, const EvalOptions& options, const AnswerBackend& backend,
                           std::string dataset_name = "synthetic");

struct BenchConfig {
  SyntheticSpec spec = SyntheticSpec::standard();
  TrainingConfig training;
  std::size_t workers = 1;
  double min_selection_top1 = 0.95;
  double min_hits_at_1 = 0.90;
  double max_seconds = 600.0;
};

struct BenchResult {
  TrainingReport training;
  Metrics heldout;
  double seconds = 0.0;
  bool selection_ok = false;
  bool hits_ok = false;
  bool time_ok = false;
  bool passed() const { return selection_ok && hits_ok && time_ok; }
  nlohmann::json to_json() const;
};

// Generate, train at `training`, evaluate the held-out split with the scripted backend.
BenchResult run_bench(const BenchConfig& cfg, const EmbeddingProvider& provider, ParameterStore* trained_out = nullptr);

}  // namespace grasp
