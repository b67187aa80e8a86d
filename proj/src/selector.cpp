#include "grasp/selector.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <deque>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>

namespace grasp {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("expected a boolean, got '" + v + "'");
}

std::vector<int> bfs_distances(const KnowledgeGraph& graph, EntityId source) {
  std::vector<int> dist(graph.num_entities(), -1);
  std::deque<EntityId> queue{source};
  dist[source] = 0;
  while (!queue.empty()) {
    const EntityId u = queue.front();
    queue.pop_front();
    for (const auto& nb : graph.neighbors(u, Direction::both)) {
      if (dist[nb.entity] < 0) {
        dist[nb.entity] = dist[u] + 1;
        queue.push_back(nb.entity);
      }
    }
  }
  return dist;
}

}  // namespace

PipelineConfig fit_to_dimension(PipelineConfig cfg, std::size_t d_text) {
  cfg.encoder.d_in = d_text;
  if (cfg.selector.head == HeadKind::diagonal) cfg.encoder.d_prompt = d_text;
  return cfg;
}

void init_selector_params(ParameterStore& params, const EncoderConfig& enc, const SelectorConfig& cfg,
                          std::uint64_t seed) {
  const std::size_t d = enc.d_prompt + enc.d_in;
  if (cfg.head == HeadKind::linear) {
    params.add("head.w", glorot(d, 1, seed + 101));
    return;
  }
  if (cfg.head == HeadKind::diagonal) {
    if (enc.d_prompt != enc.d_in) {
      throw ConfigError("diagonal head needs d_prompt == d_in (" + std::to_string(enc.d_prompt) + " vs " +
                        std::to_string(enc.d_in) + ")");
    }
    params.add("head.w", Matrix(1, enc.d_in, cfg.diagonal_gain));
    return;
  }
  if (cfg.head == HeadKind::bilinear) {
    params.add("head.u", glorot(enc.d_prompt, cfg.d_head, seed + 101));
    params.add("head.v", glorot(enc.d_in, cfg.d_head, seed + 102));
    return;
  }
  params.add("head.w1", glorot(d, cfg.d_head, seed + 101));
  params.add("head.b1", Matrix(1, cfg.d_head));
  params.add("head.w2", glorot(cfg.d_head, 1, seed + 102));
}

void init_pipeline_params(ParameterStore& params, const PipelineConfig& cfg, std::uint64_t seed) {
  init_encoder_params(params, cfg.encoder, seed);
  init_selector_params(params, cfg.encoder, cfg.selector, seed);
}

std::vector<std::size_t> candidate_rows(const Subgraph& subgraph, const SelectorConfig& cfg) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < subgraph.size(); ++i) {
    if (i == 0 && !cfg.include_root && subgraph.size() > 1) continue;
    rows.push_back(i);
  }
  return rows;
}

PromptBundle assemble_prompt(const Subgraph& subgraph, const KnowledgeGraph& graph,
                             std::string_view question, Matrix soft_prompt,
                             Matrix question_embedding, const SelectorConfig& cfg) {
  if (soft_prompt.rows() != subgraph.size()) {
    throw DimensionError("soft prompt has " + std::to_string(soft_prompt.rows()) + " rows for " +
                         std::to_string(subgraph.size()) + " nodes");
  }
  PromptBundle b;
  b.instruction = std::string(kSelectionInstruction);
  b.question = std::string(question);
  for (std::size_t row : candidate_rows(subgraph, cfg)) {
    const EntityId e = subgraph.nodes[row].entity;
    b.candidates.emplace_back(e, graph.entity_label(e));
    b.row_of.emplace(e, row);
  }
  b.soft_prompt = std::move(soft_prompt);
  b.question_embedding = std::move(question_embedding);
  return b;
}

Var candidate_logits(Var soft_prompt, Var question, const std::vector<std::size_t>& rows,
                     const SelectorConfig& cfg) {
  Tape& tape = soft_prompt.tape();
  const std::vector<std::size_t> zeros(rows.size(), 0);
  if (cfg.head == HeadKind::diagonal) {
    if (soft_prompt.value().cols() != question.value().cols()) {
      throw DimensionError("diagonal head: soft prompt width " + std::to_string(soft_prompt.value().cols()) +
                           " differs from question width " + std::to_string(question.value().cols()));
    }
    Var weighted = mul(question, tape.param("head.w"));
    return transpose(sum_rows(mul(gather_rows(soft_prompt, rows), gather_rows(weighted, zeros))));
  }
  Var features = concat_cols(gather_rows(soft_prompt, rows), gather_rows(question, zeros));
  Var column;
  if (cfg.head == HeadKind::linear) {
    column = matmul(features, tape.param("head.w"));
  } else if (cfg.head == HeadKind::bilinear) {
    // (row U) . (q V) / sqrt(d_head), read off the two halves of the concatenation
    Var left = matmul(gather_rows(soft_prompt, rows), tape.param("head.u"));
    Var right = matmul(gather_rows(question, zeros), tape.param("head.v"));
    const double norm = 1.0 / std::sqrt(static_cast<double>(cfg.d_head));
    column = scale(sum_rows(mul(left, right)), norm);
  } else {
    Var hidden = activation(add_row(matmul(features, tape.param("head.w1")), tape.param("head.b1")),
                            Activation::tanh);
    column = matmul(hidden, tape.param("head.w2"));
  }
  return transpose(column);
}

SelectionResult make_selection(std::vector<RankedEntity> ranked, std::size_t top_m,
                               const Subgraph& subgraph, const KnowledgeGraph& graph) {
  std::stable_sort(ranked.begin(), ranked.end(), [](const RankedEntity& a, const RankedEntity& b) {
    if (a.probability != b.probability) return a.probability > b.probability;
    return a.entity < b.entity;
  });
  SelectionResult out;
  out.ranked = std::move(ranked);
  for (std::size_t i = 0; i < out.ranked.size() && i < top_m; ++i) {
    out.selected.push_back(out.ranked[i].entity);
  }
  for (EntityId e : out.selected) {
    auto& facts = out.relations[e];
    const auto idx = subgraph.index_of(e);
    if (!idx) continue;
    for (const auto& edge : subgraph.edges) {
      if (edge.head == *idx || edge.tail == *idx) {
        facts.push_back({subgraph.nodes[edge.head].entity, edge.relation, subgraph.nodes[edge.tail].entity});
      }
    }
  }
  (void)graph;
  return out;
}

SelectionResult score_candidates(const PromptBundle& bundle, const ParameterStore& params,
                                 const SelectorConfig& cfg, const Subgraph& subgraph,
                                 const KnowledgeGraph& graph) {
  if (bundle.candidates.empty()) throw std::invalid_argument("score_candidates: no candidates");
  std::vector<std::size_t> rows;
  for (const auto& [e, _] : bundle.candidates) rows.push_back(bundle.row_of.at(e));
  Tape tape;
  tape.bind(params);
  Var logits = candidate_logits(tape.constant(bundle.soft_prompt), tape.constant(bundle.question_embedding),
                                rows, cfg);
  const Matrix& probs = row_softmax(logits).value();
  std::vector<RankedEntity> ranked;
  for (std::size_t k = 0; k < bundle.candidates.size(); ++k) {
    ranked.push_back({bundle.candidates[k].first, probs(0, k)});
  }
  return make_selection(std::move(ranked), cfg.top_m, subgraph, graph);
}

nlohmann::json selection_request(const PromptBundle& bundle) {
  nlohmann::json candidates = nlohmann::json::array();
  nlohmann::json prompt = nlohmann::json::array();
  for (const auto& [e, label] : bundle.candidates) {
    candidates.push_back({{"id", e}, {"label", label}});
    const auto row = bundle.soft_prompt.row(bundle.row_of.at(e));
    prompt.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return {{"instruction", bundle.instruction},
          {"question", bundle.question},
          {"candidates", candidates},
          {"soft_prompt", prompt}};
}

std::vector<EntityId> MockExternalSelector::select(const PromptBundle& bundle) {
  last_request_ = selection_request(bundle);
  std::vector<EntityId> out;
  for (std::size_t i = 0; i < bundle.candidates.size() && i < count_; ++i) {
    out.push_back(bundle.candidates[i].first);
  }
  return out;
}

SelectionLabel build_labels(const KnowledgeGraph& graph, EntityId topic,
                            const std::vector<EntityId>& answers) {
  if (!graph.contains(topic)) throw NotFoundError("unknown topic entity");
  if (answers.empty()) throw UnlabelableError("no answers given");
  const auto from_topic = bfs_distances(graph, topic);
  std::set<EntityId> relevant;
  for (EntityId a : answers) {
    if (!graph.contains(a)) throw NotFoundError("unknown answer entity");
    const int length = from_topic[a];
    if (length <= 0) continue;  // unreachable, or the topic itself
    const auto from_answer = bfs_distances(graph, a);
    for (EntityId v = 0; v < graph.num_entities(); ++v) {
      if (v == topic || from_topic[v] < 0 || from_answer[v] < 0) continue;
      if (from_topic[v] + from_answer[v] == length) relevant.insert(v);
    }
  }
  if (relevant.empty()) {
    throw UnlabelableError("no answer reachable from topic '" + graph.entity_label(topic) + "'");
  }
  return {{relevant.begin(), relevant.end()}};
}

std::string verbalize(const SelectionResult& result, const Subgraph& subgraph, const KnowledgeGraph& graph) {
  (void)subgraph;
  std::ostringstream os;
  for (EntityId e : result.selected) {
    const auto it = result.relations.find(e);
    if (it == result.relations.end() || it->second.empty()) {
      os << graph.entity_label(e) << " (no incident relations retrieved)\n";
      continue;
    }
    os << "Entity: " << graph.entity_label(e) << '\n';
    for (const auto& t : it->second) {
      os << '(' << graph.entity_label(t.head) << ", " << graph.relation_label(t.relation) << ", "
         << graph.entity_label(t.tail) << ")\n";
    }
  }
  return os.str();
}

std::vector<QaRecord> read_dataset(std::istream& in) {
  std::vector<QaRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const auto doc = nlohmann::json::parse(line);
      QaRecord r;
      r.question = doc.at("question").get<std::string>();
      r.topic = doc.at("topic_entity").get<std::string>();
      r.answers = doc.at("answers").get<std::vector<std::string>>();
      r.id = doc.value("id", "q" + std::to_string(line_no));
      r.depth = doc.value("depth", 0);
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, std::string("bad dataset record: ") + e.what());
    }
  }
  return out;
}

std::vector<QaRecord> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  return read_dataset(in);
}

void write_dataset(std::ostream& out, const std::vector<QaRecord>& records) {
  for (const auto& r : records) {
    nlohmann::json doc{{"id", r.id}, {"question", r.question}, {"topic_entity", r.topic}, {"answers", r.answers}};
    if (r.depth > 0) doc["depth"] = r.depth;
    out << doc.dump() << '\n';
  }
}

TrainingConfig parse_training_config(std::istream& in) {
  TrainingConfig cfg;
  auto& p = cfg.pipeline;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(line_no, "expected key = value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    try {
      if (key == "lr") cfg.lr = std::stod(value);
      else if (key == "optimizer") {
        if (value == "sgd") cfg.optimizer = OptimizerKind::sgd;
        else if (value == "adam") cfg.optimizer = OptimizerKind::adam;
        else throw ConfigError("optimizer must be 'sgd' or 'adam'");
      }
      else if (key == "validation") cfg.validation_fraction = std::stod(value);
      else if (key == "patience") cfg.patience = std::stoi(value);
      else if (key == "init") {
        if (value == "identity") p.encoder.init = WeightInit::identity;
        else if (value == "glorot") p.encoder.init = WeightInit::glorot;
        else throw ConfigError("init must be 'identity' or 'glorot'");
      }
      else if (key == "diagonal_gain") p.selector.diagonal_gain = std::stod(value);
      else if (key == "beta1") cfg.adam.beta1 = std::stod(value);
      else if (key == "beta2") cfg.adam.beta2 = std::stod(value);
      else if (key == "eps") cfg.adam.eps = std::stod(value);
      else if (key == "epochs") cfg.epochs = std::stoi(value);
      else if (key == "seed") cfg.seed = std::stoull(value);
      else if (key == "holdout") cfg.holdout_fraction = std::stod(value);
      else if (key == "checkpoint_dir") cfg.checkpoint_dir = value;
      else if (key == "freeze_head") cfg.freeze_head = parse_bool(value);
      else if (key == "hops") { p.extraction.hops = std::stoi(value); p.encoder.layers = p.extraction.hops; }
      else if (key == "k1") p.extraction.k1 = std::stoul(value);
      else if (key == "k2") p.extraction.k2 = std::stoul(value);
      else if (key == "direction") {
        if (value == "both") p.extraction.direction = TraversalDirection::both;
        else if (value == "out") p.extraction.direction = TraversalDirection::out;
        else throw ConfigError("direction must be 'both' or 'out'");
      }
      else if (key == "d_in") p.encoder.d_in = std::stoul(value);
      else if (key == "d_hidden") p.encoder.d_hidden = std::stoul(value);
      else if (key == "d_ffn") p.encoder.d_ffn = std::stoul(value);
      else if (key == "d_prompt") p.encoder.d_prompt = std::stoul(value);
      else if (key == "activation") p.encoder.activation = parse_activation(value);
      else if (key == "self_loops") p.encoder.self_loops = parse_bool(value);
      else if (key == "shared_projection") p.encoder.shared_projection = parse_bool(value);
      else if (key == "score") {
        if (value == "scaled_dot") p.encoder.score = AttentionScore::scaled_dot;
        else if (value == "additive") p.encoder.score = AttentionScore::additive;
        else throw ConfigError("score must be 'scaled_dot' or 'additive'");
      }
      else if (key == "top_m") p.selector.top_m = std::stoul(value);
      else if (key == "head") {
        if (value == "mlp") p.selector.head = HeadKind::mlp;
        else if (value == "linear") p.selector.head = HeadKind::linear;
        else if (value == "bilinear") p.selector.head = HeadKind::bilinear;
        else if (value == "diagonal") p.selector.head = HeadKind::diagonal;
        else throw ConfigError("head must be 'mlp', 'linear', 'bilinear' or 'diagonal'");
      }
      else if (key == "d_head") p.selector.d_head = std::stoul(value);
      else if (key == "include_root") p.selector.include_root = parse_bool(value);
      else throw ConfigError("unknown training config key '" + key + "'");
    } catch (const std::logic_error&) {
      throw ParseError(line_no, "bad value for '" + key + "': " + value);
    }
  }
  return cfg;
}

TrainingConfig load_training_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open training config " + path.string());
  return parse_training_config(in);
}

double TrainingReport::final_heldout_hit() const {
  for (const auto& e : epochs) {
    if (e.epoch == selected_epoch) return e.heldout_hit;
  }
  return epochs.empty() ? 0.0 : epochs.back().heldout_hit;
}

nlohmann::json TrainingReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& e : epochs) {
    rows.push_back({{"epoch", e.epoch},
                    {"mean_loss", e.mean_loss},
                    {"validation_hit", e.validation_hit},
                    {"validation_loss", e.validation_loss},
                    {"heldout_hit", e.heldout_hit}});
  }
  return {{"train_examples", train_examples},
          {"heldout_examples", heldout_examples},
          {"validation_examples", validation_examples},
          {"selected_epoch", selected_epoch},
          {"final_heldout_hit", final_heldout_hit()},
          {"unlabelable", unlabelable},
          {"label_outside_subgraph", label_outside_subgraph},
          {"initial_loss", initial_loss},
          {"seconds", seconds},
          {"epochs", rows}};
}

std::vector<PreparedExample> prepare_examples(const std::vector<QaRecord>& records,
                                              const KnowledgeGraph& graph,
                                              const EmbeddingProvider& provider,
                                              const PipelineConfig& cfg, TrainingReport& report) {
  std::vector<PreparedExample> out;
  for (const auto& r : records) {
    const auto topic = graph.resolve_entity(r.topic);
    std::vector<EntityId> answers;
    for (const auto& a : r.answers) {
      if (auto id = graph.resolve_entity(a)) answers.push_back(*id);
    }
    if (!topic || answers.empty()) {
      ++report.unlabelable;
      continue;
    }
    SelectionLabel label;
    try {
      label = build_labels(graph, *topic, answers);
    } catch (const UnlabelableError&) {
      ++report.unlabelable;
      continue;
    }
    const Subgraph sg = extract(graph, provider, r.question, *topic, cfg.extraction);
    PreparedExample ex;
    ex.id = r.id;
    ex.rows = candidate_rows(sg, cfg.selector);
    for (std::size_t k = 0; k < ex.rows.size(); ++k) {
      const EntityId e = sg.nodes[ex.rows[k]].entity;
      if (std::binary_search(label.relevant.begin(), label.relevant.end(), e)) ex.target.push_back(k);
    }
    if (ex.target.empty()) {
      ++report.label_outside_subgraph;
      continue;
    }
    ex.inputs = prepare_inputs(sg, r.question, graph, provider, cfg.encoder);
    out.push_back(std::move(ex));
  }
  return out;
}

Var selection_loss(Tape& tape, const PreparedExample& example, const PipelineConfig& cfg) {
  const EncoderTrace trace = encode(tape, example.inputs, cfg.encoder);
  Var logits = candidate_logits(trace.soft_prompt, tape.constant(example.inputs.question), example.rows,
                                cfg.selector);
  Var picked = gather_cols(log_softmax_rows(logits), example.target);
  return scale(reduce_sum(picked), -1.0 / static_cast<double>(example.target.size()));
}

bool top1_hit(const PreparedExample& example, const ParameterStore& params, const PipelineConfig& cfg) {
  Tape tape;
  tape.bind(params);
  const EncoderTrace trace = encode(tape, example.inputs, cfg.encoder);
  const Matrix& logits =
      candidate_logits(trace.soft_prompt, tape.constant(example.inputs.question), example.rows, cfg.selector)
          .value();
  std::size_t best = 0;
  for (std::size_t k = 1; k < logits.cols(); ++k) {
    if (logits(0, k) > logits(0, best)) best = k;
  }
  return std::find(example.target.begin(), example.target.end(), best) != example.target.end();
}

std::pair<std::vector<QaRecord>, std::vector<QaRecord>> split_holdout(const std::vector<QaRecord>& dataset,
                                                                      double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ValidationError("holdout fraction must be in [0, 1)");
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  SeededRng rng(seed);
  seeded_shuffle(order, rng);
  const auto heldout_count = static_cast<std::size_t>(fraction * static_cast<double>(dataset.size()));
  std::pair<std::vector<QaRecord>, std::vector<QaRecord>> out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < order.size() - heldout_count ? out.first : out.second).push_back(dataset[order[i]]);
  }
  return out;
}

namespace {

struct SetScore {
  double hit = 0.0;
  double loss = 0.0;
};

SetScore score_set(const std::vector<PreparedExample>& set, const ParameterStore& params, const PipelineConfig& cfg) {
  SetScore out;
  if (set.empty()) return out;
  std::size_t hits = 0;
  for (const auto& ex : set) {
    hits += top1_hit(ex, params, cfg) ? 1 : 0;
    Tape tape;
    tape.bind(params);
    out.loss += selection_loss(tape, ex, cfg).value()(0, 0);
  }
  out.hit = static_cast<double>(hits) / static_cast<double>(set.size());
  out.loss /= static_cast<double>(set.size());
  return out;
}

}  // namespace

TrainingReport train(const std::vector<QaRecord>& dataset, const KnowledgeGraph& graph,
                     const EmbeddingProvider& provider, ParameterStore& params, const TrainingConfig& cfg) {
  if (dataset.empty()) throw std::invalid_argument("training dataset is empty");
  if (!(cfg.lr > 0.0)) throw ConfigError("learning rate must be positive");
  const auto start = std::chrono::steady_clock::now();
  TrainingReport report;

  // Split by record before preparation so held-out questions never touch training
  // or epoch selection.
  const auto [fit_records, heldout_records] = split_holdout(dataset, cfg.holdout_fraction, cfg.seed);
  const auto [train_records, validation_records] = split_holdout(fit_records, cfg.validation_fraction, cfg.seed + 1);

  const auto train_set = prepare_examples(train_records, graph, provider, cfg.pipeline, report);
  const auto validation_set = prepare_examples(validation_records, graph, provider, cfg.pipeline, report);
  const auto heldout_set = prepare_examples(heldout_records, graph, provider, cfg.pipeline, report);
  report.train_examples = train_set.size();
  report.validation_examples = validation_set.size();
  report.heldout_examples = heldout_set.size();
  if (train_set.empty()) {
    throw UnlabelableError("no trainable examples: " + std::to_string(report.unlabelable) +
                           " unlabelable, " + std::to_string(report.label_outside_subgraph) +
                           " with labels outside the extracted subgraph");
  }
  if (cfg.freeze_head) params.freeze_prefix("head.");
  if (!cfg.checkpoint_dir.empty()) std::filesystem::create_directories(cfg.checkpoint_dir);

  {
    double total = 0.0;
    for (const auto& ex : train_set) {
      Tape tape;
      tape.bind(static_cast<const ParameterStore&>(params));
      total += selection_loss(tape, ex, cfg.pipeline).value()(0, 0);
    }
    report.initial_loss = total / static_cast<double>(train_set.size());
  }

  AdamConfig adam = cfg.adam;
  adam.lr = cfg.lr;
  std::optional<ParameterStore> best;
  SetScore best_score;
  int since_best = 0;

  SeededRng order_rng(cfg.seed ^ 0x5bd1e995ULL);
  std::vector<std::size_t> visit(train_set.size());
  for (std::size_t i = 0; i < visit.size(); ++i) visit[i] = i;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    seeded_shuffle(visit, order_rng);
    double total = 0.0;
    for (std::size_t i : visit) {
      params.zero_grad();
      Tape tape;
      tape.bind(params);
      Var loss = selection_loss(tape, train_set[i], cfg.pipeline);
      total += loss.value()(0, 0);
      tape.backward(loss);
      if (cfg.optimizer == OptimizerKind::sgd) sgd_step(params, cfg.lr);
      else adam_step(params, adam);
    }
    params.zero_grad();
    EpochStats stats;
    stats.epoch = epoch;
    stats.mean_loss = total / static_cast<double>(train_set.size());
    const SetScore val = score_set(validation_set, params, cfg.pipeline);
    stats.validation_hit = val.hit;
    stats.validation_loss = val.loss;
    stats.heldout_hit = score_set(heldout_set, params, cfg.pipeline).hit;
    report.epochs.push_back(stats);
    spdlog::info("epoch {}: loss {:.4f}, validation top-1 {:.3f}, held-out top-1 {:.3f}", epoch, stats.mean_loss,
                 stats.validation_hit, stats.heldout_hit);
    if (!cfg.checkpoint_dir.empty()) {
      params.save(cfg.checkpoint_dir / ("epoch_" + std::to_string(epoch) + ".json"));
    }

    // Without a validation split every epoch is an improvement, so the last one wins.
    const bool better = !best || validation_set.empty() || val.hit > best_score.hit;
    if (better) {
      best = params;
      best_score = val;
      report.selected_epoch = epoch;
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      spdlog::info("no validation gain for {} epochs; stopping", cfg.patience);
      break;
    }
  }
  if (best) params = std::move(*best);
  spdlog::info("returning epoch {} (held-out top-1 {:.3f})", report.selected_epoch, report.final_heldout_hit());
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace grasp
