#include <doctest.h>

#include <cmath>
#include <sstream>

#include "grasp/bench.hpp"
#include "grasp/selector.hpp"
#include "support.hpp"

using namespace grasp;

namespace {

std::vector<EntityId> ids(const KnowledgeGraph& g, std::initializer_list<const char*> labels) {
  std::vector<EntityId> out;
  for (const char* l : labels) out.push_back(g.require_entity(l));
  std::sort(out.begin(), out.end());
  return out;
}

// Root plus three candidates; root edges to each, one candidate-candidate edge.
struct FourNode {
  KnowledgeGraph g = ingest_text("root\tr1\tc1\nroot\tr2\tc2\nc3\tr1\troot\nc1\tr3\tc2\n");
  Subgraph sg = testing::whole_graph_subgraph(g, 1);
};

}  // namespace

TEST_CASE("labels for adjacent answers and a minimal chain") {
  const auto g = ingest_text("A\tr\tB\nB\ts\tC\n");
  CHECK(build_labels(g, g.require_entity("A"), {g.require_entity("B")}).relevant == ids(g, {"B"}));
  CHECK(build_labels(g, g.require_entity("A"), {g.require_entity("C")}).relevant == ids(g, {"B", "C"}));
  // Paths ignore storage direction.
  CHECK(build_labels(g, g.require_entity("C"), {g.require_entity("A")}).relevant == ids(g, {"A", "B"}));
}

TEST_CASE("unreachable answers are unlabelable") {
  const auto g = ingest_text("A\tr\tB\nC\tr\tD\n");
  CHECK_THROWS_AS(build_labels(g, g.require_entity("A"), {g.require_entity("D")}), UnlabelableError);
  CHECK_THROWS_AS(build_labels(g, g.require_entity("A"), {}), UnlabelableError);
  CHECK_THROWS_AS(build_labels(g, 99, {0}), NotFoundError);
}

TEST_CASE("labels on a random 100-node graph match the path enumerator") {
  const auto g = testing::random_graph(100, 180, 4, 5);
  SeededRng rng(5);
  std::size_t labeled = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto topic = static_cast<EntityId>(rng.below(100));
    std::vector<EntityId> answers{static_cast<EntityId>(rng.below(100))};
    if (trial % 3 == 0) answers.push_back(static_cast<EntityId>(rng.below(100)));
    const auto expected = testing::shortest_path_vertices(g, topic, answers);
    if (expected.empty()) {
      CHECK_THROWS_AS(build_labels(g, topic, answers), UnlabelableError);
      continue;
    }
    ++labeled;
    const auto got = build_labels(g, topic, answers).relevant;
    CHECK(std::set<EntityId>(got.begin(), got.end()) == expected);
  }
  CHECK(labeled > 50);
}

TEST_CASE("prompt bundle maps each candidate to its row in node order") {
  FourNode f;
  SeededRng rng(1);
  const SelectorConfig cfg;
  const auto bundle = assemble_prompt(f.sg, f.g, "q", testing::random_matrix(4, 3, rng), Matrix(1, 3), cfg);
  REQUIRE(bundle.candidates.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(bundle.candidates[k].first == f.sg.nodes[k + 1].entity);
    CHECK(bundle.row_of.at(bundle.candidates[k].first) == k + 1);
  }
  CHECK(bundle.instruction == kSelectionInstruction);
  SelectorConfig with_root;
  with_root.include_root = true;
  CHECK(assemble_prompt(f.sg, f.g, "q", Matrix(4, 3), Matrix(1, 3), with_root).candidates.size() == 4);
  CHECK_THROWS_AS(assemble_prompt(f.sg, f.g, "q", Matrix(3, 3), Matrix(1, 3), cfg), DimensionError);
}

TEST_CASE("identical soft-prompt rows get equal probabilities") {
  const auto g = ingest_text("root\tr\ta\nroot\tr\tb\n");
  const auto sg = testing::whole_graph_subgraph(g, 1);
  SelectorConfig cfg;
  EncoderConfig enc;
  enc.d_in = enc.d_prompt = 3;
  ParameterStore p;
  init_selector_params(p, enc, cfg, 1);
  const Matrix rows = Matrix::from_rows({{0.1, 0.2, 0.3}, {1, -1, 2}, {1, -1, 2}});
  const auto bundle = assemble_prompt(sg, g, "q", rows, Matrix::from_rows({{0.5, 0.5, 0.5}}), cfg);
  const auto result = score_candidates(bundle, p, cfg, sg, g);
  REQUIRE(result.ranked.size() == 2);
  CHECK(result.ranked[0].probability == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(result.ranked[1].probability == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(result.ranked[0].entity < result.ranked[1].entity);
}

TEST_CASE("hand-set diagonal head matches a straight-line softmax") {
  FourNode f;
  SelectorConfig cfg;
  cfg.include_root = true;
  EncoderConfig enc;
  enc.d_in = enc.d_prompt = 3;
  ParameterStore p;
  init_selector_params(p, enc, cfg, 1);
  p.slot("head.w").value = Matrix::from_rows({{2.0, -1.0, 0.5}});
  const Matrix rows = Matrix::from_rows({{1, 0, 0}, {0.2, 0.4, -1}, {3, 1, 1}, {-1, 2, 0.5}});
  const Matrix q = Matrix::from_rows({{0.3, -0.6, 0.9}});
  const auto bundle = assemble_prompt(f.sg, f.g, "q", rows, q, cfg);
  const auto result = score_candidates(bundle, p, cfg, f.sg, f.g);

  std::vector<double> logits;
  for (std::size_t i = 0; i < 4; ++i) logits.push_back(2.0 * rows(i, 0) * 0.3 - 1.0 * rows(i, 1) * -0.6 + 0.5 * rows(i, 2) * 0.9);
  double z = 0.0;
  for (double l : logits) z += std::exp(l);
  double total = 0.0;
  for (const auto& r : result.ranked) {
    const std::size_t row = bundle.row_of.at(r.entity);
    CHECK(std::abs(r.probability - std::exp(logits[row]) / z) < 1e-10);
    CHECK((r.probability > 0.0 && r.probability < 1.0));
    total += r.probability;
  }
  CHECK(std::abs(total - 1.0) < 1e-8);
  for (std::size_t k = 1; k < result.ranked.size(); ++k) {
    CHECK(result.ranked[k - 1].probability >= result.ranked[k].probability);
  }
  REQUIRE(result.selected.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) CHECK(result.selected[k] == result.ranked[k].entity);
}

TEST_CASE("single candidate gets probability one") {
  const auto g = ingest_text("root\tr\ta\n");
  const auto sg = testing::whole_graph_subgraph(g, 1);
  SelectorConfig cfg;
  EncoderConfig enc;
  enc.d_in = enc.d_prompt = 2;
  ParameterStore p;
  init_selector_params(p, enc, cfg, 1);
  const auto bundle = assemble_prompt(sg, g, "q", Matrix(2, 2, 0.3), Matrix(1, 2, 1.0), cfg);
  const auto result = score_candidates(bundle, p, cfg, sg, g);
  REQUIRE(result.ranked.size() == 1);
  CHECK(result.ranked[0].probability == 1.0);
}

TEST_CASE("linear head argmax is unchanged by positive input scaling") {
  FourNode f;
  SelectorConfig cfg;
  cfg.head = HeadKind::linear;
  EncoderConfig enc;
  enc.d_in = enc.d_prompt = 4;
  SeededRng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    ParameterStore p;
    init_selector_params(p, enc, cfg, trial);
    const Matrix rows = testing::random_matrix(4, 4, rng);
    const Matrix q = testing::random_matrix(1, 4, rng);
    Matrix rows2 = rows, q2 = q;
    for (double& x : rows2.data()) x *= 2.5;
    for (double& x : q2.data()) x *= 2.5;
    const auto a = score_candidates(assemble_prompt(f.sg, f.g, "q", rows, q, cfg), p, cfg, f.sg, f.g);
    const auto b = score_candidates(assemble_prompt(f.sg, f.g, "q", rows2, q2, cfg), p, cfg, f.sg, f.g);
    CHECK(a.ranked[0].entity == b.ranked[0].entity);
  }
}

TEST_CASE("selection relations and verbalization") {
  const auto g = ingest_text(
      "Knews\towned by\tSPP Media Group\n"
      "SPP Media Group\toperates in\tCyprus\n"
      "Loner\tr\tOther\n");
  Subgraph sg;
  sg.root = g.require_entity("Knews");
  sg.hops = 2;
  for (const char* l : {"Knews", "SPP Media Group", "Cyprus", "Loner"}) sg.nodes.push_back({g.require_entity(l), 1, 0.0});
  sg.edges = {{0, *g.relations().find("owned by"), 1}, {1, *g.relations().find("operates in"), 2}};
  const auto result = make_selection({{g.require_entity("Cyprus"), 0.6}, {g.require_entity("Loner"), 0.1},
                                      {g.require_entity("SPP Media Group"), 0.3}},
                                     2, sg, g);
  REQUIRE(result.selected.size() == 2);
  CHECK(result.selected[0] == g.require_entity("Cyprus"));
  const std::string text = verbalize(result, sg, g);
  CHECK(text.find("(SPP Media Group, operates in, Cyprus)") != std::string::npos);
  const std::string golden =
      "Entity: Cyprus\n"
      "(SPP Media Group, operates in, Cyprus)\n"
      "Entity: SPP Media Group\n"
      "(Knews, owned by, SPP Media Group)\n"
      "(SPP Media Group, operates in, Cyprus)\n";
  CHECK(text == golden);
  CHECK(verbalize(result, sg, g) == text);

  const auto lonely = make_selection({{g.require_entity("Loner"), 1.0}}, 1, sg, g);
  CHECK(verbalize(lonely, sg, g) == "Loner (no incident relations retrieved)\n");
}

TEST_CASE("external selector mock sees the serialized soft prompt") {
  FourNode f;
  const SelectorConfig cfg;
  const auto bundle = assemble_prompt(f.sg, f.g, "which c", Matrix(4, 2, 0.25), Matrix(1, 2), cfg);
  MockExternalSelector mock(2);
  const auto picked = mock.select(bundle);
  CHECK(picked.size() == 2);
  CHECK(picked[0] == bundle.candidates[0].first);
  const auto& req = mock.last_request();
  CHECK(req.at("soft_prompt").size() == 3);
  CHECK(req.at("question") == "which c");
  CHECK(req == selection_request(bundle));
}

TEST_CASE("training config parsing") {
  std::istringstream in(
      "# comment\n"
      "lr = 0.01\n"
      "epochs = 7\n"
      "optimizer = adam\n"
      "hops = 1\n"
      "head = linear\n"
      "patience = 0\n"
      "init = glorot\n");
  const auto cfg = parse_training_config(in);
  CHECK(cfg.lr == 0.01);
  CHECK(cfg.epochs == 7);
  CHECK(cfg.optimizer == OptimizerKind::adam);
  CHECK(cfg.pipeline.extraction.hops == 1);
  CHECK(cfg.pipeline.selector.head == HeadKind::linear);
  CHECK(cfg.patience == 0);
  CHECK(cfg.pipeline.encoder.init == WeightInit::glorot);
  std::istringstream bad("nonsense = 3\n");
  CHECK_THROWS_AS(parse_training_config(bad), ConfigError);
}

TEST_CASE("fit_to_dimension follows the provider width") {
  const auto cfg = fit_to_dimension(PipelineConfig{}, 64);
  CHECK(cfg.encoder.d_in == 64);
  CHECK(cfg.encoder.d_prompt == 64);
  PipelineConfig linear;
  linear.selector.head = HeadKind::linear;
  CHECK(fit_to_dimension(linear, 64).encoder.d_prompt == linear.encoder.d_prompt);
  EncoderConfig enc;
  enc.d_prompt = 10;
  ParameterStore p;
  CHECK_THROWS_AS(init_selector_params(p, enc, SelectorConfig{}, 1), ConfigError);
}

TEST_CASE("dataset round trip and holdout split") {
  std::vector<QaRecord> records;
  for (int i = 0; i < 10; ++i) records.push_back({"q" + std::to_string(i), "question " + std::to_string(i), "t", {"a", "b"}, 2});
  std::ostringstream out;
  write_dataset(out, records);
  std::istringstream in(out.str());
  const auto back = read_dataset(in);
  REQUIRE(back.size() == 10);
  CHECK(back[3].answers == records[3].answers);
  CHECK(back[3].depth == 2);
  const auto [train, held] = split_holdout(records, 0.25, 4);
  CHECK(held.size() == 2);
  CHECK(train.size() == 8);
  CHECK(split_holdout(records, 0.25, 4).second[0].id == held[0].id);
  CHECK_THROWS_AS(split_holdout(records, 1.0, 4), ValidationError);
}

TEST_CASE("selection loss passes a gradient check through head, feed-forward and layers") {
  // ELU has a second-derivative jump at 0, so central differences lose an order near
  // it; a 1e-5 step keeps truncation well under the tolerance.
  HashEmbedder p(8);
  const auto cfg = testing::toy_pipeline(2);
  const auto g = testing::random_graph(6, 9, 3, 12);
  const auto ex = testing::toy_example(g, p, cfg, 12);
  ParameterStore params;
  init_pipeline_params(params, cfg, 12);
  const auto report = grad_check(
      [&](Tape& t, ParameterStore& s) {
        t.bind(s);
        return selection_loss(t, ex, cfg);
      },
      params, 1e-4, 1e-5);
  CHECK(report.passed);
  CHECK(report.max_relative_error.contains("head.w"));
  CHECK(report.max_relative_error.contains("gnn.0.att_w"));
}

TEST_CASE("uniform scores give a loss of ln(c)") {
  HashEmbedder p(8);
  auto cfg = testing::toy_pipeline(1);
  cfg.selector.diagonal_gain = 0.0;
  const auto g = testing::random_graph(7, 10, 3, 2);
  auto ex = testing::toy_example(g, p, cfg, 2);
  ex.target.resize(1);
  ParameterStore params;
  init_pipeline_params(params, cfg, 2);
  Tape tape;
  tape.bind(params);
  CHECK(selection_loss(tape, ex, cfg).value()(0, 0) == doctest::Approx(std::log(static_cast<double>(ex.rows.size()))));
}

TEST_CASE("a single example is memorized") {
  HashEmbedder p(8);
  auto cfg = testing::toy_pipeline(2);
  const auto g = testing::random_graph(8, 12, 3, 3);
  auto ex = testing::toy_example(g, p, cfg, 3);
  ex.target.resize(1);
  ParameterStore params;
  init_pipeline_params(params, cfg, 3);
  double loss = 1.0;
  for (int step = 0; step < 2000 && loss >= 0.01; ++step) {
    Tape tape;
    tape.bind(params);
    params.zero_grad();
    Var l = selection_loss(tape, ex, cfg);
    loss = l.value()(0, 0);
    tape.backward(l);
    adam_step(params, AdamConfig{0.05});
  }
  CHECK(loss < 0.01);
}

TEST_CASE("epoch loss falls over the first five epochs on the synthetic benchmark") {
  const auto bench = generate(SyntheticSpec::standard(1));
  const auto provider = make_default_provider();
  TrainingConfig cfg;
  cfg.pipeline = fit_to_dimension(cfg.pipeline, provider->dimension());
  cfg.epochs = 5;
  cfg.patience = 0;
  ParameterStore params;
  init_pipeline_params(params, cfg.pipeline, cfg.seed);
  const auto report = train(bench.dataset, bench.graph, *provider, params, cfg);
  REQUIRE(report.epochs.size() == 5);
  std::vector<double> losses{report.initial_loss};
  for (const auto& e : report.epochs) losses.push_back(e.mean_loss);
  int falling = 0;
  for (std::size_t i = 1; i < losses.size(); ++i) falling += losses[i] <= losses[i - 1] ? 1 : 0;
  CAPTURE(report.to_json().dump());
  CHECK(falling >= 4);
  CHECK(report.train_examples + report.validation_examples + report.heldout_examples + report.unlabelable +
            report.label_outside_subgraph ==
        bench.dataset.size());
}

TEST_CASE("training is seed-deterministic") {
  SyntheticSpec spec;
  spec.num_entities = 300;
  spec.questions_per_depth = {0, 40, 0};
  spec.seed = 3;
  const auto bench = generate(spec);
  const auto provider = make_default_provider(32);
  TrainingConfig cfg;
  cfg.pipeline = fit_to_dimension(cfg.pipeline, 32);
  cfg.epochs = 3;
  auto run = [&] {
    ParameterStore params;
    init_pipeline_params(params, cfg.pipeline, cfg.seed);
    const auto report = train(bench.dataset, bench.graph, *provider, params, cfg);
    return std::make_pair(report.final_heldout_hit(), params.to_json().dump());
  };
  CHECK(run() == run());
}
