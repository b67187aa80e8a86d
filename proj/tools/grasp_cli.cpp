// grasp: command-line front end for graph ingestion, training, reasoning and benchmarks.
#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "grasp/bench.hpp"
#include "grasp/embedding.hpp"
#include "grasp/encoder.hpp"
#include "grasp/kg.hpp"
#include "grasp/orchestrator.hpp"
#include "grasp/selector.hpp"
#include "grasp/subgraph.hpp"

using namespace grasp;

namespace {

struct Common {
  std::uint64_t seed = 7;
  std::string config;
  int hops = 0;
  std::string embedder = "hash";
  std::size_t embed_dim = 256;
  std::string log_level = "warn";
  std::size_t workers = 1;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--seed", c.seed, "Seed for every random choice")->capture_default_str();
  app->add_option("--config", c.config, "key = value pipeline/training config file");
  app->add_option("--hops", c.hops, "Extraction hops and encoder layers (overrides config)");
  app->add_option("--embedder", c.embedder, "hash | table:<file> | http (GRASP_EMBED_* env)")->capture_default_str();
  app->add_option("--embed-dim", c.embed_dim, "Hash embedder dimension")->capture_default_str();
  app->add_option("--log-level", c.log_level, "trace|debug|info|warn|error")->capture_default_str();
}

TrainingConfig training_config(const Common& c, const EmbeddingProvider& provider) {
  TrainingConfig cfg = c.config.empty() ? TrainingConfig{} : load_training_config(c.config);
  if (c.hops > 0) cfg.pipeline = with_hops(cfg.pipeline, c.hops);
  cfg.pipeline = fit_to_dimension(cfg.pipeline, provider.dimension());
  cfg.seed = c.seed;
  return cfg;
}

std::shared_ptr<const EmbeddingProvider> make_provider(const Common& c) {
  spdlog::set_level(spdlog::level::from_str(c.log_level));
  if (c.embedder == "hash") return make_default_provider(c.embed_dim);
  if (c.embedder.starts_with("table:")) {
    return std::make_shared<CachingEmbedder>(
        std::make_shared<TableEmbedder>(TableEmbedder::from_file(c.embedder.substr(6))));
  }
  if (c.embedder == "http") {
    return std::make_shared<CachingEmbedder>(std::make_shared<HttpEmbedder>(HttpEmbedderConfig::from_env()));
  }
  throw CLI::ValidationError("--embedder", "unknown embedder '" + c.embedder + "'");
}

std::unique_ptr<AnswerBackend> make_backend(const std::string& script) {
  if (script.empty()) return std::make_unique<HttpChatBackend>(HttpChatConfig::from_env());
  return std::make_unique<ScriptedBackend>(ScriptedBackend::from_file(script));
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream f(path);
  f << text;
  if (!f) throw std::runtime_error("cannot write " + path);
}

std::vector<double> parse_ratios(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
  return out;
}

std::optional<ParameterStore> load_params(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return ParameterStore::load(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph soft-prompting knowledge-graph question answering"};
  app.require_subcommand(1);
  int exit_code = 0;

  // ingest
  Common ingest_c;
  std::string ingest_graph, ingest_out;
  auto* ingest_cmd = app.add_subcommand("ingest", "Parse a triple file and print statistics");
  add_common(ingest_cmd, ingest_c);
  ingest_cmd->add_option("graph", ingest_graph, "Tab-separated triple file")->required();
  ingest_cmd->add_option("--out", ingest_out, "Write the normalized triple file here");
  ingest_cmd->callback([&] {
    spdlog::set_level(spdlog::level::from_str(ingest_c.log_level));
    const auto g = ingest(ingest_graph);
    nlohmann::json stats{{"entities", g.num_entities()}, {"relations", g.num_relations()}, {"triples", g.triples().size()}};
    std::cout << stats.dump(2) << '\n';
    if (!ingest_out.empty()) {
      std::ofstream f(ingest_out);
      g.write_tsv(f);
    }
  });

  // extract
  Common extract_c;
  std::string extract_graph, extract_topic, extract_question, extract_params, extract_out;
  bool want_attention = false;
  auto* extract_cmd = app.add_subcommand("extract", "Extract a question-relevant subgraph around a topic entity");
  add_common(extract_cmd, extract_c);
  extract_cmd->add_option("--graph", extract_graph)->required();
  extract_cmd->add_option("--topic", extract_topic)->required();
  extract_cmd->add_option("--question", extract_question)->required();
  extract_cmd->add_option("--params", extract_params, "Trained parameters (needed for --dump-attention)");
  extract_cmd->add_flag("--dump-attention", want_attention, "Include per-layer attention matrices");
  extract_cmd->add_option("--out", extract_out, "Output JSON file (default stdout)");
  extract_cmd->callback([&] {
    const auto provider = make_provider(extract_c);
    const auto cfg = training_config(extract_c, *provider);
    const auto g = ingest(extract_graph);
    const auto sg = extract(g, *provider, extract_question, g.require_entity(extract_topic), cfg.pipeline.extraction);
    auto doc = subgraph_to_json(g, sg);
    if (want_attention) {
      ParameterStore params;
      if (auto loaded = load_params(extract_params)) params = std::move(*loaded);
      else init_pipeline_params(params, cfg.pipeline, extract_c.seed);
      const auto inputs = prepare_inputs(sg, extract_question, g, *provider, cfg.pipeline.encoder);
      Tape tape;
      tape.bind(static_cast<const ParameterStore&>(params));
      doc["attention"] = dump_attention(encode(tape, inputs, cfg.pipeline.encoder), sg, g);
    }
    write_text(extract_out, doc.dump(2) + "\n");
  });

  // train
  Common train_c;
  std::string train_graph, train_dataset, train_out, train_report;
  int train_epochs = 0;
  auto* train_cmd = app.add_subcommand("train", "Train the encoder and selection head");
  add_common(train_cmd, train_c);
  train_cmd->add_option("--graph", train_graph)->required();
  train_cmd->add_option("--dataset", train_dataset, "JSON-lines QA records")->required();
  train_cmd->add_option("--out", train_out, "Parameter file to write")->required();
  train_cmd->add_option("--epochs", train_epochs, "Override the configured epoch count");
  train_cmd->add_option("--report", train_report, "Training report JSON");
  train_cmd->callback([&] {
    const auto provider = make_provider(train_c);
    auto cfg = training_config(train_c, *provider);
    if (train_epochs > 0) cfg.epochs = train_epochs;
    const auto g = ingest(train_graph);
    ParameterStore params;
    init_pipeline_params(params, cfg.pipeline, cfg.seed);
    const auto report = train(read_dataset(std::filesystem::path(train_dataset)), g, *provider, params, cfg);
    params.save(train_out);
    write_text(train_report, report.to_json().dump(2) + "\n");
  });

  // select
  Common select_c;
  std::string select_graph, select_topic, select_question, select_params;
  bool select_untrained = false;
  auto* select_cmd = app.add_subcommand("select", "Rank subgraph entities for a question and verbalize the top ones");
  add_common(select_cmd, select_c);
  select_cmd->add_option("--graph", select_graph)->required();
  select_cmd->add_option("--topic", select_topic)->required();
  select_cmd->add_option("--question", select_question)->required();
  select_cmd->add_option("--params", select_params);
  select_cmd->add_flag("--untrained", select_untrained, "Use freshly initialized parameters");
  select_cmd->callback([&] {
    const auto provider = make_provider(select_c);
    const auto cfg = training_config(select_c, *provider);
    const auto g = ingest(select_graph);
    ParameterStore params;
    if (auto loaded = load_params(select_params)) params = std::move(*loaded);
    else if (select_untrained) init_pipeline_params(params, cfg.pipeline, select_c.seed);
    else throw CLI::ValidationError("--params", "required unless --untrained is given");
    const auto& p = cfg.pipeline;
    const auto sg = extract(g, *provider, select_question, g.require_entity(select_topic), p.extraction);
    const auto inputs = prepare_inputs(sg, select_question, g, *provider, p.encoder);
    Tape tape;
    tape.bind(static_cast<const ParameterStore&>(params));
    auto soft = encode(tape, inputs, p.encoder).soft_prompt.value();
    const auto bundle = assemble_prompt(sg, g, select_question, std::move(soft), inputs.question, p.selector);
    const auto result = score_candidates(bundle, params, p.selector, sg, g);
    nlohmann::json ranked = nlohmann::json::array();
    for (const auto& r : result.ranked) ranked.push_back({{"entity", g.entity_label(r.entity)}, {"probability", r.probability}});
    nlohmann::json doc{{"ranked", ranked}, {"evidence", verbalize(result, sg, g)}};
    std::cout << doc.dump(2) << '\n';
  });

  // reason
  Common reason_c;
  std::string reason_graph, reason_topic, reason_question, reason_params, reason_script, reason_trace;
  bool reason_untrained = false;
  int reason_max_iterations = 4;
  auto* reason_cmd = app.add_subcommand("reason", "Run the select/answer loop for one question");
  add_common(reason_cmd, reason_c);
  reason_cmd->add_option("--graph", reason_graph)->required();
  reason_cmd->add_option("--topic", reason_topic)->required();
  reason_cmd->add_option("--question", reason_question)->required();
  reason_cmd->add_option("--params", reason_params);
  reason_cmd->add_flag("--untrained", reason_untrained);
  reason_cmd->add_option("--script", reason_script, "Scripted backend file (default: chat endpoint from GRASP_CHAT_*)");
  reason_cmd->add_option("--trace", reason_trace, "Trace JSON-lines output");
  reason_cmd->add_option("--max-iterations", reason_max_iterations)->capture_default_str();
  reason_cmd->callback([&] {
    const auto provider = make_provider(reason_c);
    const auto cfg = training_config(reason_c, *provider);
    const auto g = ingest(reason_graph);
    ParameterStore params;
    if (auto loaded = load_params(reason_params)) params = std::move(*loaded);
    else if (reason_untrained) init_pipeline_params(params, cfg.pipeline, reason_c.seed);
    else throw CLI::ValidationError("--params", "required unless --untrained is given");
    ReasonConfig rc;
    rc.pipeline = cfg.pipeline;
    rc.max_iterations = reason_max_iterations;
    const auto backend = make_backend(reason_script);
    const auto result = reason(reason_question, g.require_entity(reason_topic), g, *provider, params, rc, *backend);
    std::ostringstream trace;
    result.trace.write_jsonl(trace, g);
    write_text(reason_trace, trace.str());
    nlohmann::json doc{{"answer", result.answer},
                       {"terminal", to_string(result.trace.terminal)},
                       {"select_calls", result.trace.select_calls},
                       {"answer_calls", result.trace.answer_calls}};
    if (!result.trace.error.empty()) doc["error"] = result.trace.error;
    std::cerr << doc.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
  });

  // gen
  Common gen_c;
  SyntheticSpec gen_spec;
  std::string gen_out;
  std::size_t q1 = 0, q2 = 300, q3 = 0;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic benchmark with planted answer paths");
  add_common(gen_cmd, gen_c);
  gen_cmd->add_option("--out", gen_out, "Output directory")->required();
  gen_cmd->add_option("--entities", gen_spec.num_entities)->capture_default_str();
  gen_cmd->add_option("--relations", gen_spec.num_relations)->capture_default_str();
  gen_cmd->add_option("--one-hop", q1)->capture_default_str();
  gen_cmd->add_option("--two-hop", q2)->capture_default_str();
  gen_cmd->add_option("--three-hop", q3)->capture_default_str();
  gen_cmd->add_option("--density", gen_spec.distractor_density)->capture_default_str();
  gen_cmd->add_option("--types", gen_spec.type_vocabulary)->capture_default_str();
  gen_cmd->add_option("--name-pool", gen_spec.name_pool, "Distinct name words shared across entity labels")->capture_default_str();
  gen_cmd->add_option("--missing-direct", gen_spec.missing_direct_fraction)->capture_default_str();
  gen_cmd->callback([&] {
    spdlog::set_level(spdlog::level::from_str(gen_c.log_level));
    gen_spec.questions_per_depth = {q1, q2, q3};
    gen_spec.seed = gen_c.seed;
    const auto bench = generate(gen_spec);
    bench.write(gen_out);
    std::cout << nlohmann::json{{"entities", bench.graph.num_entities()},
                                {"triples", bench.graph.triples().size()},
                                {"questions", bench.dataset.size()}}.dump()
              << '\n';
  });

  // eval
  Common eval_c;
  std::string eval_graph, eval_dataset, eval_params, eval_script, eval_out, eval_traces;
  bool eval_untrained = false, eval_oracle = false, eval_ids = false, eval_strict = false;
  double eval_min_hits = 0.0;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate Hits@1 over a dataset");
  add_common(eval_cmd, eval_c);
  eval_cmd->add_option("--graph", eval_graph)->required();
  eval_cmd->add_option("--dataset", eval_dataset)->required();
  eval_cmd->add_option("--params", eval_params);
  eval_cmd->add_flag("--untrained", eval_untrained);
  eval_cmd->add_flag("--oracle-selection", eval_oracle, "Select shortest-path labels instead of the learned head");
  eval_cmd->add_flag("--match-ids", eval_ids, "Compare answers by entity instead of normalized text");
  eval_cmd->add_option("--script", eval_script);
  eval_cmd->add_option("--workers", eval_c.workers)->capture_default_str();
  eval_cmd->add_option("--out", eval_out, "Metrics JSON");
  eval_cmd->add_option("--traces", eval_traces, "Write every trace as JSON lines");
  eval_cmd->add_option("--min-hits", eval_min_hits, "Acceptance band for --strict");
  eval_cmd->add_flag("--strict", eval_strict, "Exit nonzero when Hits@1 is below --min-hits");
  eval_cmd->callback([&] {
    const auto provider = make_provider(eval_c);
    const auto cfg = training_config(eval_c, *provider);
    const auto g = ingest(eval_graph);
    const auto params = load_params(eval_params);
    EvalOptions opt;
    opt.reason.pipeline = cfg.pipeline;
    opt.workers = eval_c.workers;
    opt.allow_untrained = eval_untrained;
    opt.oracle_selection = eval_oracle;
    opt.match_entity_ids = eval_ids;
    opt.init_seed = eval_c.seed;
    opt.keep_traces = !eval_traces.empty();
    const auto backend = make_backend(eval_script);
    const auto m = evaluate(read_dataset(std::filesystem::path(eval_dataset)), g, *provider,
                            params ? &*params : nullptr, opt, *backend);
    write_text(eval_out, m.to_json(true).dump(2, ' ', false, nlohmann::json::error_handler_t::replace) + "\n");
    if (!eval_traces.empty()) {
      std::ofstream f(eval_traces);
      for (const auto& t : m.traces) t.write_jsonl(f, g);
    }
    std::cerr << "hits@1 " << m.hits_at_1 << '\n';
    if (eval_strict && m.hits_at_1 < eval_min_hits) exit_code = 2;
  });

  // sweep
  Common sweep_c;
  std::string sweep_graph, sweep_dataset, sweep_params, sweep_script, sweep_csv, sweep_json;
  std::string sweep_ratios = "0,0.05,0.1,0.15,0.2,0.25";
  double sweep_band = 0.02;
  bool sweep_strict = false;
  auto* sweep_cmd = app.add_subcommand("sweep", "Hits@1 under seeded removal of topic-entity edges");
  add_common(sweep_cmd, sweep_c);
  sweep_cmd->add_option("--graph", sweep_graph)->required();
  sweep_cmd->add_option("--dataset", sweep_dataset)->required();
  sweep_cmd->add_option("--params", sweep_params)->required();
  sweep_cmd->add_option("--script", sweep_script);
  sweep_cmd->add_option("--ratios", sweep_ratios)->capture_default_str();
  sweep_cmd->add_option("--workers", sweep_c.workers)->capture_default_str();
  sweep_cmd->add_option("--csv", sweep_csv, "Plot-ready CSV (default stdout)");
  sweep_cmd->add_option("--json", sweep_json);
  sweep_cmd->add_option("--band", sweep_band, "Allowed rise between consecutive points for --strict")->capture_default_str();
  sweep_cmd->add_flag("--strict", sweep_strict, "Exit nonzero unless the curve is non-increasing within --band");
  sweep_cmd->callback([&] {
    const auto provider = make_provider(sweep_c);
    const auto cfg = training_config(sweep_c, *provider);
    const auto g = ingest(sweep_graph);
    const auto params = ParameterStore::load(sweep_params);
    EvalOptions opt;
    opt.reason.pipeline = cfg.pipeline;
    opt.workers = sweep_c.workers;
    const auto backend = make_backend(sweep_script);
    const auto curve = sweep_incompleteness(read_dataset(std::filesystem::path(sweep_dataset)), g, *provider, &params,
                                            opt, *backend, parse_ratios(sweep_ratios), sweep_c.seed);
    write_text(sweep_csv, curve.to_csv());
    if (!sweep_json.empty()) {
      nlohmann::json pts = nlohmann::json::array();
      for (const auto& p : curve.points) pts.push_back({{"ratio", p.ratio}, {"removed_edges", p.removed_edges}, {"metrics", p.metrics.to_json()}});
      write_text(sweep_json, pts.dump(2) + "\n");
    }
    for (std::size_t i = 1; i < curve.points.size(); ++i) {
      if (sweep_strict && curve.points[i].metrics.hits_at_1 > curve.points[i - 1].metrics.hits_at_1 + sweep_band) exit_code = 2;
    }
  });

  // ablate
  Common ablate_c;
  std::string ablate_graph, ablate_dataset, ablate_script, ablate_csv, ablate_json, ablate_name = "synthetic";
  std::vector<std::string> ablate_params;
  bool ablate_strict = false;
  auto* ablate_cmd = app.add_subcommand("ablate", "Compare hop settings on one dataset");
  add_common(ablate_cmd, ablate_c);
  ablate_cmd->add_option("--graph", ablate_graph)->required();
  ablate_cmd->add_option("--dataset", ablate_dataset)->required();
  ablate_cmd->add_option("--params", ablate_params, "HOPS=FILE, once per hop setting")->required();
  ablate_cmd->add_option("--script", ablate_script);
  ablate_cmd->add_option("--name", ablate_name, "Dataset column name")->capture_default_str();
  ablate_cmd->add_option("--workers", ablate_c.workers)->capture_default_str();
  ablate_cmd->add_option("--csv", ablate_csv);
  ablate_cmd->add_option("--json", ablate_json);
  ablate_cmd->add_flag("--strict", ablate_strict, "Exit nonzero unless 2-hop Hits@1 >= 1-hop Hits@1");
  ablate_cmd->callback([&] {
    const auto provider = make_provider(ablate_c);
    const auto cfg = training_config(ablate_c, *provider);
    const auto g = ingest(ablate_graph);
    std::map<int, ParameterStore> per_hop;
    std::vector<int> hops;
    for (const auto& spec : ablate_params) {
      const auto eq = spec.find('=');
      if (eq == std::string::npos) throw CLI::ValidationError("--params", "expected HOPS=FILE, got " + spec);
      const int h = std::stoi(spec.substr(0, eq));
      per_hop.emplace(h, ParameterStore::load(spec.substr(eq + 1)));
      hops.push_back(h);
    }
    EvalOptions opt;
    opt.reason.pipeline = cfg.pipeline;
    opt.workers = ablate_c.workers;
    const auto backend = make_backend(ablate_script);
    const auto table = hop_ablation(read_dataset(std::filesystem::path(ablate_dataset)), g, *provider, per_hop, hops,
                                    opt, *backend, ablate_name);
    write_text(ablate_csv, table.to_csv());
    if (!ablate_json.empty()) write_text(ablate_json, table.to_json().dump(2) + "\n");
    double h1 = -1, h2 = -1;
    for (const auto& r : table.rows) {
      if (r.hops == 1) h1 = r.metrics.hits_at_1;
      if (r.hops == 2) h2 = r.metrics.hits_at_1;
    }
    if (ablate_strict && h1 >= 0 && h2 >= 0 && h2 < h1) exit_code = 2;
  });

  // bench
  Common bench_c;
  std::string bench_out;
  bool bench_strict = false;
  std::uint64_t bench_spec_seed = 1;
  auto* bench_cmd = app.add_subcommand("bench", "Generate, train and evaluate the standard synthetic benchmark");
  add_common(bench_cmd, bench_c);
  bench_cmd->add_option("--out", bench_out, "Directory for the benchmark files, parameters and metrics");
  bench_cmd->add_option("--workers", bench_c.workers)->capture_default_str();
  bench_cmd->add_option("--bench-seed", bench_spec_seed, "Generator seed of the standard benchmark")->capture_default_str();
  bench_cmd->add_flag("--strict", bench_strict, "Exit nonzero on any band miss");
  bench_cmd->callback([&] {
    BenchConfig bc;
    const auto provider = make_provider(bench_c);
    bc.training = training_config(bench_c, *provider);
    bc.spec = SyntheticSpec::standard(bench_spec_seed);
    bc.workers = bench_c.workers;
    ParameterStore params;
    const auto result = run_bench(bc, *provider, &params);
    const std::string report = result.to_json().dump(2) + "\n";
    if (!bench_out.empty()) {
      generate(bc.spec).write(bench_out);
      params.save(std::filesystem::path(bench_out) / "params.json");
      write_text((std::filesystem::path(bench_out) / "metrics.json").string(), report);
    }
    std::cout << nlohmann::json{{"selection_top1", result.training.final_heldout_hit()},
                                {"hits_at_1", result.heldout.hits_at_1},
                                {"seconds", result.seconds},
                                {"passed", result.passed()}}.dump()
              << '\n';
    if (bench_strict && !result.passed()) exit_code = 2;
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return exit_code;
}
