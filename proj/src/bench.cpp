#include "grasp/bench.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_set>

namespace grasp {

namespace {

using Clock = std::chrono::steady_clock;

// Type phrases are "<modifier> <noun>" with every word used once, so two
// different phrases never share a token.
constexpr std::array<std::string_view, 80> kModifiers = {
    "amber",    "arctic",  "azure",    "basalt",   "bronze",   "cedar",    "cobalt",  "coral",
    "crimson",  "desert",  "ember",    "emerald",  "frost",    "garnet",   "golden",  "granite",
    "harbor",   "hazel",   "indigo",   "ivory",    "jade",     "jasper",   "juniper", "lunar",
    "maple",    "marble",  "meadow",   "midnight", "misty",    "northern", "obsidian", "olive",
    "onyx",     "opal",    "orchid",   "pacific",  "pearl",    "pine",     "polar",   "quartz",
    "radiant",  "raven",   "ruby",     "rustic",   "saffron",  "sapphire", "scarlet", "silver",
    "slate",    "solar",   "southern", "spruce",   "stellar",  "stone",    "storm",   "summit",
    "sunset",   "tidal",   "timber",   "topaz",    "tundra",   "twilight", "upland",  "velvet",
    "violet",   "willow",  "winter",   "zephyr",   "alpine",   "autumn",   "ancient", "bright",
    "broad",    "central", "coastal",  "eastern",  "grand",    "hidden",   "inner",   "western"};

constexpr std::array<std::string_view, 80> kNouns = {
    "abbey",      "academy",  "agency",   "alliance",    "archive",   "arena",     "atelier",   "bakery",
    "bank",       "bureau",   "cabinet",  "canal",       "cannery",   "carnival",  "cathedral", "chapel",
    "circle",     "citadel",  "clinic",   "club",        "colony",    "commune",   "council",   "court",
    "crossing",   "depot",    "district", "dockyard",    "embassy",   "estate",    "factory",   "fairground",
    "ferry",      "fortress", "forum",    "foundry",     "gallery",   "garrison",  "guild",     "hall",
    "hamlet",     "hangar",   "hospital", "hostel",      "institute", "kingdom",   "laboratory", "league",
    "lighthouse", "lodge",    "manor",    "mill",        "mine",      "mission",   "monastery", "observatory",
    "orchard",    "outpost",  "palace",   "pavilion",    "plantation", "plaza",    "port",      "priory",
    "quarry",     "ranch",    "refinery", "republic",    "reserve",   "ridge",     "sanctuary", "school",
    "shipyard",   "shrine",   "society",  "studio",      "synod",     "tavern",    "terminal",  "tower"};

constexpr std::array<std::string_view, 48> kRelationPhrases = {
    "located in",      "owned by",      "founded by",    "member of",     "capital of",    "born in",
    "produced by",     "directed by",   "written by",    "based in",      "part of",       "named after",
    "governed by",     "spoken in",     "flows into",    "built by",      "led by",        "home to",
    "sponsored by",    "allied with",   "adjacent to",   "managed by",    "published by",  "designed by",
    "studied at",      "played for",    "married to",    "succeeded by",  "inspired by",   "funded by",
    "hosted by",       "operated by",   "composed by",   "translated by", "painted by",    "discovered by",
    "headquartered in", "buried in",    "elected in",    "twinned with",  "derived from",  "supplied by",
    "guarded by",      "ruled by",      "trained at",    "awarded to",    "exported to",   "listed in"};

constexpr std::string_view kConsonants = "bdfgklmnprstvz";
constexpr std::string_view kVowels = "aeiou";

std::string pseudo_word(SeededRng& rng) {
  std::string w;
  const auto syllables = 3 + rng.below(2);
  for (std::uint64_t i = 0; i < syllables; ++i) {
    w.push_back(kConsonants[rng.below(kConsonants.size())]);
    w.push_back(kVowels[rng.below(kVowels.size())]);
  }
  w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
  return w;
}

std::string type_phrase(std::size_t i) {
  if (i < kModifiers.size()) return std::string(kModifiers[i]) + " " + std::string(kNouns[i]);
  return "kind" + std::to_string(i) + " form" + std::to_string(i);
}

std::string relation_phrase(std::size_t i) {
  return i < kRelationPhrases.size() ? std::string(kRelationPhrases[i]) : "linked" + std::to_string(i) + " to";
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

}  // namespace

// ---------------------------------------------------------------------------
// Spec

std::size_t SyntheticSpec::num_questions() const {
  return questions_per_depth[0] + questions_per_depth[1] + questions_per_depth[2];
}

void SyntheticSpec::validate() const {
  if (num_entities < 2) throw ValidationError("num_entities must be >= 2");
  if (num_relations == 0) throw ValidationError("num_relations must be >= 1");
  if (type_vocabulary == 0) throw ValidationError("type_vocabulary must be >= 1");
  if (name_pool == 0) throw ValidationError("name_pool must be >= 1");
  if (!(distractor_density >= 0.0) || !std::isfinite(distractor_density)) {
    throw ValidationError("distractor_density must be a finite value >= 0");
  }
  if (!(missing_direct_fraction >= 0.0 && missing_direct_fraction <= 1.0)) {
    throw ValidationError("missing_direct_fraction must be in [0, 1]");
  }
}

nlohmann::json SyntheticSpec::to_json() const {
  return {{"num_entities", num_entities},
          {"num_relations", num_relations},
          {"questions_per_depth", questions_per_depth},
          {"distractor_density", distractor_density},
          {"type_vocabulary", type_vocabulary},
          {"name_pool", name_pool},
          {"missing_direct_fraction", missing_direct_fraction},
          {"seed", seed}};
}

SyntheticSpec SyntheticSpec::from_json(const nlohmann::json& doc) {
  SyntheticSpec s;
  s.num_entities = doc.value("num_entities", s.num_entities);
  s.num_relations = doc.value("num_relations", s.num_relations);
  s.questions_per_depth = doc.value("questions_per_depth", s.questions_per_depth);
  s.distractor_density = doc.value("distractor_density", s.distractor_density);
  s.type_vocabulary = doc.value("type_vocabulary", s.type_vocabulary);
  s.name_pool = doc.value("name_pool", s.name_pool);
  s.missing_direct_fraction = doc.value("missing_direct_fraction", s.missing_direct_fraction);
  s.seed = doc.value("seed", s.seed);
  return s;
}

SyntheticSpec SyntheticSpec::standard(std::uint64_t seed) {
  SyntheticSpec s;
  s.seed = seed;
  return s;
}

// ---------------------------------------------------------------------------
// Generation

namespace {

enum Role : std::size_t { kDistractor = 0, kTopic = 1, kBridge = 2, kAnswer = 3, kRoles = 4 };

struct Plan {
  std::vector<EntityId> path;
  EntityId aux = 0;
  std::vector<RelationId> rels;
  bool missing = false;
};

std::vector<std::vector<EntityId>> undirected_adjacency(std::size_t n, const std::vector<Triple>& triples) {
  std::vector<std::vector<EntityId>> adj(n);
  for (const auto& t : triples) {
    adj[t.head].push_back(t.tail);
    adj[t.tail].push_back(t.head);
  }
  return adj;
}

// Nodes within two undirected hops of the topic and of every bridge except the
// last, minus the path itself.
std::vector<EntityId> neighborhood(const Plan& plan, const std::vector<std::vector<EntityId>>& adj) {
  std::set<EntityId> seen;
  for (std::size_t i = 0; i == 0 || i + 2 < plan.path.size(); ++i) {
    const EntityId src = plan.path[i];
    for (EntityId a : adj[src]) {
      seen.insert(a);
      for (EntityId b : adj[a]) seen.insert(b);
    }
  }
  for (EntityId p : plan.path) seen.erase(p);
  return {seen.begin(), seen.end()};
}

}  // namespace

SyntheticBenchmark generate(const SyntheticSpec& spec) {
  spec.validate();
  std::size_t needed = 0;
  for (std::size_t d = 0; d < 3; ++d) needed += spec.questions_per_depth[d] * (d + 3);
  if (needed > spec.num_entities) {
    throw GenerationError("spec needs " + std::to_string(needed) + " path entities but has only " +
                          std::to_string(spec.num_entities));
  }

  SeededRng rng(spec.seed);
  const std::size_t n = spec.num_entities;
  const std::size_t per_role = spec.type_vocabulary;

  std::unordered_set<std::string> reserved;
  for (std::size_t i = 0; i < kRoles * per_role; ++i) {
    for (const auto& w : tokenize(type_phrase(i))) reserved.insert(w);
  }
  std::vector<std::string> names(spec.name_pool);
  std::unordered_set<std::string> used;
  for (auto& name : names) {
    do {
      name = pseudo_word(rng);
    } while (reserved.contains(tokenize(name).front()) || !used.insert(name).second);
  }

  Catalog relations;
  for (std::size_t r = 0; r < spec.num_relations; ++r) relations.intern(relation_phrase(r));
  auto random_relation = [&] { return static_cast<RelationId>(rng.below(spec.num_relations)); };

  std::vector<EntityId> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = static_cast<EntityId>(i);
  seeded_shuffle(pool, rng);
  std::size_t next_free = 0;

  constexpr std::size_t kNoOwner = static_cast<std::size_t>(-1);
  std::vector<std::size_t> owner(n, kNoOwner);
  std::vector<Role> role(n, kDistractor);
  std::vector<Triple> triples;
  std::vector<Plan> plans;
  std::vector<int> depths;
  for (int depth = 1; depth <= 3; ++depth) {
    for (std::size_t q = 0; q < spec.questions_per_depth[static_cast<std::size_t>(depth - 1)]; ++q) {
      Plan plan;
      for (int i = 0; i <= depth; ++i) plan.path.push_back(pool[next_free++]);
      plan.aux = pool[next_free++];
      for (EntityId e : plan.path) {
        owner[e] = plans.size();
        role[e] = kBridge;
      }
      owner[plan.aux] = plans.size();
      role[plan.path.front()] = kTopic;
      role[plan.path.back()] = kAnswer;
      for (int i = 0; i < depth; ++i) plan.rels.push_back(random_relation());
      plan.missing = rng.uniform() < spec.missing_direct_fraction;
      for (std::size_t i = 0; i < plan.rels.size(); ++i) {
        if (i == 0 && plan.missing) continue;
        triples.push_back({plan.path[i], plan.rels[i], plan.path[i + 1]});
      }
      triples.push_back({plan.path[0], random_relation(), plan.aux});
      triples.push_back({plan.aux, random_relation(), plan.path[1]});
      plans.push_back(std::move(plan));
      depths.push_back(depth);
    }
  }

  // Distractors never join two entities planted for the same question.
  const auto whole = static_cast<std::size_t>(std::floor(spec.distractor_density));
  const double fraction = spec.distractor_density - static_cast<double>(whole);
  for (std::size_t e = 0; e < n; ++e) {
    const std::size_t count = whole + (rng.uniform() < fraction ? 1 : 0);
    for (std::size_t k = 0; k < count; ++k) {
      const auto t = static_cast<std::size_t>(rng.below(n));
      if (t == e) continue;
      if (owner[e] != kNoOwner && owner[e] == owner[t]) continue;
      triples.push_back({static_cast<EntityId>(e), random_relation(), static_cast<EntityId>(t)});
    }
  }

  // Type phrases come from one pool per role. A question's path entities get
  // phrases that no other entity near the path carries, so the words of the
  // question single out the planted entities.
  std::vector<std::size_t> type(n);
  for (std::size_t e = 0; e < n; ++e) type[e] = role[e] * per_role + static_cast<std::size_t>(rng.below(per_role));

  const auto adj = undirected_adjacency(n, triples);
  std::vector<std::vector<EntityId>> region(plans.size());
  std::vector<std::vector<std::size_t>> regions_of(n);
  for (std::size_t q = 0; q < plans.size(); ++q) {
    region[q] = neighborhood(plans[q], adj);
    for (EntityId x : region[q]) regions_of[x].push_back(q);
  }
  auto conflicts = [&](std::size_t q) {
    std::vector<EntityId> bad;
    std::set<std::size_t> own;
    for (EntityId p : plans[q].path) {
      if (!own.insert(type[p]).second) bad.push_back(p);
    }
    for (EntityId x : region[q]) {
      if (own.contains(type[x])) {
        for (EntityId p : plans[q].path) {
          if (type[p] == type[x]) bad.push_back(p);
        }
      }
    }
    return bad;
  };

  constexpr int kRepairPasses = 50;
  std::size_t remaining = 0;
  for (int pass = 0; pass < kRepairPasses; ++pass) {
    remaining = 0;
    for (std::size_t q = 0; q < plans.size(); ++q) {
      for (EntityId p : conflicts(q)) {
        ++remaining;
        std::set<std::size_t> forbidden;
        for (EntityId x : region[q]) forbidden.insert(type[x]);
        for (EntityId other : plans[q].path) {
          if (other != p) forbidden.insert(type[other]);
        }
        for (std::size_t q2 : regions_of[p]) {
          for (EntityId o : plans[q2].path) forbidden.insert(type[o]);
        }
        std::vector<std::size_t> allowed;
        for (std::size_t k = 0; k < per_role; ++k) {
          const std::size_t t = role[p] * per_role + k;
          if (!forbidden.contains(t)) allowed.push_back(t);
        }
        if (!allowed.empty()) type[p] = allowed[static_cast<std::size_t>(rng.below(allowed.size()))];
      }
    }
    if (remaining == 0) break;
  }
  if (remaining != 0) {
    throw GenerationError("could not give " + std::to_string(remaining) +
                          " path entities distinct type phrases; raise type_vocabulary");
  }

  Catalog entities;
  std::vector<std::string> labels(n);
  std::unordered_set<std::string> taken;
  for (std::size_t e = 0; e < n; ++e) {
    // Random name first, then a linear scan so a full pool fails loudly.
    const std::size_t start = static_cast<std::size_t>(rng.below(names.size()));
    bool placed = false;
    for (std::size_t k = 0; k < names.size() && !placed; ++k) {
      labels[e] = type_phrase(type[e]) + " " + names[(start + k) % names.size()];
      placed = taken.insert(labels[e]).second;
    }
    if (!placed) {
      throw GenerationError("name_pool of " + std::to_string(names.size()) +
                            " is too small for the entities sharing type phrase '" + type_phrase(type[e]) + "'");
    }
    entities.intern(labels[e]);
  }

  SyntheticBenchmark out;
  out.spec = spec;
  for (std::size_t q = 0; q < plans.size(); ++q) {
    const Plan& plan = plans[q];
    const int depth = depths[q];
    // "Which <answer type> is <topic chain> <last relation>?"
    std::string chain = labels[plan.path[0]];
    for (int i = 1; i < depth; ++i) {
      const auto k = static_cast<std::size_t>(i);
      chain = "the " + type_phrase(type[plan.path[k]]) + " that " + chain + " is " + relations.label(plan.rels[k - 1]);
    }
    const std::string question =
        "Which " + type_phrase(type[plan.path.back()]) + " is " + chain + " " + relations.label(plan.rels.back()) + "?";

    PlantedQuestion planted;
    planted.id = "q" + std::to_string(q);
    planted.depth = depth;
    for (EntityId e : plan.path) planted.path.push_back(labels[e]);
    planted.aux = labels[plan.aux];
    planted.direct_missing = plan.missing;

    QaRecord record;
    record.id = planted.id;
    record.question = question;
    record.topic = planted.path.front();
    record.answers = {planted.path.back()};
    record.depth = depth;

    ScriptEntry entry;
    entry.rules.push_back({planted.path.back(), "FINAL: " + planted.path.back()});
    for (std::size_t i = planted.path.size() - 2; i >= 1; --i) {
      entry.rules.push_back({planted.path[i], "NEXT: " + planted.path[i]});
    }
    out.backend.set(question, std::move(entry));
    out.planted.push_back(std::move(planted));
    out.dataset.push_back(std::move(record));
  }

  out.graph = KnowledgeGraph::build(std::move(entities), std::move(relations), std::move(triples));
  return out;
}

void SyntheticBenchmark::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "graph.tsv");
    graph.write_tsv(f);
  }
  {
    std::ofstream f(dir / "dataset.jsonl");
    write_dataset(f, dataset);
  }
  {
    std::ofstream f(dir / "script.jsonl");
    backend.write(f);
  }
  std::ofstream f(dir / "spec.json");
  f << spec.to_json().dump(2) << '\n';
  if (!f) throw std::runtime_error("cannot write benchmark files to " + dir.string());
}

// ---------------------------------------------------------------------------
// Evaluation

std::string normalize_answer(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (std::ispunct(u)) continue;
    if (std::isspace(u)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(u)));
  }
  return out;
}

nlohmann::json Metrics::to_json(bool with_records) const {
  nlohmann::json depth = nlohmann::json::object();
  for (const auto& [d, s] : per_depth) {
    depth[std::to_string(d)] = {{"questions", s.questions}, {"hits", s.hits}, {"hits_at_1", s.hits_at_1()}};
  }
  nlohmann::json doc{{"questions", questions},
                     {"hits_at_1", hits_at_1},
                     {"per_depth", depth},
                     {"terminals", terminals},
                     {"mean_select_calls", mean_select_calls},
                     {"mean_answer_calls", mean_answer_calls},
                     {"mean_seconds", mean_seconds},
                     {"total_seconds", total_seconds}};
  if (with_records) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : records) {
      rows.push_back({{"id", r.id},
                      {"depth", r.depth},
                      {"predicted", r.predicted},
                      {"gold", r.gold},
                      {"hit", r.hit},
                      {"terminal", to_string(r.terminal)},
                      {"iterations", r.iterations},
                      {"select_calls", r.select_calls},
                      {"answer_calls", r.answer_calls},
                      {"seconds", r.seconds}});
    }
    doc["records"] = rows;
  }
  return doc;
}

namespace {

bool is_hit(const std::string& predicted, const std::vector<std::string>& gold, const KnowledgeGraph& graph,
            bool match_ids) {
  if (predicted.empty()) return false;
  if (match_ids) {
    const auto p = graph.resolve_entity(predicted);
    if (!p) return false;
    return std::any_of(gold.begin(), gold.end(), [&](const std::string& g) { return graph.resolve_entity(g) == p; });
  }
  const std::string p = normalize_answer(predicted);
  if (p.empty()) return false;
  return std::any_of(gold.begin(), gold.end(), [&](const std::string& g) { return normalize_answer(g) == p; });
}

SelectionOverride oracle_for(const KnowledgeGraph& graph, EntityId topic, const std::vector<std::string>& answers) {
  std::vector<EntityId> answer_ids;
  for (const auto& a : answers) {
    if (auto id = graph.resolve_entity(a)) answer_ids.push_back(*id);
  }
  std::unordered_set<EntityId> relevant(answer_ids.begin(), answer_ids.end());
  try {
    for (EntityId e : build_labels(graph, topic, answer_ids).relevant) relevant.insert(e);
  } catch (const std::exception&) {
    // answers unreachable from the topic; only the answers themselves count
  }
  return [relevant](const Subgraph& sg) {
    std::vector<EntityId> chosen;
    for (const auto& node : sg.nodes) {
      if (node.entity != sg.root && relevant.contains(node.entity)) chosen.push_back(node.entity);
    }
    return chosen;
  };
}

}  // namespace

Metrics evaluate(const std::vector<QaRecord>& dataset, const KnowledgeGraph& graph,
                 const EmbeddingProvider& provider, const ParameterStore* params, const EvalOptions& options,
                 const AnswerBackend& backend) {
  ParameterStore fallback;
  if (params == nullptr) {
    if (!options.allow_untrained && !options.oracle_selection) {
      throw ConfigError("no trained parameters given; pass a checkpoint or allow an untrained run");
    }
    if (!options.oracle_selection) init_pipeline_params(fallback, options.reason.pipeline, options.init_seed);
    params = &fallback;
  }

  const auto started = Clock::now();
  Metrics m;
  m.questions = dataset.size();
  m.records.resize(dataset.size());
  std::vector<ReasoningTrace> traces(dataset.size());

  auto run_one = [&](std::size_t i) {
    const QaRecord& rec = dataset[i];
    EvalRecord& out = m.records[i];
    out.id = rec.id;
    out.depth = rec.depth;
    out.gold = rec.answers;
    const auto topic = graph.resolve_entity(rec.topic);
    if (!topic) {
      out.terminal = Terminal::failed;
      traces[i].question = rec.question;
      traces[i].error = "topic entity '" + rec.topic + "' not in graph";
      return;
    }
    ReasonConfig cfg = options.reason;
    if (options.oracle_selection) cfg.selection_override = oracle_for(graph, *topic, rec.answers);
    try {
      ReasonResult result = reason(rec.question, *topic, graph, provider, *params, cfg, backend);
      out.predicted = result.answer;
      out.terminal = result.trace.terminal;
      out.iterations = result.trace.iterations.size();
      out.select_calls = result.trace.select_calls;
      out.answer_calls = result.trace.answer_calls;
      out.seconds = result.trace.seconds;
      out.hit = out.terminal == Terminal::answered && is_hit(out.predicted, rec.answers, graph, options.match_entity_ids);
      traces[i] = std::move(result.trace);
    } catch (const std::exception& e) {
      out.terminal = Terminal::failed;
      traces[i].question = rec.question;
      traces[i].error = e.what();
      spdlog::warn("question {} failed: {}", rec.id, e.what());
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(options.workers, dataset.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < dataset.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < dataset.size(); i = next++) run_one(i);
      });
    }
    for (auto& t : pool) t.join();
  }

  std::size_t hits = 0;
  for (const auto& r : m.records) {
    hits += r.hit ? 1 : 0;
    auto& d = m.per_depth[r.depth];
    ++d.questions;
    d.hits += r.hit ? 1 : 0;
    ++m.terminals[std::string(to_string(r.terminal))];
    m.mean_select_calls += static_cast<double>(r.select_calls);
    m.mean_answer_calls += static_cast<double>(r.answer_calls);
    m.mean_seconds += r.seconds;
  }
  if (!dataset.empty()) {
    const double count = static_cast<double>(dataset.size());
    m.hits_at_1 = static_cast<double>(hits) / count;
    m.mean_select_calls /= count;
    m.mean_answer_calls /= count;
    m.mean_seconds /= count;
  }
  m.total_seconds = seconds_since(started);
  if (options.keep_traces) m.traces = std::move(traces);
  return m;
}

// ---------------------------------------------------------------------------
// Incompleteness sweep

std::string IncompletenessCurve::to_csv() const {
  std::ostringstream os;
  os << "ratio,removed_edges,hits_at_1,mean_select_calls,mean_answer_calls\n";
  os << std::fixed;
  for (const auto& p : points) {
    os << std::setprecision(2) << p.ratio << ',' << p.removed_edges << ',' << std::setprecision(4)
       << p.metrics.hits_at_1 << ',' << p.metrics.mean_select_calls << ',' << p.metrics.mean_answer_calls << '\n';
  }
  return os.str();
}

double IncompletenessCurve::drop_at(double ratio) const {
  if (points.empty()) throw std::logic_error("empty curve");
  for (const auto& p : points) {
    if (std::abs(p.ratio - ratio) < 1e-12) return points.front().metrics.hits_at_1 - p.metrics.hits_at_1;
  }
  throw NotFoundError("no curve point at ratio " + std::to_string(ratio));
}

IncompletenessCurve sweep_incompleteness(const std::vector<QaRecord>& dataset, const KnowledgeGraph& graph,
                                         const EmbeddingProvider& provider, const ParameterStore* params,
                                         const EvalOptions& options, const AnswerBackend& backend,
                                         const std::vector<double>& ratios, std::uint64_t seed) {
  for (double r : ratios) {
    if (!(r >= 0.0 && r <= 1.0)) throw ValidationError("removal ratios must be in [0, 1]");
  }
  std::set<EntityId> topic_set;
  for (const auto& rec : dataset) {
    if (auto t = graph.resolve_entity(rec.topic)) topic_set.insert(*t);
  }
  const std::vector<EntityId> topics(topic_set.begin(), topic_set.end());

  IncompletenessCurve curve;
  for (double r : ratios) {
    const PerturbationSpec ps{r, PerturbScope::topic_entity_edges, seed};
    CurvePoint point;
    point.ratio = r;
    if (r == 0.0) {
      point.metrics = evaluate(dataset, graph, provider, params, options, backend);
    } else {
      point.removed_edges = removed_edges(graph, ps, topics).size();
      const KnowledgeGraph perturbed = perturb(graph, ps, topics);
      point.metrics = evaluate(dataset, perturbed, provider, params, options, backend);
    }
    spdlog::info("ratio {:.2f}: removed {}, hits@1 {:.4f}", r, point.removed_edges, point.metrics.hits_at_1);
    curve.points.push_back(std::move(point));
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Hop ablation

PipelineConfig with_hops(PipelineConfig cfg, int hops) {
  cfg.extraction.hops = hops;
  cfg.encoder.layers = hops;
  return cfg;
}

std::vector<std::string> AblationTable::columns() const {
  return {"setting", dataset_name, "lightweight_calls", "powerful_calls", "runtime_s"};
}

std::string AblationTable::to_csv() const {
  std::ostringstream os;
  const auto cols = columns();
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n' << std::fixed;
  for (const auto& row : rows) {
    os << row.hops << "-Hop Subgraph," << std::setprecision(2) << 100.0 * row.metrics.hits_at_1 << ','
       << row.metrics.mean_select_calls << ',' << row.metrics.mean_answer_calls << ',' << std::setprecision(4)
       << row.metrics.mean_seconds << '\n';
  }
  return os.str();
}

nlohmann::json AblationTable::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto& row : rows) {
    rows_json.push_back({{"setting", std::to_string(row.hops) + "-Hop Subgraph"},
                         {"hops", row.hops},
                         {dataset_name, 100.0 * row.metrics.hits_at_1},
                         {"lightweight_calls", row.metrics.mean_select_calls},
                         {"powerful_calls", row.metrics.mean_answer_calls},
                         {"runtime_s", row.metrics.mean_seconds}});
  }
  return {{"columns", columns()}, {"rows", rows_json}};
}

AblationTable hop_ablation(const std::vector<QaRecord>& dataset, const KnowledgeGraph& graph,
                           const EmbeddingProvider& provider, const std::map<int, ParameterStore>& params_per_hop,
                           const std::vector<int>& hops, const EvalOptions& options, const AnswerBackend& backend,
                           std::string dataset_name) {
  std::string missing;
  for (int h : hops) {
    if (!params_per_hop.contains(h)) missing += (missing.empty() ? "" : ", ") + std::to_string(h);
  }
  if (!missing.empty()) throw ConfigError("missing parameters for hop settings: " + missing);

  AblationTable table;
  table.dataset_name = std::move(dataset_name);
  for (int h : hops) {
    EvalOptions opt = options;
    opt.reason.pipeline = with_hops(options.reason.pipeline, h);
    table.rows.push_back({h, evaluate(dataset, graph, provider, &params_per_hop.at(h), opt, backend)});
  }
  return table;
}

// ---------------------------------------------------------------------------
// Standard benchmark run

nlohmann::json BenchResult::to_json() const {
  return {{"training", training.to_json()},
          {"heldout_eval", heldout.to_json()},
          {"selection_top1", training.final_heldout_hit()},
          {"seconds", seconds},
          {"selection_ok", selection_ok},
          {"hits_ok", hits_ok},
          {"time_ok", time_ok},
          {"passed", passed()}};
}

BenchResult run_bench(const BenchConfig& cfg, const EmbeddingProvider& provider, ParameterStore* trained_out) {
  const auto started = Clock::now();
  const SyntheticBenchmark bench = generate(cfg.spec);
  TrainingConfig training = cfg.training;
  training.pipeline = fit_to_dimension(training.pipeline, provider.dimension());

  ParameterStore params;
  init_pipeline_params(params, training.pipeline, training.seed);
  BenchResult result;
  result.training = train(bench.dataset, bench.graph, provider, params, training);

  const auto heldout = split_holdout(bench.dataset, training.holdout_fraction, training.seed).second;
  EvalOptions opt;
  opt.reason.pipeline = training.pipeline;
  opt.workers = cfg.workers;
  result.heldout = evaluate(heldout, bench.graph, provider, &params, opt, bench.backend);

  result.seconds = seconds_since(started);
  result.selection_ok = result.training.final_heldout_hit() >= cfg.min_selection_top1;
  result.hits_ok = result.heldout.hits_at_1 >= cfg.min_hits_at_1;
  result.time_ok = result.seconds <= cfg.max_seconds;
  if (trained_out != nullptr) *trained_out = std::move(params);
  return result;
}

}  // namespace grasp
