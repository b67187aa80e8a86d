#include "grasp/orchestrator.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "grasp/encoder.hpp"

namespace grasp {

const std::string_view kAnswerSystemPrompt =
    "You answer questions using evidence retrieved from a knowledge graph.\n"
    "First decide whether the evidence is sufficient to answer the question.\n"
    "End your reply with exactly one of these lines:\n"
    "FINAL: <answer>\n"
    "NEXT: <entity label>\n"
    "Use FINAL when the evidence is sufficient and give only the answer text after the marker.\n"
    "Use NEXT when it is not, naming one entity from the evidence to explore next.\n";

const std::string_view kReformatRequest =
    "\nYour previous reply could not be parsed. Reply with exactly one line: "
    "FINAL: <answer> or NEXT: <entity label>.\n";

namespace {

using Clock = std::chrono::steady_clock;

constexpr std::string_view kQuestionTag = "Question: ";
constexpr std::string_view kStepTag = "Step: ";
constexpr std::string_view kEvidenceTag = "Evidence:\n";

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string line_value(std::string_view prompt, std::string_view tag) {
  std::size_t pos = 0;
  while (pos <= prompt.size()) {
    const auto eol = prompt.find('\n', pos);
    const auto line = prompt.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
    if (line.starts_with(tag)) return std::string(line.substr(tag.size()));
    if (eol == std::string_view::npos) break;
    pos = eol + 1;
  }
  return {};
}

std::string evidence_section(std::string_view prompt) {
  const auto pos = prompt.find(kEvidenceTag);
  if (pos == std::string_view::npos) return {};
  return std::string(prompt.substr(pos + kEvidenceTag.size()));
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::optional<EntityId> ground_in(const std::vector<EntityId>& ids, const KnowledgeGraph& graph,
                                  std::string_view label) {
  for (EntityId e : ids) {
    if (graph.entity_label(e) == label) return e;
  }
  const std::string wanted = lower(label);
  for (EntityId e : ids) {
    if (lower(graph.entity_label(e)) == wanted) return e;
  }
  return std::nullopt;
}

}  // namespace

bool contains_phrase(std::string_view text, std::string_view phrase) {
  if (phrase.empty()) return true;
  std::size_t pos = text.find(phrase);
  while (pos != std::string_view::npos) {
    const bool left_ok = pos == 0 || !is_word_char(text[pos - 1]);
    const std::size_t end = pos + phrase.size();
    const bool right_ok = end >= text.size() || !is_word_char(text[end]);
    if (left_ok && right_ok) return true;
    pos = text.find(phrase, pos + 1);
  }
  return false;
}

// ---------------------------------------------------------------------------
// Backends

ScriptedBackend ScriptedBackend::from_stream(std::istream& in) {
  std::map<std::string, ScriptEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const auto doc = nlohmann::json::parse(line);
      ScriptEntry entry;
      for (const auto& r : doc.value("rules", nlohmann::json::array())) {
        entry.rules.push_back({r.value("when", ""), r.at("reply").get<std::string>()});
      }
      entry.sequence = doc.value("sequence", std::vector<std::string>{});
      entry.fallback = doc.value("default", entry.fallback);
      entries[doc.at("question").get<std::string>()] = std::move(entry);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, std::string("bad script entry: ") + e.what());
    }
  }
  return ScriptedBackend(std::move(entries));
}

ScriptedBackend ScriptedBackend::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open backend script " + path.string());
  return from_stream(in);
}

void ScriptedBackend::write(std::ostream& out) const {
  for (const auto& [question, entry] : entries_) {
    nlohmann::json rules = nlohmann::json::array();
    for (const auto& r : entry.rules) rules.push_back({{"when", r.when}, {"reply", r.reply}});
    nlohmann::json doc{{"question", question}, {"rules", rules}, {"default", entry.fallback}};
    if (!entry.sequence.empty()) doc["sequence"] = entry.sequence;
    out << doc.dump() << '\n';
  }
}

std::string ScriptedBackend::complete(const std::string&, const std::string& user_prompt) const {
  const std::string question = line_value(user_prompt, kQuestionTag);
  auto it = entries_.find(question);
  if (it == entries_.end()) it = entries_.find("*");
  if (it == entries_.end()) return "FINAL: unknown";
  const ScriptEntry& entry = it->second;

  const std::string evidence = evidence_section(user_prompt);
  for (const auto& rule : entry.rules) {
    if (contains_phrase(evidence, rule.when)) return rule.reply;
  }
  if (!entry.sequence.empty()) {
    std::size_t step = 1;
    try {
      step = std::max<std::size_t>(1, std::stoul(line_value(user_prompt, kStepTag)));
    } catch (const std::exception&) {
    }
    return entry.sequence[std::min(step, entry.sequence.size()) - 1];
  }
  return entry.fallback;
}

HttpChatConfig HttpChatConfig::from_env() {
  HttpChatConfig cfg;
  if (const char* url = std::getenv("GRASP_CHAT_URL")) cfg.url = url;
  if (const char* key = std::getenv("GRASP_CHAT_API_KEY")) cfg.api_key = key;
  if (const char* model = std::getenv("GRASP_CHAT_MODEL")) cfg.model = model;
  if (cfg.url.empty()) throw std::invalid_argument("GRASP_CHAT_URL is not set");
  return cfg;
}

HttpChatBackend::HttpChatBackend(HttpChatConfig config) : config_(std::move(config)) {
  if (config_.url.find("://") == std::string::npos) {
    throw std::invalid_argument("chat URL without scheme: " + config_.url);
  }
}

nlohmann::json HttpChatBackend::request_body(const HttpChatConfig& cfg, const std::string& system_prompt,
                                             const std::string& user_prompt) {
  return {{"model", cfg.model},
          {"temperature", 0},
          {"messages",
           {{{"role", "system"}, {"content", system_prompt}}, {{"role", "user"}, {"content", user_prompt}}}}};
}

std::string HttpChatBackend::complete(const std::string& system_prompt, const std::string& user_prompt) const {
  const auto scheme_end = config_.url.find("://");
  const auto slash = config_.url.find('/', scheme_end + 3);
  const std::string origin = slash == std::string::npos ? config_.url : config_.url.substr(0, slash);
  const std::string path = slash == std::string::npos ? "/" : config_.url.substr(slash);

  httplib::Client client(origin);
  client.set_connection_timeout(config_.timeout_seconds);
  client.set_read_timeout(config_.timeout_seconds);
  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);
  const auto body = request_body(config_, system_prompt, user_prompt).dump();
  auto res = client.Post(path, headers, body, "application/json");
  if (!res) throw BackendTransportError("chat request failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw BackendTransportError("chat request returned HTTP " + std::to_string(res->status));
  try {
    const auto doc = nlohmann::json::parse(res->body);
    return doc.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw BackendTransportError(std::string("malformed chat response: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Decisions

std::optional<ParsedReply> parse_reply(std::string_view raw) {
  constexpr std::string_view kFinal = "FINAL:";
  constexpr std::string_view kNext = "NEXT:";
  const auto final_pos = raw.rfind(kFinal);
  const auto next_pos = raw.rfind(kNext);
  if (final_pos == std::string_view::npos && next_pos == std::string_view::npos) return std::nullopt;

  ParsedReply out;
  std::size_t pos = 0;
  std::size_t marker_len = 0;
  if (next_pos == std::string_view::npos || (final_pos != std::string_view::npos && final_pos > next_pos)) {
    out.kind = DecisionKind::answer;
    pos = final_pos;
    marker_len = kFinal.size();
  } else {
    out.kind = DecisionKind::next;
    pos = next_pos;
    marker_len = kNext.size();
  }
  const auto rest = raw.substr(pos + marker_len);
  out.payload = trim(rest.substr(0, rest.find('\n')));
  out.rationale = trim(raw.substr(0, pos));
  if (out.payload.empty()) return std::nullopt;
  return out;
}

Decision parse_decision(std::string_view raw, const KnowledgeGraph& graph, const Subgraph* subgraph) {
  const auto parsed = parse_reply(raw);
  if (!parsed) throw DecisionParseError("reply has no FINAL:/NEXT: line with content");
  Decision d;
  d.kind = parsed->kind;
  d.rationale = parsed->rationale;
  if (d.kind == DecisionKind::answer) {
    d.answer = parsed->payload;
    return d;
  }
  d.next_label = parsed->payload;
  if (subgraph != nullptr) d.next_entity = ground_in(subgraph->entity_ids(), graph, d.next_label);
  if (!d.next_entity) d.next_entity = graph.resolve_entity(d.next_label);
  if (!d.next_entity) throw GroundingError("no entity labeled '" + d.next_label + "'");
  return d;
}

std::string_view to_string(Terminal t) {
  switch (t) {
    case Terminal::answered: return "answered";
    case Terminal::max_iterations: return "max-iterations";
    case Terminal::stuck: return "stuck";
    case Terminal::failed: return "failed";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Reasoning loop

std::string build_user_prompt(std::string_view question, std::string_view topic_label, int step,
                              std::string_view evidence) {
  std::ostringstream os;
  os << kQuestionTag << question << '\n'
     << "Topic entity: " << topic_label << '\n'
     << kStepTag << step << '\n'
     << kEvidenceTag << evidence;
  return os.str();
}

std::vector<std::string> ReasoningTrace::topic_labels() const {
  std::vector<std::string> out;
  for (const auto& it : iterations) out.push_back(it.topic_label);
  return out;
}

void ReasoningTrace::write_jsonl(std::ostream& out, const KnowledgeGraph& graph) const {
  for (std::size_t i = 0; i < iterations.size(); ++i) {
    const auto& it = iterations[i];
    nlohmann::json selected = nlohmann::json::array();
    for (EntityId e : it.selected) selected.push_back(graph.entity_label(e));
    nlohmann::json doc{{"question", question},
                       {"iteration", i + 1},
                       {"topic", it.topic_label},
                       {"subgraph_nodes", it.subgraph_nodes},
                       {"subgraph_edges", it.subgraph_edges},
                       {"selected", selected},
                       {"evidence", it.evidence},
                       {"reply", it.reply},
                       {"answer_attempts", it.answer_attempts},
                       {"seconds", it.seconds}};
    if (it.decision) {
      doc["decision"] = it.decision->kind == DecisionKind::answer ? "answer" : "next";
      doc["decision_value"] = it.decision->kind == DecisionKind::answer ? it.decision->answer : it.decision->next_label;
    }
    if (!it.error.empty()) doc["error"] = it.error;
    if (i + 1 == iterations.size()) {
      doc["terminal"] = to_string(terminal);
      doc["select_calls"] = select_calls;
      doc["answer_calls"] = answer_calls;
    }
    out << doc.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
  }
}

namespace {

SelectionResult run_selection(std::string_view question, const Subgraph& sg, const KnowledgeGraph& graph,
                              const EmbeddingProvider& provider, const ParameterStore& params,
                              const ReasonConfig& cfg) {
  const auto& p = cfg.pipeline;
  if (cfg.selection_override) {
    const auto chosen = cfg.selection_override(sg);
    std::vector<RankedEntity> ranked;
    for (EntityId e : chosen) ranked.push_back({e, 1.0 / static_cast<double>(chosen.size())});
    return make_selection(std::move(ranked), std::max(p.selector.top_m, chosen.size()), sg, graph);
  }
  const auto inputs = prepare_inputs(sg, question, graph, provider, p.encoder);
  Tape tape;
  tape.bind(params);
  Matrix soft_prompt = encode(tape, inputs, p.encoder).soft_prompt.value();
  const auto bundle = assemble_prompt(sg, graph, question, std::move(soft_prompt), inputs.question, p.selector);
  return score_candidates(bundle, params, p.selector, sg, graph);
}

}  // namespace

ReasonResult reason(std::string_view question, EntityId topic, const KnowledgeGraph& graph,
                    const EmbeddingProvider& provider, const ParameterStore& params, const ReasonConfig& cfg,
                    const AnswerBackend& backend) {
  if (cfg.max_iterations < 1) throw std::invalid_argument("max_iterations must be >= 1");
  if (!graph.contains(topic)) throw NotFoundError("topic entity not in graph");

  const auto started = Clock::now();
  ReasonResult result;
  ReasoningTrace& trace = result.trace;
  trace.question = std::string(question);
  trace.terminal = Terminal::max_iterations;

  std::unordered_set<EntityId> visited;
  EntityId current = topic;
  bool done = false;
  for (int step = 1; step <= cfg.max_iterations && !done; ++step) {
    const auto t0 = Clock::now();
    visited.insert(current);
    IterationRecord rec;
    rec.topic = current;
    rec.topic_label = graph.entity_label(current);

    const Subgraph sg = extract(graph, provider, question, current, cfg.pipeline.extraction);
    rec.subgraph_nodes = sg.size();
    rec.subgraph_edges = sg.edges.size();
    const SelectionResult selection = run_selection(question, sg, graph, provider, params, cfg);
    ++trace.select_calls;
    rec.selected = selection.selected;
    rec.evidence = verbalize(selection, sg, graph);

    const std::string user = build_user_prompt(question, rec.topic_label, step, rec.evidence);
    const std::string system(kAnswerSystemPrompt);
    ++trace.answer_calls;
    std::optional<std::string> reply;
    for (int attempt = 1; attempt <= cfg.transport_attempts && !reply; ++attempt) {
      ++rec.answer_attempts;
      try {
        reply = backend.complete(system, user);
      } catch (const std::exception& e) {
        rec.error = e.what();
      }
    }

    if (!reply) {
      trace.terminal = Terminal::failed;
      trace.error = "answer backend unavailable: " + rec.error;
      done = true;
    } else {
      rec.error.clear();
      rec.reply = *reply;
      std::optional<Decision> decision;
      for (int parse_try = 0; parse_try < 2 && !decision && !done; ++parse_try) {
        try {
          decision = parse_decision(rec.reply, graph, &sg);
        } catch (const DecisionParseError& e) {
          if (parse_try == 0) {
            ++rec.answer_attempts;
            try {
              rec.reply = backend.complete(system, user + std::string(kReformatRequest));
            } catch (const std::exception& te) {
              rec.error = te.what();
              trace.terminal = Terminal::failed;
              trace.error = "answer backend unavailable: " + rec.error;
              done = true;
            }
          } else {
            rec.error = e.what();
            trace.terminal = Terminal::failed;
            trace.error = std::string("decision parse error: ") + e.what();
            done = true;
          }
        } catch (const GroundingError& e) {
          rec.error = e.what();
          trace.terminal = Terminal::stuck;
          trace.error = std::string("entity grounding error: ") + e.what();
          done = true;
        }
      }
      if (decision) {
        rec.decision = decision;
        if (decision->kind == DecisionKind::answer) {
          result.answer = decision->answer;
          trace.terminal = Terminal::answered;
          done = true;
        } else if (visited.contains(*decision->next_entity)) {
          trace.terminal = Terminal::stuck;
          trace.error = "topic '" + decision->next_label + "' repeats";
          done = true;
        } else {
          current = *decision->next_entity;
        }
      }
    }
    rec.seconds = seconds_since(t0);
    trace.iterations.push_back(std::move(rec));
  }
  trace.seconds = seconds_since(started);
  return result;
}

// ---------------------------------------------------------------------------
// Accounting

QuestionCost account(const ReasoningTrace& trace) {
  return {trace.select_calls, trace.answer_calls, trace.seconds};
}

EfficiencyReport account(std::span<const ReasoningTrace> traces) {
  EfficiencyReport r;
  for (const auto& t : traces) r.per_question.push_back(account(t));
  if (r.per_question.empty()) return r;
  const double n = static_cast<double>(r.per_question.size());
  for (const auto& c : r.per_question) {
    r.mean_select_calls += static_cast<double>(c.select_calls) / n;
    r.mean_answer_calls += static_cast<double>(c.answer_calls) / n;
    r.mean_seconds += c.seconds / n;
  }
  r.mean_total_calls = r.mean_select_calls + r.mean_answer_calls;
  return r;
}

nlohmann::json EfficiencyReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& c : per_question) {
    rows.push_back({{"select_calls", c.select_calls}, {"answer_calls", c.answer_calls}, {"seconds", c.seconds}});
  }
  return {{"questions", per_question.size()},
          {"mean_lightweight_calls", mean_select_calls},
          {"mean_powerful_calls", mean_answer_calls},
          {"mean_total_calls", mean_total_calls},
          {"mean_seconds", mean_seconds},
          {"per_question", rows}};
}

std::string EfficiencyReport::to_table() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3);
  os << "questions\tlightweight_calls\tpowerful_calls\ttotal_calls\truntime_s\n";
  os << per_question.size() << '\t' << mean_select_calls << '\t' << mean_answer_calls << '\t'
     << mean_total_calls << '\t' << mean_seconds << '\n';
  return os.str();
}

}  // namespace grasp
