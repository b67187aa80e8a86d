#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "grasp/embedding.hpp"
#include "grasp/kg.hpp"
#include "grasp/selector.hpp"
#include "grasp/subgraph.hpp"
#include "grasp/tensor.hpp"

namespace grasp {

// System prompt for the answer stage; prompts/answer_system.txt holds the same text.
extern const std::string_view kAnswerSystemPrompt;
// Appended to the user prompt when a reply could not be parsed.
extern const std::string_view kReformatRequest;

class BackendTransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DecisionParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GroundingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class AnswerBackend {
 public:
  virtual ~AnswerBackend() = default;
  // Throws BackendTransportError when the backend cannot be reached.
  virtual std::string complete(const std::string& system_prompt, const std::string& user_prompt) const = 0;
};

struct ScriptRule {
  std::string when;  // phrase that must occur in the evidence; empty matches always
  std::string reply;
};

struct ScriptEntry {
  std::vector<ScriptRule> rules;       // first match wins
  std::vector<std::string> sequence;   // reply per step when no rule matches; last one repeats
  std::string fallback = "FINAL: unknown";
};

/**
 * Deterministic stand-in for the answer model.
 *
 * Entries are keyed by question text ("*" is the catch-all). A reply depends
 * only on the question, step number and evidence found in the user prompt.
 */
class ScriptedBackend final : public AnswerBackend {
 public:
  ScriptedBackend() = default;
  explicit ScriptedBackend(std::map<std::string, ScriptEntry> entries) : entries_(std::move(entries)) {}

  // JSON lines: {"question", "rules": [{"when", "reply"}], "sequence": [...], "default"}.
  static ScriptedBackend from_stream(std::istream& in);
  static ScriptedBackend from_file(const std::filesystem::path& path);
  void write(std::ostream& out) const;

  void set(const std::string& question, ScriptEntry entry) { entries_[question] = std::move(entry); }
  std::string complete(const std::string& system_prompt, const std::string& user_prompt) const override;

 private:
  std::map<std::string, ScriptEntry> entries_;
};

// Case-sensitive phrase search requiring non-alphanumeric characters (or the
// text boundary) on both sides of the match.
bool contains_phrase(std::string_view text, std::string_view phrase);

struct HttpChatConfig {
  std::string url;  // full chat-completions URL, http only
  std::string api_key;
  std::string model = "gpt-4o-mini";
  int timeout_seconds = 60;

  // GRASP_CHAT_URL, GRASP_CHAT_API_KEY, GRASP_CHAT_MODEL.
  static HttpChatConfig from_env();
};

// Chat-completions request with system and user messages at temperature 0.
class HttpChatBackend final : public AnswerBackend {
 public:
  explicit HttpChatBackend(HttpChatConfig config);
  std::string complete(const std::string& system_prompt, const std::string& user_prompt) const override;
  static nlohmann::json request_body(const HttpChatConfig& cfg, const std::string& system_prompt,
                                     const std::string& user_prompt);

 private:
  HttpChatConfig config_;
};

enum class DecisionKind { answer, next };

struct ParsedReply {
  DecisionKind kind = DecisionKind::answer;
  std::string payload;
  std::string rationale;  // text before the marker
};

// Last "FINAL:" or "NEXT:" marker in the reply; the payload is the rest of
// that line, trimmed. Anything before the marker is kept as the rationale.
std::optional<ParsedReply> parse_reply(std::string_view raw);

struct Decision {
  DecisionKind kind = DecisionKind::answer;
  std::string answer;
  std::optional<EntityId> next_entity;
  std::string next_label;
  std::string rationale;
};

// Throws DecisionParseError on an unparseable reply and GroundingError when a
// NEXT label matches no entity. Grounding tries the subgraph's nodes before
// the whole catalog; within each, an exact match before a case-insensitive one.
Decision parse_decision(std::string_view raw, const KnowledgeGraph& graph, const Subgraph* subgraph = nullptr);

enum class Terminal { answered, max_iterations, stuck, failed };
std::string_view to_string(Terminal t);

struct IterationRecord {
  EntityId topic = 0;
  std::string topic_label;
  std::size_t subgraph_nodes = 0;
  std::size_t subgraph_edges = 0;
  std::vector<EntityId> selected;
  std::string evidence;
  std::string reply;
  int answer_attempts = 0;  // transport attempts plus any reformat request
  std::optional<Decision> decision;
  std::string error;
  double seconds = 0.0;
};

struct ReasoningTrace {
  std::string question;
  std::vector<IterationRecord> iterations;
  std::size_t select_calls = 0;
  std::size_t answer_calls = 0;
  Terminal terminal = Terminal::failed;
  std::string error;
  double seconds = 0.0;

  std::vector<std::string> topic_labels() const;
  // One JSON object per iteration; the last also carries the terminal state.
  void write_jsonl(std::ostream& out, const KnowledgeGraph& graph) const;
};

struct ReasonResult {
  std::string answer;  // empty unless answered
  ReasoningTrace trace;
};

// Replaces the learned selector, e.g. with gold labels.
using SelectionOverride = std::function<std::vector<EntityId>(const Subgraph&)>;

struct ReasonConfig {
  PipelineConfig pipeline;
  int max_iterations = 4;
  int transport_attempts = 3;
  SelectionOverride selection_override;
};

std::string build_user_prompt(std::string_view question, std::string_view topic_label, int step,
                              std::string_view evidence);

/**
 * Select/answer loop. Each iteration extracts and encodes a fresh subgraph
 * around the current topic, selects entities, verbalizes them and asks the
 * backend to either answer or name the next topic. Never throws for backend
 * misbehavior; failures end up in the trace.
 */
ReasonResult reason(std::string_view question, EntityId topic, const KnowledgeGraph& graph,
                    const EmbeddingProvider& provider, const ParameterStore& params, const ReasonConfig& cfg,
                    const AnswerBackend& backend);

struct QuestionCost {
  std::size_t select_calls = 0;
  std::size_t answer_calls = 0;
  double seconds = 0.0;
};

struct EfficiencyReport {
  std::vector<QuestionCost> per_question;
  double mean_select_calls = 0.0;
  double mean_answer_calls = 0.0;
  double mean_total_calls = 0.0;
  double mean_seconds = 0.0;

  nlohmann::json to_json() const;
  // Columns: lightweight (selection) calls, powerful (answer) calls, total, seconds.
  std::string to_table() const;
};

EfficiencyReport account(std::span<const ReasoningTrace> traces);
QuestionCost account(const ReasoningTrace& trace);

}  // namespace grasp
