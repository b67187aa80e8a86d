#include "grasp/embedding.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <mutex>
#include <sstream>

namespace grasp {

namespace {

constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;
constexpr std::uint64_t kIndexSeed = 0x9e3779b97f4a7c15ULL;
constexpr std::uint64_t kSignSeed = 0xc2b2ae3d27d4eb4fULL;

std::uint64_t fnv1a(std::string_view s, std::uint64_t seed) {
  std::uint64_t h = kFnvOffset ^ seed;
  for (unsigned char c : s) {
    h ^= c;
    h *= kFnvPrime;
  }
  // FNV's low bits mix poorly for short keys; finish with a splitmix round.
  h ^= h >> 30;
  h *= 0xbf58476d1ce4e5b9ULL;
  h ^= h >> 27;
  h *= 0x94d049bb133111ebULL;
  h ^= h >> 31;
  return h;
}

bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

void require_text(std::string_view text) {
  if (is_blank(text)) throw std::invalid_argument("cannot embed blank text");
}

struct ParsedUrl {
  std::string origin;
  std::string path;
};

ParsedUrl split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw std::invalid_argument("URL without scheme: " + url);
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

}  // namespace

EmbeddingError::EmbeddingError(const std::string& what, int attempts)
    : std::runtime_error(what + " (after " + std::to_string(attempts) + " attempts)"),
      attempts_(attempts) {}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    std::string_view tok = text.substr(i, j - i);
    while (!tok.empty() && std::ispunct(static_cast<unsigned char>(tok.front()))) tok.remove_prefix(1);
    while (!tok.empty() && std::ispunct(static_cast<unsigned char>(tok.back()))) tok.remove_suffix(1);
    if (!tok.empty()) {
      std::string lowered(tok);
      for (char& c : lowered) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      tokens.push_back(std::move(lowered));
    }
    i = j;
  }
  return tokens;
}

HashEmbedder::HashEmbedder(std::size_t dimension) : dimension_(dimension) {
  if (dimension == 0) throw std::invalid_argument("embedding dimension must be positive");
}

Vector HashEmbedder::embed(std::string_view text) const {
  require_text(text);
  Vector v(dimension_, 0.0);
  for (const auto& tok : tokenize(text)) {
    const auto bucket = fnv1a(tok, kIndexSeed) % dimension_;
    const double sign = (fnv1a(tok, kSignSeed) & 1U) ? 1.0 : -1.0;
    v[bucket] += sign;
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm > 0.0) {
    for (double& x : v) x /= norm;
  }
  return v;
}

TableEmbedder::TableEmbedder(std::size_t dimension, std::unordered_map<std::string, Vector> rows)
    : dimension_(dimension), rows_(std::move(rows)), fallback_(dimension) {}

TableEmbedder TableEmbedder::from_stream(std::istream& in) {
  std::unordered_map<std::string, Vector> rows;
  std::size_t dim = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw ParseError(line_no, "expected label<TAB>v1,...,vd");
    }
    Vector v;
    std::stringstream ss(line.substr(tab + 1));
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        throw ParseError(line_no, "bad vector component '" + cell + "'");
      }
      if (!std::isfinite(v.back())) throw ParseError(line_no, "non-finite vector component");
    }
    if (v.empty()) throw ParseError(line_no, "empty vector");
    if (dim == 0) dim = v.size();
    if (v.size() != dim) {
      throw ParseError(line_no, "dimension " + std::to_string(v.size()) + " != " + std::to_string(dim));
    }
    rows.insert_or_assign(line.substr(0, tab), std::move(v));
  }
  if (rows.empty()) throw EmptyGraphError("embedding table is empty");
  return TableEmbedder(dim, std::move(rows));
}

TableEmbedder TableEmbedder::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open embedding table " + path.string());
  return from_stream(in);
}

Vector TableEmbedder::embed(std::string_view text) const {
  require_text(text);
  auto it = rows_.find(std::string(text));
  if (it != rows_.end()) return it->second;
  spdlog::warn("embedding table has no row for '{}', using hash fallback", text);
  return fallback_.embed(text);
}

HttpEmbedderConfig HttpEmbedderConfig::from_env() {
  HttpEmbedderConfig cfg;
  if (const char* url = std::getenv("GRASP_EMBED_URL")) cfg.url = url;
  if (const char* token = std::getenv("GRASP_EMBED_TOKEN")) cfg.token = token;
  if (const char* dim = std::getenv("GRASP_EMBED_DIM")) cfg.dimension = std::stoul(dim);
  if (cfg.url.empty()) throw std::invalid_argument("GRASP_EMBED_URL is not set");
  return cfg;
}

HttpEmbedder::HttpEmbedder(HttpEmbedderConfig config) : config_(std::move(config)) {
  if (config_.max_attempts < 1) throw std::invalid_argument("max_attempts must be >= 1");
  split_url(config_.url);
}

std::vector<Vector> HttpEmbedder::embed_batch(const std::vector<std::string>& texts) const {
  for (const auto& t : texts) require_text(t);
  const auto [origin, path] = split_url(config_.url);
  const std::string body = nlohmann::json{{"texts", texts}}.dump();

  std::string last_error;
  for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
    httplib::Client client(origin);
    client.set_connection_timeout(config_.timeout_seconds);
    client.set_read_timeout(config_.timeout_seconds);
    httplib::Headers headers;
    if (!config_.token.empty()) headers.emplace("Authorization", "Bearer " + config_.token);
    auto res = client.Post(path, headers, body, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "HTTP status " + std::to_string(res->status);
      continue;
    }
    try {
      const auto doc = nlohmann::json::parse(res->body);
      const auto& rows = doc.at("vectors");
      if (!rows.is_array() || rows.size() != texts.size()) {
        throw std::runtime_error("expected " + std::to_string(texts.size()) + " vectors");
      }
      std::vector<Vector> out;
      for (const auto& row : rows) {
        Vector v = row.get<Vector>();
        if (v.size() != config_.dimension) {
          throw std::runtime_error("vector dimension " + std::to_string(v.size()) + " != " +
                                   std::to_string(config_.dimension));
        }
        out.push_back(std::move(v));
      }
      return out;
    } catch (const std::exception& e) {
      last_error = std::string("malformed response: ") + e.what();
    }
  }
  throw EmbeddingError(last_error, config_.max_attempts);
}

Vector HttpEmbedder::embed(std::string_view text) const {
  return embed_batch({std::string(text)}).front();
}

CachingEmbedder::CachingEmbedder(std::shared_ptr<const EmbeddingProvider> inner)
    : inner_(std::move(inner)) {}

Vector CachingEmbedder::embed(std::string_view text) const {
  const std::string key(text);
  {
    std::shared_lock lock(mutex_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
  }
  Vector v = inner_->embed(text);
  std::unique_lock lock(mutex_);
  cache_.try_emplace(key, v);
  return v;
}

Relevance relevance(std::span<const double> q, std::span<const double> e) {
  if (q.size() != e.size()) {
    throw std::invalid_argument("relevance: dimension mismatch " + std::to_string(q.size()) + " vs " +
                                std::to_string(e.size()));
  }
  double dot = 0.0;
  double nq = 0.0;
  double ne = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    dot += q[i] * e[i];
    nq += q[i] * q[i];
    ne += e[i] * e[i];
  }
  if (nq == 0.0 || ne == 0.0) return {0.0, true};
  const double c = dot / (std::sqrt(nq) * std::sqrt(ne));
  return {std::clamp(c, -1.0, 1.0), false};
}

std::vector<ScoredEntity> top_k(std::span<const double> q, std::span<const Candidate> candidates,
                                std::size_t k) {
  if (k == 0) throw std::invalid_argument("top_k: k must be >= 1");
  std::vector<ScoredEntity> scored;
  scored.reserve(candidates.size());
  for (const auto& c : candidates) scored.push_back({c.entity, relevance(q, c.embedding).score});
  const auto better = [](const ScoredEntity& a, const ScoredEntity& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.entity < b.entity;
  };
  const std::size_t keep = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(),
                    better);
  scored.resize(keep);
  return scored;
}

std::shared_ptr<const EmbeddingProvider> make_default_provider(std::size_t dimension) {
  return std::make_shared<CachingEmbedder>(std::make_shared<HashEmbedder>(dimension));
}

}  // namespace grasp
