#pragma once

// Clients for the two external intelligence dependencies: a text embedder and
// an LLM adjudicator. Requests to the adjudicator are capability-tagged JSON
// payloads; the typed helpers below build them and validate the replies.

#include <atomic>
#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace pathaudit::services {

using Vector = std::vector<double>;

/// Cosine similarity. Throws PreconditionError on dimension mismatch or a
/// zero-norm input.
double cosine(std::span<const double> a, std::span<const double> b);

// ---------------------------------------------------------------------------
// Embedding

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::string identity() const = 0;
  virtual std::size_t dimension() const = 0;
  virtual std::vector<Vector> embed(std::span<const std::string> texts) = 0;
};

/// Embeds `texts` (non-empty) and checks count and dimension of the reply.
std::vector<Vector> embed_batch(EmbeddingProvider& provider, std::span<const std::string> texts);

/// Deterministic offline embedder. Each text maps to a pseudo-random unit
/// vector seeded by its normalized form; pinned pairs override that so that
/// cos(text, anchor) equals the pinned value exactly.
class HashEmbedder final : public EmbeddingProvider {
 public:
  explicit HashEmbedder(std::size_t dimension = 64, std::string salt = {});

  void pin_similarity(const std::string& text, const std::string& anchor, double similarity);

  std::string identity() const override;
  std::size_t dimension() const override { return dimension_; }
  std::vector<Vector> embed(std::span<const std::string> texts) override;

 private:
  Vector base_vector(const std::string& key) const;
  Vector vector_for(const std::string& text) const;

  std::size_t dimension_;
  std::string salt_;
  std::map<std::string, std::pair<std::string, double>> pins_;  // key -> (anchor key, cos)
};

// ---------------------------------------------------------------------------
// Adjudication

enum class Capability { AlignChoice, PrunePaths, Extract, Categorize };

std::string_view to_string(Capability c);
Capability parse_capability(std::string_view s);

class Adjudicator {
 public:
  virtual ~Adjudicator() = default;
  virtual std::string identity() const = 0;
  virtual std::set<Capability> capabilities() const = 0;
  /// Raw capability-tagged exchange. Implementations throw TransportError for
  /// retriable failures.
  virtual nlohmann::json adjudicate(Capability capability, const nlohmann::json& request) = 0;
};

struct Candidate {
  std::string entity_id;
  std::string name;
  double similarity = 0.0;
};

struct AlignChoiceRequest {
  std::string mention;
  std::vector<Candidate> candidates;  // sorted by similarity, best first
  std::string question;
  std::vector<std::string> options;
};

struct NamedPath {
  std::vector<std::string> entity_names;
  std::vector<std::string> relations;
};

struct PruneRequest {
  std::vector<NamedPath> paths;
  std::string question;
  std::vector<std::string> options;
};

struct ExtractRequest {
  std::string question;
  std::vector<std::string> options;
};

struct ExtractedMention {
  std::string text;
  std::string kind;  // "Disease", "Symptom" or empty
};

struct CategorizeEntity {
  std::string id;
  std::string name;
  std::string kind;
};

struct CategorizeRequest {
  std::vector<CategorizeEntity> error_entities;
  std::vector<CategorizeEntity> reference_entities;
  std::vector<std::string> questions;
};

struct CategorizeResponse {
  std::map<std::string, std::string> categories_err;
  std::map<std::string, std::string> categories_ref;
  std::string summary;
};

/// Index into request.candidates, or nullopt on abstention.
std::optional<std::size_t> choose_candidate(Adjudicator& adj, const AlignChoiceRequest& request);
/// Indices of paths to keep. Out-of-range indices are ignored; duplicates collapse.
std::vector<std::size_t> prune_paths(Adjudicator& adj, const PruneRequest& request);
std::vector<ExtractedMention> extract_entities(Adjudicator& adj, const ExtractRequest& request);
/// Every requested entity must receive exactly one label.
CategorizeResponse categorize(Adjudicator& adj, const CategorizeRequest& request);

/// Rule-based offline adjudicator: picks the best candidate, keeps every path,
/// extracts known names found in the text, and labels entities by kind.
class StubAdjudicator final : public Adjudicator {
 public:
  static constexpr const char* kSummary = "stub";

  struct Options {
    bool abstain_align = false;
    std::vector<std::string> vocabulary;  // names recognized by Extract
  };

  StubAdjudicator() = default;
  explicit StubAdjudicator(Options options) : options_(std::move(options)) {}

  std::string identity() const override { return "stub-adjudicator/v1"; }
  std::set<Capability> capabilities() const override;
  nlohmann::json adjudicate(Capability capability, const nlohmann::json& request) override;

 private:
  Options options_;
};

// ---------------------------------------------------------------------------
// Record/replay cache: one file per request digest.

class ResponseCache {
 public:
  static constexpr const char* kHeader = "pathaudit-cache v1";

  explicit ResponseCache(std::filesystem::path dir);

  std::optional<nlohmann::json> get(const std::string& digest) const;
  void put(const std::string& digest, const nlohmann::json& request, const nlohmann::json& response);
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  mutable std::mutex mu_;
};

std::string request_digest(std::string_view identity, std::string_view capability,
                           const nlohmann::json& request);

class CachingAdjudicator final : public Adjudicator {
 public:
  CachingAdjudicator(std::shared_ptr<Adjudicator> inner, std::filesystem::path dir);

  std::string identity() const override { return inner_->identity(); }
  std::set<Capability> capabilities() const override { return inner_->capabilities(); }
  nlohmann::json adjudicate(Capability capability, const nlohmann::json& request) override;

  std::size_t hits() const { return hits_; }
  std::size_t misses() const { return misses_; }

 private:
  std::shared_ptr<Adjudicator> inner_;
  ResponseCache cache_;
  std::atomic<std::size_t> hits_{0}, misses_{0};
};

class CachingEmbedder final : public EmbeddingProvider {
 public:
  CachingEmbedder(std::shared_ptr<EmbeddingProvider> inner, std::filesystem::path dir);

  std::string identity() const override { return inner_->identity(); }
  std::size_t dimension() const override { return inner_->dimension(); }
  std::vector<Vector> embed(std::span<const std::string> texts) override;

 private:
  std::shared_ptr<EmbeddingProvider> inner_;
  ResponseCache cache_;
};

// ---------------------------------------------------------------------------
// Remote providers

struct ProviderConfig {
  std::string endpoint;        // http(s)://host[:port]/path
  std::string credential_env;  // name of env var holding a bearer token; may be empty
  std::string model;
  int timeout_ms = 30000;
  int retries = 3;
  int backoff_ms = 200;
  int max_in_flight = 4;
  int min_interval_ms = 0;     // per-provider rate limit
  std::size_t dimension = 0;   // embedders only
  std::filesystem::path template_dir;  // adjudicators only
};

/// Bounded retries with exponential backoff. Only TransportError is retried.
template <typename Fn>
auto with_retries(int retries, int backoff_ms, Fn&& fn) -> decltype(fn());

class HttpEmbedder final : public EmbeddingProvider {
 public:
  explicit HttpEmbedder(ProviderConfig config);
  std::string identity() const override { return "http-embedder/" + config_.model; }
  std::size_t dimension() const override { return config_.dimension; }
  std::vector<Vector> embed(std::span<const std::string> texts) override;

 private:
  ProviderConfig config_;
  std::counting_semaphore<64> in_flight_;
  std::mutex rate_mu_;
  std::chrono::steady_clock::time_point last_call_{};
};

class HttpAdjudicator final : public Adjudicator {
 public:
  explicit HttpAdjudicator(ProviderConfig config);
  std::string identity() const override { return "http-adjudicator/" + config_.model; }
  std::set<Capability> capabilities() const override;
  nlohmann::json adjudicate(Capability capability, const nlohmann::json& request) override;

 private:
  std::string render_prompt(Capability capability, const nlohmann::json& request) const;

  ProviderConfig config_;
  std::counting_semaphore<64> in_flight_;
  std::mutex rate_mu_;
  std::chrono::steady_clock::time_point last_call_{};
};

}  // namespace pathaudit::services

#include "pathaudit/detail/retry.hpp"
