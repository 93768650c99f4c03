#pragma once

// Configuration, provider wiring and the resumable analysis pipeline.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pathaudit/kg.hpp"
#include "pathaudit/projection.hpp"
#include "pathaudit/services.hpp"
#include "pathaudit/store.hpp"

namespace pathaudit::app {

struct KgConfig {
  std::filesystem::path nodes;
  std::filesystem::path edges;
  std::filesystem::path policy;  // empty: parent-of directed, everything else bidirectional
  kg::IngestMode mode = kg::IngestMode::Strict;
};

struct PinConfig {
  std::string text;
  std::string anchor;
  double similarity = 0;
};

struct DoublesConfig {
  std::size_t dimension = 64;
  std::string salt;
  std::vector<PinConfig> pins;
  bool abstain_align = false;
};

struct ProvidersConfig {
  std::string mode = "doubles";  // doubles | http
  services::ProviderConfig embedder;
  services::ProviderConfig adjudicator;
  DoublesConfig doubles;
  std::filesystem::path cache_dir;  // record/replay of provider responses; empty disables
};

struct HeatGridConfig {
  std::size_t width = 256;
  std::size_t height = 256;
  double bandwidth = 0.02;
};

struct ServerConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
};

struct Config {
  KgConfig kg;
  std::filesystem::path corpus;
  ProvidersConfig providers;
  double tau = 0.9;
  std::size_t top_k_candidates = 5;
  std::size_t max_paths_per_entity = 16;
  std::filesystem::path embedding_cache_dir;
  projection::ProjectionConfig projection;
  HeatGridConfig heat_grid;
  std::filesystem::path store_root = "pathaudit-store";
  ServerConfig server;
  std::size_t workers = 1;
};

/// Full key tree with defaults; the reference for unknown-key rejection.
nlohmann::json default_config_json();
nlohmann::json to_json(const Config& c);
/// Throws ConfigError on unknown keys, wrong types or out-of-range values.
Config parse_config(const nlohmann::json& j);
/// `path` may be empty (defaults only). Each override is "dotted.key=value";
/// the value is read as JSON when it parses, otherwise as a string.
Config load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides);
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Throws ConfigError("missing config key: <key>") when unset.
void require(const Config& c, std::initializer_list<std::string_view> keys);

struct Providers {
  std::shared_ptr<services::EmbeddingProvider> embedder;
  std::shared_ptr<services::Adjudicator> adjudicator;
};

/// Doubles: HashEmbedder with the configured pins and a StubAdjudicator whose
/// extraction vocabulary is every entity name of `graph`.
Providers make_providers(const Config& c, const kg::KnowledgeGraph& graph);

/// Settings that determine analysis output, hashed into the run id.
nlohmann::json analysis_settings(const Config& c, const Providers& p);

kg::KnowledgeGraph load_graph(const Config& c, kg::LoadStats* stats = nullptr);

using ProgressSink = std::function<void(const nlohmann::json&)>;

struct PipelineOptions {
  bool through_project = false;
  ProgressSink progress;
};

struct PipelineResult {
  std::string run_id;
  std::filesystem::path run_dir;
  std::vector<store::Stage> executed;
  std::vector<store::SkippedCase> skipped;
};

/// Runs ingest -> align -> reference-paths -> detect [-> project] into the run
/// directory derived from the input digests, skipping stages already Done
/// with intact outputs. Any stage after one that ran is re-run.
PipelineResult run_pipeline(const Config& c, Providers& providers, const PipelineOptions& options);
/// Same, with a graph loaded by the caller.
PipelineResult run_pipeline(const Config& c, const kg::KnowledgeGraph& graph, Providers& providers,
                            const PipelineOptions& options);

/// Demo configuration over the bundled TOY7 fixtures with doubles.
Config demo_config(const std::filesystem::path& data_dir, const std::filesystem::path& store_root);

}  // namespace pathaudit::app

namespace pathaudit::app {

enum class ReportFormat { Text, Csv };

/// Static summary: totals, accuracy and the `top` entities by error intensity.
std::string render_report(const store::RunSnapshot& run, ReportFormat format, std::size_t top);
/// Shortest decimal with at least one fractional digit ("0.0", "0.5", "0.333333").
std::string format_ratio(double v);

}  // namespace pathaudit::app
