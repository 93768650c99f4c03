#pragma once

// Content-addressed run directories and the case queries served from them.
//
// <root>/runs/<run_id>/
//   manifest.json      digests, stage status, output file digests, skipped cases
//   kg/                canonical copy of the ingested graph (nodes.tsv, edges.tsv, policy.json)
//   aligned.jsonl      grounded cases without reference paths
//   cases.jsonl        grounded cases with reference paths
//   reports.jsonl      per-case error reports
//   summary.json       corpus summary
//   layout.tsv         2D projection
//   expansions/        pattern expansion cache
//   .lock              writer lock

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pathaudit/errors.hpp"
#include "pathaudit/grounding.hpp"
#include "pathaudit/kg.hpp"
#include "pathaudit/projection.hpp"

namespace pathaudit::store {

enum class Stage { Ingest, Align, ReferencePaths, Detect, Project };
enum class StageStatus { Pending, Done, Failed };
inline constexpr std::array<Stage, 5> kStages{Stage::Ingest, Stage::Align, Stage::ReferencePaths, Stage::Detect,
                                              Stage::Project};

std::string_view to_string(Stage s);
std::string_view to_string(StageStatus s);
Stage parse_stage(std::string_view s);
StageStatus parse_stage_status(std::string_view s);

namespace files {
inline constexpr const char* kManifest = "manifest.json";
inline constexpr const char* kNodes = "kg/nodes.tsv";
inline constexpr const char* kEdges = "kg/edges.tsv";
inline constexpr const char* kPolicy = "kg/policy.json";
inline constexpr const char* kAligned = "aligned.jsonl";
inline constexpr const char* kCases = "cases.jsonl";
inline constexpr const char* kReports = "reports.jsonl";
inline constexpr const char* kSummary = "summary.json";
inline constexpr const char* kLayout = "layout.tsv";
inline constexpr const char* kExpansions = "expansions";
inline constexpr const char* kLock = ".lock";
}  // namespace files

struct SkippedCase {
  std::string id;
  std::string reason;
  friend bool operator==(const SkippedCase&, const SkippedCase&) = default;
};

struct RunManifest {
  int schema_version = 1;
  std::string run_id;
  std::string kg_digest;
  std::string corpus_digest;
  std::string config_digest;
  std::string created_at;
  std::map<Stage, StageStatus> stage_status;
  std::map<std::string, std::string> outputs;  // relative file -> sha256
  std::vector<SkippedCase> skipped_cases;
  nlohmann::json config;  // analysis settings the digest was computed over

  StageStatus status(Stage s) const;
  bool complete() const;
  friend bool operator==(const RunManifest&, const RunManifest&) = default;
};

void to_json(nlohmann::json& j, const RunManifest& m);
void from_json(const nlohmann::json& j, RunManifest& m);

/// First 16 hex digits of sha256(kg | corpus | config).
std::string make_run_id(const std::string& kg_digest, const std::string& corpus_digest,
                        const std::string& config_digest);
std::string utc_timestamp();

/// Exclusive writer lock on a run directory. A lock left by a dead process is
/// taken over. Throws StateError if another live process holds it.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& run_dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

class RunStore {
 public:
  explicit RunStore(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path run_dir(const std::string& run_id) const;
  bool exists(const std::string& run_id) const;
  std::vector<std::string> list_runs() const;

  /// Throws NotFoundError for unknown runs.
  RunManifest read_manifest(const std::string& run_id) const;
  void write_manifest(const RunManifest& m) const;

  /// Atomic write; records the content digest in `m.outputs` (manifest not saved).
  void write_artifact(RunManifest& m, const std::string& name, std::string_view content) const;
  /// Reads and checks the recorded digest; IntegrityError on mismatch.
  std::string read_artifact(const RunManifest& m, const std::string& name) const;
  /// True when the file exists and matches its recorded digest.
  bool artifact_intact(const RunManifest& m, const std::string& name) const;
  /// Checks every recorded output; IntegrityError on the first mismatch.
  void verify(const RunManifest& m) const;

 private:
  std::filesystem::path root_;
};

struct KgFiles {
  std::string nodes;
  std::string edges;
  std::string policy;
};

/// Canonical TSV/JSON form of a graph, loadable by kg::load_kg.
KgFiles serialize_kg(const kg::KnowledgeGraph& g);

// ---------------------------------------------------------------------------
// Loaded snapshot and queries

struct RunSnapshot {
  RunManifest manifest;
  std::filesystem::path dir;
  std::shared_ptr<const kg::KnowledgeGraph> graph;
  std::vector<grounding::Case> cases;
  std::vector<errors::CaseErrorReport> reports;
  errors::CorpusSummary summary;
  projection::ProjectionLayout layout;
  std::map<std::string, std::size_t> case_index;  // id -> position

  const grounding::Case* find_case(const std::string& id) const;
  const errors::CaseErrorReport* find_report(const std::string& id) const;
  std::string entity_name(const kg::EntityId& id) const;
};

/// Loads whatever stages are Done after verifying every recorded digest.
/// Throws NotFoundError for unknown runs and IntegrityError on tampering.
RunSnapshot load_run(const RunStore& store, const std::string& run_id);

struct CaseIndexEntry {
  std::string case_id;
  std::vector<kg::EntityId> question_entity_ids;
  std::size_t n_rel = 0;
  std::size_t n_br = 0;
  std::size_t n_miss = 0;
  std::size_t total_errors = 0;
  std::string predicted_answer;
  std::string correct_answer;
  bool correct = false;
  friend bool operator==(const CaseIndexEntry&, const CaseIndexEntry&) = default;
};

CaseIndexEntry index_entry(const grounding::Case& c, const errors::CaseErrorReport& r);

enum class CaseSort { TotalErrorsDesc, CaseIdAsc };
std::string_view to_string(CaseSort s);
CaseSort parse_case_sort(std::string_view s);  // throws PreconditionError

struct CaseFilter {
  std::optional<kg::EntityId> entity;  // question entity or any error record endpoint
  std::optional<errors::ErrorKind> kind;
  std::optional<std::string> text;  // case-insensitive substring of question or entity names
};

struct CasePage {
  std::size_t total = 0;  // matches before paging
  std::vector<CaseIndexEntry> entries;
};

CasePage query_cases(const RunSnapshot& run, const CaseFilter& filter, CaseSort sort, std::size_t offset,
                     std::size_t limit);

struct InstanceNode {
  kg::EntityId id;
  std::string name;
  bool mentioned = false;
};

struct InstanceStep {
  kg::EntityId source;
  kg::EntityId target;
  std::string relation;
  std::vector<errors::ErrorKind> labels;
};

struct InstancePath {
  std::vector<InstanceNode> nodes;
  std::vector<InstanceStep> steps;
  std::size_t dropped_steps = 0;
};

struct InstanceBundle {
  std::string case_id;
  std::string question;
  std::vector<std::string> options;
  std::string correct_answer;
  std::string predicted_answer;
  kg::EntityId correct_entity;
  kg::EntityId predicted_entity;
  bool correct = false;
  std::vector<InstanceNode> question_entities;
  std::vector<InstancePath> reference_paths;
  std::vector<InstancePath> model_paths;
  std::vector<InstanceNode> missing_entities;
  std::size_t n_rel = 0, n_br = 0, n_miss = 0;
};

/// Throws NotFoundError for unknown cases.
InstanceBundle get_instance(const RunSnapshot& run, const std::string& case_id);

void to_json(nlohmann::json& j, const CaseIndexEntry& e);
void to_json(nlohmann::json& j, const InstanceBundle& b);

/// Expansion cache keyed by (anchor, kind, mode); single writer per process.
class ExpansionCache {
 public:
  explicit ExpansionCache(std::filesystem::path dir) : dir_(std::move(dir)) {}
  std::optional<nlohmann::json> get(const std::string& anchor, errors::ErrorKind kind, errors::ExpansionMode mode) const;
  void put(const std::string& anchor, errors::ErrorKind kind, errors::ExpansionMode mode, const nlohmann::json& value);

 private:
  std::filesystem::path file(const std::string& anchor, errors::ErrorKind kind, errors::ExpansionMode mode) const;
  std::filesystem::path dir_;
  mutable std::mutex mu_;
};

}  // namespace pathaudit::store
