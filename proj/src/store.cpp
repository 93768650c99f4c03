#include "pathaudit/store.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <ctime>

#include "pathaudit/codec.hpp"
#include "pathaudit/digest.hpp"
#include "pathaudit/error.hpp"
#include "pathaudit/fsutil.hpp"
#include "pathaudit/text.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace pathaudit::store {

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::Ingest: return "ingest";
    case Stage::Align: return "align";
    case Stage::ReferencePaths: return "reference-paths";
    case Stage::Detect: return "detect";
    case Stage::Project: return "project";
  }
  return "";
}

std::string_view to_string(StageStatus s) {
  switch (s) {
    case StageStatus::Pending: return "Pending";
    case StageStatus::Done: return "Done";
    case StageStatus::Failed: return "Failed";
  }
  return "";
}

Stage parse_stage(std::string_view s) {
  for (auto st : kStages) {
    if (to_string(st) == s) return st;
  }
  throw DataError("unknown stage: " + std::string(s));
}

StageStatus parse_stage_status(std::string_view s) {
  for (auto st : {StageStatus::Pending, StageStatus::Done, StageStatus::Failed}) {
    if (to_string(st) == s) return st;
  }
  throw DataError("unknown stage status: " + std::string(s));
}

StageStatus RunManifest::status(Stage s) const {
  auto it = stage_status.find(s);
  return it == stage_status.end() ? StageStatus::Pending : it->second;
}

bool RunManifest::complete() const {
  return std::all_of(kStages.begin(), kStages.end(), [&](Stage s) { return status(s) == StageStatus::Done; });
}

void to_json(json& j, const RunManifest& m) {
  json stages = json::object();
  for (auto s : kStages) stages[std::string(to_string(s))] = to_string(m.status(s));
  json skipped = json::array();
  for (const auto& s : m.skipped_cases) skipped.push_back({{"id", s.id}, {"reason", s.reason}});
  j = {{"schema_version", m.schema_version},
       {"run_id", m.run_id},
       {"kg_digest", m.kg_digest},
       {"corpus_digest", m.corpus_digest},
       {"config_digest", m.config_digest},
       {"created_at", m.created_at},
       {"stage_status", stages},
       {"outputs", m.outputs},
       {"skipped_cases", skipped},
       {"config", m.config}};
}

void from_json(const json& j, RunManifest& m) {
  m = {};
  m.schema_version = j.at("schema_version").get<int>();
  if (m.schema_version > kSchemaVersion) {
    throw DataError("manifest schema_version " + std::to_string(m.schema_version) + " is newer than supported");
  }
  m.run_id = j.at("run_id").get<std::string>();
  m.kg_digest = j.at("kg_digest").get<std::string>();
  m.corpus_digest = j.at("corpus_digest").get<std::string>();
  m.config_digest = j.at("config_digest").get<std::string>();
  m.created_at = j.at("created_at").get<std::string>();
  for (const auto& [k, v] : j.at("stage_status").items()) m.stage_status[parse_stage(k)] = parse_stage_status(v.get<std::string>());
  m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
  for (const auto& s : j.at("skipped_cases")) m.skipped_cases.push_back({s.at("id").get<std::string>(), s.at("reason").get<std::string>()});
  m.config = j.value("config", json::object());
}

std::string make_run_id(const std::string& kg_digest, const std::string& corpus_digest,
                        const std::string& config_digest) {
  return sha256_hex(kg_digest + "|" + corpus_digest + "|" + config_digest).substr(0, 16);
}

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------

RunLock::RunLock(const fs::path& run_dir) : path_(run_dir / files::kLock) {
  fs::create_directories(run_dir);
  for (int attempt = 0; attempt < 2; ++attempt) {
    int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd >= 0) {
      const std::string pid = std::to_string(::getpid()) + "\n";
      [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
      ::close(fd);
      return;
    }
    if (errno != EEXIST) throw StateError("cannot create lock " + path_.string());
    long holder = 0;
    try {
      holder = std::stol(read_file(path_));
    } catch (const std::exception&) {
    }
    const bool alive = holder > 0 && (::kill(static_cast<pid_t>(holder), 0) == 0 || errno == EPERM);
    if (alive) throw StateError("run is locked by process " + std::to_string(holder) + " (" + path_.string() + ")");
    fs::remove(path_);
  }
  throw StateError("cannot acquire lock " + path_.string());
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

// ---------------------------------------------------------------------------

RunStore::RunStore(fs::path root) : root_(std::move(root)) {}

fs::path RunStore::run_dir(const std::string& run_id) const { return root_ / "runs" / run_id; }

bool RunStore::exists(const std::string& run_id) const { return fs::exists(run_dir(run_id) / files::kManifest); }

std::vector<std::string> RunStore::list_runs() const {
  std::vector<std::string> out;
  const auto dir = root_ / "runs";
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (fs::exists(e.path() / files::kManifest)) out.push_back(e.path().filename().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

RunManifest RunStore::read_manifest(const std::string& run_id) const {
  if (run_id.empty() || run_id.find('/') != std::string::npos || run_id.find("..") != std::string::npos ||
      !exists(run_id)) {
    throw NotFoundError("unknown run: " + run_id);
  }
  const auto path = run_dir(run_id) / files::kManifest;
  json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw DataError(path.string() + ": malformed manifest");
  try {
    return j.get<RunManifest>();
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void RunStore::write_manifest(const RunManifest& m) const {
  write_file_atomic(run_dir(m.run_id) / files::kManifest, json(m).dump(2) + "\n");
}

void RunStore::write_artifact(RunManifest& m, const std::string& name, std::string_view content) const {
  write_file_atomic(run_dir(m.run_id) / name, content);
  m.outputs[name] = sha256_hex(content);
}

std::string RunStore::read_artifact(const RunManifest& m, const std::string& name) const {
  auto it = m.outputs.find(name);
  if (it == m.outputs.end()) throw NotFoundError("run " + m.run_id + " has no artifact " + name);
  const auto path = run_dir(m.run_id) / name;
  if (!fs::exists(path)) throw IntegrityError("digest mismatch: " + path.string() + " is missing");
  std::string content = read_file(path);
  if (sha256_hex(content) != it->second) throw IntegrityError("digest mismatch: " + path.string());
  return content;
}

bool RunStore::artifact_intact(const RunManifest& m, const std::string& name) const {
  try {
    read_artifact(m, name);
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

void RunStore::verify(const RunManifest& m) const {
  for (const auto& [name, digest] : m.outputs) read_artifact(m, name);
}

KgFiles serialize_kg(const kg::KnowledgeGraph& g) {
  KgFiles f;
  f.nodes = "id\tname\ttype\n";
  for (const auto& e : g.entities()) {
    f.nodes += e.id + "\t" + e.name + "\t" + std::string(kg::to_string(e.kind)) + "\n";
  }
  f.edges = "src\trelation\tdst\n";
  for (const auto& e : g.edges()) f.edges += e.src + "\t" + e.relation + "\t" + e.dst + "\n";
  json p = {{"directed_relations", json::array()}};
  for (const auto& r : g.policy().directed_relations) p["directed_relations"].push_back(r);
  f.policy = p.dump(2) + "\n";
  return f;
}

// ---------------------------------------------------------------------------
// Snapshot

const grounding::Case* RunSnapshot::find_case(const std::string& id) const {
  auto it = case_index.find(id);
  return it == case_index.end() ? nullptr : &cases[it->second];
}

const errors::CaseErrorReport* RunSnapshot::find_report(const std::string& id) const {
  auto it = case_index.find(id);
  if (it == case_index.end() || it->second >= reports.size()) return nullptr;
  return &reports[it->second];
}

std::string RunSnapshot::entity_name(const kg::EntityId& id) const {
  if (!graph) return id;
  auto idx = graph->find(id);
  return idx ? graph->entity(*idx).name : id;
}

RunSnapshot load_run(const RunStore& store, const std::string& run_id) {
  RunSnapshot s;
  s.manifest = store.read_manifest(run_id);
  s.dir = store.run_dir(run_id);
  store.verify(s.manifest);
  const auto& m = s.manifest;
  auto done = [&](Stage st) { return m.status(st) == StageStatus::Done; };

  if (done(Stage::Ingest)) {
    store.read_artifact(m, files::kNodes);
    store.read_artifact(m, files::kEdges);
    const auto policy = kg::load_policy(s.dir / files::kPolicy);
    auto g = kg::load_kg(s.dir / files::kNodes, s.dir / files::kEdges, policy);
    if (g.digest() != m.kg_digest) throw IntegrityError("digest mismatch: graph of run " + run_id);
    s.graph = std::make_shared<const kg::KnowledgeGraph>(std::move(g));
  }
  if (done(Stage::ReferencePaths)) {
    s.cases = codec::decode_typed<grounding::Case>(store.read_artifact(m, files::kCases), "cases", files::kCases);
  } else if (done(Stage::Align)) {
    s.cases = codec::decode_typed<grounding::Case>(store.read_artifact(m, files::kAligned), "cases", files::kAligned);
  }
  for (std::size_t i = 0; i < s.cases.size(); ++i) s.case_index.emplace(s.cases[i].id, i);
  if (done(Stage::Detect)) {
    s.reports = codec::decode_typed<errors::CaseErrorReport>(store.read_artifact(m, files::kReports), "reports",
                                                             files::kReports);
    if (s.reports.size() != s.cases.size()) throw DataError("run " + run_id + ": report count differs from case count");
    for (std::size_t i = 0; i < s.reports.size(); ++i) {
      if (s.reports[i].case_id != s.cases[i].id) throw DataError("run " + run_id + ": reports out of order");
    }
    json j = json::parse(store.read_artifact(m, files::kSummary), nullptr, false);
    if (j.is_discarded()) throw DataError("run " + run_id + ": malformed summary");
    s.summary = j.get<errors::CorpusSummary>();
  }
  if (done(Stage::Project)) s.layout = codec::decode_layout(store.read_artifact(m, files::kLayout), files::kLayout);
  return s;
}

// ---------------------------------------------------------------------------
// Queries

CaseIndexEntry index_entry(const grounding::Case& c, const errors::CaseErrorReport& r) {
  return {c.id, c.question_entity_ids(), r.n_rel, r.n_br, r.n_miss, r.total_errors(),
          c.predicted_answer, c.correct_answer, r.correct};
}

std::string_view to_string(CaseSort s) { return s == CaseSort::TotalErrorsDesc ? "TotalErrorsDesc" : "CaseIdAsc"; }

CaseSort parse_case_sort(std::string_view s) {
  if (s == "TotalErrorsDesc") return CaseSort::TotalErrorsDesc;
  if (s == "CaseIdAsc") return CaseSort::CaseIdAsc;
  throw PreconditionError("unknown sort: " + std::string(s));
}

namespace {

bool mentions_entity(const grounding::Case& c, const errors::CaseErrorReport& r, const kg::EntityId& id) {
  for (const auto& q : c.question_entities) {
    if (q.entity && *q.entity == id) return true;
  }
  for (auto k : errors::kAllKinds) {
    for (const auto& rec : r.records(k)) {
      if (rec.target == id || (rec.source && *rec.source == id)) return true;
    }
  }
  return false;
}

bool matches_text(const RunSnapshot& run, const grounding::Case& c, const std::string& text) {
  if (contains_ci(c.question, text)) return true;
  std::set<kg::EntityId> ids;
  for (const auto& q : c.question_entities) {
    if (q.entity) ids.insert(*q.entity);
  }
  for (const auto& p : c.model_paths) {
    for (const auto& s : p.steps) ids.insert(s.entity);
  }
  for (const auto& p : c.reference_paths) ids.insert(p.nodes.begin(), p.nodes.end());
  ids.insert(c.correct_entity);
  ids.insert(c.predicted_entity);
  for (const auto& id : ids) {
    if (contains_ci(run.entity_name(id), text)) return true;
  }
  return false;
}

}  // namespace

CasePage query_cases(const RunSnapshot& run, const CaseFilter& filter, CaseSort sort, std::size_t offset,
                     std::size_t limit) {
  std::vector<CaseIndexEntry> all;
  for (std::size_t i = 0; i < run.cases.size() && i < run.reports.size(); ++i) {
    const auto& c = run.cases[i];
    const auto& r = run.reports[i];
    if (filter.entity && !mentions_entity(c, r, *filter.entity)) continue;
    if (filter.kind && r.count(*filter.kind) == 0) continue;
    if (filter.text && !matches_text(run, c, *filter.text)) continue;
    all.push_back(index_entry(c, r));
  }
  if (sort == CaseSort::CaseIdAsc) {
    std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.case_id < b.case_id; });
  } else {
    std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
      return a.total_errors != b.total_errors ? a.total_errors > b.total_errors : a.case_id < b.case_id;
    });
  }
  CasePage page;
  page.total = all.size();
  for (std::size_t i = offset; i < all.size() && i - offset < limit; ++i) page.entries.push_back(std::move(all[i]));
  return page;
}

InstanceBundle get_instance(const RunSnapshot& run, const std::string& case_id) {
  const auto* c = run.find_case(case_id);
  const auto* r = run.find_report(case_id);
  if (!c || !r) throw NotFoundError("unknown case: " + case_id);
  const auto mentioned_ids = c->question_entity_ids();
  const std::set<kg::EntityId> mentioned(mentioned_ids.begin(), mentioned_ids.end());
  auto node = [&](const kg::EntityId& id) { return InstanceNode{id, run.entity_name(id), mentioned.count(id) > 0}; };

  InstanceBundle b;
  b.case_id = c->id;
  b.question = c->question;
  b.options = c->options;
  b.correct_answer = c->correct_answer;
  b.predicted_answer = c->predicted_answer;
  b.correct_entity = c->correct_entity;
  b.predicted_entity = c->predicted_entity;
  b.correct = r->correct;
  b.n_rel = r->n_rel;
  b.n_br = r->n_br;
  b.n_miss = r->n_miss;
  for (const auto& id : mentioned_ids) b.question_entities.push_back(node(id));

  for (const auto& p : c->reference_paths) {
    InstancePath ip;
    for (const auto& id : p.nodes) ip.nodes.push_back(node(id));
    for (std::size_t i = 0; i + 1 < p.nodes.size(); ++i) ip.steps.push_back({p.nodes[i], p.nodes[i + 1], p.relations[i], {}});
    b.reference_paths.push_back(std::move(ip));
  }
  std::map<errors::EntityPair, std::vector<errors::ErrorKind>> labels;
  for (auto k : {errors::ErrorKind::Relation, errors::ErrorKind::Branch}) {
    for (const auto& rec : r->records(k)) labels[{*rec.source, rec.target}].push_back(k);
  }
  for (const auto& p : c->model_paths) {
    InstancePath ip;
    ip.dropped_steps = p.dropped_steps;
    for (const auto& s : p.steps) ip.nodes.push_back(node(s.entity));
    for (std::size_t i = 0; i + 1 < p.steps.size(); ++i) {
      const errors::EntityPair key{p.steps[i].entity, p.steps[i + 1].entity};
      auto it = labels.find(key);
      ip.steps.push_back({key.first, key.second, p.steps[i].relation_label,
                          it == labels.end() ? std::vector<errors::ErrorKind>{} : it->second});
    }
    b.model_paths.push_back(std::move(ip));
  }
  for (const auto& rec : r->missing_errors) b.missing_entities.push_back(node(rec.target));
  return b;
}

void to_json(json& j, const CaseIndexEntry& e) {
  j = {{"case_id", e.case_id},
       {"question_entity_ids", e.question_entity_ids},
       {"n_rel", e.n_rel},
       {"n_br", e.n_br},
       {"n_miss", e.n_miss},
       {"total_errors", e.total_errors},
       {"predicted_answer", e.predicted_answer},
       {"correct_answer", e.correct_answer},
       {"correct", e.correct}};
}

namespace {

json node_json(const InstanceNode& n) { return {{"id", n.id}, {"name", n.name}, {"mentioned", n.mentioned}}; }

json path_json(const InstancePath& p) {
  json nodes = json::array(), steps = json::array();
  for (const auto& n : p.nodes) nodes.push_back(node_json(n));
  for (const auto& s : p.steps) {
    json labels = json::array();
    for (auto k : s.labels) labels.push_back(errors::to_string(k));
    steps.push_back({{"source", s.source}, {"target", s.target}, {"relation", s.relation}, {"labels", labels}});
  }
  return {{"nodes", nodes}, {"steps", steps}, {"dropped_steps", p.dropped_steps}};
}

}  // namespace

void to_json(json& j, const InstanceBundle& b) {
  json q = json::array(), ref = json::array(), model = json::array(), missing = json::array();
  for (const auto& n : b.question_entities) q.push_back(node_json(n));
  for (const auto& p : b.reference_paths) ref.push_back(path_json(p));
  for (const auto& p : b.model_paths) model.push_back(path_json(p));
  for (const auto& n : b.missing_entities) missing.push_back(node_json(n));
  j = {{"case_id", b.case_id},
       {"question", b.question},
       {"options", b.options},
       {"correct_answer", b.correct_answer},
       {"predicted_answer", b.predicted_answer},
       {"correct_entity", b.correct_entity},
       {"predicted_entity", b.predicted_entity},
       {"correct", b.correct},
       {"question_entities", q},
       {"reference_paths", ref},
       {"model_paths", model},
       {"missing_entities", missing},
       {"counts", {{"Relation", b.n_rel}, {"Branch", b.n_br}, {"Missing", b.n_miss}}}};
}

// ---------------------------------------------------------------------------

fs::path ExpansionCache::file(const std::string& anchor, errors::ErrorKind kind, errors::ExpansionMode mode) const {
  return dir_ / (std::string(errors::to_string(kind)) + "-" + std::string(errors::to_string(mode)) + "-" +
                 sha256_hex(anchor).substr(0, 24) + ".json");
}

std::optional<json> ExpansionCache::get(const std::string& anchor, errors::ErrorKind kind,
                                        errors::ExpansionMode mode) const {
  std::lock_guard lock(mu_);
  const auto path = file(anchor, kind, mode);
  if (!fs::exists(path)) return std::nullopt;
  json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded() || j.value("anchor", std::string()) != anchor) return std::nullopt;
  return j.at("value");
}

void ExpansionCache::put(const std::string& anchor, errors::ErrorKind kind, errors::ExpansionMode mode,
                         const json& value) {
  std::lock_guard lock(mu_);
  write_file_atomic(file(anchor, kind, mode), canonical_dump({{"anchor", anchor}, {"value", value}}) + "\n");
}

}  // namespace pathaudit::store
