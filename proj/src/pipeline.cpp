#include <algorithm>
#include <atomic>
#include <thread>

#include "pathaudit/app.hpp"
#include "pathaudit/codec.hpp"
#include "pathaudit/digest.hpp"
#include "pathaudit/error.hpp"
#include "pathaudit/errors.hpp"
#include "pathaudit/grounding.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace pathaudit::app {

namespace {

using store::Stage;
using store::StageStatus;

std::vector<std::string> stage_outputs(Stage s) {
  namespace f = store::files;
  switch (s) {
    case Stage::Ingest: return {f::kNodes, f::kEdges, f::kPolicy};
    case Stage::Align: return {f::kAligned};
    case Stage::ReferencePaths: return {f::kCases};
    case Stage::Detect: return {f::kReports, f::kSummary};
    case Stage::Project: return {f::kLayout};
  }
  return {};
}

class Runner {
 public:
  Runner(const Config& c, const kg::KnowledgeGraph& g, Providers& p, const PipelineOptions& o)
      : c_(c), g_(g), p_(p), o_(o), store_(c.store_root) {}

  PipelineResult run() {
    require(c_, {"corpus", "store_root"});
    if (!fs::exists(c_.corpus)) throw DataError("corpus file not found: " + c_.corpus.string());
    const auto settings = analysis_settings(c_, p_);
    const std::string corpus_digest = sha256_file(c_.corpus);
    const std::string config_digest = sha256_hex(canonical_dump(settings));
    const std::string run_id = store::make_run_id(g_.digest(), corpus_digest, config_digest);

    PipelineResult result;
    result.run_id = run_id;
    result.run_dir = store_.run_dir(run_id);
    store::RunLock lock(result.run_dir);

    if (store_.exists(run_id)) {
      m_ = store_.read_manifest(run_id);
    } else {
      m_.run_id = run_id;
      m_.kg_digest = g_.digest();
      m_.corpus_digest = corpus_digest;
      m_.config_digest = config_digest;
      m_.created_at = store::utc_timestamp();
      m_.config = settings;
      for (auto s : store::kStages) m_.stage_status[s] = StageStatus::Pending;
      store_.write_manifest(m_);
    }
    emit({{"event", "run"}, {"run_id", run_id}, {"dir", result.run_dir.string()}});

    bool upstream_ran = false;
    for (auto s : store::kStages) {
      if (s == Stage::Project && !o_.through_project) break;
      const auto outs = stage_outputs(s);
      const bool intact = m_.status(s) == StageStatus::Done &&
                          std::all_of(outs.begin(), outs.end(), [&](const auto& f) { return store_.artifact_intact(m_, f); });
      if (!upstream_ran && intact) {
        emit({{"event", "stage"}, {"stage", store::to_string(s)}, {"status", "skipped"}});
        continue;
      }
      if (!upstream_ran) {
        for (auto later : store::kStages) {
          if (later > s) m_.stage_status[later] = StageStatus::Pending;
        }
      }
      upstream_ran = true;
      emit({{"event", "stage"}, {"stage", store::to_string(s)}, {"status", "started"}});
      try {
        execute(s);
      } catch (...) {
        m_.stage_status[s] = StageStatus::Failed;
        store_.write_manifest(m_);
        emit({{"event", "stage"}, {"stage", store::to_string(s)}, {"status", "failed"}});
        throw;
      }
      m_.stage_status[s] = StageStatus::Done;
      store_.write_manifest(m_);
      result.executed.push_back(s);
      emit({{"event", "stage"}, {"stage", store::to_string(s)}, {"status", "done"}});
    }
    result.skipped = m_.skipped_cases;
    return result;
  }

 private:
  void emit(json event) const {
    if (o_.progress) o_.progress(event);
  }

  void progress(Stage s, std::size_t done, std::size_t total) const {
    if (total == 0 || (done % 100 != 0 && done != total)) return;
    emit({{"event", "progress"}, {"stage", store::to_string(s)}, {"done", done}, {"total", total}});
  }

  std::vector<grounding::Case> load_cases(const char* file) const {
    return codec::decode_typed<grounding::Case>(store_.read_artifact(m_, file), "cases", file);
  }

  void execute(Stage s) {
    switch (s) {
      case Stage::Ingest: return ingest();
      case Stage::Align: return align();
      case Stage::ReferencePaths: return reference_paths();
      case Stage::Detect: return detect();
      case Stage::Project: return project();
    }
  }

  void ingest() {
    const auto f = store::serialize_kg(g_);
    store_.write_artifact(m_, store::files::kNodes, f.nodes);
    store_.write_artifact(m_, store::files::kEdges, f.edges);
    store_.write_artifact(m_, store::files::kPolicy, f.policy);
  }

  void align() {
    const auto raw = codec::read_corpus(c_.corpus);
    grounding::AlignerOptions ao;
    ao.tau = c_.tau;
    ao.top_k = c_.top_k_candidates;
    ao.embedding_cache_dir = c_.embedding_cache_dir;
    grounding::EntityAligner aligner(g_, *p_.embedder, *p_.adjudicator, ao);
    m_.skipped_cases.clear();
    std::vector<grounding::Case> cases;
    cases.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
      try {
        cases.push_back(grounding::align_case(raw[i], aligner, *p_.adjudicator));
      } catch (const DataError& e) {
        m_.skipped_cases.push_back({raw[i].id, e.what()});
        emit({{"event", "skipped"}, {"case", raw[i].id}, {"reason", e.what()}});
      }
      progress(Stage::Align, i + 1, raw.size());
    }
    cases_ = std::move(cases);
    have_cases_ = true;
    store_.write_artifact(m_, store::files::kAligned,
                          codec::encode_typed<grounding::Case>("cases", cases_));
  }

  void reference_paths() {
    if (!have_cases_) cases_ = load_cases(store::files::kAligned);
    have_cases_ = true;
    for (std::size_t i = 0; i < cases_.size(); ++i) {
      auto& c = cases_[i];
      c.reference_paths = grounding::build_reference_paths(c.question_entity_ids(), c.correct_entity, g_,
                                                           *p_.adjudicator, {c.question, c.options},
                                                           c_.max_paths_per_entity);
      progress(Stage::ReferencePaths, i + 1, cases_.size());
    }
    referenced_ = true;
    store_.write_artifact(m_, store::files::kCases, codec::encode_typed<grounding::Case>("cases", cases_));
  }

  void ensure_referenced() {
    if (!referenced_) cases_ = load_cases(store::files::kCases);
    have_cases_ = referenced_ = true;
  }

  void detect() {
    ensure_referenced();
    std::vector<kg::NodeIndex> targets;
    for (const auto& c : cases_) {
      for (const auto* id : {&c.correct_entity, &c.predicted_entity}) {
        if (auto n = g_.find(*id)) targets.push_back(*n);
      }
    }
    std::sort(targets.begin(), targets.end());
    targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
    g_.warm_ancestors(targets);

    std::vector<errors::CaseErrorReport> reports(cases_.size());
    std::atomic<std::size_t> next{0}, finished{0};
    std::exception_ptr failure;
    std::mutex mu;
    auto work = [&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= cases_.size()) return;
        try {
          reports[i] = errors::analyze_case(cases_[i], g_);
        } catch (...) {
          std::lock_guard lk(mu);
          if (!failure) failure = std::current_exception();
          next = cases_.size();
          return;
        }
        const std::size_t n = finished.fetch_add(1) + 1;
        std::lock_guard lk(mu);
        progress(Stage::Detect, n, cases_.size());
      }
    };
    const std::size_t workers = std::max<std::size_t>(1, std::min(c_.workers, cases_.size()));
    if (workers <= 1) {
      work();
    } else {
      std::vector<std::thread> pool;
      for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(work);
      for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    const auto summary = errors::aggregate_corpus(reports, cases_);
    store_.write_artifact(m_, store::files::kReports,
                          codec::encode_typed<errors::CaseErrorReport>("reports", reports));
    store_.write_artifact(m_, store::files::kSummary, canonical_dump(json(summary)) + "\n");
  }

  void project() {
    ensure_referenced();
    const auto layout = projection::compute_projection(g_, cases_, c_.projection);
    store_.write_artifact(m_, store::files::kLayout, codec::encode_layout(layout));
  }

  const Config& c_;
  const kg::KnowledgeGraph& g_;
  Providers& p_;
  const PipelineOptions& o_;
  store::RunStore store_;
  store::RunManifest m_;
  std::vector<grounding::Case> cases_;
  bool have_cases_ = false;
  bool referenced_ = false;
};

}  // namespace

PipelineResult run_pipeline(const Config& c, const kg::KnowledgeGraph& graph, Providers& providers,
                            const PipelineOptions& options) {
  return Runner(c, graph, providers, options).run();
}

PipelineResult run_pipeline(const Config& c, Providers& providers, const PipelineOptions& options) {
  kg::LoadStats stats;
  const auto graph = load_graph(c, &stats);
  if (options.progress) {
    options.progress({{"event", "ingest"},
                      {"entities", graph.entity_count()},
                      {"edges", graph.edge_count()},
                      {"dropped_edges", stats.dropped_edges}});
  }
  return run_pipeline(c, graph, providers, options);
}

}  // namespace pathaudit::app
