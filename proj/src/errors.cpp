#include "pathaudit/errors.hpp"

#include <algorithm>

#include "pathaudit/error.hpp"

namespace pathaudit::errors {

std::string_view to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::Relation: return "Relation";
    case ErrorKind::Branch: return "Branch";
    case ErrorKind::Missing: return "Missing";
  }
  return "";
}

ErrorKind parse_error_kind(std::string_view s) {
  for (auto k : kAllKinds) {
    if (to_string(k) == s) return k;
  }
  throw DataError("unknown error kind: " + std::string(s));
}

std::string_view to_string(ExpansionMode m) {
  return m == ExpansionMode::AlongErrorSet ? "AlongErrorSet" : "AlongReferenceSet";
}

ExpansionMode parse_expansion_mode(std::string_view s) {
  if (s == "AlongErrorSet") return ExpansionMode::AlongErrorSet;
  if (s == "AlongReferenceSet") return ExpansionMode::AlongReferenceSet;
  throw DataError("unknown expansion mode: " + std::string(s));
}

std::size_t CaseErrorReport::count(ErrorKind k) const {
  switch (k) {
    case ErrorKind::Relation: return n_rel;
    case ErrorKind::Branch: return n_br;
    case ErrorKind::Missing: return n_miss;
  }
  return 0;
}

const std::vector<ErrorRecord>& CaseErrorReport::records(ErrorKind k) const {
  switch (k) {
    case ErrorKind::Relation: return relation_errors;
    case ErrorKind::Branch: return branch_errors;
    case ErrorKind::Missing: break;
  }
  return missing_errors;
}

// ---------------------------------------------------------------------------
// Node and pair sets

std::set<EntityPair> observed_pairs(const Case& c) {
  std::set<EntityPair> out;
  for (const auto& p : c.model_paths) {
    for (std::size_t i = 0; i + 1 < p.steps.size(); ++i) out.emplace(p.steps[i].entity, p.steps[i + 1].entity);
  }
  return out;
}

std::set<EntityId> observed_nodes(const Case& c) {
  std::set<EntityId> out;
  for (const auto& p : c.model_paths) {
    for (const auto& s : p.steps) out.insert(s.entity);
  }
  return out;
}

std::set<EntityId> reference_nodes(const Case& c) {
  std::set<EntityId> out;
  for (const auto& p : c.reference_paths) out.insert(p.nodes.begin(), p.nodes.end());
  return out;
}

std::set<EntityPair> reference_pairs(const Case& c) {
  std::set<EntityPair> out;
  for (const auto& p : c.reference_paths) {
    for (std::size_t i = 0; i + 1 < p.nodes.size(); ++i) out.emplace(p.nodes[i], p.nodes[i + 1]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Detectors

std::vector<ErrorRecord> detect_relation_errors(const Case& c, const kg::KnowledgeGraph& g) {
  std::vector<ErrorRecord> out;
  for (const auto& [a, b] : observed_pairs(c)) {
    if (!g.reach(g.index_of(a), g.index_of(b))) out.push_back({c.id, ErrorKind::Relation, a, b, false});
  }
  return out;
}

std::vector<ErrorRecord> detect_branch_errors(const Case& c, const kg::KnowledgeGraph& g) {
  std::vector<ErrorRecord> out;
  const auto pairs = observed_pairs(c);
  if (pairs.empty()) return out;
  const auto anc = g.ancestors(g.index_of(c.correct_entity));
  for (const auto& [a, b] : pairs) {
    const auto ia = g.index_of(a);
    const auto ib = g.index_of(b);
    if (anc.contains(ia) && !anc.contains(ib)) {
      out.push_back({c.id, ErrorKind::Branch, a, b, !g.reach(ia, ib)});
    }
  }
  return out;
}

std::vector<ErrorRecord> detect_missing_errors(const Case& c, const kg::KnowledgeGraph& g) {
  std::vector<ErrorRecord> out;
  const auto observed = observed_nodes(c);
  const auto correct = g.index_of(c.correct_entity);
  const auto predicted = g.index_of(c.predicted_entity);
  for (const auto& m : reference_nodes(c)) {
    if (m == c.correct_entity || observed.count(m)) continue;
    const auto im = g.index_of(m);
    if (g.reach(im, correct) && !g.reach(im, predicted)) {
      out.push_back({c.id, ErrorKind::Missing, std::nullopt, m, false});
    }
  }
  return out;
}

CaseErrorReport analyze_case(const Case& c, const kg::KnowledgeGraph& g) {
  CaseErrorReport r;
  r.case_id = c.id;
  r.relation_errors = detect_relation_errors(c, g);
  r.branch_errors = detect_branch_errors(c, g);
  r.missing_errors = detect_missing_errors(c, g);
  r.n_rel = r.relation_errors.size();
  r.n_br = r.branch_errors.size();
  r.n_miss = r.missing_errors.size();
  r.correct = c.correct();
  return r;
}

// ---------------------------------------------------------------------------
// Aggregation

std::optional<double> CorpusSummary::accuracy() const {
  if (total_cases == 0) return std::nullopt;
  return static_cast<double>(correct_cases) / static_cast<double>(total_cases);
}

std::map<EntityId, std::size_t> CorpusSummary::intensity(std::optional<ErrorKind> kind) const {
  std::map<EntityId, std::size_t> out;
  for (const auto& [key, n] : per_entity_intensity) {
    if (n == 0 || (kind && key.second != *kind)) continue;
    out[key.first] += n;
  }
  return out;
}

CorpusSummary aggregate_corpus(std::span<const CaseErrorReport> reports, std::span<const Case> cases) {
  if (reports.size() != cases.size()) {
    throw DataError("aggregate_corpus: " + std::to_string(reports.size()) + " reports for " +
                    std::to_string(cases.size()) + " cases");
  }
  CorpusSummary s;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    const auto& c = cases[i];
    if (r.case_id != c.id) throw DataError("aggregate_corpus: report " + r.case_id + " does not match case " + c.id);
    ++s.total_cases;
    ++(r.correct ? s.correct_cases : s.incorrect_cases);
    std::set<EntityId> error_endpoints;
    for (auto k : kAllKinds) {
      s.totals[static_cast<std::size_t>(k)] += r.count(k);
      for (const auto& rec : r.records(k)) {
        ++s.per_entity_intensity[{rec.target, k}];
        if (rec.source) {
          ++s.per_entity_intensity[{*rec.source, k}];
          error_endpoints.insert(*rec.source);
          error_endpoints.insert(rec.target);
        }
      }
    }
    const auto ref = reference_nodes(c);
    const auto obs = observed_nodes(c);
    for (const auto& e : ref) ++s.per_entity_roles[e].ref_path_occurrences;
    for (const auto& e : obs) {
      auto& roles = s.per_entity_roles[e];
      ++(error_endpoints.count(e) ? roles.observed_error_occurrences : roles.observed_nonerror_occurrences);
    }
    std::set<EntityId> any = ref;
    any.insert(obs.begin(), obs.end());
    for (const auto& e : any) ++s.per_entity_roles[e].total_occurrences;
  }
  return s;
}

CorpusSummary merge(CorpusSummary a, const CorpusSummary& b) {
  a.total_cases += b.total_cases;
  a.correct_cases += b.correct_cases;
  a.incorrect_cases += b.incorrect_cases;
  for (std::size_t k = 0; k < a.totals.size(); ++k) a.totals[k] += b.totals[k];
  for (const auto& [key, n] : b.per_entity_intensity) a.per_entity_intensity[key] += n;
  for (const auto& [e, roles] : b.per_entity_roles) {
    auto& r = a.per_entity_roles[e];
    r.ref_path_occurrences += roles.ref_path_occurrences;
    r.observed_error_occurrences += roles.observed_error_occurrences;
    r.observed_nonerror_occurrences += roles.observed_nonerror_occurrences;
    r.total_occurrences += roles.total_occurrences;
  }
  return a;
}

// ---------------------------------------------------------------------------
// Expansion

namespace {

const Case* find_case(const CorpusView& corpus, std::size_t report_index) {
  const auto& id = corpus.reports[report_index].case_id;
  if (report_index < corpus.cases.size() && corpus.cases[report_index].id == id) return &corpus.cases[report_index];
  for (const auto& c : corpus.cases) {
    if (c.id == id) return &c;
  }
  return nullptr;
}

}  // namespace

std::map<EntityPair, std::set<std::string>> corpus_error_pairs(ErrorKind kind, const CorpusView& corpus) {
  std::map<EntityPair, std::set<std::string>> out;
  for (std::size_t i = 0; i < corpus.reports.size(); ++i) {
    const auto& r = corpus.reports[i];
    for (const auto& rec : r.records(kind)) {
      if (kind == ErrorKind::Missing) {
        const Case* c = find_case(corpus, i);
        if (c) out[{rec.target, c->predicted_entity}].insert(r.case_id);
      } else {
        out[{*rec.source, rec.target}].insert(r.case_id);
      }
    }
  }
  return out;
}

std::map<EntityPair, std::set<std::string>> corpus_reference_pairs(ErrorKind kind, const CorpusView& corpus) {
  std::map<EntityPair, std::set<std::string>> out;
  if (kind == ErrorKind::Missing) {
    for (std::size_t i = 0; i < corpus.reports.size(); ++i) {
      const Case* c = find_case(corpus, i);
      if (!c) continue;
      for (const auto& rec : corpus.reports[i].missing_errors) out[{rec.target, c->correct_entity}].insert(c->id);
    }
    return out;
  }
  for (const auto& c : corpus.cases) {
    for (const auto& p : reference_pairs(c)) out[p].insert(c.id);
  }
  return out;
}

PatternExpansion expand_pattern(const EntityId& anchor, ErrorKind kind, ExpansionMode mode,
                                const CorpusView& corpus) {
  PatternExpansion x;
  x.anchor = anchor;
  x.kind = kind;
  x.mode = mode;
  const auto err_pairs = corpus_error_pairs(kind, corpus);
  const auto ref_pairs = corpus_reference_pairs(kind, corpus);

  for (const auto& [pair, support] : err_pairs) {
    if (pair.first != anchor) continue;
    x.error_targets.insert(pair.second);
    x.related_error_pairs.insert(pair);
    x.error_support[pair] = support;
  }
  for (const auto& [pair, support] : ref_pairs) {
    if (pair.first != anchor) continue;
    x.reference_targets.insert(pair.second);
    x.related_reference_pairs.insert(pair);
    x.reference_support[pair] = support;
  }
  // Without a qualifying error record the anchor has no pattern to expand.
  if (x.error_targets.empty()) return PatternExpansion{anchor, kind, mode, {}, {}, {}, {}, {}, {}};

  if (mode == ExpansionMode::AlongErrorSet) {
    for (const auto& [pair, support] : err_pairs) {
      if (!x.error_targets.count(pair.second)) continue;
      x.related_error_pairs.insert(pair);
      x.error_support[pair] = support;
    }
  } else {
    for (const auto& [pair, support] : ref_pairs) {
      if (!x.reference_targets.count(pair.second)) continue;
      x.related_reference_pairs.insert(pair);
      x.reference_support[pair] = support;
    }
  }
  return x;
}

PatternSummary summarize_pattern(const PatternExpansion& expansion, services::Adjudicator& adjudicator,
                                 const EntityTable& entities, const std::vector<std::string>& questions) {
  if (expansion.empty()) throw PreconditionError("summarize_pattern: empty expansion");
  auto describe = [&](const std::set<EntityId>& ids) {
    std::vector<services::CategorizeEntity> out;
    for (const auto& id : ids) {
      auto it = entities.find(id);
      if (it == entities.end()) throw UnknownEntityError(id);
      out.push_back({id, it->second.name, std::string(kg::to_string(it->second.kind))});
    }
    return out;
  };
  services::CategorizeRequest request{describe(expansion.error_targets), describe(expansion.reference_targets),
                                      questions};
  auto reply = services::categorize(adjudicator, request);
  return {std::move(reply.categories_err), std::move(reply.categories_ref), std::move(reply.summary)};
}

}  // namespace pathaudit::errors
