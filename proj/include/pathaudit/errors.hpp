#pragma once

// Structural error detection for grounded reasoning paths.
//
// For a case with correct answer y* and prediction ŷ, and observed step pairs
// (a, b) taken from consecutive grounded model-path entities:
//   relation: Reach(a, b) is false
//   branch:   a in Anc(y*) and b not in Anc(y*)
//   missing:  M in V(reference) \ V(observed), M != y*, Reach(M, y*) and not Reach(M, ŷ)
// Relation and branch are evaluated independently; one pair may carry both.

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pathaudit/grounding.hpp"
#include "pathaudit/kg.hpp"
#include "pathaudit/services.hpp"

namespace pathaudit::errors {

using grounding::Case;
using kg::EntityId;
using EntityPair = std::pair<EntityId, EntityId>;

enum class ErrorKind { Relation, Branch, Missing };
inline constexpr std::array<ErrorKind, 3> kAllKinds{ErrorKind::Relation, ErrorKind::Branch, ErrorKind::Missing};

std::string_view to_string(ErrorKind k);
ErrorKind parse_error_kind(std::string_view s);  // throws DataError

struct ErrorRecord {
  std::string case_id;
  ErrorKind kind = ErrorKind::Relation;
  std::optional<EntityId> source;  // absent for Missing
  EntityId target;
  /// Branch records only: the same pair is also a relation error.
  bool also_relation_error = false;

  friend bool operator==(const ErrorRecord&, const ErrorRecord&) = default;
  friend auto operator<=>(const ErrorRecord& a, const ErrorRecord& b) {
    return std::tie(a.case_id, a.kind, a.source, a.target) <=> std::tie(b.case_id, b.kind, b.source, b.target);
  }
};

struct CaseErrorReport {
  std::string case_id;
  std::vector<ErrorRecord> relation_errors;  // sorted, unique
  std::vector<ErrorRecord> branch_errors;
  std::vector<ErrorRecord> missing_errors;
  std::size_t n_rel = 0;
  std::size_t n_br = 0;
  std::size_t n_miss = 0;
  bool correct = false;

  std::size_t total_errors() const { return n_rel + n_br + n_miss; }
  std::size_t count(ErrorKind k) const;
  const std::vector<ErrorRecord>& records(ErrorKind k) const;
  friend bool operator==(const CaseErrorReport&, const CaseErrorReport&) = default;
};

/// Consecutive grounded entity pairs over all model paths, deduplicated.
std::set<EntityPair> observed_pairs(const Case& c);
std::set<EntityId> observed_nodes(const Case& c);
std::set<EntityId> reference_nodes(const Case& c);
std::set<EntityPair> reference_pairs(const Case& c);

std::vector<ErrorRecord> detect_relation_errors(const Case& c, const kg::KnowledgeGraph& g);
std::vector<ErrorRecord> detect_branch_errors(const Case& c, const kg::KnowledgeGraph& g);
std::vector<ErrorRecord> detect_missing_errors(const Case& c, const kg::KnowledgeGraph& g);
CaseErrorReport analyze_case(const Case& c, const kg::KnowledgeGraph& g);

// ---------------------------------------------------------------------------
// Corpus aggregation

struct EntityRoles {
  std::size_t ref_path_occurrences = 0;
  std::size_t observed_error_occurrences = 0;
  std::size_t observed_nonerror_occurrences = 0;
  std::size_t total_occurrences = 0;
  friend bool operator==(const EntityRoles&, const EntityRoles&) = default;
};

struct CorpusSummary {
  std::size_t total_cases = 0;
  std::size_t correct_cases = 0;
  std::size_t incorrect_cases = 0;
  std::array<std::size_t, 3> totals{};  // indexed by ErrorKind
  /// Relation/branch records accrue to both endpoints, missing to the missed entity.
  std::map<std::pair<EntityId, ErrorKind>, std::size_t> per_entity_intensity;
  std::map<EntityId, EntityRoles> per_entity_roles;

  std::optional<double> accuracy() const;
  std::size_t total(ErrorKind k) const { return totals[static_cast<std::size_t>(k)]; }
  /// Intensity per entity, optionally restricted to one kind; zero entries omitted.
  std::map<EntityId, std::size_t> intensity(std::optional<ErrorKind> kind = std::nullopt) const;
  friend bool operator==(const CorpusSummary&, const CorpusSummary&) = default;
};

/// Reports and cases are matched by position and must carry the same ids.
CorpusSummary aggregate_corpus(std::span<const CaseErrorReport> reports, std::span<const Case> cases);
/// Associative, commutative combination of two partial summaries.
CorpusSummary merge(CorpusSummary a, const CorpusSummary& b);

// ---------------------------------------------------------------------------
// Pattern expansion

enum class ExpansionMode { AlongErrorSet, AlongReferenceSet };
std::string_view to_string(ExpansionMode m);
ExpansionMode parse_expansion_mode(std::string_view s);

struct CorpusView {
  std::span<const Case> cases;
  std::span<const CaseErrorReport> reports;
};

struct PatternExpansion {
  EntityId anchor;
  ErrorKind kind = ErrorKind::Relation;
  ExpansionMode mode = ExpansionMode::AlongErrorSet;
  std::set<EntityId> error_targets;      // B(anchor)
  std::set<EntityId> reference_targets;  // D(anchor)
  std::set<EntityPair> related_error_pairs;
  std::set<EntityPair> related_reference_pairs;
  std::map<EntityPair, std::set<std::string>> error_support;      // pair -> case ids
  std::map<EntityPair, std::set<std::string>> reference_support;

  bool empty() const { return error_targets.empty() && reference_targets.empty(); }
  friend bool operator==(const PatternExpansion&, const PatternExpansion&) = default;
};

/// Error pairs of `kind` across the corpus with their supporting cases. For
/// Missing the pair is (missed entity, predicted answer of the case).
std::map<EntityPair, std::set<std::string>> corpus_error_pairs(ErrorKind kind, const CorpusView& corpus);
/// Reference pairs across the corpus. For Missing the pair is (missed entity,
/// correct answer of the case) over the cases where it was missed.
std::map<EntityPair, std::set<std::string>> corpus_reference_pairs(ErrorKind kind, const CorpusView& corpus);

/// B(anchor) and D(anchor) from the anchor's own pairs; the side selected by
/// `mode` is then widened to every corpus pair whose target lies in that set.
PatternExpansion expand_pattern(const EntityId& anchor, ErrorKind kind, ExpansionMode mode,
                                const CorpusView& corpus);

struct PatternSummary {
  std::map<EntityId, std::string> categories_err;
  std::map<EntityId, std::string> categories_ref;
  std::string summary_text;
  friend bool operator==(const PatternSummary&, const PatternSummary&) = default;
};

using EntityTable = std::map<EntityId, kg::Entity>;

/// Throws PreconditionError on an empty expansion.
PatternSummary summarize_pattern(const PatternExpansion& expansion, services::Adjudicator& adjudicator,
                                 const EntityTable& entities, const std::vector<std::string>& questions);

}  // namespace pathaudit::errors
