#pragma once

// Maps free-text entity mentions onto knowledge-graph entities and builds the
// KG-grounded reference paths for each case.
//
// Alignment runs three stages: exact match on normalized names, then the
// embedding nearest neighbour if its cosine reaches tau, then an adjudicator
// choice among the top-k embedding candidates.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pathaudit/kg.hpp"
#include "pathaudit/services.hpp"

namespace pathaudit::grounding {

enum class MentionOrigin { Question, Option, ModelPath };
enum class AlignMethod { Exact, Embedding, Adjudicated, Unaligned };

std::string_view to_string(MentionOrigin o);
std::string_view to_string(AlignMethod m);
MentionOrigin parse_mention_origin(std::string_view s);
AlignMethod parse_align_method(std::string_view s);

struct Mention {
  std::string text;
  MentionOrigin origin = MentionOrigin::Question;
  friend bool operator==(const Mention&, const Mention&) = default;
};

struct AlignmentResult {
  Mention mention;
  std::optional<kg::EntityId> entity;
  AlignMethod method = AlignMethod::Unaligned;
  std::optional<double> similarity;
  friend bool operator==(const AlignmentResult&, const AlignmentResult&) = default;
};

struct RawStep {
  std::string entity_text;
  std::string relation_text;
};

struct RawPath {
  std::vector<RawStep> steps;
};

struct GroundedStep {
  kg::EntityId entity;
  std::string relation_label;
  AlignmentResult alignment;
  friend bool operator==(const GroundedStep&, const GroundedStep&) = default;
};

struct GroundedPath {
  std::vector<GroundedStep> steps;
  std::size_t dropped_steps = 0;
  friend bool operator==(const GroundedPath&, const GroundedPath&) = default;
};

struct PreExtractedEntity {
  std::string text;
  std::string kind;
};

/// One corpus record before alignment.
struct RawCase {
  std::string id;
  std::string question;
  std::vector<std::string> options;
  std::string correct_answer;
  std::string predicted_answer;
  std::optional<std::vector<PreExtractedEntity>> question_entities;
  std::vector<RawPath> model_paths;
};

struct Case {
  std::string id;
  std::string question;
  std::vector<std::string> options;
  std::string correct_answer;
  std::string predicted_answer;
  std::vector<AlignmentResult> question_entities;
  kg::EntityId correct_entity;
  kg::EntityId predicted_entity;
  std::vector<GroundedPath> model_paths;
  std::vector<kg::Path> reference_paths;

  /// Aligned question entity ids, first-occurrence order, no duplicates.
  std::vector<kg::EntityId> question_entity_ids() const;
  bool correct() const { return correct_entity == predicted_entity; }
  friend bool operator==(const Case&, const Case&) = default;
};

/// Trim, ASCII case-fold, collapse internal whitespace, strip leading and
/// trailing punctuation. Inner punctuation (e.g. apostrophes) is kept.
std::string normalize_mention(std::string_view text);

struct AlignmentContext {
  std::string question;
  std::vector<std::string> options;
};

struct AlignerOptions {
  double tau = 0.9;
  std::size_t top_k = 5;
  /// Where entity-name embeddings are persisted; empty disables persistence.
  std::filesystem::path embedding_cache_dir;
};

class EntityAligner {
 public:
  /// Embeds every entity name once (or loads them from the cache directory).
  EntityAligner(const kg::KnowledgeGraph& graph, services::EmbeddingProvider& embedder,
                services::Adjudicator& adjudicator, AlignerOptions options = {});

  AlignmentResult align(const Mention& mention, const AlignmentContext& context) const;
  /// Unaligned steps are excised; survivors keep their order.
  GroundedPath ground_path(const RawPath& raw, const AlignmentContext& context) const;

  const AlignerOptions& options() const { return options_; }
  bool loaded_embeddings_from_cache() const { return from_cache_; }

 private:
  std::vector<double> mention_vector(const std::string& text) const;

  const kg::KnowledgeGraph& graph_;
  services::EmbeddingProvider& embedder_;
  services::Adjudicator& adjudicator_;
  AlignerOptions options_;
  std::vector<std::pair<std::string, kg::NodeIndex>> name_index_;  // sorted (normalized name, node)
  std::vector<double> name_vectors_;  // row-major, unit-normalized (zero rows for zero vectors)
  std::size_t dim_ = 0;
  bool from_cache_ = false;
};

/// Aligns question entities, answers and model paths. Reference paths are left
/// empty. Throws DataError when an answer is not among the options or cannot
/// be aligned.
Case align_case(const RawCase& raw, const EntityAligner& aligner, services::Adjudicator& adjudicator);

/// Shortest G± paths from each question entity to the correct entity, pruned
/// by the adjudicator and merged without duplicates (first-seen order).
std::vector<kg::Path> build_reference_paths(const std::vector<kg::EntityId>& question_entities,
                                            const kg::EntityId& correct_entity,
                                            const kg::KnowledgeGraph& graph,
                                            services::Adjudicator& adjudicator,
                                            const AlignmentContext& context,
                                            std::size_t max_paths_per_entity = 16);

}  // namespace pathaudit::grounding
