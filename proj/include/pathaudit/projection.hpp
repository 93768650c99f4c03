#pragma once

// node2vec embeddings, t-SNE layout, heat grids and selection helpers for the
// projection view.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pathaudit/errors.hpp"
#include "pathaudit/kg.hpp"

namespace pathaudit::projection {

using kg::EntityId;

struct Node2VecParams {
  std::size_t dimension = 128;
  std::size_t walk_length = 80;
  std::size_t walks_per_node = 10;
  std::size_t window = 10;
  double return_p = 1.0;
  double inout_q = 1.0;
  std::size_t negative = 5;
  std::size_t epochs = 1;
  double learning_rate = 0.025;
  /// Hogwild training over several threads; results are then not reproducible.
  bool parallel = false;
  std::size_t threads = 0;  // 0 = hardware concurrency
};

struct NodeEmbeddings {
  std::size_t dimension = 0;
  std::map<EntityId, std::vector<double>> vectors;
  std::uint64_t seed = 0;
  Node2VecParams params;
};

/// Biased walks over the undirected skeleton of the traversal graph, then
/// skip-gram with negative sampling. Throws PreconditionError if dimension < 2
/// or the graph is empty.
NodeEmbeddings node2vec_embed(const kg::KnowledgeGraph& g, const Node2VecParams& params, std::uint64_t seed);
/// Same, restricted to the subgraph induced by `nodes`.
NodeEmbeddings node2vec_embed(const kg::KnowledgeGraph& g, std::span<const kg::NodeIndex> nodes,
                              const Node2VecParams& params, std::uint64_t seed);

struct Point {
  double x = 0;
  double y = 0;
  friend bool operator==(const Point&, const Point&) = default;
};

struct ProjectionLayout {
  std::map<EntityId, Point> coordinates;  // in [0,1]^2
  std::uint64_t seed = 0;
  bool grid_fallback = false;
  friend bool operator==(const ProjectionLayout&, const ProjectionLayout&) = default;
};

struct TsneParams {
  double perplexity = 30.0;
  std::size_t iterations = 1000;
  double early_exaggeration = 12.0;
  std::size_t exaggeration_iterations = 250;
  double learning_rate = 200.0;
  double theta = 0.5;
  /// Above this node count the Barnes-Hut approximation is used.
  std::size_t exact_limit = 2000;
};

/// t-SNE to 2D, scaled uniformly into [0,1]^2 (aspect preserved, shorter axis
/// centred). Identical embeddings fall back to a grid layout. Throws
/// PreconditionError with fewer than 2 nodes or perplexity >= node count.
ProjectionLayout project_2d(const NodeEmbeddings& emb, std::uint64_t seed, const TsneParams& params = {});

struct HeatGrid {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> values;  // row-major, values[y * width + x]
  double bandwidth = 0;
  std::optional<errors::ErrorKind> kind_filter;

  double at(std::size_t x, std::size_t y) const { return values[y * width + x]; }
  double sum() const;
};

/// Each entity deposits its intensity through a Gaussian truncated at 3 sigma
/// and normalized over the grid cells it covers; when no cell centre is in
/// range the whole mass goes to the containing cell. Throws PreconditionError
/// for keys without coordinates or a zero-sized grid.
HeatGrid heat_grid(const ProjectionLayout& layout, const std::map<EntityId, std::size_t>& intensity,
                   std::size_t width = 256, std::size_t height = 256, double bandwidth = 0.02,
                   std::optional<errors::ErrorKind> kind_filter = std::nullopt);

/// Descending by count, ties ascending by id; zero counts skipped.
std::vector<std::pair<EntityId, std::size_t>> top_k_nodes(const std::map<EntityId, std::size_t>& intensity,
                                                          std::size_t k);

struct Rect {
  double x0 = 0, y0 = 0, x1 = 1, y1 = 1;
};

/// Entities inside the closed rectangle. Throws PreconditionError if inverted.
std::set<EntityId> brush_select(const ProjectionLayout& layout, const Rect& rect);

// ---------------------------------------------------------------------------
// Pipeline helpers

/// Disease/Symptom entities occurring in any model path, reference path or
/// error record of the corpus, sorted by index.
std::vector<kg::NodeIndex> active_nodes(const kg::KnowledgeGraph& g, std::span<const grounding::Case> cases);

/// `active` plus up to `hops` undirected hops of context, capped at
/// `max_nodes` (active nodes always kept; context added nearest first, ties
/// by index). Sorted by index.
std::vector<kg::NodeIndex> training_nodes(const kg::KnowledgeGraph& g, std::span<const kg::NodeIndex> active,
                                          std::size_t hops, std::size_t max_nodes);

struct ProjectionConfig {
  Node2VecParams node2vec;
  TsneParams tsne;
  std::uint64_t seed = 42;
  std::size_t context_hops = 1;
  std::size_t max_training_nodes = 5000;
};

/// Embeds the training scope and lays out the active nodes. Perplexity is
/// lowered to (n - 1) / 3 for small node sets; one node sits at the centre.
ProjectionLayout compute_projection(const kg::KnowledgeGraph& g, std::span<const grounding::Case> cases,
                                    const ProjectionConfig& config);

}  // namespace pathaudit::projection
