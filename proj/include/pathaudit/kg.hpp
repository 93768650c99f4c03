#pragma once

// Biomedical knowledge graph and its mixed-direction traversal graph.
//
// Hierarchy-like relations (by default only "parent-of") keep their
// direction; every other relation type contributes arcs both ways. All
// reachability queries run over that traversal graph. Reach(u, u) is true.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pathaudit::kg {

using EntityId = std::string;
/// Dense node index. Indices follow ascending EntityId order, so comparing
/// indices is the same as comparing ids.
using NodeIndex = std::uint32_t;

enum class EntityKind { Disease, Symptom, Other };

EntityKind parse_entity_kind(std::string_view label);
std::string_view to_string(EntityKind kind);

struct Entity {
  EntityId id;
  std::string name;
  EntityKind kind = EntityKind::Other;
};

struct RelationEdge {
  EntityId src;
  std::string relation;
  EntityId dst;
};

struct DirectionalityPolicy {
  std::set<std::string, std::less<>> directed_relations{"parent-of"};

  bool is_directed(std::string_view relation) const {
    return directed_relations.find(relation) != directed_relations.end();
  }
  static DirectionalityPolicy all_bidirectional() { return DirectionalityPolicy{{}}; }
};

/// Reads `{"directed_relations": [...]}`.
DirectionalityPolicy load_policy(const std::filesystem::path& path);

enum class IngestMode { Strict, Lenient };

/// A walk in the traversal graph. `relations[i]` labels the hop
/// nodes[i] -> nodes[i+1]; a zero-length path has one node and no relations.
struct Path {
  std::vector<EntityId> nodes;
  std::vector<std::string> relations;

  std::size_t length() const { return relations.size(); }
  const EntityId& source() const { return nodes.front(); }
  const EntityId& target() const { return nodes.back(); }
  friend bool operator==(const Path&, const Path&) = default;
  friend auto operator<=>(const Path&, const Path&) = default;
};

struct Subgraph {
  std::vector<EntityId> entities;
  std::vector<std::pair<EntityId, EntityId>> arcs;
};

class KnowledgeGraph;

/// Set of nodes closed under reachability (a forward or backward closure).
/// Stored per strongly connected component.
class ReachSet {
 public:
  ReachSet() = default;
  bool contains(NodeIndex node) const;
  /// Members in ascending index order.
  std::vector<NodeIndex> members() const;

 private:
  friend class KnowledgeGraph;
  ReachSet(std::shared_ptr<const std::vector<std::uint64_t>> comps, const KnowledgeGraph* graph)
      : comps_(std::move(comps)), graph_(graph) {}
  std::shared_ptr<const std::vector<std::uint64_t>> comps_;
  const KnowledgeGraph* graph_ = nullptr;
};

struct LoadStats {
  std::size_t dropped_edges = 0;
};

class KnowledgeGraph {
 public:
  /// Validates and indexes. Duplicate ids, empty names or relations, and
  /// (in strict mode) edges naming unknown entities throw DataError. In
  /// lenient mode such edges are dropped and counted in `stats`.
  static KnowledgeGraph build(std::vector<Entity> entities, std::vector<RelationEdge> edges,
                              DirectionalityPolicy policy = {},
                              IngestMode mode = IngestMode::Strict, LoadStats* stats = nullptr);

  KnowledgeGraph(KnowledgeGraph&&) noexcept;
  KnowledgeGraph& operator=(KnowledgeGraph&&) noexcept;
  ~KnowledgeGraph();

  std::size_t entity_count() const { return entities_.size(); }
  std::size_t edge_count() const { return edges_.size(); }
  std::size_t arc_count() const { return succ_targets_.size(); }
  std::size_t component_count() const { return comp_count_; }

  std::span<const Entity> entities() const { return entities_; }
  std::span<const RelationEdge> edges() const { return edges_; }
  const DirectionalityPolicy& policy() const { return policy_; }
  /// SHA-256 over the canonical entity/edge/policy serialization.
  const std::string& digest() const { return digest_; }

  std::optional<NodeIndex> find(std::string_view id) const;
  NodeIndex index_of(std::string_view id) const;  // throws UnknownEntityError
  const Entity& entity(NodeIndex node) const { return entities_[node]; }

  std::span<const NodeIndex> successors(NodeIndex node) const;
  std::span<const NodeIndex> predecessors(NodeIndex node) const;
  /// Relation label of traversal arc from -> to (smallest label when parallel
  /// edges collapse). Empty if there is no such arc.
  std::string_view arc_relation(NodeIndex from, NodeIndex to) const;

  bool reach(NodeIndex from, NodeIndex to) const;
  bool reach(std::string_view from, std::string_view to) const;
  ReachSet descendants(NodeIndex from) const;
  ReachSet ancestors(NodeIndex target) const;
  std::vector<EntityId> reachable_set(std::string_view from) const;
  std::vector<EntityId> ancestor_set(std::string_view target) const;

  /// All minimum-length paths, lexicographic by node id sequence, at most
  /// `max_paths` of them.
  std::vector<Path> shortest_paths(std::string_view src, std::string_view dst,
                                   std::size_t max_paths) const;
  /// Entities within `depth` undirected hops plus traversal arcs among them.
  Subgraph neighborhood(std::string_view center, std::size_t depth) const;

  /// Precomputes and pins ancestor sets (e.g. for all answer entities).
  void warm_ancestors(std::span<const NodeIndex> targets) const;
  /// Bounds the memo cache (entries per direction). Pinned sets do not count.
  void set_cache_capacity(std::size_t entries) const;

 private:
  friend class ReachSet;
  KnowledgeGraph();

  std::shared_ptr<const std::vector<std::uint64_t>> closure(std::uint32_t comp, bool forward) const;

  std::vector<Entity> entities_;
  std::vector<RelationEdge> edges_;
  DirectionalityPolicy policy_;
  std::string digest_;

  // Traversal CSR, targets ascending within each row.
  std::vector<std::size_t> succ_offsets_;
  std::vector<NodeIndex> succ_targets_;
  std::vector<std::uint32_t> succ_relation_;  // index into relation_names_
  std::vector<std::size_t> pred_offsets_;
  std::vector<NodeIndex> pred_targets_;
  std::vector<std::string> relation_names_;

  // Condensation. Component ids are in reverse topological order: an arc
  // between distinct components always goes from a higher id to a lower one.
  std::vector<std::uint32_t> comp_of_;
  std::size_t comp_count_ = 0;
  std::vector<std::size_t> dag_succ_offsets_;
  std::vector<std::uint32_t> dag_succ_;
  std::vector<std::size_t> dag_pred_offsets_;
  std::vector<std::uint32_t> dag_pred_;

  struct Cache;
  std::unique_ptr<Cache> cache_;
};

/// Loads the tab-separated node and edge files. Errors name the file and line.
KnowledgeGraph load_kg(const std::filesystem::path& nodes_file,
                       const std::filesystem::path& edges_file,
                       DirectionalityPolicy policy = {},
                       IngestMode mode = IngestMode::Strict, LoadStats* stats = nullptr);

}  // namespace pathaudit::kg
