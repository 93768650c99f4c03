#include "pathaudit/kg.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <limits>
#include <list>
#include <mutex>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "pathaudit/digest.hpp"
#include "pathaudit/error.hpp"
#include "pathaudit/text.hpp"

namespace pathaudit::kg {

namespace {

constexpr std::size_t kDefaultCacheEntries = 4096;

bool test_bit(const std::vector<std::uint64_t>& bits, std::size_t i) {
  return (bits[i >> 6] >> (i & 63)) & 1U;
}

void set_bit(std::vector<std::uint64_t>& bits, std::size_t i) { bits[i >> 6] |= (1ULL << (i & 63)); }

// Per-thread visitation stamps so short searches avoid clearing O(n) buffers.
struct StampBuffer {
  std::vector<std::uint64_t> marks;
  std::uint64_t current = 0;

  void begin(std::size_t n) {
    if (marks.size() < n) marks.resize(n, 0);
    ++current;
  }
  bool visit(std::size_t i) {
    if (marks[i] == current) return false;
    marks[i] = current;
    return true;
  }
};

thread_local StampBuffer tl_stamps;

void build_csr(std::size_t n, const std::vector<std::pair<std::uint32_t, std::uint32_t>>& sorted_arcs,
               std::vector<std::size_t>& offsets, std::vector<std::uint32_t>& targets) {
  offsets.assign(n + 1, 0);
  for (const auto& [s, d] : sorted_arcs) ++offsets[s + 1];
  std::partial_sum(offsets.begin(), offsets.end(), offsets.begin());
  targets.resize(sorted_arcs.size());
  for (std::size_t i = 0; i < sorted_arcs.size(); ++i) targets[i] = sorted_arcs[i].second;
}

}  // namespace

EntityKind parse_entity_kind(std::string_view label) {
  const std::string lower = ascii_lower(label);
  if (lower == "disease") return EntityKind::Disease;
  if (lower == "symptom") return EntityKind::Symptom;
  return EntityKind::Other;
}

std::string_view to_string(EntityKind kind) {
  switch (kind) {
    case EntityKind::Disease: return "Disease";
    case EntityKind::Symptom: return "Symptom";
    case EntityKind::Other: return "Other";
  }
  return "Other";
}

DirectionalityPolicy load_policy(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open policy file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("policy file " + path.string() + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("directed_relations") || !j["directed_relations"].is_array()) {
    throw ConfigError("policy file " + path.string() + ": expected {\"directed_relations\": [...]}");
  }
  for (const auto& [key, _] : j.items()) {
    if (key != "directed_relations") throw ConfigError("policy file: unknown key '" + key + "'");
  }
  DirectionalityPolicy policy{{}};
  for (const auto& r : j["directed_relations"]) {
    if (!r.is_string() || r.get<std::string>().empty()) {
      throw ConfigError("policy file: relation names must be non-empty strings");
    }
    policy.directed_relations.insert(r.get<std::string>());
  }
  return policy;
}

// ---------------------------------------------------------------------------
// ReachSet

bool ReachSet::contains(NodeIndex node) const {
  if (!comps_) return false;
  return test_bit(*comps_, graph_->comp_of_[node]);
}

std::vector<NodeIndex> ReachSet::members() const {
  std::vector<NodeIndex> out;
  if (!comps_) return out;
  for (NodeIndex v = 0; v < graph_->comp_of_.size(); ++v) {
    if (test_bit(*comps_, graph_->comp_of_[v])) out.push_back(v);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Closure cache

struct KnowledgeGraph::Cache {
  using Bits = std::shared_ptr<const std::vector<std::uint64_t>>;

  struct Lru {
    std::list<std::uint32_t> order;  // front = most recent
    std::unordered_map<std::uint32_t, std::pair<Bits, std::list<std::uint32_t>::iterator>> map;

    Bits get(std::uint32_t key) {
      auto it = map.find(key);
      if (it == map.end()) return nullptr;
      order.splice(order.begin(), order, it->second.second);
      return it->second.first;
    }
    void put(std::uint32_t key, Bits bits, std::size_t capacity) {
      if (capacity == 0) return;
      if (auto it = map.find(key); it != map.end()) {
        order.splice(order.begin(), order, it->second.second);
        return;
      }
      order.push_front(key);
      map.emplace(key, std::make_pair(std::move(bits), order.begin()));
      while (map.size() > capacity) {
        map.erase(order.back());
        order.pop_back();
      }
    }
  };

  std::mutex mu;
  std::size_t capacity = kDefaultCacheEntries;
  Lru forward;
  Lru backward;
  std::unordered_map<std::uint32_t, Bits> pinned_backward;
};

KnowledgeGraph::KnowledgeGraph() : cache_(std::make_unique<Cache>()) {}
KnowledgeGraph::KnowledgeGraph(KnowledgeGraph&&) noexcept = default;
KnowledgeGraph& KnowledgeGraph::operator=(KnowledgeGraph&&) noexcept = default;
KnowledgeGraph::~KnowledgeGraph() = default;

// ---------------------------------------------------------------------------
// Construction

KnowledgeGraph KnowledgeGraph::build(std::vector<Entity> entities, std::vector<RelationEdge> edges,
                                     DirectionalityPolicy policy, IngestMode mode,
                                     LoadStats* stats) {
  KnowledgeGraph g;
  std::sort(entities.begin(), entities.end(),
            [](const Entity& a, const Entity& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < entities.size(); ++i) {
    if (entities[i].id.empty()) throw DataError("entity with empty id");
    if (entities[i].name.empty()) throw DataError("entity " + entities[i].id + " has an empty name");
    if (i > 0 && entities[i].id == entities[i - 1].id) {
      throw DataError("duplicate entity id: " + entities[i].id);
    }
  }
  if (entities.size() >= std::numeric_limits<NodeIndex>::max()) {
    throw DataError("too many entities");
  }
  g.entities_ = std::move(entities);
  g.policy_ = std::move(policy);

  std::size_t dropped = 0;
  std::vector<RelationEdge> kept;
  kept.reserve(edges.size());
  for (auto& e : edges) {
    if (e.relation.empty()) throw DataError("edge " + e.src + " -> " + e.dst + " has an empty relation");
    if (!g.find(e.src) || !g.find(e.dst)) {
      if (mode == IngestMode::Strict) {
        throw UnknownEntityError(!g.find(e.src) ? e.src : e.dst);
      }
      ++dropped;
      continue;
    }
    kept.push_back(std::move(e));
  }
  if (stats) stats->dropped_edges += dropped;
  g.edges_ = std::move(kept);

  // Relation vocabulary, sorted so the smallest label wins on collapsed arcs.
  std::set<std::string> vocab;
  for (const auto& e : g.edges_) vocab.insert(e.relation);
  g.relation_names_.assign(vocab.begin(), vocab.end());
  auto rel_index = [&](const std::string& r) {
    return static_cast<std::uint32_t>(
        std::lower_bound(g.relation_names_.begin(), g.relation_names_.end(), r) -
        g.relation_names_.begin());
  };

  struct Arc {
    NodeIndex src, dst;
    std::uint32_t rel;
  };
  std::vector<Arc> arcs;
  arcs.reserve(g.edges_.size() * 2);
  for (const auto& e : g.edges_) {
    const NodeIndex s = *g.find(e.src);
    const NodeIndex d = *g.find(e.dst);
    const std::uint32_t r = rel_index(e.relation);
    arcs.push_back({s, d, r});
    if (!g.policy_.is_directed(e.relation)) arcs.push_back({d, s, r});
  }
  std::sort(arcs.begin(), arcs.end(), [](const Arc& a, const Arc& b) {
    return std::tie(a.src, a.dst, a.rel) < std::tie(b.src, b.dst, b.rel);
  });
  // Parallel arcs collapse; the first (smallest relation) survives.
  arcs.erase(std::unique(arcs.begin(), arcs.end(),
                         [](const Arc& a, const Arc& b) { return a.src == b.src && a.dst == b.dst; }),
             arcs.end());

  const std::size_t n = g.entities_.size();
  std::vector<std::pair<std::uint32_t, std::uint32_t>> fwd;
  fwd.reserve(arcs.size());
  g.succ_relation_.reserve(arcs.size());
  for (const auto& a : arcs) {
    fwd.emplace_back(a.src, a.dst);
    g.succ_relation_.push_back(a.rel);
  }
  build_csr(n, fwd, g.succ_offsets_, g.succ_targets_);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> bwd;
  bwd.reserve(arcs.size());
  for (const auto& a : arcs) bwd.emplace_back(a.dst, a.src);
  std::sort(bwd.begin(), bwd.end());
  build_csr(n, bwd, g.pred_offsets_, g.pred_targets_);

  // Iterative Tarjan. Components are numbered in completion order, which is
  // reverse topological order of the condensation.
  constexpr std::uint32_t kUnset = std::numeric_limits<std::uint32_t>::max();
  std::vector<std::uint32_t> index(n, kUnset), low(n, 0);
  std::vector<bool> on_stack(n, false);
  std::vector<NodeIndex> stack;
  std::vector<std::pair<NodeIndex, std::size_t>> call;  // (node, next successor offset)
  g.comp_of_.assign(n, kUnset);
  std::uint32_t next_index = 0;
  std::uint32_t comp = 0;
  for (NodeIndex root = 0; root < n; ++root) {
    if (index[root] != kUnset) continue;
    call.emplace_back(root, g.succ_offsets_[root]);
    index[root] = low[root] = next_index++;
    stack.push_back(root);
    on_stack[root] = true;
    while (!call.empty()) {
      auto& [v, pos] = call.back();
      if (pos < g.succ_offsets_[v + 1]) {
        const NodeIndex w = g.succ_targets_[pos++];
        if (index[w] == kUnset) {
          index[w] = low[w] = next_index++;
          stack.push_back(w);
          on_stack[w] = true;
          call.emplace_back(w, g.succ_offsets_[w]);
        } else if (on_stack[w]) {
          low[v] = std::min(low[v], index[w]);
        }
        continue;
      }
      const NodeIndex done = v;
      call.pop_back();
      if (!call.empty()) {
        const NodeIndex parent = call.back().first;
        low[parent] = std::min(low[parent], low[done]);
      }
      if (low[done] == index[done]) {
        NodeIndex w;
        do {
          w = stack.back();
          stack.pop_back();
          on_stack[w] = false;
          g.comp_of_[w] = comp;
        } while (w != done);
        ++comp;
      }
    }
  }
  g.comp_count_ = comp;

  std::vector<std::pair<std::uint32_t, std::uint32_t>> dag;
  for (NodeIndex v = 0; v < n; ++v) {
    for (std::size_t i = g.succ_offsets_[v]; i < g.succ_offsets_[v + 1]; ++i) {
      const auto cv = g.comp_of_[v];
      const auto cw = g.comp_of_[g.succ_targets_[i]];
      if (cv != cw) dag.emplace_back(cv, cw);
    }
  }
  std::sort(dag.begin(), dag.end());
  dag.erase(std::unique(dag.begin(), dag.end()), dag.end());
  build_csr(comp, dag, g.dag_succ_offsets_, g.dag_succ_);
  for (auto& p : dag) std::swap(p.first, p.second);
  std::sort(dag.begin(), dag.end());
  build_csr(comp, dag, g.dag_pred_offsets_, g.dag_pred_);

  // Canonical digest: entities by id, edges sorted, then the policy.
  Sha256 h;
  for (const auto& e : g.entities_) {
    h.update("E\t").update(e.id).update("\t").update(e.name).update("\t").update(to_string(e.kind)).update("\n");
  }
  std::vector<const RelationEdge*> sorted_edges;
  for (const auto& e : g.edges_) sorted_edges.push_back(&e);
  std::sort(sorted_edges.begin(), sorted_edges.end(), [](const auto* a, const auto* b) {
    return std::tie(a->src, a->relation, a->dst) < std::tie(b->src, b->relation, b->dst);
  });
  for (const auto* e : sorted_edges) {
    h.update("R\t").update(e->src).update("\t").update(e->relation).update("\t").update(e->dst).update("\n");
  }
  for (const auto& r : g.policy_.directed_relations) h.update("D\t").update(r).update("\n");
  g.digest_ = h.hex_digest();
  return g;
}

// ---------------------------------------------------------------------------
// Lookup

std::optional<NodeIndex> KnowledgeGraph::find(std::string_view id) const {
  auto it = std::lower_bound(entities_.begin(), entities_.end(), id,
                             [](const Entity& e, std::string_view key) { return e.id < key; });
  if (it == entities_.end() || it->id != id) return std::nullopt;
  return static_cast<NodeIndex>(it - entities_.begin());
}

NodeIndex KnowledgeGraph::index_of(std::string_view id) const {
  if (auto idx = find(id)) return *idx;
  throw UnknownEntityError(std::string(id));
}

std::span<const NodeIndex> KnowledgeGraph::successors(NodeIndex node) const {
  return {succ_targets_.data() + succ_offsets_[node], succ_offsets_[node + 1] - succ_offsets_[node]};
}

std::span<const NodeIndex> KnowledgeGraph::predecessors(NodeIndex node) const {
  return {pred_targets_.data() + pred_offsets_[node], pred_offsets_[node + 1] - pred_offsets_[node]};
}

std::string_view KnowledgeGraph::arc_relation(NodeIndex from, NodeIndex to) const {
  auto row = successors(from);
  auto it = std::lower_bound(row.begin(), row.end(), to);
  if (it == row.end() || *it != to) return {};
  return relation_names_[succ_relation_[succ_offsets_[from] + static_cast<std::size_t>(it - row.begin())]];
}

// ---------------------------------------------------------------------------
// Reachability

std::shared_ptr<const std::vector<std::uint64_t>> KnowledgeGraph::closure(std::uint32_t comp,
                                                                         bool forward) const {
  {
    std::lock_guard lock(cache_->mu);
    if (!forward) {
      if (auto it = cache_->pinned_backward.find(comp); it != cache_->pinned_backward.end()) {
        return it->second;
      }
    }
    if (auto hit = (forward ? cache_->forward : cache_->backward).get(comp)) return hit;
  }
  const auto& offsets = forward ? dag_succ_offsets_ : dag_pred_offsets_;
  const auto& targets = forward ? dag_succ_ : dag_pred_;
  auto bits = std::make_shared<std::vector<std::uint64_t>>((comp_count_ + 63) / 64, 0);
  std::vector<std::uint32_t> frontier{comp};
  set_bit(*bits, comp);
  while (!frontier.empty()) {
    const std::uint32_t c = frontier.back();
    frontier.pop_back();
    for (std::size_t i = offsets[c]; i < offsets[c + 1]; ++i) {
      const std::uint32_t w = targets[i];
      if (!test_bit(*bits, w)) {
        set_bit(*bits, w);
        frontier.push_back(w);
      }
    }
  }
  std::shared_ptr<const std::vector<std::uint64_t>> result = std::move(bits);
  std::lock_guard lock(cache_->mu);
  (forward ? cache_->forward : cache_->backward).put(comp, result, cache_->capacity);
  return result;
}

bool KnowledgeGraph::reach(NodeIndex from, NodeIndex to) const {
  const std::uint32_t cu = comp_of_[from];
  const std::uint32_t cv = comp_of_[to];
  if (cu == cv) return true;
  if (cu < cv) return false;  // arcs only descend in component id
  {
    std::lock_guard lock(cache_->mu);
    if (auto it = cache_->pinned_backward.find(cv); it != cache_->pinned_backward.end()) {
      return test_bit(*it->second, cu);
    }
    if (auto hit = cache_->backward.get(cv)) return test_bit(*hit, cu);
    if (auto hit = cache_->forward.get(cu)) return test_bit(*hit, cv);
  }
  // Uncached: DFS over the condensation, pruning components below cv.
  auto& stamps = tl_stamps;
  stamps.begin(comp_count_);
  std::vector<std::uint32_t> stack{cu};
  stamps.visit(cu);
  while (!stack.empty()) {
    const std::uint32_t c = stack.back();
    stack.pop_back();
    for (std::size_t i = dag_succ_offsets_[c]; i < dag_succ_offsets_[c + 1]; ++i) {
      const std::uint32_t w = dag_succ_[i];
      if (w == cv) return true;
      if (w < cv) continue;
      if (stamps.visit(w)) stack.push_back(w);
    }
  }
  return false;
}

bool KnowledgeGraph::reach(std::string_view from, std::string_view to) const {
  return reach(index_of(from), index_of(to));
}

ReachSet KnowledgeGraph::descendants(NodeIndex from) const {
  return ReachSet(closure(comp_of_[from], true), this);
}

ReachSet KnowledgeGraph::ancestors(NodeIndex target) const {
  return ReachSet(closure(comp_of_[target], false), this);
}

namespace {
std::vector<EntityId> to_ids(const KnowledgeGraph& g, const std::vector<NodeIndex>& nodes) {
  std::vector<EntityId> out;
  out.reserve(nodes.size());
  for (NodeIndex v : nodes) out.push_back(g.entity(v).id);
  return out;
}
}  // namespace

std::vector<EntityId> KnowledgeGraph::reachable_set(std::string_view from) const {
  return to_ids(*this, descendants(index_of(from)).members());
}

std::vector<EntityId> KnowledgeGraph::ancestor_set(std::string_view target) const {
  return to_ids(*this, ancestors(index_of(target)).members());
}

void KnowledgeGraph::warm_ancestors(std::span<const NodeIndex> targets) const {
  for (NodeIndex t : targets) {
    const std::uint32_t c = comp_of_[t];
    {
      std::lock_guard lock(cache_->mu);
      if (cache_->pinned_backward.count(c)) continue;
    }
    auto bits = closure(c, false);
    std::lock_guard lock(cache_->mu);
    cache_->pinned_backward.emplace(c, std::move(bits));
  }
}

void KnowledgeGraph::set_cache_capacity(std::size_t entries) const {
  std::lock_guard lock(cache_->mu);
  cache_->capacity = entries;
  for (auto* lru : {&cache_->forward, &cache_->backward}) {
    while (lru->map.size() > entries) {
      lru->map.erase(lru->order.back());
      lru->order.pop_back();
    }
  }
}

// ---------------------------------------------------------------------------
// Shortest paths and neighborhoods

std::vector<Path> KnowledgeGraph::shortest_paths(std::string_view src, std::string_view dst,
                                                 std::size_t max_paths) const {
  if (max_paths == 0) throw PreconditionError("shortest_paths: max_paths must be positive");
  const NodeIndex s = index_of(src);
  const NodeIndex t = index_of(dst);
  if (s == t) return {Path{{entities_[s].id}, {}}};
  if (!reach(s, t)) return {};

  const std::size_t n = entities_.size();
  constexpr std::int32_t kInf = -1;
  std::vector<std::int32_t> dist_from(n, kInf);
  std::vector<NodeIndex> frontier{s}, next;
  dist_from[s] = 0;
  std::int32_t depth = 0;
  bool found = false;
  while (!frontier.empty() && !found) {
    ++depth;
    next.clear();
    for (NodeIndex u : frontier) {
      for (NodeIndex w : successors(u)) {
        if (dist_from[w] != kInf) continue;
        dist_from[w] = depth;
        if (w == t) found = true;
        next.push_back(w);
      }
    }
    frontier.swap(next);
  }
  const std::int32_t total = dist_from[t];

  // Backward distances, only up to the path length.
  std::vector<std::int32_t> dist_to(n, kInf);
  frontier.assign(1, t);
  dist_to[t] = 0;
  for (std::int32_t d = 1; d <= total && !frontier.empty(); ++d) {
    next.clear();
    for (NodeIndex u : frontier) {
      for (NodeIndex w : predecessors(u)) {
        if (dist_to[w] != kInf) continue;
        dist_to[w] = d;
        next.push_back(w);
      }
    }
    frontier.swap(next);
  }

  // Successors are ascending by id, so depth-first order is lexicographic.
  std::vector<Path> out;
  std::vector<NodeIndex> trail{s};
  std::function<void(NodeIndex)> extend = [&](NodeIndex u) {
    if (out.size() >= max_paths) return;
    if (u == t) {
      Path p;
      for (std::size_t i = 0; i < trail.size(); ++i) {
        p.nodes.push_back(entities_[trail[i]].id);
        if (i + 1 < trail.size()) p.relations.emplace_back(arc_relation(trail[i], trail[i + 1]));
      }
      out.push_back(std::move(p));
      return;
    }
    for (NodeIndex w : successors(u)) {
      if (dist_from[w] != dist_from[u] + 1 || dist_to[w] == kInf ||
          dist_from[w] + dist_to[w] != total) {
        continue;
      }
      trail.push_back(w);
      extend(w);
      trail.pop_back();
      if (out.size() >= max_paths) return;
    }
  };
  extend(s);
  return out;
}

Subgraph KnowledgeGraph::neighborhood(std::string_view center, std::size_t depth) const {
  const NodeIndex c = index_of(center);
  std::unordered_map<NodeIndex, std::size_t> seen{{c, 0}};
  std::vector<NodeIndex> frontier{c}, next;
  for (std::size_t d = 1; d <= depth && !frontier.empty(); ++d) {
    next.clear();
    for (NodeIndex u : frontier) {
      for (auto row : {successors(u), predecessors(u)}) {
        for (NodeIndex w : row) {
          if (seen.emplace(w, d).second) next.push_back(w);
        }
      }
    }
    frontier.swap(next);
  }
  std::vector<NodeIndex> nodes;
  nodes.reserve(seen.size());
  for (const auto& [v, _] : seen) nodes.push_back(v);
  std::sort(nodes.begin(), nodes.end());
  Subgraph sub;
  for (NodeIndex v : nodes) {
    sub.entities.push_back(entities_[v].id);
    for (NodeIndex w : successors(v)) {
      if (seen.count(w)) sub.arcs.emplace_back(entities_[v].id, entities_[w].id);
    }
  }
  return sub;
}

// ---------------------------------------------------------------------------
// TSV loading

namespace {

std::vector<std::string> split_tabs(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      fields.emplace_back(line.substr(start));
      break;
    }
    fields.emplace_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  return fields;
}

template <typename RowFn>
void read_tsv(const std::filesystem::path& file, const std::vector<std::string>& header, RowFn&& on_row) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open " + file.string());
  std::string line;
  std::size_t line_no = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (!saw_header) {
      if (fields != header) {
        std::string expected;
        for (const auto& h : header) expected += (expected.empty() ? "" : "\\t") + h;
        throw DataError(file.string() + ":" + std::to_string(line_no) + ": expected header '" +
                        expected + "'");
      }
      saw_header = true;
      continue;
    }
    if (fields.size() != header.size()) {
      throw DataError(file.string() + ":" + std::to_string(line_no) + ": malformed row (expected " +
                      std::to_string(header.size()) + " tab-separated fields, got " +
                      std::to_string(fields.size()) + ")");
    }
    on_row(std::move(fields), line_no);
  }
  if (!saw_header) throw DataError(file.string() + ": missing header");
}

}  // namespace

KnowledgeGraph load_kg(const std::filesystem::path& nodes_file, const std::filesystem::path& edges_file,
                       DirectionalityPolicy policy, IngestMode mode, LoadStats* stats) {
  std::vector<Entity> entities;
  std::unordered_map<std::string, std::size_t> id_line;
  read_tsv(nodes_file, {"id", "name", "type"}, [&](std::vector<std::string> f, std::size_t line_no) {
    const std::string where = nodes_file.string() + ":" + std::to_string(line_no) + ": ";
    if (f[0].empty()) throw DataError(where + "empty id");
    if (f[1].empty()) throw DataError(where + "empty name");
    if (auto [it, inserted] = id_line.emplace(f[0], line_no); !inserted) {
      throw DataError(where + "duplicate entity id " + f[0] + " (first seen on line " +
                      std::to_string(it->second) + ")");
    }
    entities.push_back(Entity{std::move(f[0]), std::move(f[1]), parse_entity_kind(f[2])});
  });

  std::vector<RelationEdge> edges;
  std::size_t dropped = 0;
  read_tsv(edges_file, {"src", "relation", "dst"}, [&](std::vector<std::string> f, std::size_t line_no) {
    const std::string where = edges_file.string() + ":" + std::to_string(line_no) + ": ";
    if (f[1].empty()) throw DataError(where + "empty relation");
    for (const std::string* id : {&f[0], &f[2]}) {
      if (!id_line.count(*id)) {
        if (mode == IngestMode::Strict) throw DataError(where + "unknown entity " + *id);
        ++dropped;
        return;
      }
    }
    edges.push_back(RelationEdge{std::move(f[0]), std::move(f[1]), std::move(f[2])});
  });
  if (stats) stats->dropped_edges += dropped;
  return KnowledgeGraph::build(std::move(entities), std::move(edges), std::move(policy), mode, nullptr);
}

}  // namespace pathaudit::kg
