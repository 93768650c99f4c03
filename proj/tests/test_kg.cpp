#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "oracle.hpp"
#include "pathaudit/error.hpp"
#include "pathaudit/kg.hpp"

using namespace pathaudit;
using namespace pathaudit::kg;

namespace {

const std::filesystem::path kToy = std::filesystem::path(PATHAUDIT_DATA_DIR) / "toy7";

KnowledgeGraph toy7() { return load_kg(kToy / "nodes.tsv", kToy / "edges.tsv"); }
KnowledgeGraph toy7b() { return load_kg(kToy / "nodes.tsv", kToy / "edges_toy7b.tsv"); }

std::set<std::string> as_set(const std::vector<EntityId>& v) { return {v.begin(), v.end()}; }

std::filesystem::path write_temp(const std::string& name, const std::string& content) {
  auto p = std::filesystem::temp_directory_path() / ("pathaudit_test_kg_" + name);
  std::ofstream(p, std::ios::binary) << content;
  return p;
}

}  // namespace

TEST_CASE("TOY7 loads with the expected shape") {
  auto g = toy7();
  CHECK(g.entity_count() == 7);
  CHECK(g.edge_count() == 4);
  CHECK(g.arc_count() == 6);
  CHECK(g.entity(g.index_of("n1")).kind == EntityKind::Symptom);
  CHECK(g.entity(g.index_of("n4")).name == "viral pneumonia");
  CHECK(g.arc_relation(g.index_of("n3"), g.index_of("n1")) == "present");
  CHECK(g.arc_relation(g.index_of("n3"), g.index_of("n5")).empty());
}

TEST_CASE("reach on TOY7") {
  auto g = toy7();
  CHECK(g.reach("n1", "n3"));
  CHECK_FALSE(g.reach("n3", "n5"));
  CHECK(g.reach("n5", "n1"));
  for (const auto& e : g.entities()) CHECK(g.reach(e.id, e.id));
  CHECK_THROWS_AS(g.reach("n1", "nope"), UnknownEntityError);
}

TEST_CASE("reachable and ancestor sets on TOY7") {
  auto g = toy7();
  CHECK(as_set(g.reachable_set("n5")) == std::set<std::string>{"n5", "n3", "n4", "n1"});
  CHECK(as_set(g.reachable_set("n7")) == std::set<std::string>{"n7"});
  CHECK(as_set(g.ancestor_set("n3")) == std::set<std::string>{"n1", "n3", "n5"});
  CHECK(as_set(g.ancestor_set("n7")) == std::set<std::string>{"n7"});

  auto gb = toy7b();
  CHECK(as_set(gb.reachable_set("n1")) == std::set<std::string>{"n1", "n3", "n4"});
  CHECK(as_set(gb.ancestor_set("n4")) == std::set<std::string>{"n1", "n3", "n4", "n5"});
}

TEST_CASE("shortest paths on TOY7") {
  auto g = toy7();
  auto paths = g.shortest_paths("n5", "n1", 10);
  REQUIRE(paths.size() == 1);
  CHECK(paths[0].nodes == std::vector<std::string>{"n5", "n3", "n1"});
  CHECK(paths[0].relations == std::vector<std::string>{"parent-of", "present"});
  CHECK(g.shortest_paths("n1", "n5", 10).empty());

  auto self = g.shortest_paths("n2", "n2", 3);
  REQUIRE(self.size() == 1);
  CHECK(self[0].length() == 0);
  CHECK(self[0].nodes == std::vector<std::string>{"n2"});
  CHECK_THROWS_AS(g.shortest_paths("n1", "n3", 0), PreconditionError);
}

TEST_CASE("shortest paths are lexicographic and capped") {
  // Diamond: s -> a,b,c -> t, all directed.
  std::vector<Entity> ents{{"s", "s", EntityKind::Other}, {"a", "a", EntityKind::Other},
                           {"b", "b", EntityKind::Other}, {"c", "c", EntityKind::Other},
                           {"t", "t", EntityKind::Other}};
  std::vector<RelationEdge> es;
  for (const char* mid : {"c", "a", "b"}) {
    es.push_back({"s", "parent-of", mid});
    es.push_back({mid, "parent-of", "t"});
  }
  auto g = KnowledgeGraph::build(ents, es);
  auto all = g.shortest_paths("s", "t", 10);
  REQUIRE(all.size() == 3);
  CHECK(all[0].nodes[1] == "a");
  CHECK(all[1].nodes[1] == "b");
  CHECK(all[2].nodes[1] == "c");
  auto two = g.shortest_paths("s", "t", 2);
  REQUIRE(two.size() == 2);
  CHECK(two[0] == all[0]);
  CHECK(two[1] == all[1]);
}

TEST_CASE("neighborhood") {
  auto g = toy7();
  auto zero = g.neighborhood("n3", 0);
  CHECK(zero.entities == std::vector<std::string>{"n3"});
  CHECK(zero.arcs.empty());

  auto one = g.neighborhood("n3", 1);
  CHECK(one.entities == std::vector<std::string>{"n1", "n3", "n5"});
  // n5->n3 (parent-of) plus n1<->n3 (present): the two incident edges as three arcs.
  CHECK(one.arcs.size() == 3);

  auto wide = g.neighborhood("n3", 10);
  CHECK(wide.entities == std::vector<std::string>{"n1", "n3", "n4", "n5"});
}

TEST_CASE("loading errors and modes") {
  auto nodes = kToy / "nodes.tsv";
  SUBCASE("empty edge file") {
    auto edges = write_temp("empty_edges.tsv", "src\trelation\tdst\n");
    auto g = load_kg(nodes, edges);
    CHECK(g.arc_count() == 0);
    for (const auto& a : g.entities()) {
      for (const auto& b : g.entities()) CHECK(g.reach(a.id, b.id) == (a.id == b.id));
    }
  }
  SUBCASE("unknown entity in strict mode names the row") {
    auto edges = write_temp("bad_ref.tsv", "src\trelation\tdst\nn1\tpresent\tn3\nn1\tpresent\tn99\n");
    try {
      load_kg(nodes, edges);
      FAIL("expected a load error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find(":3:") != std::string::npos);
      CHECK(std::string(e.what()).find("n99") != std::string::npos);
    }
  }
  SUBCASE("lenient mode drops and counts") {
    auto edges = write_temp("lenient.tsv", "src\trelation\tdst\nn1\tpresent\tn3\nn1\tpresent\tn99\nx\tpresent\ty\n");
    LoadStats stats;
    auto g = load_kg(nodes, edges, {}, IngestMode::Lenient, &stats);
    CHECK(stats.dropped_edges == 2);
    CHECK(g.edge_count() == 1);
  }
  SUBCASE("malformed row") {
    auto edges = write_temp("malformed.tsv", "src\trelation\tdst\nn1\tpresent\n");
    CHECK_THROWS_WITH_AS(load_kg(nodes, edges), doctest::Contains(":2: malformed row"), DataError);
  }
  SUBCASE("duplicate id") {
    auto dup = write_temp("dup_nodes.tsv", "id\tname\ttype\nn1\tfever\tSymptom\nn1\tagain\tSymptom\n");
    CHECK_THROWS_WITH_AS(load_kg(dup, write_temp("e.tsv", "src\trelation\tdst\n")),
                         doctest::Contains("duplicate entity id n1"), DataError);
  }
  SUBCASE("unrecognized type label becomes Other") {
    auto n = write_temp("kinds.tsv", "id\tname\ttype\nq\tthing\tGene\n");
    auto g = load_kg(n, write_temp("e2.tsv", "src\trelation\tdst\n"));
    CHECK(g.entity(0).kind == EntityKind::Other);
  }
}

TEST_CASE("parallel edges collapse for traversal only") {
  std::vector<Entity> ents{{"a", "a", EntityKind::Other}, {"b", "b", EntityKind::Other}};
  auto g = KnowledgeGraph::build(ents, {{"a", "present", "b"}, {"a", "resemble", "b"}, {"a", "parent-of", "b"}});
  CHECK(g.edge_count() == 3);
  CHECK(g.arc_count() == 2);
  CHECK(g.arc_relation(0, 1) == "parent-of");
  CHECK(g.arc_relation(1, 0) == "present");
}

TEST_CASE("policy file") {
  auto p = write_temp("policy.json", R"({"directed_relations": ["parent-of", "causes"]})");
  auto pol = load_policy(p);
  CHECK(pol.is_directed("causes"));
  CHECK_FALSE(pol.is_directed("present"));
  CHECK_THROWS_AS(load_policy(write_temp("policy_bad.json", R"({"directed": []})")), ConfigError);
}

TEST_CASE("property: reach agrees with breadth-first oracle") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 60; ++trial) {
    auto raw = oracle::random_graph(rng, 30, 80);
    auto g = raw.build();
    auto adj = raw.adjacency();
    for (int u = 0; u < raw.n; ++u) {
      auto dist = oracle::bfs_dist(adj, u);
      for (int v = 0; v < raw.n; ++v) {
        REQUIRE(g.reach(static_cast<NodeIndex>(u), static_cast<NodeIndex>(v)) == (dist[v] >= 0));
      }
    }
  }
}

TEST_CASE("property: adding an edge is monotone") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    auto raw = oracle::random_graph(rng, 20, 40);
    auto before = raw.build();
    std::uniform_int_distribution<int> node(0, raw.n - 1);
    raw.edges.emplace_back(node(rng), "present", node(rng));
    auto after = raw.build();
    for (NodeIndex u = 0; u < static_cast<NodeIndex>(raw.n); ++u) {
      for (NodeIndex v = 0; v < static_cast<NodeIndex>(raw.n); ++v) {
        if (before.reach(u, v)) REQUIRE(after.reach(u, v));
      }
    }
  }
}

TEST_CASE("property: all-bidirectional graphs are symmetric") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 30; ++trial) {
    auto raw = oracle::random_graph(rng, 25, 40);
    raw.directed.clear();
    auto g = raw.build();
    for (NodeIndex u = 0; u < static_cast<NodeIndex>(raw.n); ++u) {
      for (NodeIndex v = 0; v < static_cast<NodeIndex>(raw.n); ++v) REQUIRE(g.reach(u, v) == g.reach(v, u));
    }
  }
}

TEST_CASE("property: ancestor set equals descendants on the reversed graph") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    auto raw = oracle::random_graph(rng, 25, 60);
    auto g = raw.build();
    // Reverse every arc: directed edges flip, bidirectional stay as they are.
    oracle::RawGraph rev = raw;
    rev.edges.clear();
    for (const auto& [s, r, d] : raw.edges) rev.edges.emplace_back(d, r, s);
    auto gr = rev.build();
    for (int t = 0; t < raw.n; ++t) {
      const auto id = oracle::RawGraph::id(t);
      REQUIRE(as_set(g.ancestor_set(id)) == as_set(gr.reachable_set(id)));
      for (const auto& v : g.ancestor_set(id)) REQUIRE(g.reach(v, id));
    }
  }
}

TEST_CASE("property: shortest paths are valid, minimal and complete") {
  std::mt19937_64 rng(19);
  for (int trial = 0; trial < 40; ++trial) {
    auto raw = oracle::random_graph(rng, 15, 40);
    auto g = raw.build();
    auto adj = raw.adjacency();
    for (int u = 0; u < raw.n; ++u) {
      auto dist = oracle::bfs_dist(adj, u);
      for (int v = 0; v < raw.n; ++v) {
        auto paths = g.shortest_paths(oracle::RawGraph::id(u), oracle::RawGraph::id(v), 100000);
        if (dist[v] < 0) {
          REQUIRE(paths.empty());
          continue;
        }
        REQUIRE(static_cast<double>(paths.size()) == oracle::count_shortest(adj, u, v));
        for (std::size_t i = 0; i < paths.size(); ++i) {
          const auto& p = paths[i];
          REQUIRE(static_cast<int>(p.length()) == dist[v]);
          for (std::size_t h = 0; h + 1 < p.nodes.size(); ++h) {
            REQUIRE(adj[*g.find(p.nodes[h])][*g.find(p.nodes[h + 1])]);
          }
          if (i > 0) REQUIRE(paths[i - 1].nodes < p.nodes);
        }
      }
    }
  }
}

TEST_CASE("cache capacity does not change answers") {
  std::mt19937_64 rng(23);
  auto raw = oracle::random_graph(rng, 40, 120);
  auto g = raw.build();
  g.set_cache_capacity(1);
  std::vector<NodeIndex> all;
  for (NodeIndex v = 0; v < static_cast<NodeIndex>(raw.n); ++v) all.push_back(v);
  g.warm_ancestors(std::span<const NodeIndex>(all).first(all.size() / 2));
  auto adj = raw.adjacency();
  for (int u = 0; u < raw.n; ++u) {
    for (int v = 0; v < raw.n; ++v) {
      REQUIRE(g.ancestors(static_cast<NodeIndex>(v)).contains(static_cast<NodeIndex>(u)) ==
              oracle::bfs_reach(adj, u, v));
    }
  }
}
