#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "oracle.hpp"
#include "pathaudit/error.hpp"
#include "pathaudit/grounding.hpp"

using namespace pathaudit;
using namespace pathaudit::grounding;
using pathaudit::kg::KnowledgeGraph;
using nlohmann::json;

namespace {

const std::filesystem::path kToy = std::filesystem::path(PATHAUDIT_DATA_DIR) / "toy7";

KnowledgeGraph toy7() { return kg::load_kg(kToy / "nodes.tsv", kToy / "edges.tsv"); }
KnowledgeGraph toy7b() { return kg::load_kg(kToy / "nodes.tsv", kToy / "edges_toy7b.tsv"); }

class CountingEmbedder : public services::EmbeddingProvider {
 public:
  explicit CountingEmbedder(services::EmbeddingProvider& inner) : inner_(inner) {}
  std::string identity() const override { return inner_.identity(); }
  std::size_t dimension() const override { return inner_.dimension(); }
  std::vector<services::Vector> embed(std::span<const std::string> texts) override {
    calls += texts.size();
    return inner_.embed(texts);
  }
  std::size_t calls = 0;

 private:
  services::EmbeddingProvider& inner_;
};

class FailingAdjudicator : public services::Adjudicator {
 public:
  std::string identity() const override { return "failing"; }
  std::set<services::Capability> capabilities() const override {
    return services::StubAdjudicator().capabilities();
  }
  json adjudicate(services::Capability, const json&) override { throw TransportError("offline"); }
};

// Fixed vectors per text; everything else is orthogonal-ish noise.
class TableEmbedder : public services::EmbeddingProvider {
 public:
  std::map<std::string, services::Vector> table;
  std::string identity() const override { return "table"; }
  std::size_t dimension() const override { return 3; }
  std::vector<services::Vector> embed(std::span<const std::string> texts) override {
    std::vector<services::Vector> out;
    for (const auto& t : texts) {
      auto it = table.find(normalize_mention(t));
      out.push_back(it == table.end() ? services::Vector{0, 0, 1} : it->second);
    }
    return out;
  }
};

const AlignmentContext kCtx{"A patient presents with fever.", {"influenza", "lupus"}};

}  // namespace

TEST_CASE("normalize_mention") {
  CHECK(normalize_mention("  Fever ") == "fever");
  CHECK(normalize_mention("Crohn's disease") == "crohn's disease");
  CHECK(normalize_mention("") == "");
  CHECK(normalize_mention("\t(Viral   PNEUMONIA). ") == "viral pneumonia");
  CHECK(normalize_mention("...") == "");
}

TEST_CASE("three-stage alignment on TOY7") {
  auto g = toy7();
  services::HashEmbedder base(64);
  base.pin_similarity("pyrexia", "fever", 0.95);
  CountingEmbedder emb(base);
  services::StubAdjudicator stub;
  EntityAligner aligner(g, emb, stub);
  const std::size_t after_names = emb.calls;
  CHECK(after_names == 7);

  SUBCASE("exact") {
    auto r = aligner.align({"Fever", MentionOrigin::ModelPath}, kCtx);
    CHECK(r.method == AlignMethod::Exact);
    CHECK(r.entity == "n1");
    CHECK_FALSE(r.similarity.has_value());
    CHECK(emb.calls == after_names);  // later stages never ran
  }
  SUBCASE("embedding") {
    auto r = aligner.align({"pyrexia", MentionOrigin::ModelPath}, kCtx);
    CHECK(r.method == AlignMethod::Embedding);
    CHECK(r.entity == "n1");
    REQUIRE(r.similarity.has_value());
    CHECK(std::abs(*r.similarity - 0.95) < 1e-9);
  }
  SUBCASE("adjudicated picks the highest-similarity candidate") {
    auto r = aligner.align({"quux nonentity", MentionOrigin::ModelPath}, kCtx);
    CHECK(r.method == AlignMethod::Adjudicated);
    // Independent argmax over the seven names.
    const std::vector<std::string> probe{"quux nonentity"};
    auto qv = base.embed(probe)[0];
    std::string best;
    double best_sim = -2;
    for (const auto& e : g.entities()) {
      const std::vector<std::string> one{e.name};
      const double s = services::cosine(qv, base.embed(one)[0]);
      if (s > best_sim) best_sim = s, best = e.id;
    }
    CHECK(best_sim < 0.9);
    CHECK(r.entity == best);
    CHECK(std::abs(*r.similarity - best_sim) < 1e-12);
  }
  SUBCASE("abstention leaves the mention unaligned") {
    services::StubAdjudicator abstain({.abstain_align = true, .vocabulary = {}});
    EntityAligner a2(g, base, abstain);
    auto r = a2.align({"quux nonentity", MentionOrigin::ModelPath}, kCtx);
    CHECK(r.method == AlignMethod::Unaligned);
    CHECK_FALSE(r.entity.has_value());
  }
  SUBCASE("empty after normalization") {
    auto r = aligner.align({"  ?! ", MentionOrigin::ModelPath}, kCtx);
    CHECK(r.method == AlignMethod::Unaligned);
  }
}

TEST_CASE("tie-breaks use the smallest entity id") {
  std::vector<kg::Entity> ents{{"b2", "Fever", kg::EntityKind::Symptom},
                               {"a1", "fever", kg::EntityKind::Symptom},
                               {"c3", "alpha", kg::EntityKind::Other},
                               {"c0", "beta", kg::EntityKind::Other}};
  auto g = KnowledgeGraph::build(ents, {});
  TableEmbedder emb;
  emb.table["alpha"] = {1, 0, 0};
  emb.table["beta"] = {1, 0, 0};
  emb.table["alef"] = {1, 0, 0};
  services::StubAdjudicator stub;
  EntityAligner aligner(g, emb, stub);
  CHECK(aligner.align({"FEVER", MentionOrigin::Question}, kCtx).entity == "a1");
  auto r = aligner.align({"alef", MentionOrigin::Question}, kCtx);
  CHECK(r.method == AlignMethod::Embedding);
  CHECK(r.entity == "c0");
}

TEST_CASE("provider failures surface instead of silently unaligning") {
  auto g = toy7();
  services::HashEmbedder emb(32);
  FailingAdjudicator failing;
  EntityAligner aligner(g, emb, failing);
  CHECK(aligner.align({"fever", MentionOrigin::Question}, kCtx).method == AlignMethod::Exact);
  CHECK_THROWS_AS(aligner.align({"quux", MentionOrigin::Question}, kCtx), TransportError);
}

TEST_CASE("property: raising tau only shrinks the embedding-aligned set") {
  std::mt19937_64 rng(5);
  auto g = toy7();
  services::HashEmbedder emb(48);
  std::vector<std::string> mentions;
  std::uniform_real_distribution<double> sim(0.5, 0.99);
  std::uniform_int_distribution<std::size_t> pick(0, 6);
  for (int i = 0; i < 30; ++i) {
    mentions.push_back("mention " + std::to_string(i));
    emb.pin_similarity(mentions.back(), g.entities()[pick(rng)].name, sim(rng));
  }
  services::StubAdjudicator stub;
  std::set<std::string> previous;
  bool first = true;
  for (double tau : {0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 1.0}) {
    EntityAligner aligner(g, emb, stub, {tau, 5, {}});
    std::set<std::string> embedding_aligned;
    for (const auto& m : mentions) {
      auto r = aligner.align({m, MentionOrigin::ModelPath}, kCtx);
      if (r.method == AlignMethod::Embedding) {
        embedding_aligned.insert(m);
        CHECK(*r.similarity >= tau);
      }
    }
    if (!first) {
      for (const auto& m : embedding_aligned) CHECK(previous.count(m));
    }
    previous = embedding_aligned;
    first = false;
  }
}

TEST_CASE("name embeddings persist per graph digest and embedder identity") {
  auto dir = std::filesystem::temp_directory_path() / "pathaudit_test_grounding_cache";
  std::filesystem::remove_all(dir);
  auto g = toy7();
  services::HashEmbedder emb(32);
  services::StubAdjudicator stub;
  EntityAligner first(g, emb, stub, {0.9, 5, dir});
  CHECK_FALSE(first.loaded_embeddings_from_cache());
  EntityAligner second(g, emb, stub, {0.9, 5, dir});
  CHECK(second.loaded_embeddings_from_cache());
  auto a = first.align({"quux", MentionOrigin::Question}, kCtx);
  auto b = second.align({"quux", MentionOrigin::Question}, kCtx);
  CHECK(a == b);
  services::HashEmbedder other(32, "salted");
  EntityAligner third(g, other, stub, {0.9, 5, dir});
  CHECK_FALSE(third.loaded_embeddings_from_cache());
}

TEST_CASE("ground_path excises unaligned steps") {
  auto g = toy7();
  services::HashEmbedder emb(64);
  services::StubAdjudicator abstain({.abstain_align = true, .vocabulary = {}});
  EntityAligner aligner(g, emb, abstain);

  auto simple = aligner.ground_path({{{"Fever", "present"}, {"Influenza", ""}}}, kCtx);
  REQUIRE(simple.steps.size() == 2);
  CHECK(simple.steps[0].entity == "n1");
  CHECK(simple.steps[0].relation_label == "present");
  CHECK(simple.steps[1].entity == "n3");
  CHECK(simple.dropped_steps == 0);

  auto excised = aligner.ground_path({{{"Fever", "causes"}, {"quux-nonentity", "leads to"}, {"Influenza", ""}}}, kCtx);
  REQUIRE(excised.steps.size() == 2);
  CHECK(excised.steps[0].entity == "n1");
  CHECK(excised.steps[1].entity == "n3");
  CHECK(excised.dropped_steps == 1);

  auto none = aligner.ground_path({{{"quux", ""}, {"zzyzx", ""}}}, kCtx);
  CHECK(none.steps.empty());
  CHECK(none.dropped_steps == 2);
}

TEST_CASE("reference paths on TOY7 and TOY7b") {
  services::StubAdjudicator stub;
  auto gb = toy7b();
  auto paths = build_reference_paths({"n1"}, "n4", gb, stub, kCtx);
  REQUIRE(paths.size() == 1);
  CHECK(paths[0].nodes == std::vector<std::string>{"n1", "n4"});
  CHECK(paths[0].relations == std::vector<std::string>{"present"});

  auto g = toy7();
  CHECK(build_reference_paths({"n1"}, "n4", g, stub, kCtx).empty());

  auto self = build_reference_paths({"n4", "n4"}, "n4", gb, stub, kCtx);
  REQUIRE(self.size() == 1);
  CHECK(self[0].length() == 0);

  class KeepNone : public services::Adjudicator {
   public:
    std::string identity() const override { return "none"; }
    std::set<services::Capability> capabilities() const override { return {services::Capability::PrunePaths}; }
    json adjudicate(services::Capability, const json&) override { return {{"keep", json::array()}}; }
  } keep_none;
  CHECK(build_reference_paths({"n1"}, "n4", gb, keep_none, kCtx).empty());
}

TEST_CASE("property: reference paths are minimal walks ending at the answer") {
  std::mt19937_64 rng(29);
  services::StubAdjudicator stub;
  for (int trial = 0; trial < 60; ++trial) {
    auto raw = oracle::random_graph(rng, 20, 50);
    auto g = raw.build();
    auto adj = raw.adjacency();
    std::uniform_int_distribution<int> node(0, raw.n - 1);
    const int target = node(rng);
    std::vector<std::string> xs;
    for (int i = 0; i < 3; ++i) xs.push_back(oracle::RawGraph::id(node(rng)));
    auto paths = build_reference_paths(xs, oracle::RawGraph::id(target), g, stub, kCtx, 4);
    std::set<kg::Path> unique(paths.begin(), paths.end());
    CHECK(unique.size() == paths.size());
    for (const auto& p : paths) {
      CHECK(p.target() == oracle::RawGraph::id(target));
      const int src = static_cast<int>(*g.find(p.source()));
      CHECK(static_cast<int>(p.length()) == oracle::bfs_dist(adj, src)[target]);
      for (std::size_t h = 0; h + 1 < p.nodes.size(); ++h) {
        CHECK(adj[*g.find(p.nodes[h])][*g.find(p.nodes[h + 1])]);
      }
    }
  }
}

TEST_CASE("align_case") {
  auto gb = toy7b();
  services::HashEmbedder emb(64);
  services::StubAdjudicator stub({.abstain_align = false, .vocabulary = {"fever", "rash"}});
  EntityAligner aligner(gb, emb, stub);
  RawCase raw;
  raw.id = "CASE-A";
  raw.question = "A patient with fever.";
  raw.options = {"viral pneumonia", "lupus", "influenza"};
  raw.correct_answer = "viral pneumonia";
  raw.predicted_answer = "lupus";
  raw.model_paths = {{{{"rash", "present"}, {"lupus", ""}}}};

  SUBCASE("extracted entities when none are supplied") {
    auto c = align_case(raw, aligner, stub);
    CHECK(c.question_entity_ids() == std::vector<std::string>{"n1"});
    CHECK(c.correct_entity == "n4");
    CHECK(c.predicted_entity == "n6");
    CHECK_FALSE(c.correct());
    REQUIRE(c.model_paths.size() == 1);
    CHECK(c.model_paths[0].steps.size() == 2);
  }
  SUBCASE("pre-extracted entities win") {
    raw.question_entities = std::vector<PreExtractedEntity>{{"Rash", "Symptom"}, {"rash", ""}};
    auto c = align_case(raw, aligner, stub);
    CHECK(c.question_entity_ids() == std::vector<std::string>{"n2"});
    CHECK(c.question_entities.size() == 2);
  }
  SUBCASE("answer outside options") {
    raw.predicted_answer = "fracture";
    CHECK_THROWS_AS(align_case(raw, aligner, stub), DataError);
  }
  SUBCASE("unalignable answer") {
    services::StubAdjudicator abstain({.abstain_align = true, .vocabulary = {}});
    EntityAligner strict(gb, emb, abstain);
    raw.options.push_back("zzq unknown");
    raw.predicted_answer = "zzq unknown";
    CHECK_THROWS_WITH_AS(align_case(raw, strict, abstain), doctest::Contains("could not be aligned"), DataError);
  }
}
