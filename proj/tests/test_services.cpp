#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <cmath>
#include <thread>

#include <httplib.h>

#include "pathaudit/error.hpp"
#include "pathaudit/services.hpp"

using namespace pathaudit;
using namespace pathaudit::services;
using nlohmann::json;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("pathaudit_test_services_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

// Counts calls so cache hits are observable.
class CountingAdjudicator : public Adjudicator {
 public:
  std::string identity() const override { return "counting/v1"; }
  std::set<Capability> capabilities() const override { return stub.capabilities(); }
  json adjudicate(Capability c, const json& r) override {
    ++calls;
    return stub.adjudicate(c, r);
  }
  StubAdjudicator stub;
  int calls = 0;
};

class ScriptedAdjudicator : public Adjudicator {
 public:
  explicit ScriptedAdjudicator(json reply) : reply_(std::move(reply)) {}
  std::string identity() const override { return "scripted"; }
  std::set<Capability> capabilities() const override {
    return {Capability::AlignChoice, Capability::PrunePaths, Capability::Extract, Capability::Categorize};
  }
  json adjudicate(Capability, const json&) override { return reply_; }

 private:
  json reply_;
};

struct LocalServer {
  httplib::Server server;
  int port = 0;
  std::thread thread;

  LocalServer() = default;
  void start() {
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~LocalServer() {
    server.stop();
    if (thread.joinable()) thread.join();
  }
  std::string url(const std::string& path) const { return "http://127.0.0.1:" + std::to_string(port) + path; }
};

}  // namespace

TEST_CASE("cosine basics") {
  const Vector v{0.3, -1.2, 2.0};
  const Vector neg{-0.3, 1.2, -2.0};
  CHECK(cosine(v, v) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine(v, neg) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(cosine(Vector{1, 0}, Vector{0, 1}) == 0.0);
  CHECK(cosine(v, neg) == cosine(neg, v));
  CHECK_THROWS_AS(cosine(Vector{0, 0}, Vector{1, 0}), PreconditionError);
  CHECK_THROWS_AS(cosine(Vector{1, 0}, Vector{1, 0, 0}), PreconditionError);
}

TEST_CASE("hash embedder is deterministic and unit-norm") {
  HashEmbedder e(64);
  const std::vector<std::string> texts{"fever"};
  auto a = embed_batch(e, texts);
  auto b = embed_batch(e, texts);
  CHECK(a == b);
  double norm = 0;
  for (double x : a[0]) norm += x * x;
  CHECK(norm == doctest::Approx(1.0).epsilon(1e-12));
  // Normalized form is the key.
  const std::vector<std::string> variant{"  FEVER "};
  CHECK(embed_batch(e, variant) == a);
  CHECK_THROWS_AS(embed_batch(e, std::vector<std::string>{}), PreconditionError);
  CHECK(HashEmbedder(64, "x").identity() != e.identity());
}

TEST_CASE("pinned similarity is reproduced") {
  HashEmbedder e(64);
  e.pin_similarity("pyrexia", "fever", 0.95);
  const std::vector<std::string> texts{"pyrexia", "fever", "rash"};
  auto v = embed_batch(e, texts);
  CHECK(std::abs(cosine(v[0], v[1]) - 0.95) < 1e-9);
  CHECK(cosine(v[0], v[2]) < 0.9);
  CHECK_THROWS_AS(e.pin_similarity("fever", "rash", 0.5), PreconditionError);
  CHECK_THROWS_AS(e.pin_similarity("x", "y", 1.0), PreconditionError);
}

TEST_CASE("stub adjudicator contracts") {
  StubAdjudicator stub;
  AlignChoiceRequest req{"mention", {{"a", "alpha", 0.8}, {"b", "beta", 0.7}}, "q", {"o"}};
  CHECK(choose_candidate(stub, req) == std::optional<std::size_t>(0));

  StubAdjudicator abstaining({.abstain_align = true, .vocabulary = {}});
  CHECK_FALSE(choose_candidate(abstaining, req).has_value());

  PruneRequest prune{{{{"a", "b"}, {"present"}}, {{"c"}, {}}}, "q", {}};
  CHECK(prune_paths(stub, prune) == std::vector<std::size_t>{0, 1});

  CategorizeRequest cat{{{"n3", "influenza", "Disease"}}, {{"n6", "lupus", "Disease"}, {"n1", "fever", "Symptom"}}, {}};
  auto res = categorize(stub, cat);
  CHECK(res.categories_err.at("n3") == "Disease");
  CHECK(res.categories_ref.at("n1") == "Symptom");
  CHECK(res.summary == "stub");

  StubAdjudicator extractor({.abstain_align = false, .vocabulary = {"fever", "rash", "lupus"}});
  auto mentions = extract_entities(extractor, {"A patient with Fever and a malar rash.", {"Lupus", "Flu"}});
  REQUIRE(mentions.size() == 3);
  CHECK(mentions[0].text == "fever");
}

TEST_CASE("schema violations become protocol errors with the raw payload") {
  AlignChoiceRequest req{"m", {{"a", "alpha", 0.8}}, "q", {}};
  ScriptedAdjudicator out_of_range(json{{"choice", 3}});
  try {
    choose_candidate(out_of_range, req);
    FAIL("expected ProtocolError");
  } catch (const ProtocolError& e) {
    CHECK(e.raw_payload() == R"({"choice":3})");
    CHECK_FALSE(e.retriable());
  }
  ScriptedAdjudicator garbage(json("pick a"));
  CHECK_THROWS_AS(choose_candidate(garbage, req), ProtocolError);

  // Prune: out-of-range indices are dropped, empty keeps none.
  ScriptedAdjudicator prune_reply(json{{"keep", {5, 0, 0, -1}}});
  CHECK(prune_paths(prune_reply, {{{{"a"}, {}}, {{"b"}, {}}}, "q", {}}) == std::vector<std::size_t>{0});
  ScriptedAdjudicator prune_none(json{{"keep", json::array()}});
  CHECK(prune_paths(prune_none, {{{{"a"}, {}}}, "q", {}}).empty());

  // Categorize must label each entity exactly once.
  ScriptedAdjudicator partial(json{{"categories_err", json::object()}, {"categories_ref", json::object()}, {"summary", "s"}});
  CHECK_THROWS_AS(categorize(partial, {{{"n3", "influenza", "Disease"}}, {}, {}}), ProtocolError);
}

TEST_CASE("response cache serves identical replies") {
  auto dir = fresh_dir("cache");
  auto inner = std::make_shared<CountingAdjudicator>();
  CachingAdjudicator cached(inner, dir);
  PruneRequest prune{{{{"a", "b"}, {"present"}}}, "q", {}};
  auto first = prune_paths(cached, prune);
  auto second = prune_paths(cached, prune);
  CHECK(first == second);
  CHECK(inner->calls == 1);
  CHECK(cached.hits() == 1);

  // A second cache instance over the same directory replays without calling out.
  auto inner2 = std::make_shared<CountingAdjudicator>();
  CachingAdjudicator replay(inner2, dir);
  CHECK(prune_paths(replay, prune) == first);
  CHECK(inner2->calls == 0);

  auto emb_dir = fresh_dir("emb");
  auto base = std::make_shared<HashEmbedder>(16);
  CachingEmbedder ce(base, emb_dir);
  const std::vector<std::string> texts{"fever", "rash"};
  auto a = embed_batch(ce, texts);
  auto b = embed_batch(ce, texts);
  CHECK(a == b);
  CHECK(a == embed_batch(*base, texts));
}

TEST_CASE("retries are bounded and only for transport errors") {
  int attempts = 0;
  CHECK_THROWS_AS(with_retries(2, 1, [&]() -> int {
                    ++attempts;
                    throw TransportError("down");
                  }),
                  TransportError);
  CHECK(attempts == 3);
  attempts = 0;
  CHECK(with_retries(3, 1, [&]() {
          if (++attempts < 2) throw TransportError("flaky");
          return 7;
        }) == 7);
  attempts = 0;
  CHECK_THROWS_AS(with_retries(3, 1, [&]() -> int {
                    ++attempts;
                    throw ProtocolError("bad", "");
                  }),
                  ProtocolError);
  CHECK(attempts == 1);
}

TEST_CASE("http providers over loopback") {
  LocalServer srv;
  std::atomic<int> flaky_calls{0};
  srv.server.Post("/embed", [](const httplib::Request& req, httplib::Response& res) {
    auto body = json::parse(req.body);
    json out = json::array();
    for (std::size_t i = 0; i < body["input"].size(); ++i) out.push_back({1.0, static_cast<double>(i)});
    res.set_content(json{{"embeddings", out}}.dump(), "application/json");
  });
  srv.server.Post("/flaky", [&](const httplib::Request& req, httplib::Response& res) {
    if (flaky_calls++ == 0) {
      res.status = 503;
      return;
    }
    auto body = json::parse(req.body);
    CHECK(body["capability"] == "prune_paths");
    CHECK(body["prompt"].get<std::string>().find("\"paths\"") != std::string::npos);
    res.set_content(json{{"response", {{"keep", {0}}}}}.dump(), "application/json");
  });
  srv.server.Post("/bad", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("not json", "text/plain");
  });
  srv.start();

  ProviderConfig ecfg;
  ecfg.endpoint = srv.url("/embed");
  ecfg.model = "m";
  ecfg.dimension = 2;
  HttpEmbedder emb(ecfg);
  auto vs = embed_batch(emb, std::vector<std::string>{"a", "b"});
  CHECK(vs[1] == Vector{1.0, 1.0});

  ecfg.dimension = 3;
  HttpEmbedder wrong_dim(ecfg);
  CHECK_THROWS_AS(embed_batch(wrong_dim, std::vector<std::string>{"a"}), ProtocolError);

  ProviderConfig acfg;
  acfg.endpoint = srv.url("/flaky");
  acfg.model = "m";
  acfg.backoff_ms = 1;
  acfg.template_dir = std::filesystem::path(PATHAUDIT_DATA_DIR) / ".." / "templates";
  HttpAdjudicator adj(acfg);
  CHECK(adj.capabilities().size() == 4);
  CHECK(prune_paths(adj, {{{{"a"}, {}}}, "q", {}}) == std::vector<std::size_t>{0});
  CHECK(flaky_calls == 2);

  acfg.endpoint = srv.url("/bad");
  HttpAdjudicator bad(acfg);
  try {
    prune_paths(bad, {{{{"a"}, {}}}, "q", {}});
    FAIL("expected ProtocolError");
  } catch (const ProtocolError& e) {
    CHECK(e.raw_payload() == "not json");
  }

  acfg.endpoint = "http://127.0.0.1:1/nothing";
  acfg.retries = 1;
  acfg.timeout_ms = 500;
  HttpAdjudicator down(acfg);
  CHECK_THROWS_AS(prune_paths(down, {{{{"a"}, {}}}, "q", {}}), TransportError);

  acfg.credential_env = "PATHAUDIT_TEST_UNSET_TOKEN";
  HttpAdjudicator no_token(acfg);
  CHECK_THROWS_AS(prune_paths(no_token, {{{{"a"}, {}}}, "q", {}}), ConfigError);
}
