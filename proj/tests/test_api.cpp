#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <numeric>
#include <thread>

#include <httplib.h>

#include "fixture.hpp"
#include "pathaudit/api.hpp"
#include "pathaudit/error.hpp"
#include "pathaudit/fsutil.hpp"

using namespace pathaudit;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kGolden = fs::path(PATHAUDIT_GOLDEN_DIR) / "api";

struct Demo {
  fixture::TempDir tmp;
  std::string run_id;
  Demo(bool project = true) { run_id = fixture::run_demo(tmp.path, project).run_id; }

  api::ApiService service() const {
    auto run = store::load_run(store::RunStore(tmp.path), run_id);
    auto c = app::demo_config(fixture::kToy, tmp.path);
    auto providers = app::make_providers(c, *run.graph);
    return api::ApiService(std::move(run), providers.adjudicator);
  }
};

api::Request to_request(const json& req) {
  api::Request r{req.at("method").get<std::string>(), req.at("path").get<std::string>(), {}, ""};
  if (req.contains("query")) {
    for (const auto& [k, v] : req["query"].items()) r.query[k] = v.get<std::string>();
  }
  if (req.contains("body")) r.body = req["body"].dump();
  return r;
}

json get(const api::ApiService& s, const std::string& path, std::map<std::string, std::string> q = {}) {
  const auto r = s.handle({"GET", path, std::move(q), ""});
  return json::parse(r.body);
}

json post(const api::ApiService& s, const std::string& path, const json& body) {
  return json::parse(s.handle({"POST", path, {}, body.dump()}).body);
}

json requests() { return json::parse(read_file(kGolden / "requests.json")); }

}  // namespace

TEST_CASE("golden request/response pairs") {
  Demo demo;
  const auto service = demo.service();
  const bool update = std::getenv("PATHAUDIT_UPDATE_GOLDEN") != nullptr;
  for (const auto& req : requests()) {
    const auto name = req.at("name").get<std::string>();
    CAPTURE(name);
    const auto resp = service.handle(to_request(req));
    CHECK(resp.status == req.at("status").get<int>());
    const auto file = kGolden / (name + ".json");
    if (update) write_file_atomic(file, resp.body + "\n");
    REQUIRE(fs::exists(file));
    CHECK(read_file(file) == resp.body + "\n");
    const auto body = json::parse(resp.body);
    CHECK(body.at("schema_version") == 1);
  }
}

TEST_CASE("endpoint coverage against the view manifest") {
  const auto manifest = json::parse(read_file(kGolden / "views.json"));
  std::set<std::string> known;
  for (const auto& r : api::routes()) known.insert(r.method + " " + r.pattern);
  REQUIRE(known.size() == 7);

  std::set<std::string> views_backed;
  for (const auto& r : api::routes()) views_backed.insert(r.views.begin(), r.views.end());
  REQUIRE(manifest.at("views").size() == 6);
  for (const auto& v : manifest["views"]) {
    const auto name = v.at("name").get<std::string>();
    CAPTURE(name);
    CHECK(views_backed.count(name) == 1);
    CHECK_FALSE(v.at("endpoints").empty());
    for (const auto& e : v["endpoints"]) CHECK(known.count(e.get<std::string>()) == 1);
  }

  // every endpoint has a golden pair
  std::set<std::string> covered;
  for (const auto& req : requests()) {
    const auto path = req.at("path").get<std::string>();
    for (const auto& r : api::routes()) {
      const auto open = r.pattern.find("{id}");
      const bool match = open == std::string::npos
                             ? path == r.pattern
                             : path.size() > r.pattern.size() - 4 && path.compare(0, open, r.pattern, 0, open) == 0 &&
                                   path.ends_with(r.pattern.substr(open + 4));
      if (match && req.at("method") == r.method && req.at("status") == 200) covered.insert(r.method + " " + r.pattern);
    }
  }
  CHECK(covered == known);
}

TEST_CASE("documented examples") {
  Demo demo;
  const auto s = demo.service();

  const auto o = get(s, "/api/overview");
  CHECK(o["summary"]["totals"] == json({{"Relation", 1}, {"Branch", 1}, {"Missing", 1}}));
  CHECK(o["summary"]["accuracy"] == 0.0);
  CHECK(o["summary"]["total_cases"] == 2);

  const auto inst = get(s, "/api/cases/CASE-B/instance")["instance"];
  const auto& step = inst["model_paths"][0]["steps"][0];
  CHECK(step["source"] == "n1");
  CHECK(step["target"] == "n7");
  CHECK(step["labels"] == json({"Relation", "Branch"}));

  const auto p = get(s, "/api/projection", {{"k", "0"}});
  CHECK(p["top_k"].empty());
  CHECK(p["grid"]["width"] == 256);
  CHECK(p["grid"]["values"].size() == 256u * 256u);
}

TEST_CASE("overview kind filter") {
  Demo demo;
  const auto s = demo.service();
  const auto m = get(s, "/api/overview", {{"kind", "Missing"}})["summary"];
  CHECK(m["total_cases"] == 1);
  CHECK(m["totals"]["Missing"] == 1);
  const auto b = get(s, "/api/overview", {{"kind", "Branch"}})["summary"];
  CHECK(b["total_cases"] == 1);
  CHECK(b["totals"] == json({{"Relation", 1}, {"Branch", 1}, {"Missing", 0}}));
}

TEST_CASE("projection response properties") {
  Demo demo;
  const auto s = demo.service();
  for (const char* kind : {"", "Relation", "Branch", "Missing"}) {
    CAPTURE(kind);
    const auto p = get(s, "/api/projection", {{"kind", kind}, {"k", "100"}, {"width", "64"}, {"height", "64"}});
    const auto& ids = p["layout"]["ids"];
    CHECK(ids.size() == p["layout"]["x"].size());
    CHECK(ids.size() == p["layout"]["y"].size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      CHECK(p["layout"]["x"][i].get<double>() >= 0.0);
      CHECK(p["layout"]["x"][i].get<double>() <= 1.0);
    }
    double mass = 0;
    for (const auto& v : p["grid"]["values"]) mass += v.get<double>();
    std::size_t total = 0, prev = SIZE_MAX;
    for (const auto& t : p["top_k"]) {
      const auto n = t["count"].get<std::size_t>();
      CHECK(n <= prev);
      prev = n;
      total += n;
    }
    CHECK(mass == doctest::Approx(static_cast<double>(total)).epsilon(1e-9));
  }
}

TEST_CASE("path view and links") {
  Demo demo;
  const auto s = demo.service();
  const auto v = post(s, "/api/path-view", {{"entity_ids", {"n1", "n7", "n2"}}, {"min_error_intensity", 2}});
  std::vector<std::string> kept;
  for (const auto& n : v["nodes"]) kept.push_back(n["id"]);
  CHECK(kept == std::vector<std::string>{"n1", "n7"});
  CHECK(v["nodes"][0]["intensity"] == json({{"Relation", 1}, {"Branch", 1}, {"Missing", 1}}));
  CHECK(v["arcs"].empty());

  const auto all = post(s, "/api/path-view", {{"entity_ids", {"n1", "n3"}}});
  CHECK(all["arcs"].size() == 2);  // present is bidirectional

  const auto l = get(s, "/api/node/n7/links");
  REQUIRE(l["incoming"].size() == 1);
  CHECK(l["incoming"][0]["side"] == "observed");
  CHECK(l["incoming"][0]["labels"] == json({"Relation", "Branch"}));
  CHECK(l["outgoing"].empty());
  CHECK(get(s, "/api/node/n1/links")["missing_in_cases"] == json({"CASE-A"}));

  CHECK(s.handle({"POST", "/api/path-view", {}, "[1,2]"}).status == 400);
  CHECK(s.handle({"POST", "/api/path-view", {}, R"({"entity_ids":["n1"],"extra":1})"}).status == 400);
  CHECK(s.handle({"GET", "/api/path-view", {}, ""}).status == 405);
  CHECK(s.handle({"GET", "/api/nothing", {}, ""}).status == 404);
}

TEST_CASE("expansion is cached in the run directory") {
  Demo demo;
  const json req = {{"anchor", "n1"}, {"kind", "Relation"}, {"mode", "AlongErrorSet"}};
  std::string first;
  {
    const auto s = demo.service();
    first = s.handle({"POST", "/api/errors/expand", {}, req.dump()}).body;
    const auto j = json::parse(first);
    CHECK(j["expansion"]["error_targets"] == json({"n7"}));
    CHECK(j["summary"]["summary"] == "stub");
  }
  const auto dir = store::RunStore(demo.tmp.path).run_dir(demo.run_id) / store::files::kExpansions;
  REQUIRE(fs::exists(dir));
  CHECK(std::distance(fs::directory_iterator(dir), fs::directory_iterator()) == 1);
  const auto s2 = demo.service();
  CHECK(s2.handle({"POST", "/api/errors/expand", {}, req.dump()}).body == first);
}

TEST_CASE("responses are byte identical across restarts") {
  Demo demo;
  std::vector<std::string> a, b;
  {
    const auto s = demo.service();
    for (const auto& req : requests()) a.push_back(s.handle(to_request(req)).body);
    for (std::size_t i = 0; const auto& req : requests()) CHECK(s.handle(to_request(req)).body == a[i++]);
  }
  const auto s = demo.service();
  for (const auto& req : requests()) b.push_back(s.handle(to_request(req)).body);
  CHECK(a == b);

  Demo again;  // separate store, fresh analysis
  const auto s3 = again.service();
  std::vector<std::string> c;
  for (const auto& req : requests()) c.push_back(s3.handle(to_request(req)).body);
  CHECK(a == c);
}

TEST_CASE("incomplete runs answer 409") {
  Demo demo(false);
  const auto s = demo.service();
  CHECK(s.handle({"GET", "/api/overview", {}, ""}).status == 200);
  const auto r = s.handle({"GET", "/api/projection", {}, ""});
  CHECK(r.status == 409);
  CHECK(json::parse(r.body)["error"]["status"] == 409);
}

TEST_CASE("live HTTP") {
  Demo demo;
  const auto s = demo.service();
  api::ApiServer server(s);
  const int port = server.bind("127.0.0.1", 0);
  REQUIRE(port > 0);
  std::thread t([&] { server.listen(); });

  httplib::Client cli("127.0.0.1", port);
  cli.set_connection_timeout(5);
  auto res = cli.Get("/api/overview?kind=Missing");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->get_header_value("Content-Type") == "application/json");
  CHECK(res->body == s.handle({"GET", "/api/overview", {{"kind", "Missing"}}, ""}).body);

  const std::string body = R"({"entity_ids":["n1","n7"],"min_error_intensity":0})";
  auto pv = cli.Post("/api/path-view", body, "application/json");
  REQUIRE(pv);
  CHECK(pv->body == s.handle({"POST", "/api/path-view", {}, body}).body);

  auto nf = cli.Get("/api/cases/CASE-Z/instance");
  REQUIRE(nf);
  CHECK(nf->status == 404);

  server.stop();
  t.join();
}
