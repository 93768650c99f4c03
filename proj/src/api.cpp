#include "pathaudit/api.hpp"

#include <algorithm>
#include <charconv>
#include <set>
#include <tuple>

#include <httplib.h>

#include "pathaudit/codec.hpp"
#include "pathaudit/error.hpp"
#include "pathaudit/projection.hpp"

using nlohmann::json;

namespace pathaudit::api {

namespace {

struct HttpError : std::runtime_error {
  HttpError(int s, const std::string& m) : std::runtime_error(m), status(s) {}
  int status;
};

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < path.size()) {
    if (path[i] == '/') {
      ++i;
      continue;
    }
    auto j = path.find('/', i);
    if (j == std::string::npos) j = path.size();
    out.push_back(path.substr(i, j - i));
    i = j;
  }
  return out;
}

std::optional<std::string> param(const Request& r, const std::string& key) {
  auto it = r.query.find(key);
  if (it == r.query.end() || it->second.empty()) return std::nullopt;
  return it->second;
}

std::size_t size_param(const Request& r, const std::string& key, std::size_t fallback, std::size_t max) {
  auto v = param(r, key);
  if (!v) return fallback;
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc() || p != v->data() + v->size()) throw PreconditionError(key + " must be a non-negative integer");
  if (out > max) throw PreconditionError(key + " must be at most " + std::to_string(max));
  return out;
}

std::optional<errors::ErrorKind> kind_param(const std::optional<std::string>& v) {
  if (!v) return std::nullopt;
  try {
    return errors::parse_error_kind(*v);
  } catch (const DataError&) {
    throw PreconditionError("unknown error kind: " + *v);
  }
}

json body_object(const Request& r) {
  json j = json::parse(r.body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw PreconditionError("request body must be a JSON object");
  return j;
}

void reject_unknown(const json& j, std::initializer_list<const char*> allowed) {
  for (const auto& [k, v] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; })) {
      throw PreconditionError("unknown field: " + k);
    }
  }
}

json error_body(Response& out, int status, const std::string& message) {
  out.status = status;
  return {{"schema_version", kSchemaVersion}, {"error", {{"status", status}, {"message", message}}}};
}

json kind_json(const std::optional<errors::ErrorKind>& k) { return k ? json(errors::to_string(*k)) : json(nullptr); }

constexpr std::array<errors::ErrorKind, 3> kKinds{errors::ErrorKind::Relation, errors::ErrorKind::Branch,
                                                  errors::ErrorKind::Missing};

}  // namespace

const std::vector<Route>& routes() {
  static const std::vector<Route> r{
      {"GET", "/api/overview", {"dataset-overview"}},
      {"GET", "/api/projection", {"projection"}},
      {"POST", "/api/path-view", {"path"}},
      {"GET", "/api/node/{id}/links", {"path"}},
      {"POST", "/api/errors/expand", {"error"}},
      {"GET", "/api/cases", {"detail", "dataset-overview"}},
      {"GET", "/api/cases/{id}/instance", {"instance"}},
  };
  return r;
}

ApiService::ApiService(store::RunSnapshot run, std::shared_ptr<services::Adjudicator> adjudicator, ApiOptions options)
    : run_(std::move(run)), adjudicator_(std::move(adjudicator)), options_(options) {
  if (!run_.dir.empty()) cache_ = std::make_unique<store::ExpansionCache>(run_.dir / store::files::kExpansions);
}

void ApiService::require_stage(store::Stage s) const {
  if (run_.manifest.status(s) != store::StageStatus::Done) {
    throw HttpError(409, "run " + run_.manifest.run_id + " has not completed stage " + std::string(store::to_string(s)));
  }
}

const kg::Entity& ApiService::entity(const std::string& id) const {
  require_stage(store::Stage::Ingest);
  auto idx = run_.graph->find(id);
  if (!idx) throw NotFoundError("unknown entity: " + id);
  return run_.graph->entity(*idx);
}

Response ApiService::handle(const Request& r) const {
  Response out;
  json body;
  try {
    const auto seg = split_path(r.path);
    auto method = [&](const char* m) {
      if (r.method != m) throw HttpError(405, "method not allowed: " + r.method + " " + r.path);
    };
    if (seg.size() < 2 || seg[0] != "api") throw NotFoundError("no such endpoint: " + r.path);
    if (seg.size() == 2 && seg[1] == "overview") {
      method("GET");
      body = overview(r);
    } else if (seg.size() == 2 && seg[1] == "projection") {
      method("GET");
      body = projection(r);
    } else if (seg.size() == 2 && seg[1] == "path-view") {
      method("POST");
      body = path_view(r);
    } else if (seg.size() == 4 && seg[1] == "node" && seg[3] == "links") {
      method("GET");
      body = node_links(seg[2]);
    } else if (seg.size() == 3 && seg[1] == "errors" && seg[2] == "expand") {
      method("POST");
      body = expand(r);
    } else if (seg.size() == 2 && seg[1] == "cases") {
      method("GET");
      body = cases(r);
    } else if (seg.size() == 4 && seg[1] == "cases" && seg[3] == "instance") {
      method("GET");
      body = instance(seg[2]);
    } else {
      throw NotFoundError("no such endpoint: " + r.path);
    }
    body["schema_version"] = kSchemaVersion;
  } catch (const HttpError& e) {
    body = error_body(out, e.status, e.what());
  } catch (const NotFoundError& e) {
    body = error_body(out, 404, e.what());
  } catch (const UnknownEntityError& e) {
    body = error_body(out, 404, e.what());
  } catch (const PreconditionError& e) {
    body = error_body(out, 400, e.what());
  } catch (const StateError& e) {
    body = error_body(out, 409, e.what());
  } catch (const std::exception& e) {
    body = error_body(out, 500, e.what());
  }
  out.body = canonical_dump(body);
  return out;
}

json ApiService::overview(const Request& r) const {
  require_stage(store::Stage::Detect);
  const auto kind = kind_param(param(r, "kind"));
  json skipped = json::array();
  for (const auto& s : run_.manifest.skipped_cases) skipped.push_back({{"id", s.id}, {"reason", s.reason}});
  json j = {{"run_id", run_.manifest.run_id}, {"kind", kind_json(kind)}, {"skipped_cases", skipped}};
  if (!kind) {
    j["summary"] = run_.summary;
    return j;
  }
  std::vector<grounding::Case> cs;
  std::vector<errors::CaseErrorReport> rs;
  for (std::size_t i = 0; i < run_.reports.size(); ++i) {
    if (run_.reports[i].count(*kind) == 0) continue;
    cs.push_back(run_.cases[i]);
    rs.push_back(run_.reports[i]);
  }
  j["summary"] = errors::aggregate_corpus(rs, cs);
  return j;
}

json ApiService::projection(const Request& r) const {
  require_stage(store::Stage::Detect);
  require_stage(store::Stage::Project);
  const auto kind = kind_param(param(r, "kind"));
  const std::size_t k = size_param(r, "k", options_.default_top_k, 100000);
  const std::size_t w = size_param(r, "width", options_.grid_width, 4096);
  const std::size_t h = size_param(r, "height", options_.grid_height, 4096);
  if (w == 0 || h == 0) throw PreconditionError("width and height must be positive");

  const auto& layout = run_.layout;
  std::map<kg::EntityId, std::size_t> intensity;
  for (const auto& [id, n] : run_.summary.intensity(kind)) {
    if (layout.coordinates.count(id)) intensity.emplace(id, n);
  }
  const auto grid = projection::heat_grid(layout, intensity, w, h, options_.bandwidth, kind);

  json ids = json::array(), xs = json::array(), ys = json::array();
  for (const auto& [id, p] : layout.coordinates) {
    ids.push_back(id);
    xs.push_back(p.x);
    ys.push_back(p.y);
  }
  json top = json::array();
  for (const auto& [id, n] : projection::top_k_nodes(intensity, k)) {
    top.push_back({{"entity", id}, {"name", run_.entity_name(id)}, {"count", n}});
  }
  return {{"kind", kind_json(kind)},
          {"k", k},
          {"layout", {{"ids", ids}, {"x", xs}, {"y", ys}, {"seed", layout.seed}, {"grid_fallback", layout.grid_fallback}}},
          {"grid", {{"width", grid.width}, {"height", grid.height}, {"bandwidth", grid.bandwidth}, {"values", grid.values}}},
          {"top_k", top}};
}

json ApiService::path_view(const Request& r) const {
  require_stage(store::Stage::Detect);
  const json b = body_object(r);
  reject_unknown(b, {"entity_ids", "min_error_intensity"});
  if (!b.contains("entity_ids") || !b["entity_ids"].is_array()) throw PreconditionError("entity_ids must be an array");
  std::size_t min_intensity = 0;
  if (b.contains("min_error_intensity")) {
    if (!b["min_error_intensity"].is_number_unsigned()) {
      throw PreconditionError("min_error_intensity must be a non-negative integer");
    }
    min_intensity = b["min_error_intensity"].get<std::size_t>();
  }
  std::set<std::string> requested;
  for (const auto& x : b["entity_ids"]) {
    if (!x.is_string()) throw PreconditionError("entity_ids must hold strings");
    requested.insert(x.get<std::string>());
  }

  const auto& s = run_.summary;
  json nodes = json::array();
  std::set<kg::NodeIndex> kept;
  for (const auto& id : requested) {
    const auto& e = entity(id);
    json per_kind = json::object();
    std::size_t total = 0;
    for (auto kind : kKinds) {
      auto it = s.per_entity_intensity.find({id, kind});
      const std::size_t n = it == s.per_entity_intensity.end() ? 0 : it->second;
      per_kind[std::string(errors::to_string(kind))] = n;
      total += n;
    }
    if (total < min_intensity) continue;
    errors::EntityRoles roles;
    if (auto it = s.per_entity_roles.find(id); it != s.per_entity_roles.end()) roles = it->second;
    json pos = nullptr;
    if (auto it = run_.layout.coordinates.find(id); it != run_.layout.coordinates.end()) {
      pos = {{"x", it->second.x}, {"y", it->second.y}};
    }
    nodes.push_back({{"id", id},
                     {"name", e.name},
                     {"kind", kg::to_string(e.kind)},
                     {"position", pos},
                     {"intensity", per_kind},
                     {"total_intensity", total},
                     {"roles",
                      {{"ref_path_occurrences", roles.ref_path_occurrences},
                       {"observed_error_occurrences", roles.observed_error_occurrences},
                       {"observed_nonerror_occurrences", roles.observed_nonerror_occurrences},
                       {"total_occurrences", roles.total_occurrences}}}});
    kept.insert(run_.graph->index_of(id));
  }
  json arcs = json::array();
  std::vector<std::tuple<std::string, std::string, std::string>> rows;
  for (auto u : kept) {
    for (auto v : run_.graph->successors(u)) {
      if (kept.count(v)) {
        rows.emplace_back(run_.graph->entity(u).id, run_.graph->entity(v).id, std::string(run_.graph->arc_relation(u, v)));
      }
    }
  }
  std::sort(rows.begin(), rows.end());
  for (const auto& [a, b2, rel] : rows) arcs.push_back({{"source", a}, {"target", b2}, {"relation", rel}});
  return {{"min_error_intensity", min_intensity}, {"nodes", nodes}, {"arcs", arcs}};
}

json ApiService::node_links(const std::string& id) const {
  require_stage(store::Stage::Detect);
  const auto& e = entity(id);
  struct Link {
    std::string relation;
    std::set<errors::ErrorKind> labels;
    std::set<std::string> cases;
  };
  // (side, source, target)
  std::map<std::tuple<std::string, std::string, std::string>, Link> links;
  std::set<std::string> missing_in;
  for (std::size_t i = 0; i < run_.cases.size(); ++i) {
    const auto& c = run_.cases[i];
    const auto& rep = run_.reports[i];
    for (const auto& p : c.reference_paths) {
      for (std::size_t k = 0; k + 1 < p.nodes.size(); ++k) {
        if (p.nodes[k] != id && p.nodes[k + 1] != id) continue;
        auto& l = links[{"reference", p.nodes[k], p.nodes[k + 1]}];
        if (l.relation.empty()) l.relation = p.relations[k];
        l.cases.insert(c.id);
      }
    }
    for (const auto& p : c.model_paths) {
      for (std::size_t k = 0; k + 1 < p.steps.size(); ++k) {
        const auto& a = p.steps[k].entity;
        const auto& b = p.steps[k + 1].entity;
        if (a != id && b != id) continue;
        auto& l = links[{"observed", a, b}];
        if (l.relation.empty()) l.relation = p.steps[k].relation_label;
        l.cases.insert(c.id);
        for (auto kind : {errors::ErrorKind::Relation, errors::ErrorKind::Branch}) {
          for (const auto& rec : rep.records(kind)) {
            if (rec.source && *rec.source == a && rec.target == b) l.labels.insert(kind);
          }
        }
      }
    }
    for (const auto& rec : rep.missing_errors) {
      if (rec.target == id) missing_in.insert(c.id);
    }
  }
  json incoming = json::array(), outgoing = json::array();
  for (const auto& [key, l] : links) {
    const auto& [side, src, dst] = key;
    json labels = json::array();
    for (auto k : l.labels) labels.push_back(errors::to_string(k));
    json row = {{"side", side}, {"source", src}, {"target", dst}, {"source_name", run_.entity_name(src)},
                {"target_name", run_.entity_name(dst)}, {"relation", l.relation}, {"labels", labels}, {"cases", l.cases}};
    if (src == id) outgoing.push_back(row);
    if (dst == id) incoming.push_back(row);
  }
  return {{"entity", {{"id", e.id}, {"name", e.name}, {"kind", kg::to_string(e.kind)}}},
          {"incoming", incoming},
          {"outgoing", outgoing},
          {"missing_in_cases", missing_in}};
}

json ApiService::expand(const Request& r) const {
  require_stage(store::Stage::Detect);
  const json b = body_object(r);
  reject_unknown(b, {"anchor", "kind", "mode"});
  for (const char* k : {"anchor", "kind", "mode"}) {
    if (!b.contains(k) || !b[k].is_string()) throw PreconditionError(std::string(k) + " must be a string");
  }
  const auto anchor = b["anchor"].get<std::string>();
  const auto kind = *kind_param(b["kind"].get<std::string>());
  errors::ExpansionMode mode;
  try {
    mode = errors::parse_expansion_mode(b["mode"].get<std::string>());
  } catch (const DataError& e) {
    throw PreconditionError(e.what());
  }
  entity(anchor);

  if (cache_) {
    if (auto hit = cache_->get(anchor, kind, mode)) return *hit;
  }
  const errors::CorpusView view{run_.cases, run_.reports};
  const auto x = errors::expand_pattern(anchor, kind, mode, view);
  json out = {{"expansion", x}, {"summary", nullptr}};
  if (!x.empty()) {
    errors::EntityTable table;
    for (const auto* set : {&x.error_targets, &x.reference_targets}) {
      for (const auto& id : *set) table.emplace(id, entity(id));
    }
    std::set<std::string> case_ids;
    for (const auto* sup : {&x.error_support, &x.reference_support}) {
      for (const auto& [pair, ids] : *sup) case_ids.insert(ids.begin(), ids.end());
    }
    std::vector<std::string> questions;
    for (const auto& cid : case_ids) {
      if (const auto* c = run_.find_case(cid)) questions.push_back(c->question);
    }
    std::lock_guard lock(summarize_mu_);
    out["summary"] = errors::summarize_pattern(x, *adjudicator_, table, questions);
  }
  if (cache_) cache_->put(anchor, kind, mode, out);
  return out;
}

json ApiService::cases(const Request& r) const {
  require_stage(store::Stage::Detect);
  store::CaseFilter f;
  if (auto e = param(r, "entity")) {
    entity(*e);
    f.entity = *e;
  }
  f.kind = kind_param(param(r, "kind"));
  f.text = param(r, "text");
  const auto sort = store::parse_case_sort(param(r, "sort").value_or("TotalErrorsDesc"));
  const std::size_t offset = size_param(r, "offset", 0, std::numeric_limits<std::size_t>::max());
  const std::size_t limit = size_param(r, "limit", 50, 1000);
  const auto page = store::query_cases(run_, f, sort, offset, limit);
  return {{"total", page.total},
          {"offset", offset},
          {"limit", limit},
          {"sort", store::to_string(sort)},
          {"entries", page.entries}};
}

json ApiService::instance(const std::string& id) const {
  require_stage(store::Stage::Detect);
  return {{"instance", store::get_instance(run_, id)}};
}

// ---------------------------------------------------------------------------

ApiServer::ApiServer(const ApiService& service) : service_(service), server_(std::make_unique<httplib::Server>()) {
  auto dispatch = [this](const char* method) {
    return [this, method](const httplib::Request& req, httplib::Response& res) {
      Request r{method, req.path, {}, req.body};
      for (const auto& [k, v] : req.params) r.query.emplace(k, v);
      const auto out = service_.handle(r);
      res.status = out.status;
      res.set_content(out.body, "application/json");
    };
  };
  server_->Get(R"(/api/.*)", dispatch("GET"));
  server_->Post(R"(/api/.*)", dispatch("POST"));
}

ApiServer::~ApiServer() { stop(); }

int ApiServer::bind(const std::string& host, int port) {
  int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw StateError("cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void ApiServer::listen() { server_->listen_after_bind(); }

void ApiServer::stop() {
  if (server_) server_->stop();
}

}  // namespace pathaudit::api
