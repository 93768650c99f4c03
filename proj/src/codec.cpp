#include "pathaudit/codec.hpp"

#include <charconv>
#include <cstdio>
#include <set>
#include <sstream>

#include "pathaudit/error.hpp"
#include "pathaudit/fsutil.hpp"

using nlohmann::json;

namespace pathaudit {

std::string canonical_dump(const json& j) { return j.dump(-1, ' ', false, json::error_handler_t::replace); }

namespace {

void reject_unknown(const json& j, std::initializer_list<std::string_view> known, std::string_view what) {
  if (!j.is_object()) throw DataError(std::string(what) + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (auto k : known) ok = ok || k == key;
    if (!ok) throw DataError(std::string(what) + ": unknown field '" + key + "'");
  }
}

template <typename T>
json opt(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

}  // namespace

namespace kg {

void to_json(json& j, const Entity& e) { j = {{"id", e.id}, {"name", e.name}, {"kind", to_string(e.kind)}}; }

void from_json(const json& j, Entity& e) {
  e.id = j.at("id").get<std::string>();
  e.name = j.at("name").get<std::string>();
  e.kind = parse_entity_kind(j.at("kind").get<std::string>());
}

void to_json(json& j, const Path& p) { j = {{"nodes", p.nodes}, {"relations", p.relations}}; }

void from_json(const json& j, Path& p) {
  j.at("nodes").get_to(p.nodes);
  j.at("relations").get_to(p.relations);
  if (p.nodes.empty() || p.relations.size() + 1 != p.nodes.size()) throw DataError("path: relations must number nodes - 1");
}

}  // namespace kg

namespace grounding {

void to_json(json& j, const AlignmentResult& a) {
  j = {{"mention", {{"text", a.mention.text}, {"origin", to_string(a.mention.origin)}}},
       {"entity", opt(a.entity)},
       {"method", to_string(a.method)},
       {"similarity", opt(a.similarity)}};
}

void from_json(const json& j, AlignmentResult& a) {
  const auto& m = j.at("mention");
  a.mention.text = m.at("text").get<std::string>();
  a.mention.origin = parse_mention_origin(m.at("origin").get<std::string>());
  a.entity = j.at("entity").is_null() ? std::nullopt : std::optional(j.at("entity").get<std::string>());
  a.method = parse_align_method(j.at("method").get<std::string>());
  a.similarity = j.at("similarity").is_null() ? std::nullopt : std::optional(j.at("similarity").get<double>());
}

void to_json(json& j, const GroundedPath& p) {
  json steps = json::array();
  for (const auto& s : p.steps) {
    steps.push_back({{"entity", s.entity}, {"relation", s.relation_label}, {"alignment", s.alignment}});
  }
  j = {{"steps", steps}, {"dropped_steps", p.dropped_steps}};
}

void from_json(const json& j, GroundedPath& p) {
  p.steps.clear();
  for (const auto& s : j.at("steps")) {
    p.steps.push_back({s.at("entity").get<std::string>(), s.at("relation").get<std::string>(),
                       s.at("alignment").get<AlignmentResult>()});
  }
  p.dropped_steps = j.at("dropped_steps").get<std::size_t>();
}

void to_json(json& j, const Case& c) {
  j = {{"id", c.id},
       {"question", c.question},
       {"options", c.options},
       {"correct_answer", c.correct_answer},
       {"predicted_answer", c.predicted_answer},
       {"question_entities", c.question_entities},
       {"correct_entity", c.correct_entity},
       {"predicted_entity", c.predicted_entity},
       {"model_paths", c.model_paths},
       {"reference_paths", c.reference_paths}};
}

void from_json(const json& j, Case& c) {
  c.id = j.at("id").get<std::string>();
  c.question = j.at("question").get<std::string>();
  j.at("options").get_to(c.options);
  c.correct_answer = j.at("correct_answer").get<std::string>();
  c.predicted_answer = j.at("predicted_answer").get<std::string>();
  j.at("question_entities").get_to(c.question_entities);
  c.correct_entity = j.at("correct_entity").get<std::string>();
  c.predicted_entity = j.at("predicted_entity").get<std::string>();
  j.at("model_paths").get_to(c.model_paths);
  j.at("reference_paths").get_to(c.reference_paths);
}

void from_json(const json& j, RawCase& c) {
  reject_unknown(j, {"id", "question", "options", "correct_answer", "predicted_answer", "question_entities", "model_paths"},
                 "case");
  c.id = j.at("id").get<std::string>();
  c.question = j.at("question").get<std::string>();
  j.at("options").get_to(c.options);
  c.correct_answer = j.at("correct_answer").get<std::string>();
  c.predicted_answer = j.at("predicted_answer").get<std::string>();
  c.question_entities.reset();
  if (j.contains("question_entities") && !j.at("question_entities").is_null()) {
    std::vector<PreExtractedEntity> ents;
    for (const auto& e : j.at("question_entities")) {
      if (e.is_string()) {
        ents.push_back({e.get<std::string>(), ""});
        continue;
      }
      reject_unknown(e, {"text", "kind"}, "question entity");
      ents.push_back({e.at("text").get<std::string>(), e.value("kind", std::string())});
    }
    c.question_entities = std::move(ents);
  }
  c.model_paths.clear();
  if (j.contains("model_paths")) {
    for (const auto& p : j.at("model_paths")) {
      RawPath path;
      for (const auto& s : p) {
        reject_unknown(s, {"entity_text", "relation_text"}, "path step");
        path.steps.push_back({s.at("entity_text").get<std::string>(), s.value("relation_text", std::string())});
      }
      c.model_paths.push_back(std::move(path));
    }
  }
}

void to_json(json& j, const RawCase& c) {
  j = {{"id", c.id},
       {"question", c.question},
       {"options", c.options},
       {"correct_answer", c.correct_answer},
       {"predicted_answer", c.predicted_answer}};
  if (c.question_entities) {
    json ents = json::array();
    for (const auto& e : *c.question_entities) {
      json x = {{"text", e.text}};
      if (!e.kind.empty()) x["kind"] = e.kind;
      ents.push_back(x);
    }
    j["question_entities"] = ents;
  }
  json paths = json::array();
  for (const auto& p : c.model_paths) {
    json steps = json::array();
    for (const auto& s : p.steps) steps.push_back({{"entity_text", s.entity_text}, {"relation_text", s.relation_text}});
    paths.push_back(steps);
  }
  j["model_paths"] = paths;
}

}  // namespace grounding

namespace errors {

void to_json(json& j, const ErrorRecord& r) {
  j = {{"kind", to_string(r.kind)}, {"target", r.target}};
  if (r.source) j["source"] = *r.source;
  if (r.kind == ErrorKind::Branch) j["also_relation_error"] = r.also_relation_error;
}

namespace {

std::vector<ErrorRecord> records_from(const json& arr, const std::string& case_id, ErrorKind kind) {
  std::vector<ErrorRecord> out;
  for (const auto& x : arr) {
    ErrorRecord r;
    r.case_id = case_id;
    r.kind = parse_error_kind(x.at("kind").get<std::string>());
    if (r.kind != kind) throw DataError("case " + case_id + ": record of kind " + std::string(to_string(r.kind)) + " in the wrong list");
    if (x.contains("source")) r.source = x.at("source").get<std::string>();
    r.target = x.at("target").get<std::string>();
    r.also_relation_error = x.value("also_relation_error", false);
    if ((kind == ErrorKind::Missing) == r.source.has_value()) throw DataError("case " + case_id + ": bad error record source");
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

void to_json(json& j, const CaseErrorReport& r) {
  j = {{"case_id", r.case_id},
       {"correct", r.correct},
       {"n_rel", r.n_rel},
       {"n_br", r.n_br},
       {"n_miss", r.n_miss},
       {"relation_errors", r.relation_errors},
       {"branch_errors", r.branch_errors},
       {"missing_errors", r.missing_errors}};
}

void from_json(const json& j, CaseErrorReport& r) {
  r.case_id = j.at("case_id").get<std::string>();
  r.correct = j.at("correct").get<bool>();
  r.n_rel = j.at("n_rel").get<std::size_t>();
  r.n_br = j.at("n_br").get<std::size_t>();
  r.n_miss = j.at("n_miss").get<std::size_t>();
  r.relation_errors = records_from(j.at("relation_errors"), r.case_id, ErrorKind::Relation);
  r.branch_errors = records_from(j.at("branch_errors"), r.case_id, ErrorKind::Branch);
  r.missing_errors = records_from(j.at("missing_errors"), r.case_id, ErrorKind::Missing);
  if (r.n_rel != r.relation_errors.size() || r.n_br != r.branch_errors.size() || r.n_miss != r.missing_errors.size()) {
    throw DataError("case " + r.case_id + ": counts disagree with records");
  }
}

void to_json(json& j, const CorpusSummary& s) {
  json totals = json::object();
  for (auto k : kAllKinds) totals[std::string(to_string(k))] = s.total(k);
  json intensity = json::array();
  for (const auto& [key, n] : s.per_entity_intensity) {
    intensity.push_back({{"entity", key.first}, {"kind", to_string(key.second)}, {"count", n}});
  }
  json roles = json::object();
  for (const auto& [id, r] : s.per_entity_roles) {
    roles[id] = {{"ref_path_occurrences", r.ref_path_occurrences},
                 {"observed_error_occurrences", r.observed_error_occurrences},
                 {"observed_nonerror_occurrences", r.observed_nonerror_occurrences},
                 {"total_occurrences", r.total_occurrences}};
  }
  j = {{"total_cases", s.total_cases},
       {"correct_cases", s.correct_cases},
       {"incorrect_cases", s.incorrect_cases},
       {"accuracy", opt(s.accuracy())},
       {"totals", totals},
       {"intensity", intensity},
       {"roles", roles}};
}

void from_json(const json& j, CorpusSummary& s) {
  s = {};
  s.total_cases = j.at("total_cases").get<std::size_t>();
  s.correct_cases = j.at("correct_cases").get<std::size_t>();
  s.incorrect_cases = j.at("incorrect_cases").get<std::size_t>();
  for (auto k : kAllKinds) s.totals[static_cast<std::size_t>(k)] = j.at("totals").at(std::string(to_string(k))).get<std::size_t>();
  for (const auto& x : j.at("intensity")) {
    s.per_entity_intensity[{x.at("entity").get<std::string>(), parse_error_kind(x.at("kind").get<std::string>())}] =
        x.at("count").get<std::size_t>();
  }
  for (const auto& [id, r] : j.at("roles").items()) {
    s.per_entity_roles[id] = {r.at("ref_path_occurrences").get<std::size_t>(),
                              r.at("observed_error_occurrences").get<std::size_t>(),
                              r.at("observed_nonerror_occurrences").get<std::size_t>(),
                              r.at("total_occurrences").get<std::size_t>()};
  }
}

namespace {

json pairs_json(const std::set<EntityPair>& pairs, const std::map<EntityPair, std::set<std::string>>& support) {
  json out = json::array();
  for (const auto& p : pairs) {
    auto it = support.find(p);
    out.push_back({{"source", p.first},
                   {"target", p.second},
                   {"cases", it == support.end() ? json::array() : json(it->second)}});
  }
  return out;
}

void pairs_from(const json& arr, std::set<EntityPair>& pairs, std::map<EntityPair, std::set<std::string>>& support) {
  for (const auto& x : arr) {
    EntityPair p{x.at("source").get<std::string>(), x.at("target").get<std::string>()};
    pairs.insert(p);
    support[p] = x.at("cases").get<std::set<std::string>>();
  }
}

}  // namespace

void to_json(json& j, const PatternExpansion& x) {
  j = {{"anchor", x.anchor},
       {"kind", to_string(x.kind)},
       {"mode", to_string(x.mode)},
       {"error_targets", x.error_targets},
       {"reference_targets", x.reference_targets},
       {"related_error_pairs", pairs_json(x.related_error_pairs, x.error_support)},
       {"related_reference_pairs", pairs_json(x.related_reference_pairs, x.reference_support)}};
}

void from_json(const json& j, PatternExpansion& x) {
  x = {};
  x.anchor = j.at("anchor").get<std::string>();
  x.kind = parse_error_kind(j.at("kind").get<std::string>());
  x.mode = parse_expansion_mode(j.at("mode").get<std::string>());
  x.error_targets = j.at("error_targets").get<std::set<EntityId>>();
  x.reference_targets = j.at("reference_targets").get<std::set<EntityId>>();
  pairs_from(j.at("related_error_pairs"), x.related_error_pairs, x.error_support);
  pairs_from(j.at("related_reference_pairs"), x.related_reference_pairs, x.reference_support);
}

void to_json(json& j, const PatternSummary& s) {
  j = {{"categories_err", s.categories_err}, {"categories_ref", s.categories_ref}, {"summary", s.summary_text}};
}

void from_json(const json& j, PatternSummary& s) {
  s.categories_err = j.at("categories_err").get<std::map<EntityId, std::string>>();
  s.categories_ref = j.at("categories_ref").get<std::map<EntityId, std::string>>();
  s.summary_text = j.at("summary").get<std::string>();
}

}  // namespace errors

namespace codec {

std::string encode_records(std::string_view kind, std::span<const json> records) {
  std::string out = canonical_dump({{"kind", kind}, {"schema_version", kSchemaVersion}});
  out += '\n';
  for (const auto& r : records) {
    out += canonical_dump(r);
    out += '\n';
  }
  return out;
}

namespace {

void check_header(const json& h, std::string_view kind, const std::string& where) {
  if (!h.is_object() || !h.contains("schema_version") || !h.at("schema_version").is_number_integer()) {
    throw DataError(where + ": missing version header");
  }
  const int version = h.at("schema_version").get<int>();
  if (version > kSchemaVersion) {
    throw DataError(where + ": schema_version " + std::to_string(version) + " is newer than supported " +
                    std::to_string(kSchemaVersion));
  }
  if (!kind.empty() && h.value("kind", std::string()) != kind) {
    throw DataError(where + ": expected record kind '" + std::string(kind) + "'");
  }
}

}  // namespace

std::vector<json> decode_records(std::string_view text, std::string_view kind, const std::string& source) {
  std::vector<json> out;
  std::size_t line_no = 0;
  bool header = false;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw DataError(where + ": malformed record");
    if (!header) {
      check_header(j, kind, where);
      header = true;
      continue;
    }
    out.push_back(std::move(j));
  }
  if (!header) throw DataError(source + ": missing version header");
  return out;
}

std::vector<grounding::RawCase> read_corpus(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::vector<grounding::RawCase> out;
  std::set<std::string> ids;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  if (text.size() >= 3 && text.compare(0, 3, "\xEF\xBB\xBF") == 0) pos = 3;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    std::string_view line(text.data() + pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw DataError(where + ": malformed JSON");
    if (out.empty() && j.is_object() && j.contains("schema_version") && !j.contains("id")) {
      check_header(j, "", where);
      continue;
    }
    grounding::RawCase c;
    try {
      c = j.get<grounding::RawCase>();
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    } catch (const json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
    if (!ids.insert(c.id).second) throw DataError(where + ": duplicate case id " + c.id);
    out.push_back(std::move(c));
  }
  return out;
}

std::string encode_layout(const projection::ProjectionLayout& layout) {
  std::string out = "# pathaudit-layout v1 seed=" + std::to_string(layout.seed) +
                    (layout.grid_fallback ? " grid_fallback=1" : "") + "\nid\tx\ty\n";
  char buf[64];
  for (const auto& [id, p] : layout.coordinates) {
    std::snprintf(buf, sizeof buf, "\t%.17g\t%.17g\n", p.x, p.y);
    out += id;
    out += buf;
  }
  return out;
}

projection::ProjectionLayout decode_layout(std::string_view text, const std::string& source) {
  projection::ProjectionLayout layout;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) { throw DataError(source + ":" + std::to_string(line_no) + ": " + what); };
  ++line_no;
  if (!std::getline(in, line) || line.rfind("# pathaudit-layout v", 0) != 0) fail("missing layout header");
  {
    std::istringstream h(line.substr(20));
    int version = 0;
    h >> version;
    if (version < 1 || version > 1) fail("unsupported layout version");
    std::string tok;
    while (h >> tok) {
      if (tok.rfind("seed=", 0) == 0) layout.seed = std::stoull(tok.substr(5));
      if (tok == "grid_fallback=1") layout.grid_fallback = true;
    }
  }
  ++line_no;
  if (!std::getline(in, line) || line != "id\tx\ty") fail("missing column header");
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) fail("malformed row");
    projection::Point p;
    try {
      p.x = std::stod(line.substr(t1 + 1, t2 - t1 - 1));
      p.y = std::stod(line.substr(t2 + 1));
    } catch (const std::exception&) {
      fail("malformed coordinate");
    }
    layout.coordinates[line.substr(0, t1)] = p;
  }
  return layout;
}

}  // namespace codec
}  // namespace pathaudit
