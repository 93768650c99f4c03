#include "pathaudit/services.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "pathaudit/digest.hpp"
#include "pathaudit/error.hpp"
#include "pathaudit/fsutil.hpp"
#include "pathaudit/text.hpp"

namespace pathaudit::services {

using nlohmann::json;

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw PreconditionError("cosine: dimension mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) throw PreconditionError("cosine: zero-norm vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

std::vector<Vector> embed_batch(EmbeddingProvider& provider, std::span<const std::string> texts) {
  if (texts.empty()) throw PreconditionError("embed_batch: empty input");
  auto out = provider.embed(texts);
  if (out.size() != texts.size()) {
    throw ProtocolError("embedder returned " + std::to_string(out.size()) + " vectors for " +
                            std::to_string(texts.size()) + " texts",
                        {});
  }
  for (const auto& v : out) {
    if (v.size() != provider.dimension()) {
      throw ProtocolError("embedder returned dimension " + std::to_string(v.size()) + ", expected " +
                              std::to_string(provider.dimension()),
                          {});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// HashEmbedder

namespace {

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double unit_interval(std::uint64_t& state) {
  return (static_cast<double>(splitmix64(state) >> 11) + 0.5) * 0x1.0p-53;
}

void normalize(Vector& v) {
  double n = 0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (double& x : v) x /= n;
}

std::string embed_key(const std::string& text) {
  std::string out;
  bool space = false;
  for (char c : ascii_lower(trim(text))) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = true;
      continue;
    }
    if (space && !out.empty()) out.push_back(' ');
    space = false;
    out.push_back(c);
  }
  return out;
}

}  // namespace

HashEmbedder::HashEmbedder(std::size_t dimension, std::string salt)
    : dimension_(dimension), salt_(std::move(salt)) {
  if (dimension_ < 2) throw PreconditionError("HashEmbedder: dimension must be >= 2");
}

void HashEmbedder::pin_similarity(const std::string& text, const std::string& anchor, double similarity) {
  if (!(similarity > -1.0 && similarity < 1.0)) {
    throw PreconditionError("pin_similarity: similarity must lie in (-1, 1)");
  }
  const auto key = embed_key(text);
  const auto anchor_key = embed_key(anchor);
  if (key == anchor_key) throw PreconditionError("pin_similarity: text and anchor coincide");
  if (pins_.count(anchor_key)) throw PreconditionError("pin_similarity: anchor is itself pinned");
  for (const auto& [k, pin] : pins_) {
    if (pin.first == key) throw PreconditionError("pin_similarity: text is already used as an anchor");
  }
  pins_[key] = {anchor_key, similarity};
}

std::string HashEmbedder::identity() const {
  std::string pins;
  for (const auto& [k, p] : pins_) {
    std::ostringstream os;
    os.precision(17);
    os << k << '\t' << p.first << '\t' << p.second << '\n';
    pins += os.str();
  }
  std::string id = "hash-embedder/v1/d" + std::to_string(dimension_);
  if (!salt_.empty()) id += "/" + salt_;
  if (!pins.empty()) id += "/pins-" + sha256_hex(pins).substr(0, 12);
  return id;
}

Vector HashEmbedder::base_vector(const std::string& key) const {
  std::uint64_t state = fnv1a64(salt_ + '\x1f' + key);
  Vector v(dimension_);
  // Box-Muller for an isotropic direction.
  for (std::size_t i = 0; i < dimension_; i += 2) {
    const double u1 = unit_interval(state);
    const double u2 = unit_interval(state);
    const double r = std::sqrt(-2.0 * std::log(u1));
    v[i] = r * std::cos(2 * std::numbers::pi * u2);
    if (i + 1 < dimension_) v[i + 1] = r * std::sin(2 * std::numbers::pi * u2);
  }
  normalize(v);
  return v;
}

Vector HashEmbedder::vector_for(const std::string& text) const {
  const auto key = embed_key(text);
  auto pin = pins_.find(key);
  if (pin == pins_.end()) return base_vector(key);
  const Vector anchor = base_vector(pin->second.first);
  Vector w = base_vector(key);
  double proj = 0;
  for (std::size_t i = 0; i < dimension_; ++i) proj += w[i] * anchor[i];
  for (std::size_t i = 0; i < dimension_; ++i) w[i] -= proj * anchor[i];
  normalize(w);
  const double c = pin->second.second;
  const double s = std::sqrt(1.0 - c * c);
  Vector v(dimension_);
  for (std::size_t i = 0; i < dimension_; ++i) v[i] = c * anchor[i] + s * w[i];
  return v;
}

std::vector<Vector> HashEmbedder::embed(std::span<const std::string> texts) {
  std::vector<Vector> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(vector_for(t));
  return out;
}

// ---------------------------------------------------------------------------
// Capability helpers

std::string_view to_string(Capability c) {
  switch (c) {
    case Capability::AlignChoice: return "align_choice";
    case Capability::PrunePaths: return "prune_paths";
    case Capability::Extract: return "extract";
    case Capability::Categorize: return "categorize";
  }
  return "";
}

Capability parse_capability(std::string_view s) {
  for (auto c : {Capability::AlignChoice, Capability::PrunePaths, Capability::Extract, Capability::Categorize}) {
    if (to_string(c) == s) return c;
  }
  throw PreconditionError("unknown capability: " + std::string(s));
}

namespace {

void require_capability(const Adjudicator& adj, Capability c) {
  if (!adj.capabilities().count(c)) {
    throw PreconditionError(adj.identity() + " does not support " + std::string(to_string(c)));
  }
}

[[noreturn]] void schema_violation(Capability c, const std::string& what, const json& raw) {
  throw ProtocolError(std::string(to_string(c)) + " reply: " + what, raw.dump());
}

json entities_json(const std::vector<CategorizeEntity>& es) {
  json arr = json::array();
  for (const auto& e : es) arr.push_back({{"id", e.id}, {"name", e.name}, {"kind", e.kind}});
  return arr;
}

std::map<std::string, std::string> read_labels(Capability c, const json& reply, const char* field,
                                               const std::vector<CategorizeEntity>& expected) {
  if (!reply.contains(field) || !reply[field].is_object()) {
    schema_violation(c, std::string("missing object '") + field + "'", reply);
  }
  std::map<std::string, std::string> labels;
  for (const auto& [id, label] : reply[field].items()) {
    if (!label.is_string() || label.get<std::string>().empty()) {
      schema_violation(c, "label for " + id + " is not a non-empty string", reply);
    }
    labels[id] = label.get<std::string>();
  }
  std::set<std::string> want;
  for (const auto& e : expected) want.insert(e.id);
  for (const auto& id : want) {
    if (!labels.count(id)) schema_violation(c, std::string(field) + " has no label for " + id, reply);
  }
  for (const auto& [id, _] : labels) {
    if (!want.count(id)) schema_violation(c, std::string(field) + " labels unknown entity " + id, reply);
  }
  return labels;
}

}  // namespace

std::optional<std::size_t> choose_candidate(Adjudicator& adj, const AlignChoiceRequest& request) {
  constexpr auto c = Capability::AlignChoice;
  require_capability(adj, c);
  json cands = json::array();
  for (const auto& cand : request.candidates) {
    cands.push_back({{"id", cand.entity_id}, {"name", cand.name}, {"similarity", cand.similarity}});
  }
  const json reply = adj.adjudicate(c, {{"mention", request.mention},
                                        {"candidates", cands},
                                        {"question", request.question},
                                        {"options", request.options}});
  if (!reply.is_object()) schema_violation(c, "not an object", reply);
  if (reply.value("abstain", false) == true) return std::nullopt;
  if (!reply.contains("choice") || !reply["choice"].is_number_integer()) {
    schema_violation(c, "expected integer 'choice' or 'abstain': true", reply);
  }
  const auto idx = reply["choice"].get<long long>();
  if (idx < 0 || static_cast<std::size_t>(idx) >= request.candidates.size()) {
    schema_violation(c, "choice out of range", reply);
  }
  return static_cast<std::size_t>(idx);
}

std::vector<std::size_t> prune_paths(Adjudicator& adj, const PruneRequest& request) {
  constexpr auto c = Capability::PrunePaths;
  require_capability(adj, c);
  json paths = json::array();
  for (const auto& p : request.paths) paths.push_back({{"entities", p.entity_names}, {"relations", p.relations}});
  const json reply =
      adj.adjudicate(c, {{"paths", paths}, {"question", request.question}, {"options", request.options}});
  if (!reply.is_object() || !reply.contains("keep") || !reply["keep"].is_array()) {
    schema_violation(c, "expected array 'keep'", reply);
  }
  std::set<std::size_t> keep;
  for (const auto& k : reply["keep"]) {
    if (!k.is_number_integer()) schema_violation(c, "non-integer index", reply);
    const auto idx = k.get<long long>();
    if (idx >= 0 && static_cast<std::size_t>(idx) < request.paths.size()) keep.insert(static_cast<std::size_t>(idx));
  }
  return {keep.begin(), keep.end()};
}

std::vector<ExtractedMention> extract_entities(Adjudicator& adj, const ExtractRequest& request) {
  constexpr auto c = Capability::Extract;
  require_capability(adj, c);
  const json reply = adj.adjudicate(c, {{"question", request.question}, {"options", request.options}});
  if (!reply.is_object() || !reply.contains("entities") || !reply["entities"].is_array()) {
    schema_violation(c, "expected array 'entities'", reply);
  }
  std::vector<ExtractedMention> out;
  for (const auto& e : reply["entities"]) {
    if (!e.is_object() || !e.contains("text") || !e["text"].is_string()) {
      schema_violation(c, "entity without string 'text'", reply);
    }
    out.push_back({e["text"].get<std::string>(), e.value("kind", std::string())});
  }
  return out;
}

CategorizeResponse categorize(Adjudicator& adj, const CategorizeRequest& request) {
  constexpr auto c = Capability::Categorize;
  require_capability(adj, c);
  const json reply = adj.adjudicate(c, {{"error_entities", entities_json(request.error_entities)},
                                        {"reference_entities", entities_json(request.reference_entities)},
                                        {"questions", request.questions}});
  if (!reply.is_object()) schema_violation(c, "not an object", reply);
  CategorizeResponse out;
  out.categories_err = read_labels(c, reply, "categories_err", request.error_entities);
  out.categories_ref = read_labels(c, reply, "categories_ref", request.reference_entities);
  if (!reply.contains("summary") || !reply["summary"].is_string()) {
    schema_violation(c, "missing string 'summary'", reply);
  }
  out.summary = reply["summary"].get<std::string>();
  return out;
}

// ---------------------------------------------------------------------------
// StubAdjudicator

std::set<Capability> StubAdjudicator::capabilities() const {
  return {Capability::AlignChoice, Capability::PrunePaths, Capability::Extract, Capability::Categorize};
}

json StubAdjudicator::adjudicate(Capability capability, const json& request) {
  switch (capability) {
    case Capability::AlignChoice: {
      if (options_.abstain_align || request.at("candidates").empty()) return {{"abstain", true}};
      return {{"choice", 0}};
    }
    case Capability::PrunePaths: {
      json keep = json::array();
      for (std::size_t i = 0; i < request.at("paths").size(); ++i) keep.push_back(i);
      return {{"keep", keep}};
    }
    case Capability::Extract: {
      std::string text = request.at("question").get<std::string>();
      for (const auto& o : request.at("options")) text += "\n" + o.get<std::string>();
      const std::string lower = ascii_lower(text);
      json ents = json::array();
      std::set<std::string> seen;
      for (const auto& name : options_.vocabulary) {
        const auto key = ascii_lower(name);
        if (!key.empty() && lower.find(key) != std::string::npos && seen.insert(key).second) {
          ents.push_back({{"text", name}, {"kind", ""}});
        }
      }
      return {{"entities", ents}};
    }
    case Capability::Categorize: {
      json err = json::object(), ref = json::object();
      for (const auto& e : request.at("error_entities")) err[e.at("id").get<std::string>()] = e.at("kind");
      for (const auto& e : request.at("reference_entities")) ref[e.at("id").get<std::string>()] = e.at("kind");
      return {{"categories_err", err}, {"categories_ref", ref}, {"summary", kSummary}};
    }
  }
  throw PreconditionError("stub: unsupported capability");
}

// ---------------------------------------------------------------------------
// Caching

std::string request_digest(std::string_view identity, std::string_view capability, const json& request) {
  return Sha256()
      .update(identity)
      .update("\n")
      .update(capability)
      .update("\n")
      .update(request.dump())
      .hex_digest();
}

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::optional<json> ResponseCache::get(const std::string& digest) const {
  const auto path = dir_ / (digest + ".json");
  std::lock_guard lock(mu_);
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::string header;
  std::getline(in, header);
  if (header != kHeader) return std::nullopt;
  try {
    json record;
    in >> record;
    return record.at("response");
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

void ResponseCache::put(const std::string& digest, const json& request, const json& response) {
  json record{{"request", request}, {"response", response}};
  std::lock_guard lock(mu_);
  write_file_atomic(dir_ / (digest + ".json"), std::string(kHeader) + "\n" + record.dump() + "\n");
}

CachingAdjudicator::CachingAdjudicator(std::shared_ptr<Adjudicator> inner, std::filesystem::path dir)
    : inner_(std::move(inner)), cache_(std::move(dir)) {}

json CachingAdjudicator::adjudicate(Capability capability, const json& request) {
  const auto digest = request_digest(inner_->identity(), to_string(capability), request);
  if (auto hit = cache_.get(digest)) {
    ++hits_;
    return *hit;
  }
  ++misses_;
  json response = inner_->adjudicate(capability, request);
  cache_.put(digest, {{"capability", to_string(capability)}, {"payload", request}}, response);
  return response;
}

CachingEmbedder::CachingEmbedder(std::shared_ptr<EmbeddingProvider> inner, std::filesystem::path dir)
    : inner_(std::move(inner)), cache_(std::move(dir)) {}

std::vector<Vector> CachingEmbedder::embed(std::span<const std::string> texts) {
  std::vector<Vector> out(texts.size());
  std::vector<std::string> missing;
  std::vector<std::size_t> missing_at;
  std::vector<std::string> digests(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    digests[i] = request_digest(inner_->identity(), "embed", json(texts[i]));
    if (auto hit = cache_.get(digests[i])) {
      out[i] = hit->get<Vector>();
    } else {
      missing.push_back(texts[i]);
      missing_at.push_back(i);
    }
  }
  if (!missing.empty()) {
    auto fresh = embed_batch(*inner_, missing);
    for (std::size_t j = 0; j < missing.size(); ++j) {
      cache_.put(digests[missing_at[j]], json(missing[j]), json(fresh[j]));
      out[missing_at[j]] = std::move(fresh[j]);
    }
  }
  return out;
}

}  // namespace pathaudit::services
