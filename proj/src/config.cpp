#include <fstream>

#include "pathaudit/app.hpp"
#include "pathaudit/error.hpp"
#include "pathaudit/fsutil.hpp"

using nlohmann::json;

namespace pathaudit::app {

namespace {

json provider_json(const services::ProviderConfig& p) {
  return {{"endpoint", p.endpoint},
          {"credential_env", p.credential_env},
          {"model", p.model},
          {"timeout_ms", p.timeout_ms},
          {"retries", p.retries},
          {"backoff_ms", p.backoff_ms},
          {"max_in_flight", p.max_in_flight},
          {"min_interval_ms", p.min_interval_ms},
          {"dimension", p.dimension},
          {"template_dir", p.template_dir.string()}};
}

services::ProviderConfig provider_from(const json& j) {
  services::ProviderConfig p;
  p.endpoint = j.at("endpoint").get<std::string>();
  p.credential_env = j.at("credential_env").get<std::string>();
  p.model = j.at("model").get<std::string>();
  p.timeout_ms = j.at("timeout_ms").get<int>();
  p.retries = j.at("retries").get<int>();
  p.backoff_ms = j.at("backoff_ms").get<int>();
  p.max_in_flight = j.at("max_in_flight").get<int>();
  p.min_interval_ms = j.at("min_interval_ms").get<int>();
  p.dimension = j.at("dimension").get<std::size_t>();
  p.template_dir = j.at("template_dir").get<std::string>();
  return p;
}

// Unknown keys and type mismatches against the default tree.
void check_shape(const json& user, const json& reference, const std::string& prefix) {
  for (const auto& [key, value] : user.items()) {
    const std::string name = prefix.empty() ? key : prefix + "." + key;
    if (!reference.contains(key)) throw ConfigError("unknown config key: " + name);
    const auto& ref = reference.at(key);
    if (ref.is_object()) {
      if (!value.is_object()) throw ConfigError("config key " + name + " must be an object");
      check_shape(value, ref, name);
      continue;
    }
    const bool ok = (ref.is_string() && value.is_string()) || (ref.is_boolean() && value.is_boolean()) ||
                    (ref.is_array() && value.is_array()) ||
                    (ref.is_number_float() && value.is_number()) ||
                    (ref.is_number_unsigned() && value.is_number_unsigned()) ||
                    (ref.is_number_integer() && !ref.is_number_unsigned() && value.is_number_integer());
    if (!ok) throw ConfigError("config key " + name + " has the wrong type (expected " + std::string(ref.type_name()) + ")");
  }
}

void overlay(json& base, const json& user) {
  for (const auto& [key, value] : user.items()) {
    if (value.is_object() && base[key].is_object()) {
      overlay(base[key], value);
    } else {
      base[key] = value;
    }
  }
}

}  // namespace

json to_json(const Config& c) {
  const auto& n = c.projection.node2vec;
  const auto& t = c.projection.tsne;
  json pins = json::array();
  for (const auto& p : c.providers.doubles.pins) pins.push_back({{"text", p.text}, {"anchor", p.anchor}, {"similarity", p.similarity}});
  return {
      {"kg",
       {{"nodes", c.kg.nodes.string()},
        {"edges", c.kg.edges.string()},
        {"policy", c.kg.policy.string()},
        {"mode", c.kg.mode == kg::IngestMode::Strict ? "strict" : "lenient"}}},
      {"corpus", c.corpus.string()},
      {"providers",
       {{"mode", c.providers.mode},
        {"embedder", provider_json(c.providers.embedder)},
        {"adjudicator", provider_json(c.providers.adjudicator)},
        {"doubles",
         {{"dimension", c.providers.doubles.dimension},
          {"salt", c.providers.doubles.salt},
          {"pins", pins},
          {"abstain_align", c.providers.doubles.abstain_align}}},
        {"cache_dir", c.providers.cache_dir.string()}}},
      {"tau", c.tau},
      {"top_k_candidates", c.top_k_candidates},
      {"max_paths_per_entity", c.max_paths_per_entity},
      {"embedding_cache_dir", c.embedding_cache_dir.string()},
      {"projection",
       {{"seed", c.projection.seed},
        {"dimension", n.dimension},
        {"walk_length", n.walk_length},
        {"walks_per_node", n.walks_per_node},
        {"window", n.window},
        {"return_p", n.return_p},
        {"inout_q", n.inout_q},
        {"negative", n.negative},
        {"epochs", n.epochs},
        {"learning_rate", n.learning_rate},
        {"parallel", n.parallel},
        {"threads", n.threads},
        {"perplexity", t.perplexity},
        {"iterations", t.iterations},
        {"early_exaggeration", t.early_exaggeration},
        {"exaggeration_iterations", t.exaggeration_iterations},
        {"tsne_learning_rate", t.learning_rate},
        {"theta", t.theta},
        {"exact_limit", t.exact_limit},
        {"context_hops", c.projection.context_hops},
        {"max_training_nodes", c.projection.max_training_nodes}}},
      {"heat_grid", {{"width", c.heat_grid.width}, {"height", c.heat_grid.height}, {"bandwidth", c.heat_grid.bandwidth}}},
      {"store_root", c.store_root.string()},
      {"server", {{"host", c.server.host}, {"port", c.server.port}}},
      {"concurrency", {{"workers", c.workers}}},
  };
}

json default_config_json() { return to_json(Config{}); }

Config parse_config(const json& user) {
  if (!user.is_object()) throw ConfigError("config must be a JSON object");
  json j = default_config_json();
  check_shape(user, j, "");
  overlay(j, user);

  Config c;
  try {
    c.kg.nodes = j["kg"]["nodes"].get<std::string>();
    c.kg.edges = j["kg"]["edges"].get<std::string>();
    c.kg.policy = j["kg"]["policy"].get<std::string>();
    const auto mode = j["kg"]["mode"].get<std::string>();
    if (mode != "strict" && mode != "lenient") throw ConfigError("kg.mode must be strict or lenient");
    c.kg.mode = mode == "strict" ? kg::IngestMode::Strict : kg::IngestMode::Lenient;
    c.corpus = j["corpus"].get<std::string>();

    const auto& pj = j["providers"];
    c.providers.mode = pj["mode"].get<std::string>();
    if (c.providers.mode != "doubles" && c.providers.mode != "http") {
      throw ConfigError("providers.mode must be doubles or http");
    }
    c.providers.embedder = provider_from(pj["embedder"]);
    c.providers.adjudicator = provider_from(pj["adjudicator"]);
    c.providers.doubles.dimension = pj["doubles"]["dimension"].get<std::size_t>();
    c.providers.doubles.salt = pj["doubles"]["salt"].get<std::string>();
    c.providers.doubles.abstain_align = pj["doubles"]["abstain_align"].get<bool>();
    for (const auto& p : pj["doubles"]["pins"]) {
      if (!p.is_object()) throw ConfigError("providers.doubles.pins entries must be objects");
      for (const auto& [k, v] : p.items()) {
        if (k != "text" && k != "anchor" && k != "similarity") throw ConfigError("unknown config key: providers.doubles.pins[]." + k);
      }
      c.providers.doubles.pins.push_back({p.at("text").get<std::string>(), p.at("anchor").get<std::string>(),
                                          p.at("similarity").get<double>()});
    }
    c.providers.cache_dir = pj["cache_dir"].get<std::string>();

    c.tau = j["tau"].get<double>();
    c.top_k_candidates = j["top_k_candidates"].get<std::size_t>();
    c.max_paths_per_entity = j["max_paths_per_entity"].get<std::size_t>();
    c.embedding_cache_dir = j["embedding_cache_dir"].get<std::string>();

    const auto& pr = j["projection"];
    auto& n = c.projection.node2vec;
    auto& t = c.projection.tsne;
    c.projection.seed = pr["seed"].get<std::uint64_t>();
    n.dimension = pr["dimension"].get<std::size_t>();
    n.walk_length = pr["walk_length"].get<std::size_t>();
    n.walks_per_node = pr["walks_per_node"].get<std::size_t>();
    n.window = pr["window"].get<std::size_t>();
    n.return_p = pr["return_p"].get<double>();
    n.inout_q = pr["inout_q"].get<double>();
    n.negative = pr["negative"].get<std::size_t>();
    n.epochs = pr["epochs"].get<std::size_t>();
    n.learning_rate = pr["learning_rate"].get<double>();
    n.parallel = pr["parallel"].get<bool>();
    n.threads = pr["threads"].get<std::size_t>();
    t.perplexity = pr["perplexity"].get<double>();
    t.iterations = pr["iterations"].get<std::size_t>();
    t.early_exaggeration = pr["early_exaggeration"].get<double>();
    t.exaggeration_iterations = pr["exaggeration_iterations"].get<std::size_t>();
    t.learning_rate = pr["tsne_learning_rate"].get<double>();
    t.theta = pr["theta"].get<double>();
    t.exact_limit = pr["exact_limit"].get<std::size_t>();
    c.projection.context_hops = pr["context_hops"].get<std::size_t>();
    c.projection.max_training_nodes = pr["max_training_nodes"].get<std::size_t>();

    c.heat_grid.width = j["heat_grid"]["width"].get<std::size_t>();
    c.heat_grid.height = j["heat_grid"]["height"].get<std::size_t>();
    c.heat_grid.bandwidth = j["heat_grid"]["bandwidth"].get<double>();
    c.store_root = j["store_root"].get<std::string>();
    c.server.host = j["server"]["host"].get<std::string>();
    c.server.port = j["server"]["port"].get<int>();
    c.workers = j["concurrency"]["workers"].get<std::size_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  if (!(c.tau > 0 && c.tau <= 1)) throw ConfigError("tau must be in (0, 1]");
  if (c.top_k_candidates == 0) throw ConfigError("top_k_candidates must be positive");
  if (c.max_paths_per_entity == 0) throw ConfigError("max_paths_per_entity must be positive");
  if (c.projection.node2vec.dimension < 2) throw ConfigError("projection.dimension must be at least 2");
  if (c.projection.node2vec.window == 0 || c.projection.node2vec.walk_length == 0) {
    throw ConfigError("projection.window and projection.walk_length must be positive");
  }
  if (!(c.projection.node2vec.return_p > 0) || !(c.projection.node2vec.inout_q > 0)) {
    throw ConfigError("projection.return_p and projection.inout_q must be positive");
  }
  if (!(c.projection.tsne.perplexity > 0)) throw ConfigError("projection.perplexity must be positive");
  if (c.heat_grid.width == 0 || c.heat_grid.height == 0 || !(c.heat_grid.bandwidth > 0)) {
    throw ConfigError("heat_grid dimensions and bandwidth must be positive");
  }
  if (c.server.port < 0 || c.server.port > 65535) throw ConfigError("server.port out of range");
  if (c.workers == 0) throw ConfigError("concurrency.workers must be positive");
  if (c.providers.doubles.dimension < 2) throw ConfigError("providers.doubles.dimension must be at least 2");
  for (const auto& p : c.providers.doubles.pins) {
    if (!(p.similarity >= -1 && p.similarity <= 1)) throw ConfigError("pin similarity must be in [-1, 1]");
  }
  return c;
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json* node = &j;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("malformed override key: " + key);
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

Config load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  json j = json::object();
  if (!path.empty()) {
    if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
    j = json::parse(read_file(path), nullptr, false);
    if (j.is_discarded()) throw ConfigError("config file is not valid JSON: " + path.string());
  }
  for (const auto& o : overrides) apply_override(j, o);
  return parse_config(j);
}

void require(const Config& c, std::initializer_list<std::string_view> keys) {
  for (auto k : keys) {
    bool missing = false;
    if (k == "corpus") missing = c.corpus.empty();
    else if (k == "kg.nodes") missing = c.kg.nodes.empty();
    else if (k == "kg.edges") missing = c.kg.edges.empty();
    else if (k == "store_root") missing = c.store_root.empty();
    if (missing) throw ConfigError("missing config key: " + std::string(k));
  }
}

}  // namespace pathaudit::app

namespace pathaudit::app {

Providers make_providers(const Config& c, const kg::KnowledgeGraph& graph) {
  Providers p;
  if (c.providers.mode == "http") {
    if (c.providers.embedder.endpoint.empty()) throw ConfigError("missing config key: providers.embedder.endpoint");
    if (c.providers.adjudicator.endpoint.empty()) {
      throw ConfigError("missing config key: providers.adjudicator.endpoint");
    }
    p.embedder = std::make_shared<services::HttpEmbedder>(c.providers.embedder);
    p.adjudicator = std::make_shared<services::HttpAdjudicator>(c.providers.adjudicator);
  } else {
    const auto& d = c.providers.doubles;
    auto emb = std::make_shared<services::HashEmbedder>(d.dimension, d.salt);
    for (const auto& pin : d.pins) emb->pin_similarity(pin.text, pin.anchor, pin.similarity);
    p.embedder = emb;
    services::StubAdjudicator::Options o;
    o.abstain_align = d.abstain_align;
    for (const auto& e : graph.entities()) o.vocabulary.push_back(e.name);
    p.adjudicator = std::make_shared<services::StubAdjudicator>(std::move(o));
  }
  if (!c.providers.cache_dir.empty()) {
    p.embedder = std::make_shared<services::CachingEmbedder>(p.embedder, c.providers.cache_dir / "embedder");
    p.adjudicator = std::make_shared<services::CachingAdjudicator>(p.adjudicator, c.providers.cache_dir / "adjudicator");
  }
  return p;
}

json analysis_settings(const Config& c, const Providers& p) {
  json full = to_json(c);
  json s = {{"tau", c.tau},
            {"top_k_candidates", c.top_k_candidates},
            {"max_paths_per_entity", c.max_paths_per_entity},
            {"embedder", p.embedder->identity()},
            {"embedding_dimension", p.embedder->dimension()},
            {"adjudicator", p.adjudicator->identity()},
            {"projection", full["projection"]}};
  if (c.providers.mode == "doubles") s["doubles"] = full["providers"]["doubles"];
  s["projection"].erase("parallel");
  s["projection"].erase("threads");
  return s;
}

kg::KnowledgeGraph load_graph(const Config& c, kg::LoadStats* stats) {
  require(c, {"kg.nodes", "kg.edges"});
  kg::DirectionalityPolicy policy;
  if (!c.kg.policy.empty()) policy = kg::load_policy(c.kg.policy);
  return kg::load_kg(c.kg.nodes, c.kg.edges, policy, c.kg.mode, stats);
}

Config demo_config(const std::filesystem::path& data_dir, const std::filesystem::path& store_root) {
  Config c;
  c.kg.nodes = data_dir / "nodes.tsv";
  c.kg.edges = data_dir / "edges_toy7b.tsv";
  c.kg.policy = data_dir / "policy.json";
  c.corpus = data_dir / "corpus.jsonl";
  c.providers.doubles.pins.push_back({"pyrexia", "fever", 0.95});
  c.store_root = store_root;
  return c;
}

}  // namespace pathaudit::app
