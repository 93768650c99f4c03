#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "pathaudit/error.hpp"
#include "pathaudit/fsutil.hpp"
#include "pathaudit/services.hpp"

namespace pathaudit::services {

using nlohmann::json;

namespace {

struct Endpoint {
  std::string base;  // scheme://host:port
  std::string path;
};

Endpoint split_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("provider endpoint must be an http(s) URL: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

class Throttle {
 public:
  Throttle(std::counting_semaphore<64>& sem, std::mutex& mu, std::chrono::steady_clock::time_point& last,
           int min_interval_ms)
      : sem_(sem) {
    sem_.acquire();
    if (min_interval_ms > 0) {
      std::lock_guard lock(mu);
      const auto next = last + std::chrono::milliseconds(min_interval_ms);
      const auto now = std::chrono::steady_clock::now();
      if (next > now) std::this_thread::sleep_for(next - now);
      last = std::chrono::steady_clock::now();
    }
  }
  ~Throttle() { sem_.release(); }
  Throttle(const Throttle&) = delete;
  Throttle& operator=(const Throttle&) = delete;

 private:
  std::counting_semaphore<64>& sem_;
};

json post_json(const ProviderConfig& cfg, const json& body) {
  const auto ep = split_endpoint(cfg.endpoint);
  httplib::Client cli(ep.base);
  const auto timeout = std::chrono::milliseconds(cfg.timeout_ms);
  cli.set_connection_timeout(timeout);
  cli.set_read_timeout(timeout);
  cli.set_write_timeout(timeout);
  httplib::Headers headers;
  if (!cfg.credential_env.empty()) {
    const char* token = std::getenv(cfg.credential_env.c_str());
    if (token == nullptr || *token == '\0') {
      throw ConfigError("credential environment variable " + cfg.credential_env + " is not set");
    }
    headers.emplace("Authorization", std::string("Bearer ") + token);
  }
  auto res = cli.Post(ep.path, headers, body.dump() + "\n", "application/json");
  if (!res) throw TransportError("request to " + cfg.endpoint + " failed: " + httplib::to_string(res.error()));
  if (res->status == 429 || res->status >= 500) {
    throw TransportError("provider " + cfg.endpoint + " returned HTTP " + std::to_string(res->status));
  }
  if (res->status != 200) {
    throw ProtocolError("provider " + cfg.endpoint + " returned HTTP " + std::to_string(res->status), res->body);
  }
  try {
    return json::parse(res->body);
  } catch (const json::exception&) {
    throw ProtocolError("provider reply is not JSON", res->body);
  }
}

}  // namespace

// ---------------------------------------------------------------------------

HttpEmbedder::HttpEmbedder(ProviderConfig config)
    : config_(std::move(config)), in_flight_(std::clamp(config_.max_in_flight, 1, 64)) {
  if (config_.dimension == 0) throw ConfigError("embedder dimension must be positive");
  split_endpoint(config_.endpoint);
}

std::vector<Vector> HttpEmbedder::embed(std::span<const std::string> texts) {
  const json body{{"model", config_.model}, {"input", std::vector<std::string>(texts.begin(), texts.end())}};
  const json reply = with_retries(config_.retries, config_.backoff_ms, [&] {
    Throttle t(in_flight_, rate_mu_, last_call_, config_.min_interval_ms);
    return post_json(config_, body);
  });
  std::vector<Vector> out;
  try {
    if (reply.contains("embeddings")) {
      for (const auto& v : reply.at("embeddings")) out.push_back(v.get<Vector>());
    } else {
      for (const auto& d : reply.at("data")) out.push_back(d.at("embedding").get<Vector>());
    }
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("embedding reply: ") + e.what(), reply.dump());
  }
  return out;
}

// ---------------------------------------------------------------------------

HttpAdjudicator::HttpAdjudicator(ProviderConfig config)
    : config_(std::move(config)), in_flight_(std::clamp(config_.max_in_flight, 1, 64)) {
  split_endpoint(config_.endpoint);
}

std::set<Capability> HttpAdjudicator::capabilities() const {
  std::set<Capability> caps;
  for (auto c : {Capability::AlignChoice, Capability::PrunePaths, Capability::Extract, Capability::Categorize}) {
    if (std::filesystem::exists(config_.template_dir / (std::string(to_string(c)) + ".txt"))) caps.insert(c);
  }
  return caps;
}

std::string HttpAdjudicator::render_prompt(Capability capability, const json& request) const {
  const auto path = config_.template_dir / (std::string(to_string(capability)) + ".txt");
  if (!std::filesystem::exists(path)) throw ConfigError("missing prompt template " + path.string());
  std::string text = read_file(path);
  const std::string slot = "{{request}}";
  const std::string payload = request.dump(2);
  for (auto pos = text.find(slot); pos != std::string::npos; pos = text.find(slot, pos + payload.size())) {
    text.replace(pos, slot.size(), payload);
  }
  return text;
}

json HttpAdjudicator::adjudicate(Capability capability, const json& request) {
  const json body{{"model", config_.model},
                  {"capability", to_string(capability)},
                  {"prompt", render_prompt(capability, request)},
                  {"request", request}};
  json reply = with_retries(config_.retries, config_.backoff_ms, [&] {
    Throttle t(in_flight_, rate_mu_, last_call_, config_.min_interval_ms);
    return post_json(config_, body);
  });
  if (reply.is_object() && reply.contains("response")) return reply["response"];
  return reply;
}

}  // namespace pathaudit::services
