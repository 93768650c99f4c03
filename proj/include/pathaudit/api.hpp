#pragma once

// Read-only query API over a loaded run snapshot. ApiService is transport
// free; ApiServer binds it to HTTP.

#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "pathaudit/services.hpp"
#include "pathaudit/store.hpp"

namespace httplib {
class Server;
}

namespace pathaudit::api {

struct Request {
  std::string method;  // GET | POST
  std::string path;    // decoded, without query string
  std::map<std::string, std::string> query;
  std::string body;
};

struct Response {
  int status = 200;
  std::string body;  // JSON, always carries schema_version
};

struct Route {
  std::string method;
  std::string pattern;  // {id} marks a path parameter
  std::vector<std::string> views;
};

/// Every endpoint with the views it backs.
const std::vector<Route>& routes();

struct ApiOptions {
  std::size_t grid_width = 256;
  std::size_t grid_height = 256;
  double bandwidth = 0.02;
  std::size_t default_top_k = 10;
};

class ApiService {
 public:
  ApiService(store::RunSnapshot run, std::shared_ptr<services::Adjudicator> adjudicator, ApiOptions options = {});

  /// Never throws; failures become {"error":{status,message}} bodies.
  Response handle(const Request& request) const;
  const store::RunSnapshot& run() const { return run_; }

 private:
  nlohmann::json overview(const Request& r) const;
  nlohmann::json projection(const Request& r) const;
  nlohmann::json path_view(const Request& r) const;
  nlohmann::json node_links(const std::string& id) const;
  nlohmann::json expand(const Request& r) const;
  nlohmann::json cases(const Request& r) const;
  nlohmann::json instance(const std::string& id) const;

  void require_stage(store::Stage s) const;
  const kg::Entity& entity(const std::string& id) const;

  store::RunSnapshot run_;
  std::shared_ptr<services::Adjudicator> adjudicator_;
  ApiOptions options_;
  mutable std::mutex summarize_mu_;
  std::unique_ptr<store::ExpansionCache> cache_;
};

class ApiServer {
 public:
  explicit ApiServer(const ApiService& service);
  ~ApiServer();
  /// Port 0 picks a free port; returns the bound port. Throws StateError.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void listen();
  void stop();

 private:
  const ApiService& service_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace pathaudit::api
