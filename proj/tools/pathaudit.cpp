#include <csignal>
#include <iostream>

#include <CLI11.hpp>

#include "pathaudit/api.hpp"
#include "pathaudit/app.hpp"
#include "pathaudit/codec.hpp"
#include "pathaudit/error.hpp"

using namespace pathaudit;
using nlohmann::json;

namespace {

api::ApiServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

void progress(const json& event) { std::cerr << canonical_dump(event) << std::endl; }

std::string pick_run(const store::RunStore& st, const std::string& requested) {
  if (!requested.empty()) return requested;
  const auto runs = st.list_runs();
  if (runs.size() == 1) return runs.front();
  throw ConfigError(runs.empty() ? "no runs in store " + st.root().string()
                                 : "missing option --run (store holds " + std::to_string(runs.size()) + " runs)");
}

int fail(int code, const std::string& kind, const std::string& message) {
  std::cerr << canonical_dump({{"event", "error"}, {"kind", kind}, {"message", message}, {"exit", code}}) << std::endl;
  std::cerr << "error: " << message << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Audit diagnostic reasoning paths against a knowledge graph"};
  cli.require_subcommand(1);
  cli.fallthrough();
  std::string config_path;
  std::vector<std::string> overrides;
  std::string store_root;
  cli.add_option("--config", config_path, "JSON config file");
  cli.add_option("--set", overrides, "Override a config key, e.g. --set tau=0.85")->allow_extra_args(false);
  cli.add_option("--store", store_root, "Store root (same as --set store_root=DIR)");

  auto* ingest = cli.add_subcommand("ingest-kg", "Load and validate the knowledge graph");
  auto* analyze = cli.add_subcommand("analyze", "Align, build reference paths and detect errors");
  auto* project = cli.add_subcommand("project", "Analyze (resuming) and compute the 2D projection");
  auto* report = cli.add_subcommand("report", "Print corpus totals and top error entities");
  auto* serve = cli.add_subcommand("serve", "Serve the query API for a run");
  auto* demo = cli.add_subcommand("demo", "Run everything on the bundled fixtures with offline doubles");

  std::string run_id, format = "text";
  std::size_t top = 10;
  report->add_option("--run", run_id, "Run id");
  report->add_option("--format", format, "text or csv")->check(CLI::IsMember({"text", "csv"}));
  report->add_option("--top", top, "Number of entities listed");
  serve->add_option("--run", run_id, "Run id");
  std::string data_dir = std::string(PATHAUDIT_DATA_DIR) + "/toy7";
  demo->add_option("--data", data_dir, "Fixture directory");

  try {
    cli.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return cli.exit(e);
  } catch (const CLI::ParseError& e) {
    cli.exit(e);
    return 2;
  }

  try {
    app::Config c;
    if (demo->parsed()) {
      auto j = app::to_json(app::demo_config(data_dir, store_root.empty() ? "pathaudit-store" : store_root));
      if (!config_path.empty()) throw ConfigError("demo does not take --config");
      for (const auto& o : overrides) app::apply_override(j, o);
      c = app::parse_config(j);
    } else {
      c = app::load_config(config_path, overrides);
      if (!store_root.empty()) c.store_root = store_root;
    }

    if (ingest->parsed()) {
      kg::LoadStats stats;
      const auto g = app::load_graph(c, &stats);
      std::cout << canonical_dump({{"entities", g.entity_count()},
                                   {"edges", g.edge_count()},
                                   {"arcs", g.arc_count()},
                                   {"components", g.component_count()},
                                   {"dropped_edges", stats.dropped_edges},
                                   {"digest", g.digest()}})
                << "\n";
      return 0;
    }

    if (analyze->parsed() || project->parsed() || demo->parsed()) {
      app::require(c, {"kg.nodes", "kg.edges", "corpus"});
      const auto g = app::load_graph(c);
      auto providers = app::make_providers(c, g);
      app::PipelineOptions o;
      o.through_project = !analyze->parsed();
      o.progress = progress;
      const auto r = app::run_pipeline(c, g, providers, o);
      std::cout << canonical_dump({{"run_id", r.run_id},
                                   {"run_dir", r.run_dir.string()},
                                   {"skipped_cases", r.skipped.size()}})
                << "\n";
      return 0;
    }

    const store::RunStore st(c.store_root);
    if (report->parsed()) {
      const auto run = store::load_run(st, pick_run(st, run_id));
      std::cout << app::render_report(run, format == "csv" ? app::ReportFormat::Csv : app::ReportFormat::Text, top);
      return 0;
    }

    if (serve->parsed()) {
      auto run = store::load_run(st, pick_run(st, run_id));
      if (!run.manifest.complete()) throw StateError("run " + run.manifest.run_id + " is not complete");
      auto providers = app::make_providers(c, *run.graph);
      api::ApiOptions ao;
      ao.grid_width = c.heat_grid.width;
      ao.grid_height = c.heat_grid.height;
      ao.bandwidth = c.heat_grid.bandwidth;
      const api::ApiService service(std::move(run), providers.adjudicator, ao);
      api::ApiServer server(service);
      const int port = server.bind(c.server.host, c.server.port);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      progress({{"event", "listening"}, {"host", c.server.host}, {"port", port}});
      server.listen();
      g_server = nullptr;
      return 0;
    }
  } catch (const ConfigError& e) {
    return fail(2, "config", e.what());
  } catch (const NotFoundError& e) {
    return fail(3, "data", e.what());
  } catch (const DataError& e) {
    return fail(3, "data", e.what());
  } catch (const ProviderError& e) {
    return fail(4, "provider", e.what());
  } catch (const std::exception& e) {
    return fail(1, "internal", e.what());
  }
  return 1;
}
