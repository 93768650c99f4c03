#pragma once

#include <filesystem>
#include <string>
#include <unistd.h>

#include "pathaudit/app.hpp"

namespace fixture {

namespace fs = std::filesystem;

inline const fs::path kToy = fs::path(PATHAUDIT_DATA_DIR) / "toy7";

struct TempDir {
  fs::path path;
  TempDir() {
    static int n = 0;
    path = fs::temp_directory_path() / ("pathaudit-test-" + std::to_string(::getpid()) + "-" + std::to_string(n++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

inline pathaudit::app::PipelineResult run_demo(const fs::path& root, bool project = true) {
  auto c = pathaudit::app::demo_config(kToy, root);
  const auto g = pathaudit::app::load_graph(c);
  auto p = pathaudit::app::make_providers(c, g);
  pathaudit::app::PipelineOptions o;
  o.through_project = project;
  return pathaudit::app::run_pipeline(c, g, p, o);
}

}  // namespace fixture
