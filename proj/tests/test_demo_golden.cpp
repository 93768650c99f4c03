#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include "fixture.hpp"
#include "pathaudit/codec.hpp"
#include "pathaudit/fsutil.hpp"
#include "pathaudit/store.hpp"

using namespace pathaudit;
using nlohmann::json;
namespace fs = std::filesystem;

// Committed goldens come from tests/golden/make_demo_golden.py.
TEST_CASE("demo run reproduces the committed reports") {
  fixture::TempDir tmp;
  const auto store_root = tmp.path / "store";
  const std::string cmd = std::string(PATHAUDIT_CLI) + " demo --store " + store_root.string() + " >" +
                          (tmp.path / "out.json").string() + " 2>/dev/null";
  const int rc = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(rc));
  REQUIRE(WEXITSTATUS(rc) == 0);
  const auto out = json::parse(read_file(tmp.path / "out.json"));
  const fs::path run_dir = out.at("run_dir").get<std::string>();
  const fs::path golden = fs::path(PATHAUDIT_GOLDEN_DIR) / "demo";

  for (const char* f : {store::files::kReports, store::files::kSummary}) {
    CAPTURE(f);
    CHECK(read_file(run_dir / f) == read_file(golden / f));
  }

  const auto reports = codec::decode_typed<errors::CaseErrorReport>(read_file(run_dir / store::files::kReports),
                                                                     "reports", "reports");
  REQUIRE(reports.size() == 2);
  CHECK(reports[0].case_id == "CASE-A");
  CHECK((std::array{reports[0].n_rel, reports[0].n_br, reports[0].n_miss}) == std::array<std::size_t, 3>{0, 0, 1});
  CHECK(reports[1].case_id == "CASE-B");
  CHECK((std::array{reports[1].n_rel, reports[1].n_br, reports[1].n_miss}) == std::array<std::size_t, 3>{1, 1, 0});
  const auto summary = json::parse(read_file(run_dir / store::files::kSummary));
  CHECK(summary["totals"] == json({{"Relation", 1}, {"Branch", 1}, {"Missing", 1}}));
  CHECK(summary["accuracy"] == 0.0);
}
