#include <cstdio>
#include <sstream>

#include "pathaudit/app.hpp"
#include "pathaudit/error.hpp"

namespace pathaudit::app {

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string format_ratio(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  std::string s = buf;
  while (s.size() > 1 && s.back() == '0' && s[s.size() - 2] != '.') s.pop_back();
  return s;
}

std::string render_report(const store::RunSnapshot& run, ReportFormat format, std::size_t top) {
  if (run.manifest.status(store::Stage::Detect) != store::StageStatus::Done) {
    throw StateError("run " + run.manifest.run_id + " has no error reports yet");
  }
  using errors::ErrorKind;
  const auto& s = run.summary;
  const auto acc = s.accuracy();
  const std::string acc_text = acc ? format_ratio(*acc) : "n/a";
  const auto ranked = projection::top_k_nodes(s.intensity(), top);
  auto count = [&](const std::string& id, ErrorKind k) -> std::size_t {
    auto it = s.per_entity_intensity.find({id, k});
    return it == s.per_entity_intensity.end() ? 0 : it->second;
  };

  std::ostringstream out;
  if (format == ReportFormat::Csv) {
    out << "metric,value\n"
        << "run_id," << run.manifest.run_id << "\n"
        << "total_cases," << s.total_cases << "\n"
        << "correct_cases," << s.correct_cases << "\n"
        << "incorrect_cases," << s.incorrect_cases << "\n"
        << "accuracy," << acc_text << "\n"
        << "Relation," << s.total(ErrorKind::Relation) << "\n"
        << "Branch," << s.total(ErrorKind::Branch) << "\n"
        << "Missing," << s.total(ErrorKind::Missing) << "\n"
        << "skipped_cases," << run.manifest.skipped_cases.size() << "\n\n"
        << "rank,entity,name,Relation,Branch,Missing,total\n";
    std::size_t rank = 0;
    for (const auto& [id, n] : ranked) {
      out << ++rank << "," << csv_field(id) << "," << csv_field(run.entity_name(id)) << ","
          << count(id, ErrorKind::Relation) << "," << count(id, ErrorKind::Branch) << ","
          << count(id, ErrorKind::Missing) << "," << n << "\n";
    }
    return out.str();
  }

  out << "run " << run.manifest.run_id << "\n"
      << "cases      " << s.total_cases << " (correct " << s.correct_cases << ", incorrect " << s.incorrect_cases
      << ")\n"
      << "accuracy   " << acc_text << "\n"
      << "errors     Relation " << s.total(ErrorKind::Relation) << "  Branch " << s.total(ErrorKind::Branch)
      << "  Missing " << s.total(ErrorKind::Missing) << "\n";
  if (!run.manifest.skipped_cases.empty()) out << "skipped    " << run.manifest.skipped_cases.size() << "\n";
  out << "\ntop error entities\n";
  if (ranked.empty()) out << "  (none)\n";
  std::size_t rank = 0;
  for (const auto& [id, n] : ranked) {
    char line[512];
    std::snprintf(line, sizeof line, "  %3zu  %-12s %-28s R=%zu B=%zu M=%zu total=%zu\n", ++rank, id.c_str(),
                  run.entity_name(id).c_str(), count(id, ErrorKind::Relation), count(id, ErrorKind::Branch),
                  count(id, ErrorKind::Missing), n);
    out << line;
  }
  return out.str();
}

}  // namespace pathaudit::app
