#pragma once

// JSON forms of the persisted and served records. Objects serialize with
// sorted keys (nlohmann::json default), so dumps are canonical.

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pathaudit/error.hpp"
#include "pathaudit/errors.hpp"
#include "pathaudit/grounding.hpp"
#include "pathaudit/kg.hpp"
#include "pathaudit/projection.hpp"

namespace pathaudit {

inline constexpr int kSchemaVersion = 1;

/// Compact, sorted-key dump; invalid UTF-8 is replaced rather than thrown on.
std::string canonical_dump(const nlohmann::json& j);

namespace kg {
void to_json(nlohmann::json& j, const Entity& e);
void from_json(const nlohmann::json& j, Entity& e);
void to_json(nlohmann::json& j, const Path& p);
void from_json(const nlohmann::json& j, Path& p);
}  // namespace kg

namespace grounding {
void to_json(nlohmann::json& j, const AlignmentResult& a);
void from_json(const nlohmann::json& j, AlignmentResult& a);
void to_json(nlohmann::json& j, const GroundedPath& p);
void from_json(const nlohmann::json& j, GroundedPath& p);
void to_json(nlohmann::json& j, const Case& c);
void from_json(const nlohmann::json& j, Case& c);
/// Corpus input record; unknown fields are rejected.
void from_json(const nlohmann::json& j, RawCase& c);
void to_json(nlohmann::json& j, const RawCase& c);
}  // namespace grounding

namespace errors {
void to_json(nlohmann::json& j, const ErrorRecord& r);
void to_json(nlohmann::json& j, const CaseErrorReport& r);
void from_json(const nlohmann::json& j, CaseErrorReport& r);
void to_json(nlohmann::json& j, const CorpusSummary& s);
void from_json(const nlohmann::json& j, CorpusSummary& s);
void to_json(nlohmann::json& j, const PatternExpansion& x);
void from_json(const nlohmann::json& j, PatternExpansion& x);
void to_json(nlohmann::json& j, const PatternSummary& s);
void from_json(const nlohmann::json& j, PatternSummary& s);
}  // namespace errors

namespace codec {

/// Newline-delimited records behind a header line
/// {"kind":<kind>,"schema_version":N}.
std::string encode_records(std::string_view kind, std::span<const nlohmann::json> records);
/// Throws DataError on a missing/mismatched header, a newer schema major, or
/// a malformed line ("<source>:<line>: ...").
std::vector<nlohmann::json> decode_records(std::string_view text, std::string_view kind,
                                           const std::string& source);

template <typename T>
std::string encode_typed(std::string_view kind, std::span<const T> items) {
  std::vector<nlohmann::json> js;
  js.reserve(items.size());
  for (const auto& x : items) js.emplace_back(x);
  return encode_records(kind, js);
}

template <typename T>
std::vector<T> decode_typed(std::string_view text, std::string_view kind, const std::string& source) {
  std::vector<T> out;
  const auto records = decode_records(text, kind, source);
  for (std::size_t i = 0; i < records.size(); ++i) {
    try {
      out.push_back(records[i].get<T>());
    } catch (const nlohmann::json::exception& e) {
      throw DataError(source + ": record " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return out;
}

/// Corpus file: one RawCase per line; blank lines skipped; an optional
/// version header line is accepted.
std::vector<grounding::RawCase> read_corpus(const std::filesystem::path& path);

/// Layout table: "# pathaudit-layout v1 seed=<n>" then id\tx\ty rows.
std::string encode_layout(const projection::ProjectionLayout& layout);
projection::ProjectionLayout decode_layout(std::string_view text, const std::string& source);

}  // namespace codec
}  // namespace pathaudit
