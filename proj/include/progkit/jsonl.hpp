#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "progkit/annotation.hpp"

namespace progkit {

nlohmann::json to_json(const AnnotationRecord& record);

/// Throws SchemaViolation naming the offending field; `line` is only used in messages.
AnnotationRecord record_from_json(const nlohmann::json& j, std::size_t line = 0);

/// One compact JSON object per line. Not thread-safe: callers serialize writes.
void write_jsonl(std::ostream& out, const std::vector<AnnotationRecord>& records);
std::vector<AnnotationRecord> read_jsonl(std::istream& in);

void write_jsonl_file(const std::filesystem::path& path, const std::vector<AnnotationRecord>& records);
std::vector<AnnotationRecord> read_jsonl_file(const std::filesystem::path& path);

/// Generic helpers for the other line-oriented formats (VQA samples, predictions, labels).
std::vector<nlohmann::json> read_json_lines(const std::filesystem::path& path);
void write_json_lines(const std::filesystem::path& path, const std::vector<nlohmann::json>& rows);

}  // namespace progkit
