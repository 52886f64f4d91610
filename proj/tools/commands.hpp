#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace progkit::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFatal = 1;
inline constexpr int kExitPartial = 2;

inline constexpr int kReportSchemaVersion = 1;

/// Runs the command line `args` (args[0] is the program name). Results go to
/// `out`; fatal errors are written to `err` as one JSON object
/// {"error": code, "message": text}. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Per-frame progress values keyed by trajectory id, then frame.
using ProgressTable = std::map<std::string, std::map<int, double>>;

/// Reads progress values from any of: annotation JSONL with `progress`,
/// prediction rows {trajectory_id, frame_id, progress}, or VQA sample JSONL
/// (progress-family targets are parsed from their `<progress>` tag).
ProgressTable load_progress_table(const std::filesystem::path& path);

}  // namespace progkit::cli
