#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "citsim/v2x.hpp"

namespace citsim::pilotlog {

enum class MsgType { Cam, Denm, Ivi, Session };
std::string_view to_string(MsgType t);
MsgType msg_type_from_string(std::string_view s);

/// One line of a session log:
///   {"ts": "2022-06-20T08:15:02.250Z", "session_id": .., "station_id": .., "msg_type": .., "payload": {..}}
/// `ts` may also be a number of seconds since the Unix epoch.
struct LogRecord {
  double ts = 0.0;  // s since the Unix epoch, UTC
  std::string session_id;
  std::string station_id;
  MsgType msg_type = MsgType::Cam;
  nlohmann::json payload;
};

/// Throws ParseError on a malformed line.
LogRecord parse_line(std::string_view line);
std::string to_line(const LogRecord& r);

/// A simulator message record in log form; `epoch` is the Unix time of t = 0.
LogRecord from_message(const v2x::LogRecord& m, const std::string& session_id, double epoch = 0.0);

struct ParsedLog {
  std::vector<LogRecord> records;
  int errors = 0;  // malformed non-blank lines
};

/// Blank lines are skipped; malformed ones are counted. Throws Error only
/// when the file cannot be read.
ParsedLog parse_log(const std::filesystem::path& file);
ParsedLog parse_log_text(std::string_view text);

using Date = std::chrono::year_month_day;

/// "YYYY-MM-DD". Throws ParseError.
Date parse_date(std::string_view s);
std::string format_date(Date d);
/// UTC calendar date of a Unix time.
Date date_of(double unix_seconds);
/// "YYYY-MM-DDTHH:MM:SS[.fff]Z" to Unix seconds. Throws ParseError.
double parse_timestamp(std::string_view s);
std::string format_timestamp(double unix_seconds);

struct PeriodWindow {
  std::string name;
  Date start_date;
  Date end_date;  // inclusive

  bool contains(Date d) const { return start_date <= d && d <= end_date; }
};

/// Names non-empty and unique, start <= end, no two windows overlapping.
/// Throws ValidationError.
void validate(const std::vector<PeriodWindow>& windows);

/// {"v": 1, "windows": [{"name", "start_date", "end_date"}, ...]}
std::vector<PeriodWindow> windows_from_json(const nlohmann::json& j);
nlohmann::json to_json(const std::vector<PeriodWindow>& windows);
std::vector<PeriodWindow> load_windows(const std::filesystem::path& file);

struct PeriodSummary {
  std::string name;
  Date start_date;
  Date end_date;
  int file_count = 0;
  std::uintmax_t total_bytes = 0;
  std::map<std::string, long> records_by_type;
  int parse_errors = 0;
};

struct FileDigest {
  std::filesystem::path path;
  std::uintmax_t bytes = 0;
  bool dated = false;  // false when the file holds no valid record
  Date first_date;
  std::map<std::string, long> records_by_type;
  int errors = 0;
};

FileDigest digest_file(const std::filesystem::path& file);

/// A file belongs to the window holding the date of its first valid record;
/// files outside every window, or without a valid record, are left out.
/// Output follows the order of `windows`. Throws ValidationError for bad windows.
std::vector<PeriodSummary> summarize_periods(const std::vector<std::filesystem::path>& files,
                                             const std::vector<PeriodWindow>& windows);
std::vector<PeriodSummary> summarize_digests(const std::vector<FileDigest>& digests,
                                             const std::vector<PeriodWindow>& windows);

/// Regular files under `dir`, recursively, sorted by path.
std::vector<std::filesystem::path> list_log_files(const std::filesystem::path& dir);

nlohmann::json to_json(const std::vector<PeriodSummary>& summaries);
/// Fixed-width table: window, dates, files, size (decimal units), records.
std::string format_report(const std::vector<PeriodSummary>& summaries);
/// "6.65 MB", "134 KB", "0"; decimal units.
std::string format_size(std::uintmax_t bytes);

/// File count and byte total of one period of the synthetic corpus.
struct CorpusCell {
  std::string corridor;
  std::string period;
  Date first_day;  // files are dated from here
  Date last_day;
  int files = 0;
  std::uintmax_t bytes = 0;
};

/// The shipped period table: five periods for each of attica and egnatia.
std::vector<CorpusCell> pilot_corpus_cells();

/// Writes <dir>/<corridor>/<period>-NNN.jsonl, each file padded to its exact
/// byte share. Deterministic in `seed`. Returns the files written.
std::vector<std::filesystem::path> write_synthetic_corpus(const std::filesystem::path& dir,
                                                          const std::vector<CorpusCell>& cells,
                                                          std::uint64_t seed = 1);

}  // namespace citsim::pilotlog
