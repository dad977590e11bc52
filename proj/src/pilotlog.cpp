#include "citsim/pilotlog.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "citsim/error.hpp"

namespace citsim::pilotlog {

using nlohmann::json;
namespace fs = std::filesystem;
namespace chr = std::chrono;

std::string_view to_string(MsgType t) {
  switch (t) {
    case MsgType::Cam: return "CAM";
    case MsgType::Denm: return "DENM";
    case MsgType::Ivi: return "IVI";
    case MsgType::Session: return "SESSION";
  }
  return "?";
}

MsgType msg_type_from_string(std::string_view s) {
  if (s == "CAM") return MsgType::Cam;
  if (s == "DENM") return MsgType::Denm;
  if (s == "IVI") return MsgType::Ivi;
  if (s == "SESSION") return MsgType::Session;
  throw ParseError("unknown msg_type " + std::string(s));
}

Date parse_date(std::string_view s) {
  int y = 0;
  unsigned m = 0, d = 0;
  char tail = 0;
  const std::string str(s);
  if (std::sscanf(str.c_str(), "%4d-%2u-%2u%c", &y, &m, &d, &tail) != 3 || str.size() != 10)
    throw ParseError("bad date '" + str + "', expected YYYY-MM-DD");
  Date date{chr::year(y), chr::month(m), chr::day(d)};
  if (!date.ok()) throw ParseError("no such date " + str);
  return date;
}

std::string format_date(Date d) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()), static_cast<unsigned>(d.month()),
                static_cast<unsigned>(d.day()));
  return buf;
}

Date date_of(double unix_seconds) {
  const auto days = static_cast<long>(std::floor(unix_seconds / 86400.0));
  return Date{chr::sys_days{chr::days{days}}};
}

double parse_timestamp(std::string_view s) {
  const std::string str(s);
  int y = 0;
  unsigned mo = 0, d = 0, h = 0, mi = 0;
  double sec = 0.0;
  int used = 0;
  if (std::sscanf(str.c_str(), "%4d-%2u-%2uT%2u:%2u:%lf%n", &y, &mo, &d, &h, &mi, &sec, &used) != 6 ||
      used + 1 != static_cast<int>(str.size()) || str.back() != 'Z')
    throw ParseError("bad timestamp '" + str + "'");
  const Date date{chr::year(y), chr::month(mo), chr::day(d)};
  if (!date.ok() || h > 23 || mi > 59 || !(sec >= 0.0 && sec < 61.0)) throw ParseError("bad timestamp '" + str + "'");
  const double days = static_cast<double>(chr::sys_days(date).time_since_epoch().count());
  return days * 86400.0 + h * 3600.0 + mi * 60.0 + sec;
}

std::string format_timestamp(double t) {
  const double day_s = std::floor(t / 86400.0);
  const Date d = date_of(t);
  double rest = t - day_s * 86400.0;
  const auto ms_total = static_cast<long>(std::llround(rest * 1000.0));
  const long h = ms_total / 3600000, mi = ms_total / 60000 % 60, s = ms_total / 1000 % 60, ms = ms_total % 1000;
  char buf[40];
  std::snprintf(buf, sizeof buf, "%sT%02ld:%02ld:%02ld.%03ldZ", format_date(d).c_str(), h, mi, s, ms);
  return buf;
}

LogRecord parse_line(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw ParseError(std::string("not a JSON record: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("record must be an object");
  try {
    LogRecord r;
    const auto& ts = j.at("ts");
    if (ts.is_number()) {
      r.ts = ts.get<double>();
    } else {
      r.ts = parse_timestamp(ts.get<std::string>());
    }
    r.session_id = j.at("session_id").get<std::string>();
    r.station_id = j.at("station_id").get<std::string>();
    r.msg_type = msg_type_from_string(j.at("msg_type").get<std::string>());
    r.payload = j.value("payload", json(nullptr));
    if (r.session_id.empty() || r.station_id.empty()) throw ParseError("empty session or station id");
    return r;
  } catch (const json::exception& e) {
    throw ParseError(std::string("record: ") + e.what());
  }
}

std::string to_line(const LogRecord& r) {
  json j{{"ts", format_timestamp(r.ts)},
         {"session_id", r.session_id},
         {"station_id", r.station_id},
         {"msg_type", to_string(r.msg_type)},
         {"payload", r.payload}};
  return j.dump();
}

LogRecord from_message(const v2x::LogRecord& m, const std::string& session_id, double epoch) {
  return {epoch + m.time, session_id, m.station, msg_type_from_string(m.type), m.payload};
}

ParsedLog parse_log_text(std::string_view text) {
  ParsedLog out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    try {
      out.records.push_back(parse_line(line));
    } catch (const ParseError&) {
      ++out.errors;
    }
  }
  return out;
}

ParsedLog parse_log(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error("cannot read " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw Error("cannot read " + file.string());
  return parse_log_text(ss.str());
}

void validate(const std::vector<PeriodWindow>& windows) {
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto& w = windows[i];
    if (w.name.empty()) throw ValidationError("window name must not be empty");
    if (!(w.start_date <= w.end_date)) throw ValidationError("window " + w.name + " ends before it starts");
    for (std::size_t k = 0; k < i; ++k) {
      if (windows[k].name == w.name) throw ValidationError("duplicate window " + w.name);
      if (w.start_date <= windows[k].end_date && windows[k].start_date <= w.end_date)
        throw ValidationError("windows " + windows[k].name + " and " + w.name + " overlap");
    }
  }
}

std::vector<PeriodWindow> windows_from_json(const json& j) {
  try {
    const json& rows = j.is_array() ? j : j.at("windows");
    std::vector<PeriodWindow> out;
    for (const auto& r : rows)
      out.push_back({r.at("name").get<std::string>(), parse_date(r.at("start_date").get<std::string>()),
                     parse_date(r.at("end_date").get<std::string>())});
    return out;
  } catch (const json::exception& e) {
    throw ParseError(std::string("windows: ") + e.what());
  }
}

json to_json(const std::vector<PeriodWindow>& windows) {
  json rows = json::array();
  for (const auto& w : windows)
    rows.push_back({{"name", w.name}, {"start_date", format_date(w.start_date)}, {"end_date", format_date(w.end_date)}});
  return json{{"v", 1}, {"windows", rows}};
}

std::vector<PeriodWindow> load_windows(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw Error("cannot read " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(file.string() + ": " + e.what());
  }
  auto w = windows_from_json(j);
  validate(w);
  return w;
}

FileDigest digest_file(const fs::path& file) {
  FileDigest d;
  d.path = file;
  d.bytes = fs::file_size(file);
  const auto log = parse_log(file);
  d.errors = log.errors;
  for (const auto& r : log.records) ++d.records_by_type[std::string(to_string(r.msg_type))];
  if (!log.records.empty()) {
    d.dated = true;
    d.first_date = date_of(log.records.front().ts);
  }
  return d;
}

std::vector<PeriodSummary> summarize_digests(const std::vector<FileDigest>& digests,
                                             const std::vector<PeriodWindow>& windows) {
  validate(windows);
  std::vector<PeriodSummary> out;
  for (const auto& w : windows) out.push_back({w.name, w.start_date, w.end_date, 0, 0, {}, 0});
  for (const auto& d : digests) {
    if (!d.dated) continue;
    for (std::size_t i = 0; i < windows.size(); ++i) {
      if (!windows[i].contains(d.first_date)) continue;
      auto& s = out[i];
      ++s.file_count;
      s.total_bytes += d.bytes;
      s.parse_errors += d.errors;
      for (const auto& [k, n] : d.records_by_type) s.records_by_type[k] += n;
      break;
    }
  }
  return out;
}

std::vector<PeriodSummary> summarize_periods(const std::vector<fs::path>& files,
                                             const std::vector<PeriodWindow>& windows) {
  validate(windows);
  std::vector<FileDigest> digests;
  digests.reserve(files.size());
  for (const auto& f : files) digests.push_back(digest_file(f));
  return summarize_digests(digests, windows);
}

std::vector<fs::path> list_log_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

json to_json(const std::vector<PeriodSummary>& summaries) {
  json rows = json::array();
  for (const auto& s : summaries)
    rows.push_back({{"name", s.name},
                    {"start_date", format_date(s.start_date)},
                    {"end_date", format_date(s.end_date)},
                    {"file_count", s.file_count},
                    {"total_bytes", s.total_bytes},
                    {"size", format_size(s.total_bytes)},
                    {"records_by_type", s.records_by_type},
                    {"parse_errors", s.parse_errors}});
  return json{{"v", 1}, {"periods", rows}};
}

std::string format_size(std::uintmax_t bytes) {
  if (bytes == 0) return "0";
  char buf[32];
  const double b = static_cast<double>(bytes);
  if (b >= 1e6) {
    std::snprintf(buf, sizeof buf, "%.2f MB", b / 1e6);
  } else if (b >= 1e3) {
    std::snprintf(buf, sizeof buf, "%.0f KB", b / 1e3);
  } else {
    std::snprintf(buf, sizeof buf, "%ju B", bytes);
  }
  return buf;
}

std::string format_report(const std::vector<PeriodSummary>& summaries) {
  std::ostringstream o;
  char line[256];
  std::snprintf(line, sizeof line, "%-24s %-23s %6s %10s %8s %8s %8s %8s\n", "period", "dates", "files", "size", "CAM",
                "DENM", "IVI", "SESSION");
  o << line;
  auto count = [](const PeriodSummary& s, const char* k) {
    auto it = s.records_by_type.find(k);
    return it == s.records_by_type.end() ? 0L : it->second;
  };
  for (const auto& s : summaries) {
    const auto dates = format_date(s.start_date) + ".." + format_date(s.end_date);
    std::snprintf(line, sizeof line, "%-24s %-23s %6d %10s %8ld %8ld %8ld %8ld\n", s.name.c_str(), dates.c_str(),
                  s.file_count, format_size(s.total_bytes).c_str(), count(s, "CAM"), count(s, "DENM"),
                  count(s, "IVI"), count(s, "SESSION"));
    o << line;
  }
  return o.str();
}

std::vector<CorpusCell> pilot_corpus_cells() {
  auto d = [](int y, unsigned m, unsigned day) { return Date{chr::year(y), chr::month(m), chr::day(day)}; };
  // 2nd treatment files fall before the end of the overall collection span
  return {
      {"attica", "pretesting", d(2022, 1, 1), d(2022, 5, 17), 49, 1'560'000},
      {"attica", "baseline-1", d(2022, 5, 18), d(2022, 6, 19), 7, 134'000},
      {"attica", "treatment-1", d(2022, 6, 20), d(2022, 7, 17), 56, 1'900'000},
      {"attica", "baseline-2", d(2022, 7, 18), d(2022, 8, 15), 51, 3'040'000},
      {"attica", "treatment-2", d(2022, 8, 16), d(2022, 8, 23), 1, 13'000},
      {"egnatia", "pretesting", d(2022, 1, 1), d(2022, 5, 17), 6, 238'000},
      {"egnatia", "baseline-1", d(2022, 5, 18), d(2022, 6, 19), 5, 687'000},
      {"egnatia", "treatment-1", d(2022, 6, 20), d(2022, 7, 17), 8, 1'700'000},
      {"egnatia", "baseline-2", d(2022, 7, 18), d(2022, 8, 15), 3, 127'000},
      {"egnatia", "treatment-2", d(2022, 8, 16), d(2022, 8, 23), 0, 0},
  };
}

namespace {

std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
  return h;
}

// Lines of one synthetic session until `target` bytes, the last one padded.
std::string synth_session(const std::string& session, double t0, std::uintmax_t target, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::string station = "obu-" + std::to_string(1 + rng() % 40);
  std::string out;
  auto line = [&](double t, MsgType type, json payload) {
    return to_line({t, session, station, type, std::move(payload)}) + "\n";
  };
  auto closing = [&](double t, std::size_t pad) {
    return line(t, MsgType::Session, json{{"event", "end"}, {"synthetic", true}, {"pad", std::string(pad, '.')}});
  };
  out += line(t0, MsgType::Session, json{{"event", "start"}, {"synthetic", true}});
  double t = t0;
  double x = 1000.0 * u(rng);
  double v = 22.0 + 8.0 * u(rng);
  for (;;) {
    t += 1.0;
    x += v;
    v = std::clamp(v + (u(rng) - 0.5), 5.0, 36.0);
    std::string next;
    const double r = u(rng);
    if (r < 0.01) {
      next = line(t, MsgType::Denm, json{{"event_id", "pilot-" + std::to_string(rng() % 1000)}, {"cause", "LaneClosure"}});
    } else if (r < 0.02) {
      next = line(t, MsgType::Ivi, json{{"free_text", "ROADWORKS AHEAD"}});
    } else {
      next = line(t, MsgType::Cam, json{{"x", std::round(x * 10.0) / 10.0}, {"speed", std::round(v * 100.0) / 100.0}});
    }
    if (out.size() + next.size() + closing(t + 1.0, 0).size() > target) break;
    out += next;
  }
  const auto base = closing(t, 0).size();
  if (out.size() + base > target) throw ValidationError("synthetic file target too small");
  out += closing(t, target - out.size() - base);
  return out;
}

}  // namespace

std::vector<fs::path> write_synthetic_corpus(const fs::path& dir, const std::vector<CorpusCell>& cells,
                                             std::uint64_t seed) {
  std::vector<fs::path> written;
  for (const auto& c : cells) {
    if (c.files == 0) continue;
    if (!(c.first_day <= c.last_day)) throw ValidationError("corpus cell " + c.period + " has no days");
    std::mt19937_64 rng(seed ^ name_hash(c.corridor + "/" + c.period));
    std::uniform_real_distribution<double> u(0.7, 1.3);
    std::vector<double> w(static_cast<std::size_t>(c.files));
    double sum = 0.0;
    for (auto& x : w) sum += (x = u(rng));
    std::vector<std::uintmax_t> sizes;
    std::uintmax_t assigned = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const auto s = i + 1 == w.size() ? c.bytes - assigned
                                       : static_cast<std::uintmax_t>(std::floor(c.bytes * w[i] / sum));
      sizes.push_back(s);
      assigned += s;
    }
    const auto first = chr::sys_days(c.first_day).time_since_epoch().count();
    const auto span = chr::sys_days(c.last_day).time_since_epoch().count() - first + 1;
    fs::create_directories(dir / c.corridor);
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      const long day = first + static_cast<long>(rng() % static_cast<std::uint64_t>(span));
      const double t0 = day * 86400.0 + 6 * 3600.0 + static_cast<double>(rng() % 43200);
      char name[96];
      std::snprintf(name, sizeof name, "%s-%03zu.jsonl", c.period.c_str(), i + 1);
      const std::string session = c.corridor.substr(0, 3) + "-" + c.period + "-" + std::to_string(i + 1);
      const auto text = synth_session(session, t0, sizes[i], rng);
      const auto path = dir / c.corridor / name;
      std::ofstream out(path, std::ios::binary);
      out << text;
      if (!out) throw Error("cannot write " + path.string());
      written.push_back(path);
    }
  }
  return written;
}

}  // namespace citsim::pilotlog
