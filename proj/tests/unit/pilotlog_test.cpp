#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

#include "citsim/error.hpp"
#include "citsim/pilotlog.hpp"

using namespace citsim;
using namespace citsim::pilotlog;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string line(const std::string& ts, const std::string& type = "CAM") {
  return R"({"ts":")" + ts + R"(","session_id":"s1","station_id":"v7","msg_type":")" + type +
         R"(","payload":{"speed":22.5}})";
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

}  // namespace

TEST(Parse, Line) {
  const auto r = parse_line(line("2022-06-20T08:15:02.250Z", "DENM"));
  EXPECT_EQ(r.msg_type, MsgType::Denm);
  EXPECT_EQ(r.station_id, "v7");
  EXPECT_DOUBLE_EQ(r.ts, parse_timestamp("2022-06-20T08:15:02.250Z"));
  EXPECT_EQ(format_timestamp(r.ts), "2022-06-20T08:15:02.250Z");
  EXPECT_EQ(parse_line(to_line(r)).payload, r.payload);
  EXPECT_THROW(parse_line("{"), ParseError);
  EXPECT_THROW(parse_line(R"({"ts":1,"session_id":"s","station_id":"x","msg_type":"FOO","payload":{}})"), ParseError);
}

TEST(Parse, NumericTimestamp) {
  const auto r = parse_line(R"({"ts":1655712902.5,"session_id":"s","station_id":"x","msg_type":"IVI","payload":{}})");
  EXPECT_DOUBLE_EQ(r.ts, 1655712902.5);
  EXPECT_EQ(format_date(date_of(r.ts)), "2022-06-20");
}

TEST(Parse, EmptyFile) {
  TempDir d("citsim_pl_empty");
  write(d.path / "a.jsonl", "");
  const auto p = parse_log(d.path / "a.jsonl");
  EXPECT_EQ(p.records.size(), 0u);
  EXPECT_EQ(p.errors, 0);
}

TEST(Parse, ValidAndMalformed) {
  const auto text = line("2022-06-20T08:00:00Z") + "\n" + line("2022-06-20T08:00:01Z") + "\n\nnot json\n" +
                    line("2022-06-20T08:00:02Z") + "\n";
  const auto p = parse_log_text(text);
  EXPECT_EQ(p.records.size(), 3u);
  EXPECT_EQ(p.errors, 1);
}

TEST(Parse, MissingFileIsError) {
  EXPECT_THROW(parse_log("/nonexistent/file.jsonl"), Error);
}

TEST(Parse, SimulatorMessagesParseCleanly) {
  v2x::LogRecord m{12.5, "veh-3", "CAM", {{"speed", 20.0}, {"lane", 1}}};
  v2x::LogRecord d{13.0, "tcs", "DENM", {{"event_id", "ev"}}};
  const double epoch = 1655712000.0;
  const auto text = to_line(from_message(m, "run", epoch)) + "\n" + to_line(from_message(d, "run", epoch)) + "\n";
  const auto p = parse_log_text(text);
  EXPECT_EQ(p.errors, 0);
  ASSERT_EQ(p.records.size(), 2u);
  EXPECT_DOUBLE_EQ(p.records[0].ts, epoch + 12.5);
  EXPECT_EQ(p.records[1].msg_type, MsgType::Denm);
}

TEST(Dates, ParseAndFormat) {
  EXPECT_EQ(format_date(parse_date("2022-08-23")), "2022-08-23");
  EXPECT_THROW(parse_date("2022-13-01"), ParseError);
  EXPECT_THROW(parse_date("22-1-1"), ParseError);
  EXPECT_THROW(parse_timestamp("2022-06-20 08:00"), ParseError);
}

TEST(Windows, Validation) {
  const auto a = PeriodWindow{"a", parse_date("2022-01-01"), parse_date("2022-01-31")};
  const auto b = PeriodWindow{"b", parse_date("2022-01-31"), parse_date("2022-02-10")};
  EXPECT_THROW(validate({a, b}), ValidationError);
  EXPECT_THROW(validate({a, a}), ValidationError);
  EXPECT_THROW(validate({{"c", parse_date("2022-02-01"), parse_date("2022-01-01")}}), ValidationError);
  const auto back = windows_from_json(to_json({a}));
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].end_date, a.end_date);
}

TEST(Windows, ShippedFixtures) {
  const auto w = load_windows(fs::path(CITSIM_SOURCE_DIR) / "fixtures" / "pilot_windows.json");
  EXPECT_EQ(w.size(), 5u);
  const auto t = load_windows(fs::path(CITSIM_SOURCE_DIR) / "fixtures" / "pilot_total_window.json");
  EXPECT_EQ(t.size(), 1u);
}

TEST(Summaries, OutsideWindowExcluded) {
  TempDir d("citsim_pl_window");
  write(d.path / "in.jsonl", line("2022-06-20T08:00:00Z") + "\n" + line("2022-06-20T08:00:01Z", "DENM") + "\n");
  write(d.path / "out.jsonl", line("2023-01-01T00:00:00Z") + "\n");
  write(d.path / "empty.jsonl", "");
  const std::vector<PeriodWindow> w{{"june", parse_date("2022-06-01"), parse_date("2022-06-30")}};
  const auto s = summarize_periods(list_log_files(d.path), w);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].file_count, 1);
  EXPECT_EQ(s[0].total_bytes, fs::file_size(d.path / "in.jsonl"));
  EXPECT_EQ(s[0].records_by_type.at("CAM"), 1);
  EXPECT_EQ(s[0].records_by_type.at("DENM"), 1);
}

TEST(Summaries, OrderIndependent) {
  TempDir d("citsim_pl_order");
  for (int i = 0; i < 12; ++i)
    write(d.path / ("f" + std::to_string(i) + ".jsonl"),
          line("2022-0" + std::to_string(5 + i % 3) + "-1" + std::to_string(i % 10) + "T00:00:00Z") + "\n");
  const auto w = load_windows(fs::path(CITSIM_SOURCE_DIR) / "fixtures" / "pilot_windows.json");
  auto files = list_log_files(d.path);
  const auto a = to_json(summarize_periods(files, w));
  std::mt19937 rng(3);
  std::shuffle(files.begin(), files.end(), rng);
  EXPECT_EQ(to_json(summarize_periods(files, w)), a);
}

TEST(Format, DecimalSizes) {
  EXPECT_EQ(format_size(6647000), "6.65 MB");
  EXPECT_EQ(format_size(134000), "134 KB");
  EXPECT_EQ(format_size(0), "0");
}

TEST(Corpus, GeneratorHitsCellsExactly) {
  TempDir d("citsim_pl_corpus");
  std::vector<CorpusCell> cells{{"x", "p1", parse_date("2022-06-20"), parse_date("2022-06-25"), 4, 40000},
                                {"x", "p2", parse_date("2022-07-20"), parse_date("2022-07-21"), 0, 0}};
  const auto files = write_synthetic_corpus(d.path, cells, 5);
  ASSERT_EQ(files.size(), 4u);
  std::uintmax_t total = 0;
  for (const auto& f : files) {
    total += fs::file_size(f);
    EXPECT_EQ(parse_log(f).errors, 0);
  }
  EXPECT_EQ(total, 40000u);
  const std::vector<PeriodWindow> w{{"june", parse_date("2022-06-01"), parse_date("2022-06-30")}};
  EXPECT_EQ(summarize_periods(files, w)[0].file_count, 4);
}
