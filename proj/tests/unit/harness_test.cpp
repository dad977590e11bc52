#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "citsim/error.hpp"
#include "citsim/harness.hpp"

using namespace citsim;
using namespace citsim::harness;
namespace fs = std::filesystem;

namespace {

ArmResult arm_of(Arm a, std::vector<kpi::KpiReport> per_seed) {
  ArmResult r;
  r.arm = a;
  for (std::size_t i = 0; i < per_seed.size(); ++i) r.seeds.push_back(i + 1);
  r.per_seed = per_seed;
  r.mean = mean_report(per_seed);
  return r;
}

ExperimentSpec small_spec(Service s) {
  auto spec = default_spec("attica", s, Demand::Baseline, 1);
  spec.sim = {{"duration", 1200.0}, {"total_vehicles", 300}, {"warmup", 120.0}};
  spec.event.start_time = 300;
  spec.event.end_time = 1000;
  return spec;
}

}  // namespace

TEST(Classify, TableExamples) {
  EXPECT_EQ(classify(14.40, 7.65), Sign::Minus);
  EXPECT_EQ(classify(1.05, 1.15), Sign::Plus);
  EXPECT_EQ(classify(69.55, 69.97), Sign::Approx);
  EXPECT_EQ(classify(100, 101.99), Sign::Approx);
  EXPECT_EQ(classify(100, 102.01), Sign::Plus);
  EXPECT_EQ(classify(0, 0), Sign::Approx);
}

TEST(Tokens, RoundTrip) {
  for (auto s : {Service::HlnWcw, Service::Tja, Service::RwwLc, Service::HlnOr})
    EXPECT_EQ(service_from_string(to_string(s)), s);
  EXPECT_EQ(service_from_string("rww-lc"), Service::RwwLc);
  EXPECT_THROW(service_from_string("nope"), Error);
  for (auto k : all_kpis()) EXPECT_EQ(kpi_from_string(to_string(k)), k);
  EXPECT_EQ(sign_from_string(to_string(Sign::Approx)), Sign::Approx);
}

TEST(Expectations, ShippedFixture) {
  const auto rows = load_expectations();
  EXPECT_EQ(rows.size(), 20u + 34u);  // egnatia reports collisions for OR only
  const auto from_file = load_expectations(fs::path(CITSIM_SOURCE_DIR) / "fixtures" / "expectations.json");
  ASSERT_EQ(from_file.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].manual_text, from_file[i].manual_text);
    EXPECT_EQ(rows[i].expected, from_file[i].expected);
  }
}

TEST(Expectations, EgnatiaWcwTravelTimeSkipped) {
  const auto rows = load_expectations();
  const std::vector<KpiComparison> cmp = {{Kpi::TravelTime, 0.7, 0.8, 0.1, Sign::Plus}};
  const auto v = check_directions(cmp, rows, "egnatia", Service::HlnWcw, Demand::Baseline);
  bool seen = false;
  for (const auto& x : v)
    if (x.kpi == Kpi::TravelTime) {
      seen = true;
      EXPECT_TRUE(x.skipped);
    }
  EXPECT_TRUE(seen);
}

TEST(Compare, SignsAndVerdicts) {
  kpi::KpiReport m{0.67, 14.4, 315.69, 69.55, 0.88, 100, 1};
  kpi::KpiReport c{0.58, 7.65, 297.61, 69.97, 0.87, 100, 1};
  const auto cmp = compare_arms(arm_of(Arm::Manual, {m}), arm_of(Arm::Cits, {c}));
  ASSERT_EQ(cmp.size(), all_kpis().size());
  const auto v = check_directions(cmp, load_expectations(), "attica", Service::HlnWcw, Demand::Baseline);
  for (const auto& x : v) EXPECT_TRUE(x.pass) << to_string(x.kpi);
  auto other = arm_of(Arm::Cits, {c});
  other.seeds = {7};
  EXPECT_THROW(compare_arms(arm_of(Arm::Manual, {m}), other), ValidationError);
}

TEST(Compare, MeanReport) {
  kpi::KpiReport a{1, 2, 300, 60, 1, 10, 1};
  kpi::KpiReport b{3, 4, 320, 80, 0.75, 30, 3};
  const auto m = mean_report({a, b});
  EXPECT_DOUBLE_EQ(m.lane_changes_per_vkm, 2);
  EXPECT_DOUBLE_EQ(m.collisions, 3);
  EXPECT_DOUBLE_EQ(m.avg_speed_kmh, 70);
}

TEST(Spec, JsonRoundTripAndValidation) {
  auto s = default_spec("egnatia", Service::HlnOr, Demand::High, 3);
  s.arm = Arm::Cits;
  const auto back = spec_from_json(to_json(s));
  EXPECT_EQ(back.corridor, "egnatia");
  EXPECT_EQ(back.service, Service::HlnOr);
  EXPECT_EQ(back.demand, Demand::High);
  EXPECT_EQ(back.seeds, s.seeds);
  EXPECT_EQ(back.arm, Arm::Cits);
  EXPECT_EQ(back.event.location, s.event.location);
  auto bad = s;
  bad.seeds.clear();
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = s;
  bad.corridor = "nowhere";
  EXPECT_THROW(bad.validate(), NotFoundError);
}

TEST(Spec, DefaultEventOnTheSixtyPercentEdge) {
  const auto preset = net::corridor_preset("attica");
  for (auto s : {Service::HlnWcw, Service::Tja, Service::RwwLc, Service::HlnOr}) {
    const auto ev = default_event(s, preset.network);
    EXPECT_EQ(ev.kind, service_kind(s));
    const double x = preset.network.locate(ev.location).x;
    const double edge0 = preset.network.edge_start(ev.location.edge_id);
    EXPECT_LE(edge0, 0.6 * preset.network.total_length());
    EXPECT_GT(edge0 + 1000.0, 0.6 * preset.network.total_length());
    EXPECT_GE(x, edge0);
  }
}

TEST(Runs, DeterministicPerSeed) {
  const auto spec = small_spec(Service::RwwLc);
  const auto a = run_arm(spec, Arm::Cits, 4);
  const auto b = run_arm(spec, Arm::Cits, 4);
  EXPECT_EQ(a.kpi, b.kpi);
  EXPECT_EQ(a.population.inserted, b.population.inserted);
}

TEST(Runs, UnequippedCitsArmMatchesManual) {
  auto spec = small_spec(Service::HlnWcw);
  spec.equipped_fraction = 0.0;
  spec.tcs_enabled = false;
  const auto m = run_arm(spec, Arm::Manual, 2);
  const auto c = run_arm(spec, Arm::Cits, 2);
  EXPECT_EQ(m.kpi, c.kpi);
}

TEST(Runs, ExperimentOrderIndependentOfThreads) {
  auto spec = small_spec(Service::Tja);
  spec.seeds = {1, 2};
  const auto one = run_experiment(spec, 1);
  const auto two = run_experiment(spec, 2);
  ASSERT_TRUE(one.manual && one.cits && two.manual && two.cits);
  EXPECT_EQ(one.manual->per_seed, two.manual->per_seed);
  EXPECT_EQ(one.cits->per_seed, two.cits->per_seed);
}

TEST(Report, FilesAndFailureCount) {
  ExperimentResult r;
  r.spec = default_spec("attica", Service::HlnWcw, Demand::Baseline, 1);
  kpi::KpiReport same{0.6, 10, 300, 70, 0.857, 100, 1.4};
  r.manual = arm_of(Arm::Manual, {same});
  r.cits = arm_of(Arm::Cits, {same});
  const auto dir = fs::temp_directory_path() / "citsim_report_test";
  fs::remove_all(dir);
  const auto files = write_report({r}, load_expectations(), dir);
  EXPECT_TRUE(fs::exists(files.csv));
  EXPECT_TRUE(fs::exists(files.summary));
  EXPECT_TRUE(fs::exists(files.jsonl));
  // identical arms: every "-" cell of the row fails
  EXPECT_EQ(files.failures, 3);
  std::ifstream csv(files.csv);
  std::string header;
  std::getline(csv, header);
  EXPECT_NE(header.find("seed"), std::string::npos);
  fs::remove_all(dir);
}
