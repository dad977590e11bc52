#include <gtest/gtest.h>

#include <fstream>

#include "citsim/error.hpp"
#include "citsim/kpi.hpp"

using namespace citsim;
using namespace citsim::kpi;

namespace {

Trajectory cruise(const std::string& id, double speed, double t0, double t1, double dt = 0.5) {
  Trajectory tr{id, {}};
  for (double t = t0; t <= t1 + 1e-9; t += dt) tr.points.push_back({t, speed * (t - t0), speed, 0.0});
  return tr;
}

}  // namespace

TEST(Co2, IdleFloor) {
  const auto& m = default_co2_model();
  EXPECT_DOUBLE_EQ(co2_rate(0, 0, m), std::max(m.r_idle, m.c0));
  EXPECT_GE(co2_rate(0, -3, m), m.r_idle);
  EXPECT_DOUBLE_EQ(co2_rate(0, 0, Co2Model{2.0, 0.5, 0.1, 0, 0}), 2.0);
}

TEST(Co2, CruiseAt80InPlausibleBand) {
  const double g = cruise_g_per_km(80 / 3.6, default_co2_model());
  EXPECT_GE(g, 280);
  EXPECT_LE(g, 340);
  EXPECT_NEAR(g, 310, 3.1);
}

TEST(Co2, StopAndGoCostsMore) {
  const auto& m = default_co2_model();
  // same distance and mean speed: steady 15 m/s versus 0..30 m/s cycles
  double steady = 0, wavy = 0;
  const double dt = 0.1;
  for (double t = 0; t < 60; t += dt) {
    steady += co2_rate(15, 0, m) * dt;
    const double phase = std::fmod(t, 20.0);
    const double a = phase < 10 ? 3.0 : -3.0;
    const double v = phase < 10 ? 3.0 * phase : 30 - 3.0 * (phase - 10);
    wavy += co2_rate(v, a, m) * dt;
  }
  EXPECT_GT(wavy, steady);
}

TEST(Co2, Calibration) {
  const auto m = calibrate_co2(310, 80 / 3.6);
  EXPECT_NEAR(cruise_g_per_km(80 / 3.6, m), 310, 3.1);
  const auto n = calibrate_co2(250, 100 / 3.6);
  EXPECT_NEAR(cruise_g_per_km(100 / 3.6, n), 250, 2.5);
  EXPECT_THROW(calibrate_co2(0, 80 / 3.6), ValidationError);
}

TEST(Co2, ShippedFixtureMatchesDefault) {
  std::ifstream in(std::string(CITSIM_SOURCE_DIR) + "/fixtures/co2_default.json");
  ASSERT_TRUE(in);
  const auto m = co2_model_from_json(nlohmann::json::parse(in));
  EXPECT_EQ(m, default_co2_model());
}

TEST(Aggregate, OneVehicleAt60) {
  const std::vector<Trajectory> tr{cruise("a", 60 / 3.6, 0, 600)};
  const auto r = aggregate(tr, {}, {}, {});
  EXPECT_NEAR(r.avg_speed_kmh, 60.0, 1e-9);
  EXPECT_NEAR(r.travel_time_min_per_km, 1.0, 1e-9);
  EXPECT_NEAR(r.vehicle_km, 10.0, 1e-9);
}

TEST(Aggregate, LaneChangeRate) {
  // 4 vehicle-km at 20 m/s: 200 s of driving
  const std::vector<Trajectory> tr{cruise("a", 20, 0, 100), cruise("b", 20, 0, 100)};
  const std::vector<double> lc{10, 20, 30, 1000};
  const auto r = aggregate(tr, std::vector<double>{50}, lc, {0, 100});
  EXPECT_NEAR(r.vehicle_km, 4.0, 1e-9);
  EXPECT_NEAR(r.lane_changes_per_vkm, 0.75, 1e-12);
  EXPECT_EQ(r.collisions, 1.0);
}

TEST(Aggregate, Identities) {
  const std::vector<Trajectory> tr{cruise("a", 13, 0, 300), cruise("b", 27, 40, 500)};
  const auto r = aggregate(tr, {}, {}, {60, 400});
  EXPECT_NEAR(r.travel_time_min_per_km * r.avg_speed_kmh, 60.0, 1e-9);
  EXPECT_NEAR(r.avg_speed_kmh, r.vehicle_km / r.vehicle_hours, 1e-9);
}

TEST(Aggregate, WindowClipsSamples) {
  const std::vector<Trajectory> tr{cruise("a", 10, 0, 100)};
  const auto r = aggregate(tr, {}, {}, {50, 100});
  EXPECT_NEAR(r.vehicle_km, 0.5, 1e-9);
}

TEST(Aggregate, EmptyWindowIsError) {
  const std::vector<Trajectory> tr{cruise("a", 10, 0, 100)};
  EXPECT_THROW(aggregate(tr, {}, {}, {200, 300}), StateError);
  EXPECT_THROW(aggregate({}, {}, {}, {}), StateError);
}

TEST(Accumulator, MatchesAggregate) {
  const auto& m = default_co2_model();
  const auto tr = cruise("a", 25, 0, 200);
  KpiAccumulator acc;
  for (std::size_t k = 1; k < tr.points.size(); ++k)
    acc.add_motion(tr.points[k].x - tr.points[k - 1].x, 0.5, tr.points[k].speed, 0, m);
  acc.add_lane_change();
  const std::vector<Trajectory> v{tr};
  const auto a = aggregate(v, {}, std::vector<double>{1.0}, {});
  const auto b = acc.report();
  EXPECT_NEAR(a.co2_g_per_km, b.co2_g_per_km, 1e-9);
  EXPECT_NEAR(a.avg_speed_kmh, b.avg_speed_kmh, 1e-9);
  EXPECT_NEAR(a.lane_changes_per_vkm, b.lane_changes_per_vkm, 1e-12);
  EXPECT_THROW(KpiAccumulator{}.report(), StateError);
}

TEST(Report, JsonRoundTrip) {
  KpiReport r{0.5, 2, 301.5, 88.2, 0.68, 1234.5, 14.0};
  EXPECT_EQ(kpi_report_from_json(to_json(r)), r);
}
