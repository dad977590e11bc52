#include <gtest/gtest.h>

#include <cmath>

#include "citsim/error.hpp"
#include "citsim/microsim.hpp"

using namespace citsim;
using namespace citsim::sim;

namespace {

std::shared_ptr<const net::RoadNetwork> flat(int edges = 5, int lanes = 2, double limit = 25.0) {
  std::vector<net::Edge> e;
  for (int i = 0; i < edges; ++i) {
    net::Edge x{"E" + std::to_string(i + 1), 1000.0, lanes, limit, 0.0, {}};
    if (i + 1 < edges) x.successors = {"E" + std::to_string(i + 2)};
    e.push_back(x);
  }
  return std::make_shared<const net::RoadNetwork>("flat", e);
}

SimConfig quiet(double duration = 600.0) {
  SimConfig c;
  c.total_vehicles = 1;
  c.insertion_rate = 1e-9;  // no demand inside the horizon
  c.duration = duration;
  c.dawdling = false;
  c.warmup = 0.0;
  return c;
}

VehicleState car(const std::string& id, double x, int lane, double speed, double limit = 25.0) {
  VehicleState v;
  v.id = id;
  v.params = default_car(limit);
  v.params.sigma = 0.0;
  v.x = x;
  v.lane = lane;
  v.speed = speed;
  return v;
}

}  // namespace

TEST(SafeSpeed, Examples) {
  EXPECT_DOUBLE_EQ(safe_speed(0, 0, 4.5, 1), 0.0);
  // -4.5 + sqrt(4.5^2 + 10^2 + 2*4.5*20)
  EXPECT_NEAR(safe_speed(20, 10, 4.5, 1), -4.5 + std::sqrt(300.25), 1e-12);
  EXPECT_NEAR(safe_speed(20, 10, 4.5, 1), 12.83, 5e-3);
  EXPECT_NEAR(safe_speed(5, 0, 4.5, 1), 3.58, 5e-3);
}

TEST(SafeSpeed, MonotoneAndClamped) {
  double prev = -1;
  for (double g = -5; g < 200; g += 0.7) {
    const double s = safe_speed(g, 12, 4.5, 1);
    EXPECT_GE(s, 0.0);
    EXPECT_GE(s, prev);
    prev = s;
  }
  prev = -1;
  for (double vl = 0; vl < 40; vl += 0.5) {
    const double s = safe_speed(30, vl, 4.5, 1);
    EXPECT_GE(s, prev);
    prev = s;
  }
}

TEST(Step, FreeFlowFirstStep) {
  World w(flat(), quiet());
  w.add_vehicle(car("a", 0, 0, 0));
  w.step();
  EXPECT_DOUBLE_EQ(w.vehicles()[0].speed, 1.3);
}

TEST(Step, FreeFlowClosedForm) {
  const double a = 2.6, dt = 0.5, vmax = 25.0;
  World w(flat(), quiet());
  w.add_vehicle(car("a", 0, 0, 0));
  const int ramp = static_cast<int>(std::floor(vmax / (a * dt)));
  for (int k = 1; k <= 150; ++k) {
    w.step();
    double x, v;
    if (k <= ramp) {
      v = k * a * dt;
      x = a * dt * dt * k * (k + 1) / 2.0;
    } else {
      v = vmax;
      x = a * dt * dt * ramp * (ramp + 1) / 2.0 + (k - ramp) * vmax * dt;
    }
    const auto& s = w.vehicles()[0];
    ASSERT_NEAR(s.speed, v, 1e-9 * v);
    ASSERT_NEAR(s.x, x, 1e-9 * x) << "step " << k;
  }
}

TEST(Step, TwoVehiclesNeverOverlap) {
  for (double gap : {2.0, 10.0, 40.0}) {
    for (double vf : {0.0, 15.0, 25.0}) {
      World w(flat(), quiet());
      w.add_vehicle(car("lead", 100 + gap + 5, 0, 0));
      w.add_vehicle(car("follow", 100, 0, std::min(vf, safe_speed(gap, 0, 4.5, 1))));
      for (int k = 0; k < 200; ++k) {
        w.step();
        const auto& l = w.vehicles()[0];
        const auto& f = w.vehicles()[1];
        if (l.lane != f.lane) continue;
        const auto& ahead = l.x > f.x ? l : f;
        const auto& behind = l.x > f.x ? f : l;
        ASSERT_GE(ahead.rear() - behind.x, 0.0);
      }
      EXPECT_TRUE(w.collisions().empty());
    }
  }
}

TEST(Step, Determinism) {
  auto run = [] {
    SimConfig c;
    c.total_vehicles = 200;
    c.insertion_rate = 0.5;
    c.duration = 400;
    c.seed = 7;
    c.hgv_share = 0.2;
    World w(flat(), c);
    std::vector<double> trace;
    w.on_step = [&](double, const std::vector<VehicleState>& vs) {
      for (const auto& v : vs) trace.push_back(v.x + 1e3 * v.lane + 1e6 * v.speed);
    };
    w.run_to_end();
    return trace;
  };
  EXPECT_EQ(run(), run());
}

TEST(Step, Conservation) {
  SimConfig c;
  c.total_vehicles = 300;
  c.insertion_rate = 1.0;
  c.duration = 900;
  c.seed = 3;
  World w(flat(3), c);
  net::HazardEvent ev;
  ev.id = "obs";
  ev.kind = net::HazardKind::ObstacleOnRoad;
  ev.location = {"E2", 500};
  ev.extent = 10;
  ev.affected_lanes = {0};
  ev.start_time = 60;
  ev.end_time = 600;
  w.add_event(ev);
  double last_dist = 0;
  while (!w.done()) {
    w.step();
    const auto p = w.population();
    ASSERT_EQ(p.inserted, p.driving + p.collided_held + p.removed + p.finished);
    ASSERT_GE(w.kpis().vehicle_km(), last_dist);
    last_dist = w.kpis().vehicle_km();
  }
}

TEST(Spawn, ExactCountAndShares) {
  SimConfig c;
  c.total_vehicles = 500;
  c.insertion_rate = 500.0 / 3600.0;
  c.duration = 20000;
  c.hgv_share = 0.0;
  World w(flat(), c);
  w.run_to_end();
  EXPECT_EQ(w.population().inserted, 500);
  for (const auto& v : w.vehicles()) EXPECT_EQ(v.params.vclass, VehicleClass::Car);
}

TEST(Spawn, SameSeedSameInsertions) {
  auto run = [](std::uint64_t seed) {
    SimConfig c;
    c.total_vehicles = 100;
    c.insertion_rate = 0.3;
    c.duration = 600;
    c.hgv_share = 0.3;
    c.equipped_fraction = 0.5;
    c.seed = seed;
    World w(flat(), c);
    w.run_to_end();
    std::vector<std::tuple<double, int, bool>> out;
    for (const auto& v : w.vehicles()) out.emplace_back(v.inserted_at, static_cast<int>(v.params.vclass), v.equipped);
    return out;
  };
  EXPECT_EQ(run(5), run(5));
  EXPECT_NE(run(5), run(6));
}

TEST(Collisions, NegativeGapRecorded) {
  World w(flat(), quiet());
  w.add_vehicle(car("lead", 105.0, 0, 0));      // rear at 100.0
  w.add_vehicle(car("follow", 100.5, 0, 0));
  const auto found = w.detect_collisions();
  ASSERT_EQ(found.size(), 1u);
  EXPECT_EQ(found[0].follower_id, "follow");
  EXPECT_EQ(found[0].leader_id, "lead");
  EXPECT_EQ(w.vehicles()[1].status, Status::Collided);
  EXPECT_EQ(w.vehicles()[1].speed, 0.0);
}

TEST(Collisions, PositiveGapsNone) {
  World w(flat(), quiet());
  w.add_vehicle(car("lead", 120.0, 0, 10));
  w.add_vehicle(car("follow", 100.0, 0, 10));
  EXPECT_TRUE(w.detect_collisions().empty());
}

TEST(Collisions, HeldThenRemoved) {
  auto cfg = quiet();
  World w(flat(), cfg);
  w.add_vehicle(car("lead", 105.0, 0, 0));
  w.add_vehicle(car("follow", 100.5, 0, 0));
  w.detect_collisions();
  for (int k = 0; k < 59; ++k) w.step();
  EXPECT_EQ(w.population().collided_held, 1);
  w.step();
  w.step();
  EXPECT_EQ(w.population().removed, 1);
}

TEST(LaneChange, NoIncentiveKeeps) {
  World w(flat(), quiet());
  w.add_vehicle(car("a", 500, 0, 20));
  EXPECT_EQ(w.plan_lane_change(0), LaneDecision::Keep);
}

TEST(LaneChange, ClosedLaneAheadIsMandatory) {
  World w(flat(), quiet());
  net::HazardEvent ev;
  ev.id = "rw";
  ev.kind = net::HazardKind::LaneClosure;
  ev.location = {"E2", 300};
  ev.extent = 200;
  ev.affected_lanes = {0};
  ev.end_time = 1000;
  w.add_event(ev);
  w.add_vehicle(car("a", 1000, 0, 20));  // 300 m upstream
  w.step();
  ASSERT_EQ(w.lane_changes().size(), 1u);
  EXPECT_TRUE(w.lane_changes()[0].mandatory);
  EXPECT_EQ(w.lane_changes()[0].from, 0);
  EXPECT_EQ(w.lane_changes()[0].to, 1);
}

TEST(LaneChange, StoppedLeaderTriggersChange) {
  World w(flat(), quiet());
  w.add_vehicle(car("stopped", 545, 0, 0));  // rear 40 m ahead of the follower
  w.add_vehicle(car("me", 500, 0, 20));
  w.add_vehicle(car("far", 900, 1, 25));
  // own lane: safe speed toward a standstill 40 m ahead; lane 1: cap 25
  const double here = safe_speed(40, 0, 4.5, 1);
  EXPECT_LT(here + 0.5, 25.0);
  EXPECT_EQ(w.plan_lane_change(1), LaneDecision::Left);
}

TEST(SafetyProperty, NoCollisionsWithoutDawdling) {
  SimConfig c;
  c.total_vehicles = 600;
  c.insertion_rate = 1.0;
  c.duration = 1200;
  c.dawdling = false;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    c.seed = seed;
    World w(flat(3, 2), c);
    w.run_to_end();
    EXPECT_TRUE(w.collisions().empty()) << "seed " << seed;
  }
}

TEST(SimConfigJson, RoundTripAndValidation) {
  SimConfig c;
  c.dt = 0.25;
  c.seed = 99;
  const auto back = sim_config_from_json(to_json(c));
  EXPECT_EQ(back.dt, 0.25);
  EXPECT_EQ(back.seed, 99u);
  EXPECT_THROW(sim_config_from_json({{"dt", 2.0}}), ValidationError);
  EXPECT_THROW(sim_config_from_json({{"equipped_fraction", 1.5}}), ValidationError);
}

TEST(Events, FreeTextHasNoSpeedEffect) {
  World w(flat(), quiet());
  net::HazardEvent ev;
  ev.id = "ivs";
  ev.kind = net::HazardKind::FreeTextIvs;
  ev.location = {"E1", 0};
  ev.extent = 3000;
  ev.end_time = 1000;
  ev.free_text = "works";
  w.add_event(ev);
  w.add_vehicle(car("a", 100, 0, 20));
  w.step();
  EXPECT_DOUBLE_EQ(w.effective_limit(w.vehicles()[0]), 25.0);
}

TEST(Events, SlipperyRoadScalesLimit) {
  World w(flat(), quiet());
  net::HazardEvent ev;
  ev.id = "wcw";
  ev.kind = net::HazardKind::SlipperyRoad;
  ev.location = {"E1", 0};
  ev.extent = 3000;
  ev.severity = 0.6;
  ev.end_time = 1000;
  w.add_event(ev);
  w.add_vehicle(car("a", 100, 0, 20));
  w.step();
  // inside the zone the driver sees it (0.6) and the surface caps it (0.6)
  EXPECT_NEAR(w.effective_limit(w.vehicles()[0]), 25.0 * 0.6 * 0.6, 1e-9);
}
