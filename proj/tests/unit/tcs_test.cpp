#include <gtest/gtest.h>

#include "citsim/error.hpp"
#include "citsim/tcs.hpp"

using namespace citsim;
using namespace citsim::tcs;

namespace {

std::shared_ptr<const net::RoadNetwork> flat(int edges = 5) {
  std::vector<net::Edge> e;
  for (int i = 0; i < edges; ++i) {
    net::Edge x{"E" + std::to_string(i + 1), 1000.0, 2, 25.0, 0.0, {}};
    if (i + 1 < edges) x.successors = {"E" + std::to_string(i + 2)};
    e.push_back(x);
  }
  return std::make_shared<const net::RoadNetwork>("flat", e);
}

v2x::Cam cam(const std::string& id, double t, double speed, net::LinearRef pos = {"E2", 500},
             sim::VehicleClass c = sim::VehicleClass::Car) {
  return {id, t, pos, 0, speed, 0.0, c};
}

net::HazardEvent event(const std::string& id) {
  net::HazardEvent ev;
  ev.id = id;
  ev.kind = net::HazardKind::LaneClosure;
  ev.location = {"E3", 100};
  ev.extent = 200;
  ev.affected_lanes = {0};
  ev.end_time = 1000;
  return ev;
}

}  // namespace

TEST(Tcs, InstantaneousDeceleration) {
  TrafficControlServer t(flat());
  t.ingest_cam(cam("a", 0, 30));
  t.ingest_cam(cam("a", 1, 28));
  EXPECT_DOUBLE_EQ(t.stations().at("a").smoothed_decel, -2.0);
}

TEST(Tcs, StaleCamDropped) {
  TrafficControlServer t(flat());
  t.ingest_cam(cam("a", 5, 20));
  t.ingest_cam(cam("a", 4, 10));
  EXPECT_EQ(t.stale_cams(), 1);
  EXPECT_DOUBLE_EQ(t.stations().at("a").last_cam.speed, 20);
}

TEST(Tcs, AbruptDeceleration) {
  TrafficControlServer t(flat());
  double v = 30;
  std::vector<IncidentCandidate> raised;
  for (int k = 0; k <= 5; ++k) {  // -4.5 m/s^2 sampled every 0.5 s for 2.5 s
    t.ingest_cam(cam("a", k * 0.5, v));
    v -= 4.5 * 0.5;
    for (auto& c : t.detect_incidents(k * 0.5)) raised.push_back(c);
  }
  ASSERT_EQ(raised.size(), 1u);
  EXPECT_EQ(raised[0].kind, CandidateKind::AbruptDeceleration);
  EXPECT_FALSE(raised[0].confirmed);  // a single station
}

TEST(Tcs, MildBrakingRaisesNothing) {
  TrafficControlServer t(flat());
  double v = 30;
  for (int k = 0; k <= 20; ++k) {
    t.ingest_cam(cam("a", k * 0.5, v));
    v -= 3.0 * 0.5;
    EXPECT_TRUE(t.detect_incidents(k * 0.5).empty());
  }
}

TEST(Tcs, CamSilence) {
  TrafficControlServer t(flat());
  t.ingest_cam(cam("a", 0, 25));
  EXPECT_TRUE(t.detect_incidents(5.0).empty());
  const auto r = t.detect_incidents(6.0);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].kind, CandidateKind::CamSilence);
  EXPECT_TRUE(t.detect_incidents(7.0).empty());  // raised once
}

TEST(Tcs, SilenceNearExitIgnored) {
  TrafficControlServer t(flat());
  t.ingest_cam(cam("a", 0, 25, {"E5", 850}));  // 150 m before the end
  EXPECT_TRUE(t.detect_incidents(6.0).empty());
}

TEST(Tcs, SilenceOfSlowVehicleIgnored) {
  TrafficControlServer t(flat());
  t.ingest_cam(cam("a", 0, 3));
  for (const auto& c : t.detect_incidents(6.0)) EXPECT_NE(c.kind, CandidateKind::CamSilence);
}

TEST(Tcs, StationaryVehicleConfirmedAndPublished) {
  TrafficControlServer t(flat());
  Actions a;
  double t_pub = -1;
  for (int k = 0; k <= 40 && t_pub < 0; ++k) {
    const double now = k * 0.5;
    t.ingest_cam(cam("a", now, 0.0));
    a = t.step(now);
    if (!a.publish.empty()) t_pub = now;
  }
  ASSERT_GE(t_pub, 0);
  EXPECT_LE(t_pub, t.thresholds().p_th + 2.0);
  EXPECT_EQ(t.confirmed_count(), 1);
  EXPECT_EQ(a.publish[0].affected_lanes, std::set<int>{0});
  EXPECT_EQ(a.publish[0].location, (net::LinearRef{"E2", 500}));
}

TEST(Tcs, TwoStationsConfirmDeceleration) {
  TrafficControlServer t(flat());
  double v = 30;
  int confirmed = 0;
  for (int k = 0; k <= 6; ++k) {
    t.ingest_cam(cam("a", k * 0.5, v, {"E2", 500}));
    t.ingest_cam(cam("b", k * 0.5, v, {"E2", 620}));
    v -= 5.0 * 0.5;
    for (auto& c : t.detect_incidents(k * 0.5)) confirmed += c.confirmed;
  }
  EXPECT_GE(confirmed, 1);
}

TEST(Tcs, PublishTwiceRefreshes) {
  TrafficControlServer t(flat());
  auto ev = event("rw");
  const auto a = t.publish_denm(ev, 10);
  ev.end_time = 2000;
  const auto b = t.publish_denm(ev, 20);
  EXPECT_EQ(a.event_id, b.event_id);
  EXPECT_GT(b.valid_until, a.valid_until);
  EXPECT_GT(b.gen_time, a.gen_time);
  EXPECT_EQ(t.active_denms(), std::vector<std::string>{"rw"});
}

TEST(Tcs, CancelUnknownThrows) {
  TrafficControlServer t(flat());
  EXPECT_THROW(t.cancel_denm("nope", 0), NotFoundError);
  t.publish_denm(event("rw"), 0);
  EXPECT_TRUE(t.cancel_denm("rw", 5).cancellation);
  EXPECT_THROW(t.cancel_denm("rw", 6), NotFoundError);
}

TEST(Tcs, DecisionLogRecordsPublication) {
  TrafficControlServer t(flat());
  std::vector<nlohmann::json> log;
  t.decision_log = [&](const nlohmann::json& j) { log.push_back(j); };
  t.publish_denm(event("rw"), 0);
  ASSERT_FALSE(log.empty());
}

TEST(Pvd, MeanAndHgvCount) {
  const auto net = flat();
  std::vector<v2x::Cam> cams = {
      cam("a", 1, 20, {"E1", 10}), cam("b", 2, 30, {"E1", 20}), cam("c", 3, 25, {"E1", 30}),
      cam("d", 4, 25, {"E1", 40}, sim::VehicleClass::Hgv), cam("e", 99, 0, {"E1", 40}),
      cam("f", 5, 10, {"E2", 40})};
  const auto agg = aggregate_pvd(cams, 0, 60, *net);
  ASSERT_EQ(agg.size(), 2u);
  EXPECT_EQ(agg[0].edge_id, "E1");
  EXPECT_DOUBLE_EQ(agg[0].mean_speed, 25.0);
  EXPECT_EQ(agg[0].vehicle_count, 4);
  EXPECT_EQ(agg[0].hgv_count, 1);
  EXPECT_THROW(aggregate_pvd(cams, 5, 5, *net), ValidationError);
}

TEST(Thresholds, JsonAndValidation) {
  Thresholds th;
  th.p_th = 12;
  EXPECT_DOUBLE_EQ(thresholds_from_json(to_json(th)).p_th, 12);
  th.n_conf = 0;
  EXPECT_THROW(th.validate(), ValidationError);
}
