#include <gtest/gtest.h>

#include <algorithm>

#include "citsim/error.hpp"
#include "citsim/response.hpp"

using namespace citsim;
using namespace citsim::response;
using net::HazardKind;

TEST(SpeedFactor, InformedAnchors) {
  const ResponseProfile p;
  EXPECT_EQ(speed_factor(HazardKind::SlipperyRoad, true, {600, false}, p), 1.0);
  EXPECT_EQ(speed_factor(HazardKind::SlipperyRoad, true, {500, false}, p), 1.0);
  EXPECT_EQ(speed_factor(HazardKind::SlipperyRoad, true, {0, false}, p), 0.8);
  EXPECT_EQ(speed_factor(HazardKind::SlipperyRoad, true, {0, true}, p), 0.6);
  EXPECT_NEAR(speed_factor(HazardKind::SlipperyRoad, true, {250, false}, p), 0.9, 1e-12);
}

TEST(SpeedFactor, InformedRampIsMonotone) {
  const ResponseProfile p;
  double prev = 0;
  for (double d = 0; d <= 700; d += 5) {
    const double f = speed_factor(HazardKind::LaneClosure, true, {d, false}, p);
    EXPECT_GE(f, prev);
    prev = f;
  }
}

TEST(SpeedFactor, StepVariant) {
  ResponseProfile p;
  p.smooth_ramp = false;
  EXPECT_EQ(speed_factor(HazardKind::SlipperyRoad, true, {250, false}, p), 0.8);
  EXPECT_EQ(speed_factor(HazardKind::SlipperyRoad, true, {501, false}, p), 1.0);
}

TEST(SpeedFactor, UninformedStep) {
  const ResponseProfile p;
  EXPECT_EQ(speed_factor(HazardKind::ObstacleOnRoad, false, {100, false}, p), 0.6);
  EXPECT_EQ(speed_factor(HazardKind::ObstacleOnRoad, false, {150, false}, p), 0.6);
  EXPECT_EQ(speed_factor(HazardKind::ObstacleOnRoad, false, {150.001, false}, p), 1.0);
  EXPECT_EQ(speed_factor(HazardKind::ObstacleOnRoad, false, {200, false}, p), 1.0);
  EXPECT_EQ(speed_factor(HazardKind::ObstacleOnRoad, false, {0, true}, p), 0.6);
}

TEST(SpeedFactor, FreeTextHasNoEffect) {
  const ResponseProfile p;
  for (bool informed : {true, false})
    for (double d : {0.0, 100.0, 300.0}) EXPECT_EQ(speed_factor(HazardKind::FreeTextIvs, informed, {d, d == 0}, p), 1.0);
}

TEST(LanePolicyTest, Cases) {
  const ResponseProfile p;
  EXPECT_EQ(lane_policy(HazardKind::SlipperyRoad, true, 300, false, p), LanePolicy::SuppressDiscretionary);
  EXPECT_EQ(lane_policy(HazardKind::TrafficJamAhead, true, 300, true, p), LanePolicy::SuppressDiscretionary);
  EXPECT_EQ(lane_policy(HazardKind::SlipperyRoad, true, 800, false, p), LanePolicy::Normal);
  EXPECT_EQ(lane_policy(HazardKind::LaneClosure, true, 450, true, p), LanePolicy::BeginMandatory);
  EXPECT_EQ(lane_policy(HazardKind::LaneClosure, true, 450, false, p), LanePolicy::SuppressDiscretionary);
  EXPECT_EQ(lane_policy(HazardKind::ObstacleOnRoad, true, 450, false, p), LanePolicy::Normal);
  EXPECT_EQ(lane_policy(HazardKind::LaneClosure, false, 450, true, p), LanePolicy::Normal);
  EXPECT_EQ(lane_policy(HazardKind::LaneClosure, false, 100, true, p), LanePolicy::BeginMandatory);
  EXPECT_EQ(lane_policy(HazardKind::SlipperyRoad, false, 100, true, p), LanePolicy::Normal);
}

namespace {

// constant braking from the first point the cap bites, one step of reaction, meeting every cap ahead
double required_decel(HazardKind kind, bool informed, double v0, const ResponseProfile& p) {
  const double dt = 1.0;
  double know = -1;
  for (double d = 2000; d >= 0; d -= 1.0)
    if (speed_factor(kind, informed, {d, false}, p) < 1.0) { know = d; break; }
  if (know < 0) know = 0;
  double worst = 0;
  auto need = [&](double d, bool on) {
    const double cap = speed_factor(kind, informed, {d, on}, p) * v0;
    const double room = know - d + v0 * dt;
    worst = std::max(worst, (v0 * v0 - cap * cap) / (2 * room));
  };
  for (double d = know; d >= 0; d -= 0.5) need(d, false);
  need(0, true);
  return worst;
}

}  // namespace

TEST(SpeedFactor, InformedNeedsLessBraking) {
  const ResponseProfile p;
  for (auto kind : {HazardKind::SlipperyRoad, HazardKind::TrafficJamAhead, HazardKind::LaneClosure,
                    HazardKind::ObstacleOnRoad})
    for (double v0 = 10; v0 <= 45; v0 += 2.5) {
      const double a_inf = required_decel(kind, true, v0, p);
      const double a_un = required_decel(kind, false, v0, p);
      EXPECT_LT(a_inf, a_un) << net::to_string(kind) << " v0 " << v0;
    }
  ResponseProfile step = p;
  step.smooth_ramp = false;
  EXPECT_LT(required_decel(HazardKind::LaneClosure, true, 30, step),
            required_decel(HazardKind::LaneClosure, false, 30, step));
}

TEST(Profile, JsonOverlayAndValidation) {
  const auto p = profile_from_json({{"uninformed_sight_distance", 200.0}});
  EXPECT_EQ(p.uninformed_sight_distance, 200.0);
  EXPECT_EQ(p.informed_ramp_start, 500.0);
  const auto back = profile_from_json(to_json(p));
  EXPECT_EQ(back.suppress_discretionary_lc, p.suppress_discretionary_lc);
  ResponseProfile bad;
  bad.informed_factor_on_event_edge = 1.5;
  EXPECT_THROW(bad.validate(), ValidationError);
}
