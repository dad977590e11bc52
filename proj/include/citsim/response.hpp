#pragma once

#include <set>

#include <json.hpp>

#include "citsim/netmodel.hpp"

namespace citsim::response {

/// Driver adaptation constants for informed (C-ITS) and uninformed drivers.
struct ResponseProfile {
  double informed_ramp_start = 500.0;               // m before the event approach point
  double informed_factor_at_event_approach = 0.8;
  double informed_factor_on_event_edge = 0.6;
  double uninformed_sight_distance = 150.0;         // m
  double uninformed_factor = 0.6;
  /// false selects a step to the approach factor at ramp_start instead of a ramp
  bool smooth_ramp = true;
  std::set<net::HazardKind> suppress_discretionary_lc{net::HazardKind::SlipperyRoad,
                                                      net::HazardKind::TrafficJamAhead,
                                                      net::HazardKind::LaneClosure};
  double informed_mandatory_lc_distance = 500.0;    // m

  void validate() const;
};

nlohmann::json to_json(const ResponseProfile& p);
/// Applies the keys present in `j` on top of `base`.
ResponseProfile profile_from_json(const nlohmann::json& j, ResponseProfile base = {});

/// Where a vehicle stands relative to an event.
///
/// For informed drivers `d_upstream` is measured to the event approach point,
/// the start of the edge holding the event, and `on_event` is set from there
/// through the end of the extent. For uninformed drivers `d_upstream` is
/// measured to the event start and `on_event` means inside the extent.
struct Approach {
  double d_upstream = 0.0;
  bool on_event = false;
};

/// Multiplier on the speed limit. FreeTextIvs never changes speed.
double speed_factor(net::HazardKind kind, bool informed, const Approach& where,
                    const ResponseProfile& profile);

enum class LanePolicy { Normal, SuppressDiscretionary, BeginMandatory };

/// `d_to_event` is the distance to the event start (0 inside the extent).
LanePolicy lane_policy(net::HazardKind kind, bool informed, double d_to_event,
                       bool in_affected_lane, const ResponseProfile& profile);

}  // namespace citsim::response
