#include "citsim/response.hpp"

#include <algorithm>

#include "citsim/error.hpp"

namespace citsim::response {

using net::HazardKind;
using nlohmann::json;

void ResponseProfile::validate() const {
  auto factor_ok = [](double f) { return f > 0.0 && f <= 1.0; };
  if (!factor_ok(informed_factor_at_event_approach) || !factor_ok(informed_factor_on_event_edge) ||
      !factor_ok(uninformed_factor))
    throw ValidationError("response factors must lie in (0, 1]");
  if (!(informed_ramp_start > 0.0) || !(uninformed_sight_distance > 0.0) ||
      !(informed_mandatory_lc_distance > 0.0))
    throw ValidationError("response distances must be > 0");
}

json to_json(const ResponseProfile& p) {
  json kinds = json::array();
  for (auto k : p.suppress_discretionary_lc) kinds.push_back(net::to_string(k));
  return json{{"informed_ramp_start", p.informed_ramp_start},
              {"informed_factor_at_event_approach", p.informed_factor_at_event_approach},
              {"informed_factor_on_event_edge", p.informed_factor_on_event_edge},
              {"uninformed_sight_distance", p.uninformed_sight_distance},
              {"uninformed_factor", p.uninformed_factor},
              {"smooth_ramp", p.smooth_ramp},
              {"suppress_discretionary_lc", kinds},
              {"informed_mandatory_lc_distance", p.informed_mandatory_lc_distance}};
}

ResponseProfile profile_from_json(const json& j, ResponseProfile p) {
  try {
    p.informed_ramp_start = j.value("informed_ramp_start", p.informed_ramp_start);
    p.informed_factor_at_event_approach =
        j.value("informed_factor_at_event_approach", p.informed_factor_at_event_approach);
    p.informed_factor_on_event_edge =
        j.value("informed_factor_on_event_edge", p.informed_factor_on_event_edge);
    p.uninformed_sight_distance = j.value("uninformed_sight_distance", p.uninformed_sight_distance);
    p.uninformed_factor = j.value("uninformed_factor", p.uninformed_factor);
    p.smooth_ramp = j.value("smooth_ramp", p.smooth_ramp);
    p.informed_mandatory_lc_distance =
        j.value("informed_mandatory_lc_distance", p.informed_mandatory_lc_distance);
    if (j.contains("suppress_discretionary_lc")) {
      p.suppress_discretionary_lc.clear();
      for (const auto& k : j.at("suppress_discretionary_lc"))
        p.suppress_discretionary_lc.insert(net::hazard_kind_from_string(k.get<std::string>()));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("response profile: ") + e.what());
  }
  p.validate();
  return p;
}

double speed_factor(HazardKind kind, bool informed, const Approach& where,
                    const ResponseProfile& p) {
  if (kind == HazardKind::FreeTextIvs) return 1.0;
  const double d = std::max(0.0, where.d_upstream);
  if (informed) {
    if (where.on_event) return p.informed_factor_on_event_edge;
    if (d > p.informed_ramp_start) return 1.0;
    if (!p.smooth_ramp) return p.informed_factor_at_event_approach;
    const double frac = d / p.informed_ramp_start;  // 1 at ramp start, 0 at approach point
    return p.informed_factor_at_event_approach + (1.0 - p.informed_factor_at_event_approach) * frac;
  }
  if (where.on_event || d <= p.uninformed_sight_distance) return p.uninformed_factor;
  return 1.0;
}

LanePolicy lane_policy(HazardKind kind, bool informed, double d_to_event, bool in_affected_lane,
                       const ResponseProfile& p) {
  const double d = std::max(0.0, d_to_event);
  const bool blocking = net::blocks_lanes(kind);
  if (informed) {
    if (blocking && in_affected_lane && d <= p.informed_mandatory_lc_distance)
      return LanePolicy::BeginMandatory;
    if (p.suppress_discretionary_lc.count(kind) && d <= p.informed_ramp_start)
      return LanePolicy::SuppressDiscretionary;
    return LanePolicy::Normal;
  }
  if (blocking && in_affected_lane && d <= p.uninformed_sight_distance)
    return LanePolicy::BeginMandatory;
  return LanePolicy::Normal;
}

}  // namespace citsim::response
