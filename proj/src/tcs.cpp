#include "citsim/tcs.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "citsim/error.hpp"

namespace citsim::tcs {

using nlohmann::json;

void Thresholds::validate() const {
  const bool ok = a_th > 0 && d_th >= 0 && s_th > 0 && v_min >= 0 && v_stop > 0 && p_th >= 0 && n_conf >= 1 &&
                  r_conf >= 0 && exit_margin >= 0 && alpha > 0 && alpha <= 1 && v_clear > v_stop && c_th >= 0 &&
                  candidate_ttl > 0 && incident_hold >= 0 && incident_extent >= 0 && stationary_extent >= 0 &&
                  relevance_distance > 0;
  if (!ok) throw ValidationError("TCS thresholds out of range");
}

json to_json(const Thresholds& t) {
  return json{{"a_th", t.a_th},
              {"d_th", t.d_th},
              {"s_th", t.s_th},
              {"v_min", t.v_min},
              {"v_stop", t.v_stop},
              {"p_th", t.p_th},
              {"n_conf", t.n_conf},
              {"r_conf", t.r_conf},
              {"exit_margin", t.exit_margin},
              {"alpha", t.alpha},
              {"v_clear", t.v_clear},
              {"c_th", t.c_th},
              {"candidate_ttl", t.candidate_ttl},
              {"incident_hold", t.incident_hold},
              {"incident_extent", t.incident_extent},
              {"stationary_extent", t.stationary_extent},
              {"relevance_distance", t.relevance_distance}};
}

Thresholds thresholds_from_json(const json& j, Thresholds t) {
  try {
    t.a_th = j.value("a_th", t.a_th);
    t.d_th = j.value("d_th", t.d_th);
    t.s_th = j.value("s_th", t.s_th);
    t.v_min = j.value("v_min", t.v_min);
    t.v_stop = j.value("v_stop", t.v_stop);
    t.p_th = j.value("p_th", t.p_th);
    t.n_conf = j.value("n_conf", t.n_conf);
    t.r_conf = j.value("r_conf", t.r_conf);
    t.exit_margin = j.value("exit_margin", t.exit_margin);
    t.alpha = j.value("alpha", t.alpha);
    t.v_clear = j.value("v_clear", t.v_clear);
    t.c_th = j.value("c_th", t.c_th);
    t.candidate_ttl = j.value("candidate_ttl", t.candidate_ttl);
    t.incident_hold = j.value("incident_hold", t.incident_hold);
    t.incident_extent = j.value("incident_extent", t.incident_extent);
    t.stationary_extent = j.value("stationary_extent", t.stationary_extent);
    t.relevance_distance = j.value("relevance_distance", t.relevance_distance);
  } catch (const json::exception& e) {
    throw ParseError(std::string("TCS thresholds: ") + e.what());
  }
  t.validate();
  return t;
}

std::string_view to_string(CandidateKind k) {
  switch (k) {
    case CandidateKind::AbruptDeceleration: return "AbruptDeceleration";
    case CandidateKind::CamSilence: return "CamSilence";
    case CandidateKind::StationaryVehicle: return "StationaryVehicle";
  }
  return "?";
}

std::vector<PvdAggregate> aggregate_pvd(std::span<const v2x::Cam> cams, double start, double end,
                                        const net::RoadNetwork& net) {
  if (!(end > start)) throw ValidationError("PVD window must have end > start");
  struct Acc {
    double sum = 0.0;
    int n = 0, hgv = 0;
  };
  std::map<std::string, Acc> by_edge;
  for (const auto& c : cams) {
    if (c.gen_time < start || c.gen_time >= end) continue;
    auto& a = by_edge[c.pos.edge_id];
    a.sum += c.speed;
    ++a.n;
    if (c.vclass == sim::VehicleClass::Hgv) ++a.hgv;
  }
  std::vector<PvdAggregate> out;
  // network order, not name order
  for (const auto& e : net.edges()) {
    auto it = by_edge.find(e.id);
    if (it == by_edge.end()) continue;
    out.push_back({e.id, start, end, it->second.sum / it->second.n, it->second.n, it->second.hgv});
  }
  return out;
}

TrafficControlServer::TrafficControlServer(std::shared_ptr<const net::RoadNetwork> network, Thresholds thresholds)
    : net_(std::move(network)), th_(thresholds) {
  if (!net_) throw ValidationError("TCS needs a network");
  th_.validate();
}

void TrafficControlServer::note(double t, std::string_view action, const json& extra) {
  if (!decision_log) return;
  json j{{"t", t}, {"action", action}};
  j.update(extra);
  decision_log(j);
}

void TrafficControlServer::ingest_cam(const v2x::Cam& cam) {
  auto found = index_.find(cam.station_id);
  const bool fresh = found == index_.end();
  if (fresh) found = index_.emplace(cam.station_id, &stations_[cam.station_id]).first;
  auto& st = *found->second;
  if (fresh) {
    st.station_id = cam.station_id;
  } else {
    if (cam.gen_time < st.last_cam.gen_time) {
      ++stale_;
      return;
    }
    const double dt = cam.gen_time - st.last_cam.gen_time;
    if (dt > 0.0) {
      const double inst = (cam.speed - st.last_cam.speed) / dt;
      st.smoothed_decel = st.smoothed_init ? th_.alpha * inst + (1.0 - th_.alpha) * st.smoothed_decel : inst;
      st.smoothed_init = true;
      if (st.smoothed_decel <= -th_.a_th) {
        // onset is the start of the interval in which the threshold was crossed
        if (!st.decel_onset) st.decel_onset = st.last_cam.gen_time;
      } else {
        st.decel_onset.reset();
      }
    }
  }
  if (cam.speed < th_.v_stop) {
    if (!st.low_speed_onset) st.low_speed_onset = cam.gen_time;
  } else {
    st.low_speed_onset.reset();
  }
  if (cam.speed > th_.v_clear) {
    if (!st.clear_onset) st.clear_onset = cam.gen_time;
  } else {
    st.clear_onset.reset();
  }
  st.last_cam = cam;
  st.last_seen = cam.gen_time;
  st.silence_raised = false;
}

IncidentCandidate& TrafficControlServer::raise(CandidateKind kind, const TrackedStation& st, double clock) {
  IncidentCandidate c;
  c.id = next_candidate_++;
  c.kind = kind;
  c.station_id = st.station_id;
  c.location = st.last_cam.pos;
  c.lane = st.last_cam.lane;
  c.raised_at = clock;
  candidates_.push_back(c);
  note(clock, "raised",
       {{"candidate", c.id}, {"kind", to_string(kind)}, {"station", c.station_id}, {"location", net::to_json(c.location)}});
  return candidates_.back();
}

std::vector<IncidentCandidate> TrafficControlServer::detect_incidents(double clock) {
  std::vector<IncidentCandidate> raised;
  const double chain_end = net_->chain_length(0);
  // one live candidate per (station, kind)
  std::set<std::pair<std::string, CandidateKind>> open;
  for (const auto& c : candidates_)
    if (c.live) open.insert({c.station_id, c.kind});
  for (auto& [id, st] : stations_) {
    const auto& cam = st.last_cam;
    if (st.decel_onset && clock - *st.decel_onset >= th_.d_th - 1e-9 &&
        !open.count({id, CandidateKind::AbruptDeceleration}))
      raised.push_back(raise(CandidateKind::AbruptDeceleration, st, clock));
    if (!st.silence_raised && clock - st.last_seen > th_.s_th) {
      st.silence_raised = true;
      if (cam.speed > th_.v_min && net_->locate(cam.pos).x < chain_end - th_.exit_margin &&
          !open.count({id, CandidateKind::CamSilence}))
        raised.push_back(raise(CandidateKind::CamSilence, st, clock));
    }
    if (st.low_speed_onset && cam.speed < th_.v_stop && clock - *st.low_speed_onset >= th_.p_th - 1e-9 &&
        !open.count({id, CandidateKind::StationaryVehicle}))
      raised.push_back(raise(CandidateKind::StationaryVehicle, st, clock));
  }
  // confirmation
  for (auto& c : candidates_) {
    if (!c.live || c.confirmed) continue;
    if (c.kind == CandidateKind::StationaryVehicle) {
      c.confirmed = true;
      continue;
    }
    const double x = net_->locate(c.location).x;
    std::set<std::string> near;
    for (const auto& o : candidates_)
      if (o.live && o.kind == c.kind && std::abs(net_->locate(o.location).x - x) <= th_.r_conf)
        near.insert(o.station_id);
    if (static_cast<int>(near.size()) >= th_.n_conf) c.confirmed = true;
  }
  for (auto& r : raised)
    for (const auto& c : candidates_)
      if (c.id == r.id) r.confirmed = c.confirmed;
  return raised;
}

TrafficControlServer::Incident* TrafficControlServer::incident_near(double x) {
  Incident* best = nullptr;
  double best_d = th_.r_conf;
  for (auto& [id, inc] : incidents_) {
    const double d = x < inc.start_x ? inc.start_x - x : (x > inc.end_x ? x - inc.end_x : 0.0);
    if (d <= best_d) {
      best_d = d;
      best = &inc;
    }
  }
  return best;
}

v2x::Denm TrafficControlServer::incident_denm(const IncidentCandidate& c, const std::string& id, double clock) const {
  v2x::Denm d;
  d.event_id = id;
  d.cause = net::HazardKind::ObstacleOnRoad;
  d.location = c.location;
  if (c.kind == CandidateKind::StationaryVehicle) {
    d.extent = th_.stationary_extent;
    d.affected_lanes = {c.lane};
  } else {
    d.extent = th_.incident_extent;
  }
  const auto pos = net_->locate(d.location);
  d.extent = std::min(d.extent, net_->chain_length(pos.chain) - pos.x);
  d.relevance_distance = th_.relevance_distance;
  d.gen_time = clock;
  d.valid_until = clock + 3600.0;
  return d;
}

v2x::Denm TrafficControlServer::publish_denm(const net::HazardEvent& ev, double clock) {
  net::validate(ev, *net_);
  auto it = incidents_.find(ev.id);
  if (it != incidents_.end()) {
    auto& d = it->second.denm;
    d.gen_time = clock;
    d.valid_until = std::max({d.valid_until, ev.end_time, clock + 1e-3});
    note(clock, "refreshed", {{"incident", ev.id}});
    return d;
  }
  v2x::Denm d;
  d.event_id = ev.id;
  d.cause = ev.kind;
  d.location = ev.location;
  d.extent = ev.extent;
  d.affected_lanes = ev.affected_lanes;
  d.relevance_distance = th_.relevance_distance;
  d.gen_time = clock;
  d.valid_until = std::max(ev.end_time, clock + 1e-3);
  d.free_text = ev.free_text;
  const double x = net_->locate(ev.location).x;
  incidents_[ev.id] = {d, x, x + ev.extent, false, -1.0};
  note(clock, "published", {{"incident", ev.id}, {"cause", net::to_string(ev.kind)}, {"origin", "operator"}});
  return d;
}

v2x::Denm TrafficControlServer::cancel_denm(const std::string& event_id, double clock) {
  auto it = incidents_.find(event_id);
  if (it == incidents_.end()) throw NotFoundError("no active DENM for event " + event_id);
  v2x::Denm d = it->second.denm;
  d.cancellation = true;
  d.gen_time = clock;
  incidents_.erase(it);
  for (auto& c : candidates_)
    if (c.incident_id == event_id) c.live = false;
  note(clock, "cancelled", {{"incident", event_id}});
  return d;
}

Actions TrafficControlServer::step(double clock) {
  detect_incidents(clock);
  for (auto& c : candidates_) {
    if (!c.live) continue;
    const auto& st = stations_.at(c.station_id);
    const bool resumed =
        st.clear_onset && st.last_cam.speed > th_.v_clear && clock - *st.clear_onset >= th_.c_th - 1e-9;
    if (resumed) {
      c.live = false;
      note(clock, "cleared", {{"candidate", c.id}, {"station", c.station_id}});
      continue;
    }
    if (!c.confirmed) {
      if (clock - c.raised_at > th_.candidate_ttl) c.live = false;
      continue;
    }
    if (!c.incident_id.empty()) continue;
    const double x = net_->locate(c.location).x;
    if (Incident* inc = incident_near(x)) {
      c.incident_id = inc->denm.event_id;
      note(clock, "merged", {{"candidate", c.id}, {"incident", c.incident_id}});
      continue;
    }
    const std::string id = "tcs-" + std::to_string(next_incident_++);
    c.incident_id = id;
    ++confirmed_count_;
    auto d = incident_denm(c, id, clock);
    incidents_[id] = {d, x, x + d.extent, true, -1.0};
    pending_.publish.push_back(d);
    note(clock, "confirmed",
         {{"candidate", c.id}, {"kind", to_string(c.kind)}, {"incident", id}, {"location", net::to_json(c.location)}});
  }
  // detected incidents end once they have been quiet for the hold time
  std::vector<std::string> ended;
  for (auto& [id, inc] : incidents_) {
    if (!inc.detected) continue;
    const bool any = std::any_of(candidates_.begin(), candidates_.end(),
                                 [&](const IncidentCandidate& c) { return c.live && c.incident_id == id; });
    if (any) {
      inc.quiet_since = -1.0;
    } else if (inc.quiet_since < 0.0) {
      inc.quiet_since = clock;
    } else if (clock - inc.quiet_since >= th_.incident_hold - 1e-9) {
      ended.push_back(id);
    }
  }
  for (const auto& id : ended) {
    cancel_denm(id, clock);
    pending_.cancel.push_back(id);
  }
  Actions out = std::move(pending_);
  pending_ = {};
  return out;
}

std::vector<std::string> TrafficControlServer::active_denms() const {
  std::vector<std::string> ids;
  for (const auto& [id, inc] : incidents_) ids.push_back(id);
  return ids;
}

}  // namespace citsim::tcs
