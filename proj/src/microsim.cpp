#include "citsim/microsim.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>

#include "citsim/error.hpp"

namespace citsim::sim {

using net::HazardKind;
using nlohmann::json;

namespace {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// dawdling draw in [0, 1), a pure function of (seed, vehicle, step)
double driver_draw(std::uint64_t seed, std::uint32_t serial, std::uint64_t step) {
  const std::uint64_t h = mix64(mix64(seed ^ 0xd4a1d4a1ull) ^ (std::uint64_t{serial} << 32 | (step & 0xffffffffull)));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}
constexpr double kGravity = 9.81;
constexpr double kMinGap = 0.5;   // m, bumper-to-bumper floor for lane changes
constexpr double kEntryGap = 2.5; // m, floor for insertion
constexpr double kInf = std::numeric_limits<double>::infinity();

using LaneMask = std::uint32_t;
LaneMask lane_bit(int lane) { return LaneMask{1} << lane; }
LaneMask lanes_mask(const std::set<int>& lanes, int lane_count) {
  if (lanes.empty()) return lane_count >= 32 ? ~LaneMask{0} : (lane_bit(lane_count) - 1);
  LaneMask m = 0;
  for (int l : lanes) m |= lane_bit(l);
  return m;
}
}  // namespace

std::string_view to_string(VehicleClass c) { return c == VehicleClass::Car ? "car" : "hgv"; }

VehicleParams default_car(double speed_limit) {
  return {VehicleClass::Car, 5.0, speed_limit, 2.6, 4.5, 9.0, 1.0, 0.5};
}

VehicleParams default_hgv(double speed_limit) {
  return {VehicleClass::Hgv, 12.0, std::min(speed_limit, 90.0 / 3.6), 1.3, 4.0, 7.0, 1.0, 0.5};
}

double safe_speed(double gap, double leader_speed, double b, double tau) {
  gap = std::max(0.0, gap);
  leader_speed = std::max(0.0, leader_speed);
  const double bt = b * tau;
  return -bt + std::sqrt(bt * bt + leader_speed * leader_speed + 2.0 * b * gap);
}

void SimConfig::validate() const {
  if (!(dt > 0.0 && dt <= 1.0)) throw ValidationError("dt must lie in (0, 1]");
  if (!(duration > 0.0)) throw ValidationError("duration must be > 0");
  if (total_vehicles <= 0) throw ValidationError("total_vehicles must be > 0");
  if (!(insertion_rate > 0.0)) throw ValidationError("insertion_rate must be > 0");
  auto frac = [](double f) { return f >= 0.0 && f <= 1.0; };
  if (!frac(hgv_share) || !frac(equipped_fraction))
    throw ValidationError("hgv_share and equipped_fraction must lie in [0, 1]");
  if (!(warmup >= 0.0) || !(collision_hold >= 0.0) || !(lane_change_cooldown >= 0.0) ||
      !(surprise_reaction_time >= 0.0) || !(surprise_duration >= 0.0) || !(lookahead_mandatory > 0.0) ||
      !(forced_merge_decel_factor > 0.0))
    throw ValidationError("simulation constants out of range");
}

json to_json(const SimConfig& c) {
  return json{{"dt", c.dt},
              {"duration", c.duration},
              {"total_vehicles", c.total_vehicles},
              {"insertion_rate", c.insertion_rate},
              {"hgv_share", c.hgv_share},
              {"equipped_fraction", c.equipped_fraction},
              {"seed", c.seed},
              {"warmup", c.warmup},
              {"lookahead_mandatory", c.lookahead_mandatory},
              {"lane_change_gain", c.lane_change_gain},
              {"lane_change_cooldown", c.lane_change_cooldown},
              {"collision_hold", c.collision_hold},
              {"surprise_reaction_time", c.surprise_reaction_time},
              {"surprise_duration", c.surprise_duration},
              {"forced_merge_decel_factor", c.forced_merge_decel_factor},
              {"dawdling", c.dawdling}};
}

SimConfig sim_config_from_json(const json& j, SimConfig c) {
  try {
    c.dt = j.value("dt", c.dt);
    c.duration = j.value("duration", c.duration);
    c.total_vehicles = j.value("total_vehicles", c.total_vehicles);
    c.insertion_rate = j.value("insertion_rate", c.insertion_rate);
    c.hgv_share = j.value("hgv_share", c.hgv_share);
    c.equipped_fraction = j.value("equipped_fraction", c.equipped_fraction);
    c.seed = j.value("seed", c.seed);
    c.warmup = j.value("warmup", c.warmup);
    c.lookahead_mandatory = j.value("lookahead_mandatory", c.lookahead_mandatory);
    c.lane_change_gain = j.value("lane_change_gain", c.lane_change_gain);
    c.lane_change_cooldown = j.value("lane_change_cooldown", c.lane_change_cooldown);
    c.collision_hold = j.value("collision_hold", c.collision_hold);
    c.surprise_reaction_time = j.value("surprise_reaction_time", c.surprise_reaction_time);
    c.surprise_duration = j.value("surprise_duration", c.surprise_duration);
    c.forced_merge_decel_factor = j.value("forced_merge_decel_factor", c.forced_merge_decel_factor);
    c.dawdling = j.value("dawdling", c.dawdling);
  } catch (const json::exception& e) {
    throw ParseError(std::string("sim config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

struct World::Context {
  double factor = 1.0;
  double friction = 1.0;   // physical braking multiplier (slippery surface)
  double slow_zone = 1.0;  // physical speed multiplier (jam)
  double caution = 1.0;    // multiplier on the planning deceleration
  bool suppress = false;
  bool mandatory = false;
  double mandatory_distance = kInf;
  double mandatory_trigger = 1.0;
  LaneMask avoid = 0;       // lanes known to be blocked ahead
  LaneMask slow_lanes = 0;  // lanes under a physical multiplier at this position
  double blocker_horizon = 0.0;
  std::uint64_t sighting = 0;  // unannounced hazards in view, by event index
};

World::World(std::shared_ptr<const net::RoadNetwork> network, SimConfig config,
             response::ResponseProfile profile, kpi::Co2Model co2)
    : net_(std::move(network)), config_(config), profile_(std::move(profile)), co2_(co2) {
  if (!net_) throw ValidationError("world needs a network");
  config_.validate();
  profile_.validate();
  if (net_->chain_count() != 1)
    throw ValidationError("simulation requires a network with exactly one carriageway chain");
  chain_length_ = net_->chain_length(0);
  for (std::size_t idx : net_->chain(0)) {
    const auto& e = net_->edges()[idx];
    limit_by_edge_.push_back(e.speed_limit);
    start_by_edge_.push_back(net_->edge_start(e.id));
    grade_by_edge_.push_back(e.gradient);
    lanes_by_edge_.push_back(e.lane_count);
    max_lanes_ = std::max(max_lanes_, e.lane_count);
  }
  if (max_lanes_ > 31) throw ValidationError("at most 31 lanes are supported");
  // lanes that end before the chain does act as permanent blockers
  for (int lane = 0; lane < max_lanes_; ++lane) {
    for (std::size_t k = 0; k < lanes_by_edge_.size(); ++k) {
      if (lanes_by_edge_[k] > lane) continue;
      std::size_t m = k;
      while (m < lanes_by_edge_.size() && lanes_by_edge_[m] <= lane) ++m;
      const double end = m < lanes_by_edge_.size() ? start_by_edge_[m] : chain_length_;
      if (k > 0) static_blockers_.push_back({start_by_edge_[k], end, lane, "lane-end"});
      k = m;
    }
  }
  blockers_.resize(max_lanes_);
  lanes_.resize(max_lanes_);
  std::seed_seq seq{static_cast<std::uint32_t>(config_.seed), static_cast<std::uint32_t>(config_.seed >> 32),
                    0x5eedu};
  demand_rng_.seed(seq);
  std::exponential_distribution<double> gap(config_.insertion_rate);
  next_arrival_ = gap(demand_rng_);
  rebuild_lanes();
}

void World::add_event(net::HazardEvent ev) {
  net::validate(ev, *net_);
  for (const auto& e : events_)
    if (e.id == ev.id) throw ValidationError("duplicate event id " + ev.id);
  events_.push_back(std::move(ev));
  event_state_.push_back(0);
}

bool World::end_event(const std::string& id) {
  for (std::size_t k = 0; k < events_.size(); ++k) {
    if (events_[k].id != id || event_state_[k] == 2) continue;
    events_[k].end_time = std::max(clock_, events_[k].start_time + 1e-9);
    if (event_state_[k] == 0) {
      event_state_[k] = 2;
      return true;
    }
    activate_events();
    return true;
  }
  return false;
}

bool World::event_active(const net::HazardEvent& ev) const {
  for (std::size_t k = 0; k < events_.size(); ++k)
    if (events_[k].id == ev.id) return event_state_[k] == 1;
  return false;
}

std::vector<net::HazardEvent> World::active_events() const {
  std::vector<net::HazardEvent> out;
  for (std::size_t k = 0; k < events_.size(); ++k)
    if (event_state_[k] == 1) out.push_back(events_[k]);
  return out;
}

void World::activate_events() {
  bool changed = false;
  for (std::size_t k = 0; k < events_.size(); ++k) {
    const auto& ev = events_[k];
    if (event_state_[k] == 0 && ev.start_time <= clock_ + 1e-9) {
      event_state_[k] = 1;
      changed = true;
      if (on_event_change) on_event_change(ev, true);
    }
    if (event_state_[k] == 1 && ev.end_time <= clock_ + 1e-9) {
      event_state_[k] = 2;
      changed = true;
      if (on_event_change) on_event_change(ev, false);
    }
  }
  if (!changed && steps_ > 0) return;
  active_.clear();
  for (auto& b : blockers_) b.clear();
  for (const auto& b : static_blockers_) blockers_[b.lane].push_back(b);
  for (std::size_t k = 0; k < events_.size(); ++k) {
    if (event_state_[k] != 1) continue;
    const auto& ev = events_[k];
    const double start = net_->locate(ev.location).x;
    const double end = std::min(start + ev.extent, chain_length_);
    active_.push_back({k, start, end});
    if (net::blocks_lanes(ev.kind))
      for (int lane : ev.affected_lanes)
        if (lane < max_lanes_) blockers_[lane].push_back({start, std::max(end, start + 0.1), lane, ev.id});
  }
  for (auto& b : blockers_)
    std::sort(b.begin(), b.end(), [](const Blocker& a, const Blocker& c) { return a.start < c.start; });
}

void World::set_notice(Notice n) { notices_[n.event_id] = std::move(n); }

void World::clear_notice(const std::string& id) {
  notices_.erase(id);
  for (auto& v : vehicles_) v.inbox.erase(id);
}

bool World::deliver(std::size_t i, const std::string& id) {
  auto& v = vehicles_.at(i);
  if (!v.equipped || v.status != Status::Driving || !notices_.count(id)) return false;
  return v.inbox.insert(id).second;
}

bool World::informed(const VehicleState& v, const std::string& id) const {
  return v.equipped && v.inbox.count(id) > 0;
}

std::size_t World::add_vehicle(VehicleState v) {
  if (v.lane < 0 || v.lane >= max_lanes_) throw ValidationError("lane out of range");
  if (v.id.empty()) v.id = "veh" + std::to_string(vehicles_.size());
  v.serial = static_cast<std::uint32_t>(vehicles_.size());
  v.inserted_at = clock_;
  const int delay = static_cast<int>(std::lround(config_.surprise_reaction_time / config_.dt));
  vehicles_.push_back(std::move(v));
  speed_history_.emplace_back(static_cast<std::size_t>(delay + 1), vehicles_.back().speed);
  new_speed_.push_back(0.0);
  ++pop_.inserted;
  rebuild_lanes();
  return vehicles_.size() - 1;
}

Population World::population() const {
  Population p = pop_;
  p.driving = p.collided_held = 0;
  for (int i : live_) {
    if (vehicles_[i].status == Status::Driving) ++p.driving;
    else if (vehicles_[i].status == Status::Collided) ++p.collided_held;
  }
  p.pending = static_cast<int>(pending_.size()) - pending_head_;
  return p;
}

void World::rebuild_lanes() {
  live_.clear();
  for (std::size_t i = 0; i < vehicles_.size(); ++i)
    if (vehicles_[i].status != Status::Finished) live_.push_back(static_cast<int>(i));
  resort_lanes();
}

void World::resort_lanes() {
  for (auto& l : lanes_) l.clear();
  for (int i : live_) lanes_[vehicles_[i].lane].push_back(i);
  // live_ keeps the previous order, so lanes are nearly sorted already
  auto before = [&](int a, int b) {
    if (vehicles_[a].x != vehicles_[b].x) return vehicles_[a].x > vehicles_[b].x;
    return a < b;
  };
  for (auto& l : lanes_) {
    for (std::size_t i = 1; i < l.size(); ++i) {
      const int key = l[i];
      std::size_t j = i;
      for (; j > 0 && before(key, l[j - 1]); --j) l[j] = l[j - 1];
      l[j] = key;
    }
  }
  live_.clear();
  for (const auto& l : lanes_) live_.insert(live_.end(), l.begin(), l.end());
  sync_lane_x();
}

void World::sync_lane_x() {
  lane_x_.resize(lanes_.size());
  for (std::size_t lane = 0; lane < lanes_.size(); ++lane) {
    lane_x_[lane].clear();
    for (int i : lanes_[lane]) lane_x_[lane].push_back(vehicles_[i].x);
  }
}

World::Leader World::leader_in_lane(int lane, double x, int self, bool see_blockers) const {
  Leader best;
  const auto& order = lanes_[lane];
  const auto& xs = lane_x_[lane];
  // first element whose front is not ahead of x
  auto k = static_cast<std::size_t>(
      std::partition_point(xs.begin(), xs.end(), [&](double xj) { return xj > x; }) - xs.begin());
  // the leader is the last element strictly ahead; skip self when it sits there
  while (k > 0) {
    --k;
    if (order[k] == self) continue;
    const auto& l = vehicles_[order[k]];
    best.gap = l.rear() - x;
    best.speed = l.speed;
    best.index = order[k];
    break;
  }
  if (see_blockers) {
    const auto& bl = blockers_[lane];
    auto bt = std::lower_bound(bl.begin(), bl.end(), x, [](const Blocker& b, double v) { return b.start < v; });
    if (bt != bl.end() && bt->start - x < best.gap) {
      best.gap = bt->start - x;
      best.speed = 0.0;
      best.index = -1;
      best.blocker = &*bt;
    }
  }
  return best;
}

World::Leader World::lag_in_lane(int lane, double x, int self) const {
  Leader lag;
  const auto& order = lanes_[lane];
  const auto& xs = lane_x_[lane];
  auto k = static_cast<std::size_t>(
      std::partition_point(xs.begin(), xs.end(), [&](double xj) { return xj > x; }) - xs.begin());
  for (; k < order.size(); ++k) {
    if (order[k] == self) continue;
    lag.index = order[k];
    lag.speed = vehicles_[order[k]].speed;
    break;
  }
  return lag;
}

bool World::lane_blocked_at(int lane, double x) const {
  if (lane < 0 || lane >= max_lanes_) return true;
  for (const auto& b : blockers_[lane])
    if (x > b.start - 1e-9 && x - 15.0 < b.end) return true;
  return false;
}

World::Context World::evaluate(const VehicleState& v) const {
  Context c;
  const int lane_count = max_lanes_;
  c.blocker_horizon = profile_.uninformed_sight_distance;
  bool alerted = false;

  for (const auto& [id, n] : notices_) {
    if (!v.equipped || !v.inbox.count(id)) continue;
    if (v.x > std::max(n.end, n.edge_end)) continue;
    alerted = true;
    response::Approach where{std::max(0.0, n.approach - v.x), v.x >= n.approach};
    c.factor = std::min(c.factor, response::speed_factor(n.kind, true, where, profile_));
    if (v.x > n.end) continue;
    const double d_event = std::max(0.0, n.start - v.x);
    const bool in_lane = !n.lanes.empty() && n.lanes.count(v.lane);
    switch (response::lane_policy(n.kind, true, d_event, in_lane, profile_)) {
      case response::LanePolicy::BeginMandatory:
        c.mandatory = true;
        if (d_event < c.mandatory_distance) {
          c.mandatory_distance = d_event;
          c.mandatory_trigger = profile_.informed_mandatory_lc_distance;
        }
        break;
      case response::LanePolicy::SuppressDiscretionary: c.suppress = true; break;
      case response::LanePolicy::Normal: break;
    }
    // around a lane closure the quiet stretch starts with the slowdown ramp
    const double d_quiet = !net::blocks_lanes(n.kind) ? d_event : where.on_event ? 0.0 : where.d_upstream;
    if (response::lane_policy(n.kind, true, d_quiet, false, profile_) == response::LanePolicy::SuppressDiscretionary)
      c.suppress = true;
    // a known blocked lane is never entered by choice anywhere upstream
    if (net::blocks_lanes(n.kind) && !n.lanes.empty()) {
      c.avoid |= lanes_mask(n.lanes, lane_count);
      c.blocker_horizon = std::max(c.blocker_horizon, d_event);
    }
    if (n.kind == HazardKind::SlipperyRoad && (where.on_event || where.d_upstream <= profile_.informed_ramp_start))
      c.caution = std::min(c.caution, n.severity);
  }

  for (const auto& h : active_) {
    const auto& ev = events_[h.ev];
    if (ev.kind == HazardKind::FreeTextIvs) continue;
    if (v.x > h.end) continue;
    const bool inside = v.x >= h.start;
    if (inside) {
      const LaneMask affected = lanes_mask(ev.affected_lanes, lane_count);
      if (ev.kind == HazardKind::SlipperyRoad) {
        c.slow_lanes |= affected;
        if (affected & lane_bit(v.lane)) c.friction = std::min(c.friction, ev.severity);
      } else if (ev.kind == HazardKind::TrafficJamAhead) {
        c.slow_lanes |= affected;
        if (affected & lane_bit(v.lane)) c.slow_zone = std::min(c.slow_zone, ev.severity);
      }
    }
    if (informed(v, ev.id)) continue;
    const double d = std::max(0.0, h.start - v.x);
    if (d > profile_.uninformed_sight_distance && !inside) continue;
    c.factor = std::min(c.factor, response::speed_factor(ev.kind, false, {d, inside}, profile_));
    const bool in_lane = ev.affects_lane(v.lane);
    if (response::lane_policy(ev.kind, false, d, in_lane, profile_) == response::LanePolicy::BeginMandatory) {
      c.mandatory = true;
      if (d < c.mandatory_distance) {
        c.mandatory_distance = d;
        c.mandatory_trigger = profile_.uninformed_sight_distance;
      }
    }
    if (net::blocks_lanes(ev.kind)) c.avoid |= lanes_mask(ev.affected_lanes, lane_count);
    if (!alerted && h.ev < 64) c.sighting |= std::uint64_t{1} << h.ev;
  }
  return c;
}

double World::speed_cap(const VehicleState& v, const Context& c) const {
  auto it = std::upper_bound(start_by_edge_.begin(), start_by_edge_.end(), std::min(v.x, chain_length_));
  const std::size_t k = it == start_by_edge_.begin() ? 0 : static_cast<std::size_t>(it - start_by_edge_.begin() - 1);
  const double limit = limit_by_edge_[std::min(k, limit_by_edge_.size() - 1)];
  return std::min(v.params.v_max, limit) * c.factor * c.friction * c.slow_zone;
}

double World::effective_limit(const VehicleState& v) const { return speed_cap(v, evaluate(v)); }

double World::perceived_speed(int leader, bool surprised) const {
  if (leader < 0) return 0.0;
  if (!surprised) return vehicles_[leader].speed;
  const auto& hist = speed_history_[leader];
  // the slot after the current one holds the oldest sample
  return hist[(steps_ + 1) % hist.size()];
}

LaneDecision World::plan_lane_change(std::size_t idx) const { return plan(idx, nullptr); }

LaneDecision World::plan(std::size_t idx, LanePlan* out) const {
  const auto& v = vehicles_.at(idx);
  if (v.status != Status::Driving) return LaneDecision::Keep;
  const int self = static_cast<int>(idx);
  const Context c = evaluate(v);
  const Leader own = leader_in_lane(v.lane, v.x, self);

  bool mandatory = c.mandatory;
  double distance = c.mandatory_distance;
  double trigger = c.mandatory_trigger;
  // lane ends and held crash vehicles ahead in the own lane
  if (own.gap <= config_.lookahead_mandatory) {
    const bool static_block = own.blocker != nullptr;
    const bool wreck = own.index >= 0 && vehicles_[own.index].status == Status::Collided;
    if ((static_block || wreck) && own.gap < distance) {
      mandatory = true;
      distance = own.gap;
      trigger = config_.lookahead_mandatory;
    }
  }
  if (out) out->mandatory = mandatory;
  if (!mandatory && c.suppress) return LaneDecision::Keep;
  if (!mandatory && clock_ - v.last_lane_change < config_.lane_change_cooldown) return LaneDecision::Keep;

  const double urgency = mandatory ? std::clamp(1.0 - distance / std::max(trigger, 1e-9), 0.0, 1.0) : 0.0;
  const double dt = config_.dt;

  auto gaps_ok = [&](int target) {
    if (target < 0 || target >= max_lanes_) return false;
    const double x_clamped = std::min(v.x, chain_length_);
    const auto k = static_cast<std::size_t>(
        std::upper_bound(start_by_edge_.begin(), start_by_edge_.end(), x_clamped) - start_by_edge_.begin() - 1);
    if (target >= lanes_by_edge_[std::min(k, lanes_by_edge_.size() - 1)]) return false;
    if (lane_blocked_at(target, v.x)) return false;
    if (c.avoid & lane_bit(target)) return false;
    const Leader lead = leader_in_lane(target, v.x, self);
    if (lead.gap < kMinGap) return false;
    const double b_self = v.params.decel + (v.params.emergency_decel - v.params.decel) * urgency;
    if (safe_speed(lead.gap, lead.speed, v.params.decel, v.params.tau) < v.speed - b_self * dt) return false;
    const Leader lag = lag_in_lane(target, v.x, self);
    if (lag.index >= 0) {
      const auto& f = vehicles_[lag.index];
      const double lag_gap = v.rear() - f.x;
      if (lag_gap < kMinGap) return false;
      const double forced = f.params.emergency_decel * config_.forced_merge_decel_factor;
      const double b_lag = f.params.decel + (forced - f.params.decel) * urgency;
      if (f.status == Status::Driving &&
          safe_speed(lag_gap, v.speed, f.params.decel, f.params.tau) < f.speed - b_lag * dt)
        return false;
    }
    return true;
  };

  // anticipated speed in a lane: cap there, limited by the visible leader
  auto anticipated = [&](int lane) {
    Context pc = c;
    if (!(pc.slow_lanes & lane_bit(lane))) {
      pc.friction = 1.0;
      pc.slow_zone = 1.0;
    }
    const double cap = speed_cap(v, pc);
    Leader l = leader_in_lane(lane, v.x, self, false);
    const auto& bl = blockers_[lane];
    auto bt = std::lower_bound(bl.begin(), bl.end(), v.x, [](const Blocker& b, double x) { return b.start < x; });
    if (bt != bl.end() && bt->start - v.x <= c.blocker_horizon && bt->start - v.x < l.gap) {
      l.gap = bt->start - v.x;
      l.speed = 0.0;
    }
    if (!std::isfinite(l.gap)) return cap;
    return std::min(cap, safe_speed(l.gap, l.speed, v.params.decel, v.params.tau));
  };

  const int left = v.lane + 1;
  const int right = v.lane - 1;
  if (mandatory) {
    const bool left_ok = gaps_ok(left);
    const bool right_ok = gaps_ok(right);
    if (left_ok && right_ok) return anticipated(left) >= anticipated(right) ? LaneDecision::Left : LaneDecision::Right;
    if (left_ok) return LaneDecision::Left;
    if (right_ok) return LaneDecision::Right;
    return LaneDecision::Keep;
  }

  const double here = anticipated(v.lane);
  double best_gain = config_.lane_change_gain;
  LaneDecision best = LaneDecision::Keep;
  for (auto [target, dir] : {std::pair{left, LaneDecision::Left}, std::pair{right, LaneDecision::Right}}) {
    if (target < 0 || target >= max_lanes_) continue;
    if (c.avoid & lane_bit(target)) continue;
    const double gain = anticipated(target) - here;
    if (gain > best_gain && gaps_ok(target)) {
      best_gain = gain;
      best = dir;
    }
  }
  return best;
}

void World::apply_lane_changes() {
  auto before = [&](int a, int b) {
    if (vehicles_[a].x != vehicles_[b].x) return vehicles_[a].x > vehicles_[b].x;
    return a < b;
  };
  // merge of the sorted lane orders
  std::vector<int> order, merged;
  order.reserve(live_.size());
  for (const auto& l : lanes_) {
    merged.clear();
    std::merge(order.begin(), order.end(), l.begin(), l.end(), std::back_inserter(merged), before);
    order.swap(merged);
  }
  order.erase(std::remove_if(order.begin(), order.end(),
                             [&](int i) { return vehicles_[i].status != Status::Driving; }),
              order.end());
  const bool counting = clock_ >= config_.warmup;
  for (int i : order) {
    LanePlan lp;
    const LaneDecision d = plan(static_cast<std::size_t>(i), &lp);
    auto& v = vehicles_[i];
    if (d == LaneDecision::Keep) continue;
    const int from = v.lane;
    const int to = d == LaneDecision::Left ? from + 1 : from - 1;
    const bool mandatory = lp.mandatory;
    auto& src = lanes_[from];
    const auto at = std::find(src.begin(), src.end(), i) - src.begin();
    src.erase(src.begin() + at);
    lane_x_[from].erase(lane_x_[from].begin() + at);
    auto& dst = lanes_[to];
    const auto pos = std::partition_point(dst.begin(), dst.end(),
                                          [&](int j) {
                                            return vehicles_[j].x > v.x || (vehicles_[j].x == v.x && j < i);
                                          }) -
                     dst.begin();
    dst.insert(dst.begin() + pos, i);
    lane_x_[to].insert(lane_x_[to].begin() + pos, v.x);
    v.lane = to;
    v.last_lane_change = clock_;
    lane_changes_.push_back({clock_, v.id, from, to, mandatory, ref_of(v)});
    if (counting) kpis_.add_lane_change();
  }
}

void World::update_speeds() {
  const double dt = config_.dt;
  for (int i : live_) {
    auto& v = vehicles_[i];
    if (v.status != Status::Driving) {
      new_speed_[i] = 0.0;
      continue;
    }
    const Context c = evaluate(v);
    if (const std::uint64_t fresh = c.sighting & ~v.sighted) {
      v.sighted |= fresh;
      v.surprised_until = clock_ + config_.surprise_duration;
    }
    const bool surprised = clock_ < v.surprised_until - 1e-9;
    const double cap = speed_cap(v, c);
    const Leader lead = leader_in_lane(v.lane, v.x, i);
    const double b_plan = v.params.decel * c.caution;
    double v_safe = kInf;
    if (std::isfinite(lead.gap)) {
      const double lead_speed = lead.index >= 0 ? perceived_speed(lead.index, surprised) : 0.0;
      v_safe = safe_speed(lead.gap, lead_speed, b_plan, v.params.tau);
    }
    const std::size_t k = static_cast<std::size_t>(
        std::upper_bound(start_by_edge_.begin(), start_by_edge_.end(), std::min(v.x, chain_length_)) -
        start_by_edge_.begin() - 1);
    const double grade = grade_by_edge_[std::min(k, grade_by_edge_.size() - 1)];
    const double accel = std::max(0.1 * v.params.accel, v.params.accel - kGravity * grade / 100.0);
    // speed caps are met with comfortable braking, leaders with up to emergency braking
    double v_des = std::min({v.speed + accel * dt, std::max(cap, v.speed - v.params.decel * dt), v_safe});
    v_des = std::max(v_des, v.speed - v.params.emergency_decel * c.friction * dt);
    v_des = std::max(v_des, 0.0);
    const double eta = driver_draw(config_.seed, v.serial, steps_);
    const double sigma = config_.dawdling ? v.params.sigma : 0.0;
    new_speed_[i] = std::max(0.0, v_des - eta * sigma * v.params.accel * dt);
  }
}

std::vector<CollisionRecord> World::detect_collisions() {
  std::vector<CollisionRecord> found;
  const double t = clock_ + config_.dt;
  for (int lane = 0; lane < max_lanes_; ++lane) {
    const auto& order = lanes_[lane];
    for (std::size_t k = 1; k < order.size(); ++k) {
      const auto& leader = vehicles_[order[k - 1]];
      auto& follower = vehicles_[order[k]];
      if (follower.status != Status::Driving) continue;
      if (follower.x > leader.rear() + 1e-9) {
        follower.x = std::max(follower.x - follower.speed * config_.dt, leader.rear());
        follower.status = Status::Collided;
        follower.speed = 0.0;
        follower.accel = 0.0;
        follower.collided_at = t;
        found.push_back({t, ref_of(follower), lane, follower.id, leader.id});
      }
    }
  }
  return found;
}

void World::step() {
  const double dt = config_.dt;
  resort_lanes();
  activate_events();
  apply_lane_changes();
  update_speeds();

  // move
  std::vector<double> old_x;
  old_x.reserve(live_.size());
  for (int i : live_) {
    auto& v = vehicles_[i];
    old_x.push_back(v.x);
    if (v.status != Status::Driving) continue;
    const double nv = new_speed_[i];
    v.accel = (nv - v.speed) / dt;
    v.speed = nv;
    v.x += nv * dt;
  }

  const bool counting = clock_ >= config_.warmup;
  if (counting) {
    for (int i : live_) {
      const auto& v = vehicles_[i];
      if (v.status == Status::Driving) kpis_.add_motion(v.speed * dt, dt, v.speed, v.accel, co2_);
    }
  }

  // collisions against blockers: crossing an upstream face during the step
  auto records = detect_collisions();
  for (std::size_t n = 0; n < live_.size(); ++n) {
    auto& v = vehicles_[live_[n]];
    if (v.status != Status::Driving) continue;
    for (const auto& b : blockers_[v.lane]) {
      if (old_x[n] <= b.start + 1e-9 && v.x > b.start + 1e-9) {
        v.x = b.start;
        v.status = Status::Collided;
        v.speed = 0.0;
        v.accel = 0.0;
        v.collided_at = clock_ + dt;
        records.push_back({clock_ + dt, ref_of(v), v.lane, v.id, b.id});
        break;
      }
    }
  }
  for (auto& r : records) {
    if (counting) kpis_.add_collision();
    collisions_.push_back(std::move(r));
  }

  clock_ += dt;
  ++steps_;

  for (int i : live_) {
    auto& v = vehicles_[i];
    if (v.status == Status::Driving && v.x >= chain_length_) {
      v.status = Status::Finished;
      ++pop_.finished;
    } else if (v.status == Status::Collided && clock_ - v.collided_at >= config_.collision_hold - 1e-9) {
      v.status = Status::Finished;
      ++pop_.removed;
    }
  }
  for (int i : live_) speed_history_[i][steps_ % speed_history_[i].size()] = vehicles_[i].speed;

  live_.erase(std::remove_if(live_.begin(), live_.end(),
                             [&](int i) { return vehicles_[i].status == Status::Finished; }),
              live_.end());
  spawn();
  resort_lanes();
  if (on_step) on_step(clock_, vehicles_);
}

void World::spawn() {
  std::exponential_distribution<double> gap(config_.insertion_rate);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  while (arrivals_ < config_.total_vehicles && next_arrival_ <= clock_ + 1e-9) {
    VehicleState v;
    const double limit = limit_by_edge_.front();
    const bool hgv = unit(demand_rng_) < config_.hgv_share;
    const bool equipped = unit(demand_rng_) < config_.equipped_fraction;
    v.params = hgv ? default_hgv(limit) : default_car(limit);
    v.equipped = equipped;
    pending_.push_back({std::move(v), false});
    ++arrivals_;
    next_arrival_ += gap(demand_rng_);
  }

  std::vector<bool> used(max_lanes_, false);
  while (pending_head_ < static_cast<int>(pending_.size())) {
    auto& p = pending_[pending_head_];
    int best_lane = -1;
    double best_speed = -1.0;
    for (int lane = 0; lane < lanes_by_edge_.front(); ++lane) {
      if (used[lane]) continue;
      // the rearmost vehicle in the lane
      const auto& order = lanes_[lane];
      double gap = kInf, lead_speed = 0.0;
      if (!order.empty()) {
        const auto& last = vehicles_[order.back()];
        gap = last.rear();
        lead_speed = last.speed;
      }
      const auto& bl = blockers_[lane];
      if (!bl.empty() && bl.front().start < gap) {
        gap = bl.front().start;
        lead_speed = 0.0;
      }
      if (gap < kEntryGap) continue;
      const double cap = std::min(p.v.params.v_max, limit_by_edge_.front());
      const double v_ins =
          std::isfinite(gap) ? std::min(cap, safe_speed(gap, lead_speed, p.v.params.decel, p.v.params.tau)) : cap;
      const double wanted = std::isfinite(gap) ? std::min(cap, lead_speed) : cap;
      if (v_ins < 0.5 * wanted || v_ins <= 0.0) continue;
      if (v_ins > best_speed) {
        best_speed = v_ins;
        best_lane = lane;
      }
    }
    if (best_lane < 0) {
      if (!p.deferred) {
        p.deferred = true;
        ++pop_.deferred;
      }
      break;
    }
    used[best_lane] = true;
    VehicleState v = std::move(p.v);
    ++pending_head_;
    v.serial = static_cast<std::uint32_t>(vehicles_.size());
    v.id = "veh" + std::to_string(v.serial);
    v.lane = best_lane;
    v.x = 0.0;
    v.speed = best_speed;
    v.inserted_at = clock_;
    const int delay = static_cast<int>(std::lround(config_.surprise_reaction_time / config_.dt));
    vehicles_.push_back(std::move(v));
    speed_history_.emplace_back(static_cast<std::size_t>(delay + 1), best_speed);
    new_speed_.push_back(0.0);
    live_.push_back(static_cast<int>(vehicles_.size() - 1));
    ++pop_.inserted;
    // keep the lane order valid for the next candidate in this step
    lanes_[best_lane].push_back(static_cast<int>(vehicles_.size() - 1));
    lane_x_[best_lane].push_back(0.0);
  }
}

bool World::done() const {
  if (clock_ >= config_.duration - 1e-9) return true;
  return arrivals_ >= config_.total_vehicles && pending_head_ >= static_cast<int>(pending_.size()) &&
         live_.empty();
}

void World::run_to_end() {
  while (!done()) step();
}

}  // namespace citsim::sim
