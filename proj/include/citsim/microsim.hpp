#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "citsim/kpi.hpp"
#include "citsim/netmodel.hpp"
#include "citsim/response.hpp"

namespace citsim::sim {

enum class VehicleClass { Car, Hgv };
std::string_view to_string(VehicleClass c);

struct VehicleParams {
  VehicleClass vclass = VehicleClass::Car;
  double length = 5.0;
  double v_max = 100.0 / 3.6;
  double accel = 2.6;            // a
  double decel = 4.5;            // b, used by the safe-speed rule
  double emergency_decel = 9.0;  // physical braking limit
  double tau = 1.0;
  double sigma = 0.5;
};

/// Car and HGV defaults for a corridor speed limit (HGVs capped at 90 km/h).
VehicleParams default_car(double speed_limit);
VehicleParams default_hgv(double speed_limit);

enum class Status { Driving, Collided, Finished };

struct VehicleState {
  std::string id;
  std::uint32_t serial = 0;
  VehicleParams params;
  double x = 0.0;  // front bumper along the chain
  int lane = 0;
  double speed = 0.0;
  double accel = 0.0;
  bool equipped = false;
  std::set<std::string> inbox;  // active DENM event ids
  Status status = Status::Driving;

  double inserted_at = 0.0;
  double last_lane_change = -std::numeric_limits<double>::infinity();
  double collided_at = 0.0;
  std::uint64_t sighted = 0;  // events already seen, by event index
  double surprised_until = -std::numeric_limits<double>::infinity();

  double rear() const { return x - params.length; }
};

struct SimConfig {
  double dt = 0.5;
  double duration = 5400.0;
  int total_vehicles = 500;
  double insertion_rate = 500.0 / 3600.0;  // vehicles/s, Poisson arrivals
  double hgv_share = 0.0;
  double equipped_fraction = 0.0;
  std::uint64_t seed = 1;

  double warmup = 300.0;             // s excluded from KPIs
  double lookahead_mandatory = 300.0;  // L_m, non-event blockages
  double lane_change_gain = 0.5;     // m/s
  double lane_change_cooldown = 5.0; // s
  double collision_hold = 30.0;      // s before a collided vehicle is removed
  /// Reaction delay of drivers surprised by a hazard they were not told about.
  double surprise_reaction_time = 1.0;
  /// How long the delayed perception lasts after the hazard is first sighted.
  double surprise_duration = 10.0;
  /// Deceleration a lag vehicle may be asked for by a fully urgent merge, in
  /// units of its emergency deceleration.
  double forced_merge_decel_factor = 1.0;
  /// false: the car-following sigma is forced to 0 for every vehicle.
  bool dawdling = true;

  void validate() const;
};

nlohmann::json to_json(const SimConfig& c);
SimConfig sim_config_from_json(const nlohmann::json& j, SimConfig base = {});

struct CollisionRecord {
  double time = 0.0;
  net::LinearRef location;
  int lane = 0;
  std::string follower_id;
  std::string leader_id;
};

struct LaneChangeRecord {
  double time = 0.0;
  std::string vehicle_id;
  int from = 0;
  int to = 0;
  bool mandatory = false;
  net::LinearRef location;
};

/// Krauss safe speed: -b*tau + sqrt((b*tau)^2 + v_leader^2 + 2*b*gap).
double safe_speed(double gap, double leader_speed, double decel_b, double tau);

/// A DENM as the vehicles see it: a hazard notice in chain coordinates.
struct Notice {
  std::string event_id;
  net::HazardKind kind = net::HazardKind::ObstacleOnRoad;
  double start = 0.0;     // chain offset of the event location
  double end = 0.0;       // start + extent
  double edge_end = 0.0;  // end of the edge holding the extent end; informed drivers hold 0.6 to here
  double approach = 0.0;  // start of the edge holding the event
  std::set<int> lanes;    // empty = unknown/all
  double severity = 1.0;
};

enum class LaneDecision { Keep, Left, Right };

/// One record of the optional trajectory log.
struct TrajectoryRecord {
  double t;
  const VehicleState* vehicle;
};

/// Counts for the conservation identity inserted = driving + held + removed + finished.
struct Population {
  int inserted = 0;
  int driving = 0;
  int collided_held = 0;
  int removed = 0;
  int finished = 0;
  int pending = 0;   // arrived, waiting for an entry slot
  int deferred = 0;  // vehicles whose insertion was delayed at least one step
};

/// Single-carriageway microscopic world, advanced in fixed steps.
class World {
public:
  World(std::shared_ptr<const net::RoadNetwork> network, SimConfig config,
        response::ResponseProfile profile = {}, kpi::Co2Model co2 = kpi::default_co2_model());

  const net::RoadNetwork& network() const { return *net_; }
  std::shared_ptr<const net::RoadNetwork> network_ptr() const { return net_; }
  const SimConfig& config() const { return config_; }
  const response::ResponseProfile& profile() const { return profile_; }
  double clock() const { return clock_; }
  std::uint64_t step_count() const { return steps_; }
  double chain_length() const { return chain_length_; }

  /// Schedules a ground-truth hazard; it becomes active at its start_time.
  void add_event(net::HazardEvent ev);
  /// Ends an event now. Returns false if the id is unknown or already over.
  bool end_event(const std::string& id);
  const std::vector<net::HazardEvent>& events() const { return events_; }
  std::vector<net::HazardEvent> active_events() const;
  bool event_active(const net::HazardEvent& ev) const;
  /// Called once for every event activated or ended at a step boundary.
  std::function<void(const net::HazardEvent&, bool activated)> on_event_change;

  /// DENM state shared with the vehicles.
  void set_notice(Notice n);
  void clear_notice(const std::string& event_id);
  const std::map<std::string, Notice>& notices() const { return notices_; }
  /// Puts a notice id into an equipped vehicle's inbox; no-op otherwise.
  bool deliver(std::size_t vehicle_index, const std::string& event_id);
  bool informed(const VehicleState& v, const std::string& event_id) const;

  /// Places a vehicle directly (tests, scripted scenarios).
  std::size_t add_vehicle(VehicleState v);

  const std::vector<VehicleState>& vehicles() const { return vehicles_; }
  std::vector<VehicleState>& vehicles_mut() { return vehicles_; }

  /// Advances one dt: lane changes, car-following, movement, collisions,
  /// removals, demand insertion and KPI accumulation.
  void step();
  bool done() const;
  void run_to_end();

  LaneDecision plan_lane_change(std::size_t vehicle_index) const;
  /// Collision pass over the current lane orders; used by step().
  std::vector<CollisionRecord> detect_collisions();

  const std::vector<CollisionRecord>& collisions() const { return collisions_; }
  const std::vector<LaneChangeRecord>& lane_changes() const { return lane_changes_; }
  const kpi::KpiAccumulator& kpis() const { return kpis_; }
  Population population() const;

  /// Effective speed cap for a vehicle at its current position and lane.
  double effective_limit(const VehicleState& v) const;
  net::LinearRef ref_of(const VehicleState& v) const { return net_->ref_at(0, std::min(v.x, chain_length_)); }

  /// Invoked after every step with the vehicles that drove during it.
  std::function<void(double t, const std::vector<VehicleState>&)> on_step;

private:
  struct Blocker {
    double start;  // upstream face
    double end;
    int lane;
    std::string id;
  };
  struct Leader {
    double gap = std::numeric_limits<double>::infinity();
    double speed = 0.0;
    int index = -1;  // vehicle index, -1 for blockers / none
    const Blocker* blocker = nullptr;
  };
  struct ActiveHazard {
    std::size_t ev;  // index into events_
    double start, end;
  };
  struct Context;  // per-vehicle response evaluation
  struct LanePlan {
    bool mandatory = false;
  };
  LaneDecision plan(std::size_t vehicle_index, LanePlan* out) const;

  void activate_events();
  void rebuild_lanes();
  void resort_lanes();
  void sync_lane_x();
  Leader leader_in_lane(int lane, double x, int self, bool see_blockers = true) const;
  Leader lag_in_lane(int lane, double x, int self) const;
  Context evaluate(const VehicleState& v) const;
  double speed_cap(const VehicleState& v, const Context& c) const;
  double perceived_speed(int leader_index, bool surprised) const;
  void apply_lane_changes();
  void update_speeds();
  void spawn();
  bool lane_blocked_at(int lane, double x) const;

  std::shared_ptr<const net::RoadNetwork> net_;
  SimConfig config_;
  response::ResponseProfile profile_;
  kpi::Co2Model co2_;
  double chain_length_ = 0.0;
  int max_lanes_ = 1;
  std::vector<double> limit_by_edge_;   // per chain edge
  std::vector<double> start_by_edge_;
  std::vector<double> grade_by_edge_;
  std::vector<int> lanes_by_edge_;

  double clock_ = 0.0;
  std::uint64_t steps_ = 0;

  std::vector<net::HazardEvent> events_;
  std::vector<char> event_state_;  // 0 pending, 1 active, 2 over
  std::vector<ActiveHazard> active_;
  std::vector<Blocker> static_blockers_;
  std::vector<std::vector<Blocker>> blockers_;  // per lane, sorted by start
  std::map<std::string, Notice> notices_;

  std::vector<VehicleState> vehicles_;
  std::vector<std::vector<double>> speed_history_;  // ring buffers for delayed perception
  std::vector<std::vector<int>> lanes_;  // vehicle indices per lane, downstream first
  std::vector<std::vector<double>> lane_x_;  // positions matching lanes_
  std::vector<int> live_;                // indices of driving + collided vehicles

  std::mt19937_64 demand_rng_;
  double next_arrival_ = 0.0;
  int arrivals_ = 0;
  struct Pending {
    VehicleState v;
    bool deferred = false;
  };
  std::vector<Pending> pending_;
  int pending_head_ = 0;

  std::vector<double> new_speed_;
  std::vector<CollisionRecord> collisions_;
  std::vector<LaneChangeRecord> lane_changes_;
  kpi::KpiAccumulator kpis_;
  Population pop_;
};

}  // namespace citsim::sim
