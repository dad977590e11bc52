#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace citsim::kpi {

/// Instantaneous CO2 emission rate
///   r(v, a) = max(r_idle, c0 + c1*v + c2*v^3 + c3*v*max(a, 0)),  v in m/s, r in g/s.
struct Co2Model {
  double r_idle = 0.5;
  double c0 = 0.5;
  double c1 = 0.1;
  double c2 = 2.5e-4;
  double c3 = 0.3;

  bool operator==(const Co2Model&) const = default;
};

double co2_rate(double v, double a, const Co2Model& model);

/// Grams per km of a constant-speed cruise, by time-stepped integration.
double cruise_g_per_km(double speed, const Co2Model& model, double dt = 0.05);

/// Scales the speed-dependent terms of `shape` so that a cruise at
/// `reference_speed` (m/s) emits `target_g_per_km`. Throws ValidationError
/// when the target is at or below the floor set by the constant term.
Co2Model calibrate_co2(double target_g_per_km, double reference_speed, const Co2Model& shape = {});

/// Shipped default, calibrated to 310 g/km at 80 km/h.
const Co2Model& default_co2_model();

nlohmann::json to_json(const Co2Model& m);
Co2Model co2_model_from_json(const nlohmann::json& j);

struct KpiReport {
  double lane_changes_per_vkm = 0.0;
  double collisions = 0.0;
  double co2_g_per_km = 0.0;
  double avg_speed_kmh = 0.0;
  double travel_time_min_per_km = 0.0;
  double vehicle_km = 0.0;
  double vehicle_hours = 0.0;

  bool operator==(const KpiReport&) const = default;
};

nlohmann::json to_json(const KpiReport& r);
KpiReport kpi_report_from_json(const nlohmann::json& j);

/// Running totals over a measurement window; the microsimulation feeds one
/// sample per driving vehicle per step.
class KpiAccumulator {
public:
  void add_motion(double distance_m, double duration_s, double speed, double accel,
                  const Co2Model& model) {
    distance_m_ += distance_m;
    time_s_ += duration_s;
    co2_g_ += co2_rate(speed, accel, model) * duration_s;
  }
  void add_lane_change() { ++lane_changes_; }
  void add_collision() { ++collisions_; }

  double vehicle_km() const { return distance_m_ / 1000.0; }
  double vehicle_hours() const { return time_s_ / 3600.0; }
  long lane_changes() const { return lane_changes_; }
  long collisions() const { return collisions_; }
  double co2_grams() const { return co2_g_; }
  bool empty() const { return !(distance_m_ > 0.0); }

  /// Throws StateError when no distance has been driven.
  KpiReport report() const;

private:
  double distance_m_ = 0.0;
  double time_s_ = 0.0;
  double co2_g_ = 0.0;
  long lane_changes_ = 0;
  long collisions_ = 0;
};

struct TrajectoryPoint {
  double t = 0.0;  // s
  double x = 0.0;  // m along the chain
  double speed = 0.0;
  double accel = 0.0;
};

/// Samples of one vehicle in time order.
struct Trajectory {
  std::string vehicle_id;
  std::vector<TrajectoryPoint> points;
};

struct Window {
  double start = 0.0;
  double end = 1e300;
};

/// KPIs from recorded trajectories. Each interval [p[k-1], p[k]] inside the
/// window contributes its displacement, its duration, and r(v_k, a_k) times
/// its duration. Event times outside the window are ignored.
/// Throws StateError when the window holds no vehicle-km.
KpiReport aggregate(std::span<const Trajectory> trajectories, std::span<const double> collision_times,
                    std::span<const double> lane_change_times, const Window& window,
                    const Co2Model& model = default_co2_model());

}  // namespace citsim::kpi
