#include "citsim/kpi.hpp"

#include <algorithm>
#include <cmath>

#include "citsim/error.hpp"

namespace citsim::kpi {

using nlohmann::json;

double co2_rate(double v, double a, const Co2Model& m) {
  v = std::max(0.0, v);
  const double r = m.c0 + m.c1 * v + m.c2 * v * v * v + m.c3 * v * std::max(a, 0.0);
  return std::max(m.r_idle, r);
}

double cruise_g_per_km(double speed, const Co2Model& model, double dt) {
  if (!(speed > 0.0)) throw ValidationError("cruise speed must be > 0");
  // Step a constant-speed point mass over one kilometre; the final partial
  // step is weighted by its fraction.
  double x = 0.0;
  double grams = 0.0;
  while (x < 1000.0) {
    const double step = std::min(dt, (1000.0 - x) / speed);
    grams += co2_rate(speed, 0.0, model) * step;
    x += speed * step;
  }
  return grams * 1000.0 / x;
}

Co2Model calibrate_co2(double target, double reference_speed, const Co2Model& shape) {
  if (!(reference_speed > 0.0)) throw ValidationError("reference speed must be > 0");
  const double floor_g_per_km = std::max(shape.c0, shape.r_idle) * 1000.0 / reference_speed;
  if (!(target > floor_g_per_km))
    throw ValidationError("CO2 target " + std::to_string(target) + " g/km is below the idle floor of " +
                          std::to_string(floor_g_per_km) + " g/km");
  const double v = reference_speed;
  const double dynamic = shape.c1 * v + shape.c2 * v * v * v;
  if (!(dynamic > 0.0)) throw ValidationError("CO2 shape has no speed-dependent terms");
  const double scale = (target * v / 1000.0 - shape.c0) / dynamic;
  Co2Model m = shape;
  m.c1 *= scale;
  m.c2 *= scale;
  const double achieved = cruise_g_per_km(v, m);
  if (std::abs(achieved - target) / target >= 0.01)
    throw ValidationError("CO2 calibration did not converge");
  return m;
}

const Co2Model& default_co2_model() {
  // calibrate_co2(310, 80 km/h) on the default shape; kept in sync with
  // fixtures/co2_default.json by the unit tests.
  static const Co2Model model{0.5, 0.5, 0.12868211315287045, 3.2170528288217613e-4, 0.3};
  return model;
}

json to_json(const Co2Model& m) {
  return json{{"r_idle", m.r_idle}, {"c0", m.c0}, {"c1", m.c1}, {"c2", m.c2}, {"c3", m.c3}};
}

Co2Model co2_model_from_json(const json& j) {
  try {
    return {j.at("r_idle").get<double>(), j.at("c0").get<double>(), j.at("c1").get<double>(),
            j.at("c2").get<double>(), j.at("c3").get<double>()};
  } catch (const json::exception& e) {
    throw ParseError(std::string("CO2 model: ") + e.what());
  }
}

json to_json(const KpiReport& r) {
  return json{{"lane_changes_per_vkm", r.lane_changes_per_vkm},
              {"collisions", r.collisions},
              {"co2_g_per_km", r.co2_g_per_km},
              {"avg_speed_kmh", r.avg_speed_kmh},
              {"travel_time_min_per_km", r.travel_time_min_per_km},
              {"vehicle_km", r.vehicle_km},
              {"vehicle_hours", r.vehicle_hours}};
}

KpiReport kpi_report_from_json(const json& j) {
  try {
    return {j.at("lane_changes_per_vkm").get<double>(), j.at("collisions").get<double>(),
            j.at("co2_g_per_km").get<double>(),         j.at("avg_speed_kmh").get<double>(),
            j.at("travel_time_min_per_km").get<double>(), j.at("vehicle_km").get<double>(),
            j.at("vehicle_hours").get<double>()};
  } catch (const json::exception& e) {
    throw ParseError(std::string("KPI report: ") + e.what());
  }
}

namespace {

KpiReport make_report(double distance_m, double time_s, double co2_g, double lane_changes,
                      double collisions) {
  if (!(distance_m > 0.0) || !(time_s > 0.0))
    throw StateError("KPI window holds no vehicle-km; report is undefined");
  KpiReport r;
  r.vehicle_km = distance_m / 1000.0;
  r.vehicle_hours = time_s / 3600.0;
  r.lane_changes_per_vkm = lane_changes / r.vehicle_km;
  r.collisions = collisions;
  r.co2_g_per_km = co2_g / r.vehicle_km;
  r.avg_speed_kmh = r.vehicle_km / r.vehicle_hours;
  r.travel_time_min_per_km = 60.0 / r.avg_speed_kmh;
  return r;
}

}  // namespace

KpiReport KpiAccumulator::report() const {
  return make_report(distance_m_, time_s_, co2_g_, static_cast<double>(lane_changes_),
                     static_cast<double>(collisions_));
}

KpiReport aggregate(std::span<const Trajectory> trajectories, std::span<const double> collision_times,
                    std::span<const double> lane_change_times, const Window& window,
                    const Co2Model& model) {
  double distance = 0.0, time = 0.0, co2 = 0.0;
  for (const auto& tr : trajectories) {
    for (std::size_t k = 1; k < tr.points.size(); ++k) {
      const auto& p0 = tr.points[k - 1];
      const auto& p1 = tr.points[k];
      if (p0.t < window.start || p1.t > window.end) continue;
      const double dt = p1.t - p0.t;
      distance += p1.x - p0.x;
      time += dt;
      co2 += co2_rate(p1.speed, p1.accel, model) * dt;
    }
  }
  auto in_window = [&](double t) { return t >= window.start && t <= window.end; };
  const auto collisions = std::count_if(collision_times.begin(), collision_times.end(), in_window);
  const auto changes = std::count_if(lane_change_times.begin(), lane_change_times.end(), in_window);
  return make_report(distance, time, co2, static_cast<double>(changes), static_cast<double>(collisions));
}

}  // namespace citsim::kpi
