#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "citsim/netmodel.hpp"
#include "citsim/v2x.hpp"

namespace citsim::tcs {

struct Thresholds {
  double a_th = 4.0;          // m/s^2, abrupt deceleration
  double d_th = 2.0;          // s the deceleration must last
  double s_th = 5.0;          // s of CAM silence
  double v_min = 5.0;         // m/s, last speed for a silence to count
  double v_stop = 1.0;        // m/s
  double p_th = 10.0;         // s stopped
  int n_conf = 2;             // distinct stations
  double r_conf = 200.0;      // m
  double exit_margin = 200.0; // m before the chain end where silence is expected
  double alpha = 0.5;         // smoothing weight of the newest sample
  double v_clear = 10.0;      // m/s
  double c_th = 15.0;         // s above v_clear to clear a candidate
  /// Unconfirmed candidates older than this are dropped.
  double candidate_ttl = 60.0;
  /// A detected incident without live candidates for this long is cancelled.
  double incident_hold = 300.0;
  double incident_extent = 300.0;   // m, when the blocked spot is not known
  double stationary_extent = 20.0;  // m, stopped station
  double relevance_distance = 2000.0;

  void validate() const;
};

nlohmann::json to_json(const Thresholds& t);
Thresholds thresholds_from_json(const nlohmann::json& j, Thresholds base = {});

struct TrackedStation {
  std::string station_id;
  v2x::Cam last_cam;
  double last_seen = 0.0;
  double smoothed_decel = 0.0;  // signed, negative while braking
  bool smoothed_init = false;
  std::optional<double> decel_onset;
  std::optional<double> low_speed_onset;
  std::optional<double> clear_onset;
  bool silence_raised = false;
};

enum class CandidateKind { AbruptDeceleration, CamSilence, StationaryVehicle };
std::string_view to_string(CandidateKind k);

struct IncidentCandidate {
  int id = 0;
  CandidateKind kind = CandidateKind::StationaryVehicle;
  std::string station_id;
  net::LinearRef location;
  int lane = 0;
  double raised_at = 0.0;
  bool confirmed = false;
  bool live = true;
  std::string incident_id;  // incident or operator event it belongs to
};

struct PvdAggregate {
  std::string edge_id;
  double start = 0.0;
  double end = 0.0;
  double mean_speed = 0.0;
  int vehicle_count = 0;
  int hgv_count = 0;
};

/// Per-edge CAM statistics for the window [start, end).
std::vector<PvdAggregate> aggregate_pvd(std::span<const v2x::Cam> cams, double start, double end,
                                        const net::RoadNetwork& net);

/// Denms to hand to the dispatcher after a TCS step.
struct Actions {
  std::vector<v2x::Denm> publish;
  std::vector<std::string> cancel;
};

class TrafficControlServer {
public:
  TrafficControlServer(std::shared_ptr<const net::RoadNetwork> network, Thresholds thresholds = {});

  const Thresholds& thresholds() const { return th_; }

  /// Updates the station; Cams older than the last one seen are counted and dropped.
  void ingest_cam(const v2x::Cam& cam);
  /// Raises candidates due at `clock` and runs confirmation. Returns the
  /// candidates raised by this call.
  std::vector<IncidentCandidate> detect_incidents(double clock);

  /// Operator path: a Denm for an event, refreshed on repeat publication.
  v2x::Denm publish_denm(const net::HazardEvent& ev, double clock);
  /// Cancellation Denm; throws NotFoundError for an id without an active Denm.
  v2x::Denm cancel_denm(const std::string& event_id, double clock);

  /// One control cycle: detection, confirmation, clearing, incident lifecycle.
  Actions step(double clock);

  const std::map<std::string, TrackedStation>& stations() const { return stations_; }
  const std::vector<IncidentCandidate>& candidates() const { return candidates_; }
  int confirmed_count() const { return confirmed_count_; }
  long stale_cams() const { return stale_; }
  /// Ids with an active Denm.
  std::vector<std::string> active_denms() const;

  std::function<void(const nlohmann::json&)> decision_log;

private:
  struct Incident {
    v2x::Denm denm;
    double start_x = 0.0;
    double end_x = 0.0;
    bool detected = false;  // false for operator events
    double quiet_since = -1.0;
  };

  void note(double t, std::string_view action, const nlohmann::json& extra);
  IncidentCandidate& raise(CandidateKind kind, const TrackedStation& st, double clock);
  Incident* incident_near(double x);
  v2x::Denm incident_denm(const IncidentCandidate& c, const std::string& id, double clock) const;

  std::shared_ptr<const net::RoadNetwork> net_;
  Thresholds th_;
  std::map<std::string, TrackedStation> stations_;
  std::unordered_map<std::string, TrackedStation*> index_;
  std::vector<IncidentCandidate> candidates_;
  std::map<std::string, Incident> incidents_;
  Actions pending_;
  int next_candidate_ = 1;
  int next_incident_ = 1;
  int confirmed_count_ = 0;
  long stale_ = 0;
};

}  // namespace citsim::tcs
