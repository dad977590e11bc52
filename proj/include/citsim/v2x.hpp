#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "citsim/microsim.hpp"
#include "citsim/netmodel.hpp"

namespace citsim::v2x {

struct Cam {
  std::string station_id;
  double gen_time = 0.0;
  net::LinearRef pos;
  int lane = 0;
  double speed = 0.0;
  double accel = 0.0;
  sim::VehicleClass vclass = sim::VehicleClass::Car;
};

struct Denm {
  std::string event_id;
  net::HazardKind cause = net::HazardKind::ObstacleOnRoad;
  net::LinearRef location;
  double extent = 0.0;
  std::set<int> affected_lanes;
  double relevance_distance = 2000.0;  // m upstream of location
  double valid_until = 0.0;
  std::string advised_profile = "default";
  std::optional<std::string> free_text;
  bool cancellation = false;
  double gen_time = 0.0;

  /// Throws ValidationError on a broken invariant.
  void validate(const net::RoadNetwork& net) const;
};

nlohmann::json to_json(const Cam& c);
Cam cam_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Denm& d);
Denm denm_from_json(const nlohmann::json& j);

enum class ChannelKind { Itsg5, Cellular };
std::string_view to_string(ChannelKind k);
ChannelKind channel_kind_from_string(std::string_view s);

struct ChannelModel {
  ChannelKind kind = ChannelKind::Cellular;
  std::optional<net::RsuLayout> rsus;  // required for itsg5
  double latency = 0.2;
  double loss_prob = 0.005;

  void validate() const;
  /// Defaults: range from the layout, 0.02 s, 1 % loss.
  static ChannelModel itsg5(net::RsuLayout rsus);
  /// Defaults: 0.2 s, 0.5 % loss.
  static ChannelModel cellular();
};

/// True when chain offset x is covered by the channel (always for cellular).
bool covered(const ChannelModel& ch, const net::RoadNetwork& net, double x);

/// Deterministic loss draw for one (seed, message, receiver) triple. The same
/// uniform is used by every channel, so a lossier channel drops a superset.
bool lost(std::uint64_t seed, std::string_view message_key, std::uint64_t receiver, double loss_prob);

/// One Cam per equipped driving vehicle whose last emission is at least one
/// period ago. Keeps the per-vehicle emission clock.
class CamScheduler {
public:
  explicit CamScheduler(double period = 1.0);
  double period() const { return period_; }
  std::vector<Cam> emit(const sim::World& world, double clock);

private:
  double period_;
  std::vector<double> last_;
};

Cam sample_cam(const sim::World& world, const sim::VehicleState& v, double clock);

struct Delivery {
  std::string vehicle_id;
  std::size_t vehicle_index = 0;
  double time = 0.0;
};

/// Receivers of one broadcast of `denm` at `clock`. Vehicles listed in
/// `already` (indices) are skipped so deliveries stay idempotent.
std::vector<Delivery> deliver(const Denm& denm, const sim::World& world, const ChannelModel& channel, double clock,
                              std::uint64_t seed, const std::set<std::size_t>& already = {});

/// The vehicle-side view of a Denm.
sim::Notice notice_from_denm(const Denm& d, const net::RoadNetwork& net, double severity = 1.0);

/// One line of the message log; same shape as the pilot logs.
struct LogRecord {
  double time = 0.0;
  std::string station;
  std::string type;  // CAM | DENM | IVI | SESSION
  nlohmann::json payload;
};

/// Active Denms, in-flight deliveries and the rebroadcast cycle.
class Dispatcher {
public:
  Dispatcher(ChannelModel channel, std::uint64_t seed, double rebroadcast_period = 5.0);

  const ChannelModel& channel() const { return channel_; }
  /// Publishes or refreshes a Denm and broadcasts it immediately.
  void publish(Denm d, sim::World& world, double severity = 1.0);
  /// Throws NotFoundError when no active Denm carries the id.
  Denm cancel(const std::string& event_id, sim::World& world);
  bool active(const std::string& event_id) const { return active_.count(event_id) > 0; }
  const std::map<std::string, Denm>& denms() const { return active_; }

  /// Applies deliveries due by the world clock and rebroadcasts due Denms.
  void tick(sim::World& world);

  std::function<void(const LogRecord&)> log;

private:
  struct Active {
    double next_broadcast = 0.0;
    std::set<std::size_t> reached;  // delivered or in flight
  };
  struct InFlight {
    double time;
    std::size_t vehicle;
    std::string event_id;
  };
  void broadcast(const std::string& id, sim::World& world);

  ChannelModel channel_;
  std::uint64_t seed_;
  double rebroadcast_;
  std::map<std::string, Denm> active_;
  std::map<std::string, Active> state_;
  std::vector<InFlight> in_flight_;
};

}  // namespace citsim::v2x
