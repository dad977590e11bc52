#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace citsim::net {

struct Edge {
  std::string id;
  double length = 0.0;       // m
  int lane_count = 1;
  double speed_limit = 0.0;  // m/s
  double gradient = 0.0;     // percent
  std::vector<std::string> successors;
};

struct LinearRef {
  std::string edge_id;
  double offset = 0.0;  // m from edge start

  bool operator==(const LinearRef&) const = default;
};

/// Position along one carriageway chain, measured from the chain head.
struct ChainPos {
  std::size_t chain = 0;
  double x = 0.0;
};

/// A set of one-directional carriageway chains. Immutable after construction.
class RoadNetwork {
public:
  RoadNetwork() = default;
  /// Validates every Edge invariant and the chain topology.
  RoadNetwork(std::string name, std::vector<Edge> edges);

  const std::string& name() const { return name_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const Edge& edge(std::string_view id) const;
  const Edge* find_edge(std::string_view id) const;

  double total_length() const { return total_length_; }
  std::size_t chain_count() const { return chains_.size(); }
  /// Edge indices in driving order.
  const std::vector<std::size_t>& chain(std::size_t c) const { return chains_.at(c); }
  double chain_length(std::size_t c) const { return chain_lengths_.at(c); }

  /// Offset of the edge's start along its chain.
  double edge_start(std::string_view id) const;
  std::size_t edge_chain(std::string_view id) const;

  bool contains(const LinearRef& ref) const;
  ChainPos locate(const LinearRef& ref) const;
  /// Inverse of locate(); x is clamped into [0, chain_length].
  LinearRef ref_at(std::size_t chain, double x) const;
  /// Index into edges() of the edge covering chain offset x (the downstream
  /// edge wins at a boundary, except at the chain end).
  std::size_t edge_index_at(std::size_t chain, double x) const;

private:
  std::string name_;
  std::vector<Edge> edges_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::vector<std::size_t>> chains_;
  std::vector<double> chain_lengths_;
  std::vector<std::size_t> edge_chain_;
  std::vector<double> edge_start_;
  double total_length_ = 0.0;
};

/// Signed distance from a to b along the chain; positive if b is downstream.
/// Throws ValidationError when the refs sit on different carriageways.
double distance_along(const LinearRef& a, const LinearRef& b, const RoadNetwork& net);

enum class HazardKind { SlipperyRoad, TrafficJamAhead, LaneClosure, ObstacleOnRoad, FreeTextIvs };
enum class EventOrigin { Operator, TcsDetected };

std::string_view to_string(HazardKind k);
HazardKind hazard_kind_from_string(std::string_view s);
std::string_view to_string(EventOrigin o);
EventOrigin event_origin_from_string(std::string_view s);

/// True for kinds that physically block their affected lanes.
inline bool blocks_lanes(HazardKind k) {
  return k == HazardKind::LaneClosure || k == HazardKind::ObstacleOnRoad;
}

struct HazardEvent {
  std::string id;
  HazardKind kind = HazardKind::SlipperyRoad;
  LinearRef location;
  double extent = 0.0;  // m downstream of location
  std::set<int> affected_lanes;  // empty = all lanes
  double start_time = 0.0;
  double end_time = 0.0;
  double severity = 1.0;  // friction / capacity multiplier
  std::optional<std::string> free_text;
  EventOrigin origin = EventOrigin::Operator;

  bool affects_lane(int lane) const {
    return affected_lanes.empty() || affected_lanes.count(lane) > 0;
  }
};

/// Checks the HazardEvent invariants against a network; throws ValidationError.
void validate(const HazardEvent& ev, const RoadNetwork& net);

struct RsuLayout {
  std::vector<LinearRef> positions;
  double range = 500.0;
};

void validate(const RsuLayout& rsus, const RoadNetwork& net);

/// Demand levels shipped with a corridor preset.
struct DemandDefaults {
  int baseline_vehicles = 0;
  std::optional<int> high_vehicles;
  double insertion_window = 3600.0;  // s over which the demand is released
  double hgv_share = 0.0;
};

struct CorridorPreset {
  RoadNetwork network;
  RsuLayout rsus;
  DemandDefaults demand;
};

/// Parses a network-description document (JSON). Throws ParseError on
/// malformed text and ValidationError on invariant violations.
RoadNetwork load_network(std::string_view document);
std::string save_network(const RoadNetwork& net);

/// Full preset document: network plus RSU layout and demand defaults.
CorridorPreset load_preset_document(std::string_view document);
std::string save_preset_document(const CorridorPreset& preset);

/// Built-in corridor presets: "attica" and "egnatia".
CorridorPreset corridor_preset(std::string_view name);
std::vector<std::string> preset_names();

/// RSUs spaced uniformly along the first chain, at the centres of n equal cells.
RsuLayout uniform_rsus(const RoadNetwork& net, int count, double range);

// JSON mapping used by the document formats and the control plane.
nlohmann::json to_json(const LinearRef& ref);
LinearRef linear_ref_from_json(const nlohmann::json& j);
nlohmann::json to_json(const HazardEvent& ev);
HazardEvent hazard_event_from_json(const nlohmann::json& j);

}  // namespace citsim::net
