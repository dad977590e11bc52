#include "citsim/netmodel.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "citsim/error.hpp"

namespace citsim::net {

using nlohmann::json;

RoadNetwork::RoadNetwork(std::string name, std::vector<Edge> edges)
    : name_(std::move(name)), edges_(std::move(edges)) {
  if (edges_.empty()) throw ValidationError("network '" + name_ + "' has no edges");

  for (std::size_t i = 0; i < edges_.size(); ++i) {
    const Edge& e = edges_[i];
    if (e.id.empty()) throw ValidationError("edge with empty id");
    if (!(e.length > 0.0)) throw ValidationError("edge " + e.id + ": length must be > 0");
    if (e.lane_count < 1) throw ValidationError("edge " + e.id + ": lane_count must be >= 1");
    if (!(e.speed_limit > 0.0)) throw ValidationError("edge " + e.id + ": speed_limit must be > 0");
    if (!std::isfinite(e.gradient)) throw ValidationError("edge " + e.id + ": gradient not finite");
    if (!index_.emplace(e.id, i).second) throw ValidationError("duplicate edge id " + e.id);
  }

  std::vector<int> predecessors(edges_.size(), 0);
  std::vector<std::size_t> next(edges_.size(), edges_.size());
  for (std::size_t i = 0; i < edges_.size(); ++i) {
    const Edge& e = edges_[i];
    if (e.successors.size() > 1)
      throw ValidationError("edge " + e.id + ": branching carriageways are not supported");
    for (const auto& s : e.successors) {
      auto it = index_.find(s);
      if (it == index_.end())
        throw ValidationError("edge " + e.id + ": successor '" + s + "' is not defined");
      if (it->second == i) throw ValidationError("edge " + e.id + " lists itself as successor");
      next[i] = it->second;
      if (++predecessors[it->second] > 1)
        throw ValidationError("edge " + s + " has more than one predecessor");
    }
  }

  edge_chain_.assign(edges_.size(), 0);
  edge_start_.assign(edges_.size(), 0.0);
  std::vector<bool> visited(edges_.size(), false);
  for (std::size_t head = 0; head < edges_.size(); ++head) {
    if (predecessors[head] != 0) continue;
    std::vector<std::size_t> chain;
    double x = 0.0;
    for (std::size_t i = head; i < edges_.size(); i = next[i]) {
      visited[i] = true;
      edge_chain_[i] = chains_.size();
      edge_start_[i] = x;
      x += edges_[i].length;
      chain.push_back(i);
    }
    chains_.push_back(std::move(chain));
    chain_lengths_.push_back(x);
    total_length_ += x;
  }
  for (std::size_t i = 0; i < edges_.size(); ++i)
    if (!visited[i]) throw ValidationError("edge " + edges_[i].id + " is part of a cycle");
}

const Edge* RoadNetwork::find_edge(std::string_view id) const {
  auto it = index_.find(std::string(id));
  return it == index_.end() ? nullptr : &edges_[it->second];
}

const Edge& RoadNetwork::edge(std::string_view id) const {
  const Edge* e = find_edge(id);
  if (!e) throw NotFoundError("unknown edge '" + std::string(id) + "'");
  return *e;
}

double RoadNetwork::edge_start(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) throw NotFoundError("unknown edge '" + std::string(id) + "'");
  return edge_start_[it->second];
}

std::size_t RoadNetwork::edge_chain(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) throw NotFoundError("unknown edge '" + std::string(id) + "'");
  return edge_chain_[it->second];
}

bool RoadNetwork::contains(const LinearRef& ref) const {
  const Edge* e = find_edge(ref.edge_id);
  return e && ref.offset >= 0.0 && ref.offset <= e->length;
}

ChainPos RoadNetwork::locate(const LinearRef& ref) const {
  auto it = index_.find(ref.edge_id);
  if (it == index_.end()) throw NotFoundError("unknown edge '" + ref.edge_id + "'");
  const Edge& e = edges_[it->second];
  if (!(ref.offset >= 0.0 && ref.offset <= e.length)) {
    std::ostringstream os;
    os << "offset " << ref.offset << " outside edge " << e.id << " [0, " << e.length << "]";
    throw ValidationError(os.str());
  }
  return {edge_chain_[it->second], edge_start_[it->second] + ref.offset};
}

std::size_t RoadNetwork::edge_index_at(std::size_t c, double x) const {
  const auto& ch = chains_.at(c);
  // upper_bound over edge starts: last edge whose start <= x
  auto it = std::upper_bound(ch.begin(), ch.end(), x,
                             [&](double v, std::size_t idx) { return v < edge_start_[idx]; });
  if (it == ch.begin()) return ch.front();
  return *std::prev(it);
}

LinearRef RoadNetwork::ref_at(std::size_t c, double x) const {
  x = std::clamp(x, 0.0, chain_lengths_.at(c));
  std::size_t idx = edge_index_at(c, x);
  const Edge& e = edges_[idx];
  double off = std::min(x - edge_start_[idx], e.length);
  return {e.id, std::max(0.0, off)};
}

double distance_along(const LinearRef& a, const LinearRef& b, const RoadNetwork& net) {
  ChainPos pa = net.locate(a);
  ChainPos pb = net.locate(b);
  if (pa.chain != pb.chain)
    throw ValidationError("refs on " + a.edge_id + " and " + b.edge_id +
                          " lie on different carriageways");
  return pb.x - pa.x;
}

namespace {

struct KindName {
  HazardKind kind;
  std::string_view name;
};
constexpr KindName kKindNames[] = {
    {HazardKind::SlipperyRoad, "SlipperyRoad"},
    {HazardKind::TrafficJamAhead, "TrafficJamAhead"},
    {HazardKind::LaneClosure, "LaneClosure"},
    {HazardKind::ObstacleOnRoad, "ObstacleOnRoad"},
    {HazardKind::FreeTextIvs, "FreeTextIvs"},
};

template <typename T>
T require(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw ParseError(std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("field '") + key + "': " + e.what());
  }
}

json parse_json(std::string_view text) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed document: ") + e.what());
  }
}

Edge edge_from_json(const json& j) {
  Edge e;
  e.id = require<std::string>(j, "id");
  e.length = require<double>(j, "length");
  e.lane_count = require<int>(j, "lanes");
  e.speed_limit = require<double>(j, "speed_limit");
  e.gradient = j.value("gradient", 0.0);
  if (j.contains("successors")) e.successors = require<std::vector<std::string>>(j, "successors");
  return e;
}

json edge_to_json(const Edge& e) {
  return json{{"id", e.id},
              {"length", e.length},
              {"lanes", e.lane_count},
              {"speed_limit", e.speed_limit},
              {"gradient", e.gradient},
              {"successors", e.successors}};
}

RoadNetwork network_from_json(const json& doc) {
  if (!doc.is_object()) throw ParseError("network document must be an object");
  if (doc.contains("v") && doc.at("v") != 1) throw ParseError("unsupported document version");
  std::vector<Edge> edges;
  const json& arr = doc.contains("edges") ? doc.at("edges") : json();
  if (!arr.is_array()) throw ParseError("'edges' must be an array");
  for (const auto& je : arr) edges.push_back(edge_from_json(je));
  return RoadNetwork(doc.value("name", std::string("network")), std::move(edges));
}

json network_to_json(const RoadNetwork& net) {
  json edges = json::array();
  for (const auto& e : net.edges()) edges.push_back(edge_to_json(e));
  return json{{"v", 1}, {"name", net.name()}, {"edges", edges}};
}

}  // namespace

std::string_view to_string(HazardKind k) {
  for (const auto& kn : kKindNames)
    if (kn.kind == k) return kn.name;
  return "?";
}

HazardKind hazard_kind_from_string(std::string_view s) {
  for (const auto& kn : kKindNames)
    if (kn.name == s) return kn.kind;
  throw ParseError("unknown hazard kind '" + std::string(s) + "'");
}

std::string_view to_string(EventOrigin o) {
  return o == EventOrigin::Operator ? "Operator" : "TcsDetected";
}

EventOrigin event_origin_from_string(std::string_view s) {
  if (s == "Operator") return EventOrigin::Operator;
  if (s == "TcsDetected") return EventOrigin::TcsDetected;
  throw ParseError("unknown event origin '" + std::string(s) + "'");
}

void validate(const HazardEvent& ev, const RoadNetwork& net) {
  if (ev.id.empty()) throw ValidationError("event id must not be empty");
  if (!net.contains(ev.location))
    throw ValidationError("event " + ev.id + ": location " + ev.location.edge_id + "/" +
                          std::to_string(ev.location.offset) + " is not on the network");
  if (!(ev.start_time < ev.end_time))
    throw ValidationError("event " + ev.id + ": start_time must precede end_time");
  if (!(ev.extent >= 0.0)) throw ValidationError("event " + ev.id + ": extent must be >= 0");
  if (!(ev.severity > 0.0 && ev.severity <= 1.0))
    throw ValidationError("event " + ev.id + ": severity must lie in (0, 1]");
  const int lanes = net.edge(ev.location.edge_id).lane_count;
  for (int l : ev.affected_lanes)
    if (l < 0 || l >= lanes)
      throw ValidationError("event " + ev.id + ": lane " + std::to_string(l) + " out of range");
  if (blocks_lanes(ev.kind) && ev.affected_lanes.empty())
    throw ValidationError("event " + ev.id + ": " + std::string(to_string(ev.kind)) +
                          " must name at least one lane");
  if (ev.kind == HazardKind::SlipperyRoad && !(ev.severity < 1.0))
    throw ValidationError("event " + ev.id + ": SlipperyRoad severity must be < 1");
}

void validate(const RsuLayout& rsus, const RoadNetwork& net) {
  if (!(rsus.range > 0.0)) throw ValidationError("RSU range must be > 0");
  for (const auto& p : rsus.positions)
    if (!net.contains(p)) throw ValidationError("RSU at " + p.edge_id + " is off the network");
}

RoadNetwork load_network(std::string_view document) { return network_from_json(parse_json(document)); }

std::string save_network(const RoadNetwork& net) { return network_to_json(net).dump(2) + "\n"; }

json to_json(const LinearRef& ref) { return json{{"edge", ref.edge_id}, {"offset", ref.offset}}; }

LinearRef linear_ref_from_json(const json& j) {
  return {require<std::string>(j, "edge"), require<double>(j, "offset")};
}

json to_json(const HazardEvent& ev) {
  json j{{"id", ev.id},
         {"kind", to_string(ev.kind)},
         {"location", to_json(ev.location)},
         {"extent", ev.extent},
         {"affected_lanes", ev.affected_lanes},
         {"start_time", ev.start_time},
         {"end_time", ev.end_time},
         {"severity", ev.severity},
         {"origin", to_string(ev.origin)}};
  if (ev.free_text) j["free_text"] = *ev.free_text;
  return j;
}

HazardEvent hazard_event_from_json(const json& j) {
  HazardEvent ev;
  ev.id = j.value("id", std::string());
  ev.kind = hazard_kind_from_string(require<std::string>(j, "kind"));
  ev.location = linear_ref_from_json(require<json>(j, "location"));
  ev.extent = j.value("extent", 0.0);
  if (j.contains("affected_lanes")) ev.affected_lanes = require<std::set<int>>(j, "affected_lanes");
  ev.start_time = j.value("start_time", 0.0);
  ev.end_time = j.value("end_time", 1e9);
  ev.severity = j.value("severity", 1.0);
  if (j.contains("free_text") && !j.at("free_text").is_null())
    ev.free_text = require<std::string>(j, "free_text");
  ev.origin = event_origin_from_string(j.value("origin", std::string("Operator")));
  return ev;
}

CorridorPreset load_preset_document(std::string_view document) {
  json doc = parse_json(document);
  CorridorPreset p{network_from_json(doc), {}, {}};
  if (doc.contains("rsu")) {
    const json& r = doc.at("rsu");
    p.rsus.range = require<double>(r, "range");
    for (const auto& jp : require<json>(r, "positions")) p.rsus.positions.push_back(linear_ref_from_json(jp));
  }
  validate(p.rsus, p.network);
  if (doc.contains("demand")) {
    const json& d = doc.at("demand");
    p.demand.baseline_vehicles = require<int>(d, "baseline_vehicles");
    if (d.contains("high_vehicles") && !d.at("high_vehicles").is_null())
      p.demand.high_vehicles = require<int>(d, "high_vehicles");
    p.demand.insertion_window = d.value("insertion_window", 3600.0);
    p.demand.hgv_share = d.value("hgv_share", 0.0);
  }
  return p;
}

std::string save_preset_document(const CorridorPreset& preset) {
  json doc = network_to_json(preset.network);
  json positions = json::array();
  for (const auto& r : preset.rsus.positions) positions.push_back(to_json(r));
  doc["rsu"] = json{{"range", preset.rsus.range}, {"positions", positions}};
  json demand{{"baseline_vehicles", preset.demand.baseline_vehicles},
              {"insertion_window", preset.demand.insertion_window},
              {"hgv_share", preset.demand.hgv_share}};
  demand["high_vehicles"] = preset.demand.high_vehicles ? json(*preset.demand.high_vehicles) : json();
  doc["demand"] = demand;
  return doc.dump(2) + "\n";
}

RsuLayout uniform_rsus(const RoadNetwork& net, int count, double range) {
  RsuLayout layout;
  layout.range = range;
  const double len = net.chain_length(0);
  for (int i = 0; i < count; ++i) layout.positions.push_back(net.ref_at(0, (i + 0.5) * len / count));
  return layout;
}

namespace {

RoadNetwork kilometre_chain(const std::string& name, int km, int lanes, double limit_kmh,
                            double gradient) {
  std::vector<Edge> edges;
  for (int i = 1; i <= km; ++i) {
    Edge e{"E" + std::to_string(i), 1000.0, lanes, limit_kmh / 3.6, gradient, {}};
    if (i < km) e.successors.push_back("E" + std::to_string(i + 1));
    edges.push_back(std::move(e));
  }
  return RoadNetwork(name, std::move(edges));
}

}  // namespace

CorridorPreset corridor_preset(std::string_view name) {
  if (name == "attica") {
    // 21 km central sector, 3 lanes, 10 roadside units.
    CorridorPreset p{kilometre_chain("attica", 21, 3, 100.0, 0.0), {}, {}};
    p.rsus = uniform_rsus(p.network, 10, 500.0);
    p.demand = {4500, std::nullopt, 3600.0, 0.08};
    return p;
  }
  if (name == "egnatia") {
    // 26 km bypass plus 2 km approaches on either side, 2 lanes, 25 roadside units.
    CorridorPreset p{kilometre_chain("egnatia", 30, 2, 110.0, 2.84), {}, {}};
    p.rsus = uniform_rsus(p.network, 25, 500.0);
    p.demand = {500, 1200, 3600.0, 0.16};
    return p;
  }
  throw NotFoundError("unknown corridor preset '" + std::string(name) + "'");
}

std::vector<std::string> preset_names() { return {"attica", "egnatia"}; }

}  // namespace citsim::net
