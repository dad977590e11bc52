#include "citsim/v2x.hpp"

#include <algorithm>
#include <cmath>

#include "citsim/error.hpp"

namespace citsim::v2x {

using nlohmann::json;

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

void Denm::validate(const net::RoadNetwork& net) const {
  if (event_id.empty()) throw ValidationError("denm: empty event id");
  if (!net.contains(location)) throw ValidationError("denm: location not on the network");
  if (!(relevance_distance > 0.0)) throw ValidationError("denm: relevance_distance must be > 0");
  if (!(extent >= 0.0)) throw ValidationError("denm: extent must be >= 0");
  if (!cancellation && !(valid_until > gen_time)) throw ValidationError("denm: valid_until must follow gen_time");
}

json to_json(const Cam& c) {
  return json{{"station_id", c.station_id}, {"gen_time", c.gen_time},
              {"pos", net::to_json(c.pos)},   {"lane", c.lane},
              {"speed", c.speed},             {"accel", c.accel},
              {"vclass", sim::to_string(c.vclass)}};
}

Cam cam_from_json(const json& j) {
  try {
    Cam c;
    c.station_id = j.at("station_id").get<std::string>();
    c.gen_time = j.at("gen_time").get<double>();
    c.pos = net::linear_ref_from_json(j.at("pos"));
    c.lane = j.at("lane").get<int>();
    c.speed = j.at("speed").get<double>();
    c.accel = j.value("accel", 0.0);
    const auto cls = j.value("vclass", std::string("car"));
    if (cls != "car" && cls != "hgv") throw ParseError("cam: unknown vclass " + cls);
    c.vclass = cls == "hgv" ? sim::VehicleClass::Hgv : sim::VehicleClass::Car;
    if (c.speed < 0.0) throw ValidationError("cam: negative speed");
    return c;
  } catch (const json::exception& e) {
    throw ParseError(std::string("cam: ") + e.what());
  }
}

json to_json(const Denm& d) {
  json j{{"event_id", d.event_id},
         {"cause", net::to_string(d.cause)},
         {"location", net::to_json(d.location)},
         {"extent", d.extent},
         {"affected_lanes", d.affected_lanes},
         {"relevance_distance", d.relevance_distance},
         {"valid_until", d.valid_until},
         {"advised_profile", d.advised_profile},
         {"cancellation", d.cancellation},
         {"gen_time", d.gen_time}};
  if (d.free_text) j["free_text"] = *d.free_text;
  return j;
}

Denm denm_from_json(const json& j) {
  try {
    Denm d;
    d.event_id = j.at("event_id").get<std::string>();
    d.cause = net::hazard_kind_from_string(j.at("cause").get<std::string>());
    d.location = net::linear_ref_from_json(j.at("location"));
    d.extent = j.value("extent", 0.0);
    d.affected_lanes = j.value("affected_lanes", std::set<int>{});
    d.relevance_distance = j.value("relevance_distance", d.relevance_distance);
    d.valid_until = j.at("valid_until").get<double>();
    d.advised_profile = j.value("advised_profile", d.advised_profile);
    if (j.contains("free_text") && !j["free_text"].is_null()) d.free_text = j["free_text"].get<std::string>();
    d.cancellation = j.value("cancellation", false);
    d.gen_time = j.value("gen_time", 0.0);
    return d;
  } catch (const json::exception& e) {
    throw ParseError(std::string("denm: ") + e.what());
  }
}

std::string_view to_string(ChannelKind k) { return k == ChannelKind::Itsg5 ? "itsg5" : "cellular"; }

ChannelKind channel_kind_from_string(std::string_view s) {
  if (s == "itsg5") return ChannelKind::Itsg5;
  if (s == "cellular") return ChannelKind::Cellular;
  throw ParseError("unknown channel kind '" + std::string(s) + "'");
}

void ChannelModel::validate() const {
  if (kind == ChannelKind::Itsg5 && !rsus) throw ValidationError("itsg5 channel requires an RSU layout");
  if (!(latency >= 0.0)) throw ValidationError("latency must be >= 0");
  if (!(loss_prob >= 0.0 && loss_prob < 1.0)) throw ValidationError("loss_prob must lie in [0, 1)");
}

ChannelModel ChannelModel::itsg5(net::RsuLayout rsus) {
  return {ChannelKind::Itsg5, std::move(rsus), 0.02, 0.01};
}

ChannelModel ChannelModel::cellular() { return {ChannelKind::Cellular, std::nullopt, 0.2, 0.005}; }

bool covered(const ChannelModel& ch, const net::RoadNetwork& net, double x) {
  if (ch.kind == ChannelKind::Cellular) return true;
  for (const auto& r : ch.rsus->positions)
    if (std::abs(net.locate(r).x - x) <= ch.rsus->range) return true;
  return false;
}

bool lost(std::uint64_t seed, std::string_view key, std::uint64_t receiver, double loss_prob) {
  if (loss_prob <= 0.0) return false;
  const std::uint64_t h = splitmix(splitmix(seed ^ fnv1a(key)) ^ receiver);
  const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  return u < loss_prob;
}

CamScheduler::CamScheduler(double period) : period_(period) {
  if (!(period > 0.0)) throw ValidationError("CAM period must be > 0");
}

Cam sample_cam(const sim::World& world, const sim::VehicleState& v, double clock) {
  return {v.id, clock, world.ref_of(v), v.lane, v.speed, v.accel, v.params.vclass};
}

std::vector<Cam> CamScheduler::emit(const sim::World& world, double clock) {
  const auto& vs = world.vehicles();
  if (last_.size() < vs.size()) last_.resize(vs.size(), -std::numeric_limits<double>::infinity());
  std::vector<Cam> out;
  out.reserve(256);
  for (std::size_t i = 0; i < vs.size(); ++i) {
    const auto& v = vs[i];
    if (!v.equipped || v.status != sim::Status::Driving) continue;
    if (clock - last_[i] < period_ - 1e-9) continue;
    last_[i] = clock;
    out.push_back(sample_cam(world, v, clock));
  }
  return out;
}

std::vector<Delivery> deliver(const Denm& denm, const sim::World& world, const ChannelModel& channel, double clock,
                              std::uint64_t seed, const std::set<std::size_t>& already) {
  std::vector<Delivery> out;
  if (denm.cancellation) return out;
  const auto& net = world.network();
  const double at = net.locate(denm.location).x;
  const double lo = at - denm.relevance_distance;
  const double hi = at + denm.extent;
  const std::string key = denm.event_id + "@" + std::to_string(std::llround(clock * 1000.0));
  const auto& vs = world.vehicles();
  for (std::size_t i = 0; i < vs.size(); ++i) {
    const auto& v = vs[i];
    if (!v.equipped || v.status != sim::Status::Driving) continue;
    if (v.x < lo || v.x > hi) continue;
    if (already.count(i) || v.inbox.count(denm.event_id)) continue;
    if (!covered(channel, net, v.x)) continue;
    if (lost(seed, key, v.serial, channel.loss_prob)) continue;
    out.push_back({v.id, i, clock + channel.latency});
  }
  return out;
}

sim::Notice notice_from_denm(const Denm& d, const net::RoadNetwork& net, double severity) {
  sim::Notice n;
  n.event_id = d.event_id;
  n.kind = d.cause;
  const auto pos = net.locate(d.location);
  n.start = pos.x;
  n.end = std::min(pos.x + d.extent, net.chain_length(pos.chain));
  n.approach = net.edge_start(d.location.edge_id);
  // the edge holding the far end of the extent; a boundary belongs upstream
  const double far = std::max(n.start, n.end - 1e-6);
  const auto& last = net.edges()[net.edge_index_at(pos.chain, far)];
  n.edge_end = net.edge_start(last.id) + last.length;
  n.lanes = d.affected_lanes;
  n.severity = severity;
  return n;
}

Dispatcher::Dispatcher(ChannelModel channel, std::uint64_t seed, double rebroadcast_period)
    : channel_(std::move(channel)), seed_(seed), rebroadcast_(rebroadcast_period) {
  channel_.validate();
  if (!(rebroadcast_ > 0.0)) throw ValidationError("rebroadcast period must be > 0");
}

void Dispatcher::publish(Denm d, sim::World& world, double severity) {
  d.cancellation = false;
  d.validate(world.network());
  const std::string id = d.event_id;
  world.set_notice(notice_from_denm(d, world.network(), severity));
  active_[id] = std::move(d);
  auto& st = state_[id];
  st.next_broadcast = world.clock();
  broadcast(id, world);
}

Denm Dispatcher::cancel(const std::string& event_id, sim::World& world) {
  auto it = active_.find(event_id);
  if (it == active_.end()) throw NotFoundError("no active DENM for event " + event_id);
  Denm c = it->second;
  c.cancellation = true;
  c.gen_time = world.clock();
  active_.erase(it);
  state_.erase(event_id);
  in_flight_.erase(std::remove_if(in_flight_.begin(), in_flight_.end(),
                                  [&](const InFlight& f) { return f.event_id == event_id; }),
                   in_flight_.end());
  world.clear_notice(event_id);
  if (log) log({world.clock(), "tcs", "DENM", to_json(c)});
  return c;
}

void Dispatcher::broadcast(const std::string& id, sim::World& world) {
  auto& st = state_[id];
  const auto& d = active_.at(id);
  for (auto& dl : deliver(d, world, channel_, world.clock(), seed_, st.reached)) {
    st.reached.insert(dl.vehicle_index);
    in_flight_.push_back({dl.time, dl.vehicle_index, id});
  }
  st.next_broadcast = world.clock() + rebroadcast_;
}

void Dispatcher::tick(sim::World& world) {
  const double now = world.clock();
  // drop expired Denms
  for (auto it = active_.begin(); it != active_.end();) {
    if (it->second.valid_until <= now) {
      const std::string id = it->first;
      ++it;
      cancel(id, world);
    } else {
      ++it;
    }
  }
  std::vector<InFlight> later;
  for (auto& f : in_flight_) {
    if (f.time > now + 1e-9) {
      later.push_back(std::move(f));
      continue;
    }
    if (world.deliver(f.vehicle, f.event_id) && log) {
      json p = to_json(active_.at(f.event_id));
      p["delivered_at"] = now;
      log({now, world.vehicles()[f.vehicle].id, "DENM", std::move(p)});
    }
  }
  in_flight_ = std::move(later);
  for (auto& [id, st] : state_)
    if (st.next_broadcast <= now + 1e-9) broadcast(id, world);
}

}  // namespace citsim::v2x
