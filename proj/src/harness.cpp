#include "citsim/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "citsim/error.hpp"

namespace citsim::harness {

using nlohmann::json;

namespace {

std::string normalise(std::string_view s) {
  std::string t(s);
  std::replace(t.begin(), t.end(), '-', '_');
  return t;
}

const char* const kExpectations =
#include "expectations.inc"
    ;

}  // namespace

std::string_view to_string(Service s) {
  switch (s) {
    case Service::HlnWcw: return "hln_wcw";
    case Service::Tja: return "tja";
    case Service::RwwLc: return "rww_lc";
    case Service::HlnOr: return "hln_or";
  }
  return "?";
}

Service service_from_string(std::string_view s) {
  const auto t = normalise(s);
  if (t == "hln_wcw") return Service::HlnWcw;
  if (t == "tja") return Service::Tja;
  if (t == "rww_lc") return Service::RwwLc;
  if (t == "hln_or") return Service::HlnOr;
  throw ParseError("unknown service '" + std::string(s) + "'");
}

std::string_view to_string(Demand d) { return d == Demand::Baseline ? "baseline" : "high"; }

Demand demand_from_string(std::string_view s) {
  if (s == "baseline") return Demand::Baseline;
  if (s == "high") return Demand::High;
  throw ParseError("unknown demand level '" + std::string(s) + "'");
}

std::string_view to_string(Arm a) { return a == Arm::Manual ? "manual" : "cits"; }

Arm arm_from_string(std::string_view s) {
  if (s == "manual") return Arm::Manual;
  if (s == "cits") return Arm::Cits;
  throw ParseError("unknown arm '" + std::string(s) + "'");
}

net::HazardKind service_kind(Service s) {
  switch (s) {
    case Service::HlnWcw: return net::HazardKind::SlipperyRoad;
    case Service::Tja: return net::HazardKind::TrafficJamAhead;
    case Service::RwwLc: return net::HazardKind::LaneClosure;
    case Service::HlnOr: return net::HazardKind::ObstacleOnRoad;
  }
  return net::HazardKind::ObstacleOnRoad;
}

net::HazardEvent default_event(Service s, const net::RoadNetwork& net) {
  const double len = net.chain_length(0);
  const auto& edge = net.edges()[net.edge_index_at(0, 0.6 * len)];
  const double edge_start = net.edge_start(edge.id);
  net::HazardEvent ev;
  ev.id = std::string(to_string(s));
  ev.kind = service_kind(s);
  ev.start_time = 600.0;
  ev.end_time = 3600.0;
  double offset = 0.5 * edge.length;
  switch (s) {
    case Service::HlnWcw:
      ev.extent = 2000.0;
      ev.severity = 0.6;
      break;
    case Service::Tja:
      ev.extent = 1000.0;
      ev.severity = 0.3;
      break;
    case Service::RwwLc:
      // the works zone runs over the edge boundary
      offset = std::max(0.0, edge.length - 100.0);
      ev.extent = 500.0;
      ev.affected_lanes = {0};
      break;
    case Service::HlnOr:
      ev.extent = 15.0;
      ev.affected_lanes = {0};
      ev.origin = net::EventOrigin::TcsDetected;
      break;
  }
  const double x = edge_start + offset;
  ev.location = net.ref_at(0, x);
  ev.extent = std::min(ev.extent, len - x);
  return ev;
}

void ExperimentSpec::validate() const {
  const auto preset = net::corridor_preset(corridor);
  if (seeds.empty()) throw ValidationError("experiment needs at least one seed");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw ValidationError("experiment seeds must be distinct");
  if (event.kind != service_kind(service))
    throw ValidationError("event kind " + std::string(net::to_string(event.kind)) + " does not match service " +
                          std::string(to_string(service)));
  net::validate(event, preset.network);
  profile.validate();
  if (!(equipped_fraction >= 0.0 && equipped_fraction <= 1.0))
    throw ValidationError("equipped_fraction must lie in [0, 1]");
  if (demand == Demand::High && !preset.demand.high_vehicles)
    throw ValidationError("corridor " + corridor + " has no high demand level");
  if (!sim.is_object()) throw ValidationError("sim overrides must be an object");
  sim::sim_config_from_json(sim).validate();
}

ExperimentSpec default_spec(const std::string& corridor, Service service, Demand demand, int seeds) {
  const auto preset = net::corridor_preset(corridor);
  ExperimentSpec s;
  s.corridor = corridor;
  s.service = service;
  s.demand = demand;
  for (int i = 1; i <= seeds; ++i) s.seeds.push_back(static_cast<std::uint64_t>(i));
  s.event = default_event(service, preset.network);
  return s;
}

json to_json(const ExperimentSpec& s) {
  json j{{"v", 1},
         {"corridor", s.corridor},
         {"service", to_string(s.service)},
         {"demand", to_string(s.demand)},
         {"channel", v2x::to_string(s.channel)},
         {"seeds", s.seeds},
         {"event", net::to_json(s.event)},
         {"profile", response::to_json(s.profile)},
         {"sim", s.sim},
         {"equipped_fraction", s.equipped_fraction},
         {"tcs", s.tcs_enabled}};
  j["arm"] = s.arm ? json(to_string(*s.arm)) : json("both");
  return j;
}

ExperimentSpec spec_from_json(const json& j) {
  if (!j.is_object()) throw ParseError("experiment spec must be an object");
  try {
    const auto corridor = j.value("corridor", std::string("attica"));
    const auto service = service_from_string(j.value("service", std::string("hln_wcw")));
    const auto demand = demand_from_string(j.value("demand", std::string("baseline")));
    ExperimentSpec s = default_spec(corridor, service, demand);
    if (j.contains("channel")) s.channel = v2x::channel_kind_from_string(j.at("channel").get<std::string>());
    if (j.contains("seeds")) {
      const auto& js = j.at("seeds");
      if (js.is_number_integer()) {
        const int n = js.get<int>();
        if (n < 1) throw ValidationError("seeds must be >= 1");
        s.seeds.clear();
        for (int i = 1; i <= n; ++i) s.seeds.push_back(static_cast<std::uint64_t>(i));
      } else {
        s.seeds = js.get<std::vector<std::uint64_t>>();
      }
    }
    if (j.contains("event")) s.event = net::hazard_event_from_json(j.at("event"));
    if (j.contains("profile")) s.profile = response::profile_from_json(j.at("profile"));
    if (j.contains("sim")) s.sim = j.at("sim");
    s.equipped_fraction = j.value("equipped_fraction", s.equipped_fraction);
    s.tcs_enabled = j.value("tcs", s.tcs_enabled);
    const auto arm = j.value("arm", std::string("both"));
    if (arm != "both") s.arm = arm_from_string(arm);
    return s;
  } catch (const json::exception& e) {
    throw ParseError(std::string("experiment spec: ") + e.what());
  }
}

sim::SimConfig arm_config(const ExperimentSpec& spec, const net::CorridorPreset& preset, Arm arm,
                          std::uint64_t seed) {
  sim::SimConfig c;
  if (spec.demand == Demand::High) {
    if (!preset.demand.high_vehicles) throw ValidationError("corridor has no high demand level");
    c.total_vehicles = *preset.demand.high_vehicles;
  } else {
    c.total_vehicles = preset.demand.baseline_vehicles;
  }
  c.insertion_rate = c.total_vehicles / preset.demand.insertion_window;
  c.hgv_share = preset.demand.hgv_share;
  c = sim::sim_config_from_json(spec.sim, c);
  c.equipped_fraction = arm == Arm::Cits ? spec.equipped_fraction : 0.0;
  c.seed = seed;
  c.validate();
  return c;
}

ArmSetup arm_setup(const ExperimentSpec& spec, Arm arm) {
  ArmSetup a;
  a.arm = arm;
  a.channel = spec.channel;
  if (arm == Arm::Cits) {
    a.equipped_fraction = spec.equipped_fraction;
    a.tcs = spec.tcs_enabled;
  }
  return a;
}

Simulation::Simulation(const net::CorridorPreset& preset, sim::SimConfig config, response::ResponseProfile profile,
                       ArmSetup setup, tcs::Thresholds thresholds, kpi::Co2Model co2)
    : net_(std::make_shared<const net::RoadNetwork>(preset.network)), setup_(setup) {
  config.equipped_fraction = setup.equipped_fraction;
  world_ = std::make_unique<sim::World>(net_, config, std::move(profile), co2);
  world_->on_event_change = [this](const net::HazardEvent& ev, bool on) { changes_.push_back({ev, on}); };
  if (!setup.tcs) return;
  tcs_ = std::make_unique<tcs::TrafficControlServer>(net_, thresholds);
  auto channel = setup.channel == v2x::ChannelKind::Itsg5 ? v2x::ChannelModel::itsg5(preset.rsus)
                                                          : v2x::ChannelModel::cellular();
  dispatcher_ = std::make_unique<v2x::Dispatcher>(channel, config.seed);
  dispatcher_->log = [this](const v2x::LogRecord& r) {
    if (message_log) message_log(r);
  };
  cams_ = std::make_unique<v2x::CamScheduler>(setup.cam_period);
}

void Simulation::handle_event_change(const net::HazardEvent& ev, bool activated) {
  if (!tcs_ || ev.origin != net::EventOrigin::Operator) return;
  const double now = world_->clock();
  if (activated) {
    auto d = tcs_->publish_denm(ev, now);
    dispatcher_->publish(d, *world_, ev.severity);
    if (message_log) message_log({now, "tcs", "DENM", v2x::to_json(d)});
    return;
  }
  const auto ids = tcs_->active_denms();
  if (std::find(ids.begin(), ids.end(), ev.id) != ids.end()) tcs_->cancel_denm(ev.id, now);
  if (dispatcher_->active(ev.id)) dispatcher_->cancel(ev.id, *world_);
}

void Simulation::add_event(net::HazardEvent ev) {
  world_->add_event(std::move(ev));
  auto pending = std::move(changes_);
  changes_.clear();
  for (const auto& [e, on] : pending) handle_event_change(e, on);
}

void Simulation::cancel_event(const std::string& event_id) {
  // the Denm is withdrawn after the next step, as for a scheduled end
  if (!world_->end_event(event_id)) throw NotFoundError("no active event " + event_id);
}

void Simulation::step() {
  world_->step();
  auto pending = std::move(changes_);
  changes_.clear();
  for (const auto& [e, on] : pending) handle_event_change(e, on);
  const double now = world_->clock();
  if (tcs_) {
    for (const auto& cam : cams_->emit(*world_, now)) {
      tcs_->ingest_cam(cam);
      if (message_log) message_log({now, cam.station_id, "CAM", v2x::to_json(cam)});
    }
    if (now >= next_cycle_ - 1e-9) {
      next_cycle_ = now + setup_.tcs_period;
      auto actions = tcs_->step(now);
      for (auto& d : actions.publish) {
        if (message_log) message_log({now, "tcs", "DENM", v2x::to_json(d)});
        dispatcher_->publish(std::move(d), *world_);
      }
      for (const auto& id : actions.cancel)
        if (dispatcher_->active(id)) dispatcher_->cancel(id, *world_);
    }
    dispatcher_->tick(*world_);
  }
  if (trajectory_log) {
    for (const auto& v : world_->vehicles()) {
      if (v.status != sim::Status::Driving) continue;
      const auto ref = world_->ref_of(v);
      trajectory_log(json{{"t", now},
                          {"id", v.id},
                          {"edge", ref.edge_id},
                          {"lane", v.lane},
                          {"offset", ref.offset},
                          {"speed", v.speed},
                          {"accel", v.accel}});
    }
  }
}

void Simulation::run_to_end() {
  while (!done()) step();
}

RunResult run_arm(const ExperimentSpec& spec, Arm arm, std::uint64_t seed, const RunHooks& hooks) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto preset = net::corridor_preset(spec.corridor);
  Simulation sim(preset, arm_config(spec, preset, arm, seed), spec.profile, arm_setup(spec, arm));
  sim.message_log = hooks.message_log;
  sim.trajectory_log = hooks.trajectory_log;
  sim.add_event(spec.event);
  sim.run_to_end();
  RunResult r;
  r.arm = arm;
  r.seed = seed;
  r.kpi = sim.world().kpis().report();
  r.population = sim.world().population();
  r.tcs_confirmed = sim.tcs() ? sim.tcs()->confirmed_count() : 0;
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

kpi::KpiReport mean_report(const std::vector<kpi::KpiReport>& reports) {
  if (reports.empty()) throw ValidationError("no reports to average");
  kpi::KpiReport m;
  for (const auto& r : reports) {
    m.lane_changes_per_vkm += r.lane_changes_per_vkm;
    m.collisions += r.collisions;
    m.co2_g_per_km += r.co2_g_per_km;
    m.avg_speed_kmh += r.avg_speed_kmh;
    m.travel_time_min_per_km += r.travel_time_min_per_km;
    m.vehicle_km += r.vehicle_km;
    m.vehicle_hours += r.vehicle_hours;
  }
  const double n = static_cast<double>(reports.size());
  m.lane_changes_per_vkm /= n;
  m.collisions /= n;
  m.co2_g_per_km /= n;
  m.avg_speed_kmh /= n;
  m.travel_time_min_per_km /= n;
  m.vehicle_km /= n;
  m.vehicle_hours /= n;
  return m;
}

ExperimentResult run_experiment(const ExperimentSpec& spec, unsigned threads,
                                std::function<RunHooks(Arm, std::uint64_t)> hooks) {
  spec.validate();
  std::vector<Arm> arms;
  if (spec.arm) {
    arms.push_back(*spec.arm);
  } else {
    arms = {Arm::Manual, Arm::Cits};
  }
  struct Task {
    Arm arm;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (Arm a : arms)
    for (auto s : spec.seeds) tasks.push_back({a, s});
  std::vector<RunResult> results(tasks.size());
  std::vector<std::exception_ptr> errors(tasks.size());
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(tasks.size()));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      try {
        const RunHooks h = hooks ? hooks(tasks[i].arm, tasks[i].seed) : RunHooks{};
        results[i] = run_arm(spec, tasks[i].arm, tasks[i].seed, h);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (!errors[i]) continue;
    const std::string where =
        std::string(to_string(tasks[i].arm)) + " arm, seed " + std::to_string(tasks[i].seed) + ": ";
    try {
      std::rethrow_exception(errors[i]);
    } catch (const std::exception& e) {
      throw Error(where + e.what());
    }
  }
  ExperimentResult out;
  out.spec = spec;
  for (Arm a : arms) {
    ArmResult ar;
    ar.arm = a;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      if (tasks[i].arm != a) continue;
      ar.seeds.push_back(tasks[i].seed);
      ar.per_seed.push_back(results[i].kpi);
      ar.runs.push_back(results[i]);
    }
    ar.mean = mean_report(ar.per_seed);
    (a == Arm::Manual ? out.manual : out.cits) = std::move(ar);
  }
  return out;
}

std::string_view to_string(Sign s) {
  switch (s) {
    case Sign::Minus: return "-";
    case Sign::Plus: return "+";
    case Sign::Approx: return "≈";
  }
  return "?";
}

Sign sign_from_string(std::string_view s) {
  if (s == "-") return Sign::Minus;
  if (s == "+") return Sign::Plus;
  if (s == "≈" || s == "~") return Sign::Approx;
  throw ParseError("unknown sign '" + std::string(s) + "'");
}

std::string_view to_string(Kpi k) {
  switch (k) {
    case Kpi::LaneChanges: return "lane_changes";
    case Kpi::Collisions: return "collisions";
    case Kpi::Co2: return "co2";
    case Kpi::Speed: return "speed";
    case Kpi::TravelTime: return "travel_time";
  }
  return "?";
}

Kpi kpi_from_string(std::string_view s) {
  for (Kpi k : all_kpis())
    if (to_string(k) == s) return k;
  throw ParseError("unknown KPI '" + std::string(s) + "'");
}

const std::vector<Kpi>& all_kpis() {
  static const std::vector<Kpi> k{Kpi::LaneChanges, Kpi::Collisions, Kpi::Co2, Kpi::Speed, Kpi::TravelTime};
  return k;
}

double kpi_value(const kpi::KpiReport& r, Kpi k) {
  switch (k) {
    case Kpi::LaneChanges: return r.lane_changes_per_vkm;
    case Kpi::Collisions: return r.collisions;
    case Kpi::Co2: return r.co2_g_per_km;
    case Kpi::Speed: return r.avg_speed_kmh;
    case Kpi::TravelTime: return r.travel_time_min_per_km;
  }
  return 0.0;
}

Sign classify(double manual, double cits, double band) {
  const double delta = cits - manual;
  if (delta == 0.0) return Sign::Approx;
  if (manual != 0.0 && std::abs(delta) / std::abs(manual) < band) return Sign::Approx;
  return delta < 0.0 ? Sign::Minus : Sign::Plus;
}

std::vector<KpiComparison> compare_arms(const ArmResult& manual, const ArmResult& cits, double band) {
  if (manual.seeds != cits.seeds) throw ValidationError("arms were run on different seeds");
  std::vector<KpiComparison> out;
  for (Kpi k : all_kpis()) {
    KpiComparison c;
    c.kpi = k;
    c.manual = kpi_value(manual.mean, k);
    c.cits = kpi_value(cits.mean, k);
    c.delta = c.cits - c.manual;
    c.sign = classify(c.manual, c.cits, band);
    out.push_back(c);
  }
  return out;
}

std::vector<DirectionalExpectation> expectations_from_json(const json& j) {
  std::vector<DirectionalExpectation> out;
  try {
    const double band = j.value("band", 0.02);
    for (const auto& t : j.at("tables")) {
      const auto corridor = t.at("corridor").get<std::string>();
      const auto demands = t.at("demands").get<std::vector<std::string>>();
      for (const auto& row : t.at("rows")) {
        DirectionalExpectation base;
        base.corridor = corridor;
        base.service = service_from_string(row.at("service").get<std::string>());
        base.kpi = kpi_from_string(row.at("kpi").get<std::string>());
        base.manual_text = row.at("manual").get<std::string>();
        base.cits_text = row.at("cits").get<std::string>();
        auto split = [&](const std::string& cell) {
          std::vector<double> v;
          std::stringstream ss(cell);
          std::string part;
          while (std::getline(ss, part, '/')) v.push_back(std::stod(part));
          return v;
        };
        const bool empty = base.manual_text.empty() || base.cits_text.empty();
        const auto m = empty ? std::vector<double>{} : split(base.manual_text);
        const auto c = empty ? std::vector<double>{} : split(base.cits_text);
        if (!empty && (m.size() != demands.size() || c.size() != demands.size()))
          throw ParseError("expectation cell does not match the demand levels: " + base.manual_text);
        for (std::size_t d = 0; d < demands.size(); ++d) {
          auto e = base;
          e.demand = demands[d];
          e.empty = empty;
          if (!empty) {
            e.manual = m[d];
            e.cits = c[d];
            e.expected = classify(e.manual, e.cits, band);
          }
          out.push_back(std::move(e));
        }
      }
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("expectations: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw ParseError("expectations: non-numeric cell");
  }
  return out;
}

json expectations_document() { return json::parse(kExpectations); }

std::vector<DirectionalExpectation> load_expectations(const std::filesystem::path& path) {
  if (path.empty()) return expectations_from_json(expectations_document());
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return expectations_from_json(json::parse(ss.str()));
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("expectations: ") + e.what());
  }
}

std::vector<Verdict> check_directions(const std::vector<KpiComparison>& comparison,
                                      const std::vector<DirectionalExpectation>& expectations,
                                      const std::string& corridor, Service service, Demand demand) {
  const std::string level(to_string(demand));
  std::vector<const DirectionalExpectation*> rows;
  for (const auto& e : expectations)
    if (e.corridor == corridor && e.service == service && e.demand == level) rows.push_back(&e);
  if (rows.empty())
    throw NotFoundError("no expectation rows for " + corridor + "/" + std::string(to_string(service)) + "/" + level);
  std::vector<Verdict> out;
  for (const auto& c : comparison) {
    Verdict v;
    v.kpi = c.kpi;
    v.measured = c.sign;
    v.manual = c.manual;
    v.cits = c.cits;
    auto it = std::find_if(rows.begin(), rows.end(), [&](const auto* e) { return e->kpi == c.kpi; });
    if (it == rows.end() || (*it)->empty) {
      v.skipped = true;
    } else {
      v.expected = (*it)->expected;
      v.table_manual = (*it)->manual;
      v.table_cits = (*it)->cits;
      v.pass = v.measured == v.expected;
    }
    out.push_back(v);
  }
  return out;
}

namespace {

json report_json(const kpi::KpiReport& r) { return kpi::to_json(r); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

ReportFiles write_report(const std::vector<ExperimentResult>& results,
                         const std::vector<DirectionalExpectation>& expectations, const std::filesystem::path& dir) {
  if (results.empty()) throw ValidationError("nothing to report");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  ReportFiles files{dir / "results.csv", dir / "summary.txt", dir / "results.jsonl", 0};
  std::ofstream csv(files.csv), sum(files.summary), jl(files.jsonl);
  if (!csv || !sum || !jl) throw Error("cannot write report into " + dir.string());

  csv << "corridor,service,demand,arm,seed,lane_changes_per_vkm,collisions,co2_g_per_km,avg_speed_kmh,"
         "travel_time_min_per_km,vehicle_km,vehicle_hours,inserted,tcs_confirmed,wall_seconds\n";
  csv.precision(10);
  for (const auto& ex : results) {
    for (const auto* arm : {&ex.manual, &ex.cits}) {
      if (!*arm) continue;
      for (const auto& r : (*arm)->runs) {
        const auto& k = r.kpi;
        csv << ex.spec.corridor << ',' << to_string(ex.spec.service) << ',' << to_string(ex.spec.demand) << ','
            << to_string(r.arm) << ',' << r.seed << ',' << k.lane_changes_per_vkm << ',' << k.collisions << ','
            << k.co2_g_per_km << ',' << k.avg_speed_kmh << ',' << k.travel_time_min_per_km << ',' << k.vehicle_km
            << ',' << k.vehicle_hours << ',' << r.population.inserted << ',' << r.tcs_confirmed << ','
            << r.wall_seconds << '\n';
        jl << json{{"v", 1},
                   {"type", "run"},
                   {"corridor", ex.spec.corridor},
                   {"service", to_string(ex.spec.service)},
                   {"demand", to_string(ex.spec.demand)},
                   {"arm", to_string(r.arm)},
                   {"seed", r.seed},
                   {"kpi", report_json(k)},
                   {"tcs_confirmed", r.tcs_confirmed}}
                  .dump()
           << '\n';
      }
    }

    sum << ex.spec.corridor << " / " << to_string(ex.spec.service) << " / " << to_string(ex.spec.demand) << " / "
        << ex.spec.seeds.size() << " seeds / channel " << v2x::to_string(ex.spec.channel) << '\n';
    if (!ex.manual || !ex.cits) {
      const auto& a = ex.manual ? *ex.manual : *ex.cits;
      sum << "  single arm " << to_string(a.arm) << '\n';
      for (Kpi k : all_kpis()) sum << "  " << to_string(k) << " " << fmt("%.4f", kpi_value(a.mean, k)) << '\n';
      sum << '\n';
      continue;
    }
    const auto cmp = compare_arms(*ex.manual, *ex.cits);
    std::vector<Verdict> verdicts;
    try {
      verdicts = check_directions(cmp, expectations, ex.spec.corridor, ex.spec.service, ex.spec.demand);
    } catch (const NotFoundError&) {
    }
    char line[256];
    std::snprintf(line, sizeof line, "  %-13s %12s %12s %11s %5s %9s  %-22s %s\n", "kpi", "manual", "cits", "delta",
                  "sign", "expected", "table manual -> cits", "verdict");
    sum << line;
    for (std::size_t i = 0; i < cmp.size(); ++i) {
      const auto& c = cmp[i];
      std::string expected = "n/a", table = "", verdict = "skip";
      if (i < verdicts.size() && !verdicts[i].skipped) {
        const auto& v = verdicts[i];
        expected = std::string(to_string(v.expected));
        table = fmt("%.2f", v.table_manual) + " -> " + fmt("%.2f", v.table_cits);
        verdict = v.pass ? "PASS" : "FAIL";
        if (!v.pass) ++files.failures;
        jl << json{{"v", 1},
                   {"type", "verdict"},
                   {"corridor", ex.spec.corridor},
                   {"service", to_string(ex.spec.service)},
                   {"demand", to_string(ex.spec.demand)},
                   {"kpi", to_string(v.kpi)},
                   {"expected", to_string(v.expected)},
                   {"measured", to_string(v.measured)},
                   {"manual", v.manual},
                   {"cits", v.cits},
                   {"pass", v.pass}}
                  .dump()
           << '\n';
      }
      std::snprintf(line, sizeof line, "  %-13s %12.4f %12.4f %+11.4f %5s %9s  %-22s %s\n",
                    std::string(to_string(c.kpi)).c_str(), c.manual, c.cits, c.delta,
                    std::string(to_string(c.sign)).c_str(), expected.c_str(), table.c_str(), verdict.c_str());
      sum << line;
    }
    sum << '\n';
  }
  sum << "directional failures: " << files.failures << '\n';
  if (!csv || !sum || !jl) throw Error("error while writing report into " + dir.string());
  return files;
}

}  // namespace citsim::harness
