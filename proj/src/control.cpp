#include "citsim/control.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

#include <httplib.h>

#include "citsim/error.hpp"

namespace citsim::control {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

std::string_view to_string(RunStatus s) {
  switch (s) {
    case RunStatus::Created: return "created";
    case RunStatus::Running: return "running";
    case RunStatus::Paused: return "paused";
    case RunStatus::Finished: return "finished";
  }
  return "?";
}

json to_json(const RunHandle& h) {
  return json{{"v", 1},
              {"run_id", h.run_id},
              {"status", to_string(h.status)},
              {"clock", h.clock},
              {"realtime_factor", h.realtime_factor}};
}

json to_json(const StateFrame& f, std::size_t max_vehicles) {
  std::vector<const VehicleView*> keep;
  keep.reserve(f.vehicles.size());
  for (const auto& v : f.vehicles) keep.push_back(&v);
  if (max_vehicles > 0 && keep.size() > max_vehicles) {
    std::sort(keep.begin(), keep.end(), [](const VehicleView* a, const VehicleView* b) {
      if (a->event_distance != b->event_distance) return a->event_distance < b->event_distance;
      return a->id < b->id;
    });
    keep.resize(max_vehicles);
    std::sort(keep.begin(), keep.end(), [](const VehicleView* a, const VehicleView* b) { return a->x > b->x; });
  }
  json vehicles = json::array();
  for (const auto* v : keep)
    vehicles.push_back(json{{"id", v->id},
                            {"edge", v->edge},
                            {"lane", v->lane},
                            {"offset", v->offset},
                            {"speed", v->speed},
                            {"equipped", v->equipped},
                            {"informed", v->informed}});
  json events = json::array();
  for (const auto& e : f.active_events) events.push_back(net::to_json(e));
  return json{{"v", 1},
              {"seq", f.seq},
              {"run_id", f.run_id},
              {"status", to_string(f.status)},
              {"clock", f.clock},
              {"vehicle_count", f.vehicles.size()},
              {"vehicles", vehicles},
              {"active_events", events},
              {"rolling_kpi", f.rolling_kpi ? kpi::to_json(*f.rolling_kpi) : json(nullptr)}};
}

Run::Run(std::string run_id, harness::ExperimentSpec spec, RunOptions options)
    : id_(std::move(run_id)), spec_(std::move(spec)), options_(std::move(options)) {
  if (!spec_.arm) throw ValidationError("service mode runs a single arm");
  spec_.validate();
  const auto preset = net::corridor_preset(spec_.corridor);
  const auto seed = spec_.seeds.front();
  sim_ = std::make_unique<harness::Simulation>(preset, harness::arm_config(spec_, preset, *spec_.arm, seed),
                                               spec_.profile, harness::arm_setup(spec_, *spec_.arm));
  sim_->trajectory_log = options_.trajectory_log;
  if (options_.include_spec_event) {
    sim_->add_event(spec_.event);
    events_[spec_.event.id] = {spec_.event.end_time, false};
  }
  publish_frame();
  driver_ = std::thread([this] { drive(); });
}

Run::~Run() {
  {
    std::lock_guard lk(mu_);
    stop_ = true;
  }
  cv_.notify_all();
  frame_cv_.notify_all();
  if (driver_.joinable()) driver_.join();
}

RunHandle Run::handle() const {
  std::lock_guard lk(mu_);
  return {id_, status_, clock_, options_.realtime_factor};
}

void Run::start() {
  {
    std::lock_guard lk(mu_);
    if (status_ == RunStatus::Finished) throw StateError("run " + id_ + " is finished");
    if (status_ == RunStatus::Running) return;
    if (advance_left_ > 0) throw StateError("run " + id_ + " is advancing");
    status_ = RunStatus::Running;
    anchor_wall_ = Clock::now();
    anchor_clock_ = clock_;
  }
  cv_.notify_all();
}

void Run::pause() {
  {
    std::lock_guard lk(mu_);
    if (status_ != RunStatus::Running) throw StateError("run " + id_ + " is not running");
    status_ = RunStatus::Paused;
  }
  cv_.notify_all();
}

std::string Run::inject_event(net::HazardEvent ev) {
  std::lock_guard lk(mu_);
  if (status_ == RunStatus::Finished) throw StateError("run " + id_ + " is finished");
  if (ev.origin != net::EventOrigin::Operator) throw ValidationError("injected events must have origin Operator");
  if (ev.id.empty()) {
    do ev.id = "op-" + std::to_string(next_event_++);
    while (events_.count(ev.id));
  }
  if (events_.count(ev.id)) throw ValidationError("event id " + ev.id + " already in use");
  ev.start_time = clock_;
  net::validate(ev, sim_->world().network());
  events_[ev.id] = {ev.end_time, false};
  const auto id = ev.id;
  queue_.push_back({Command::Inject, std::move(ev)});
  cv_.notify_all();
  return id;
}

void Run::cancel_event(const std::string& event_id) {
  std::lock_guard lk(mu_);
  auto it = events_.find(event_id);
  if (it == events_.end()) throw NotFoundError("no event " + event_id + " in run " + id_);
  if (it->second.cancelled) throw StateError("event " + event_id + " already cancelled");
  if (it->second.end_time <= clock_ + 1e-9) throw StateError("event " + event_id + " is over");
  it->second.cancelled = true;
  net::HazardEvent ev;
  ev.id = event_id;
  queue_.push_back({Command::Cancel, std::move(ev)});
  cv_.notify_all();
}

void Run::advance(double seconds) {
  if (!(seconds > 0.0)) throw ValidationError("advance needs a positive duration");
  std::unique_lock lk(mu_);
  if (status_ == RunStatus::Running) throw StateError("run " + id_ + " is running");
  if (status_ == RunStatus::Finished) throw StateError("run " + id_ + " is finished");
  const double dt = sim_->world().config().dt;
  advance_left_ += static_cast<int>(std::ceil(seconds / dt - 1e-9));
  cv_.notify_all();
  frame_cv_.wait(lk, [&] { return advance_left_ == 0 || stop_; });
}

std::shared_ptr<const StateFrame> Run::snapshot() const {
  std::lock_guard lk(mu_);
  return frame_;
}

std::shared_ptr<const StateFrame> Run::wait_frame(std::uint64_t after_seq, std::chrono::milliseconds timeout) const {
  std::unique_lock lk(mu_);
  frame_cv_.wait_for(lk, timeout, [&] { return stop_ || (frame_ && frame_->seq > after_seq); });
  return frame_;
}

void Run::apply(Command& c) {
  if (c.kind == Command::Inject) {
    const double now = sim_->world().clock();
    c.event.start_time = now;
    if (c.event.end_time <= now) return;
    sim_->add_event(std::move(c.event));
    return;
  }
  try {
    sim_->cancel_event(c.event.id);
  } catch (const NotFoundError&) {
    // ended on its own meanwhile
  }
}

void Run::drive() {
  std::unique_lock lk(mu_);
  for (;;) {
    cv_.wait(lk, [&] {
      return stop_ || !queue_.empty() || status_ == RunStatus::Running || advance_left_ > 0;
    });
    if (stop_) return;
    auto commands = std::move(queue_);
    queue_.clear();
    const bool stepping = status_ == RunStatus::Running || advance_left_ > 0;
    const bool running = status_ == RunStatus::Running;
    const bool advancing = !running && advance_left_ > 0;
    lk.unlock();

    for (auto& c : commands) apply(c);
    bool finished = false;
    if (stepping) {
      sim_->step();
      finished = sim_->done();
    }

    lk.lock();
    clock_ = sim_->world().clock();
    if (advancing) --advance_left_;
    if (finished) {
      status_ = RunStatus::Finished;
      advance_left_ = 0;
    }
    const bool publish = running || advance_left_ == 0 || finished;
    lk.unlock();
    if (publish) publish_frame();
    lk.lock();
    if (finished) frame_cv_.notify_all();
    if (status_ == RunStatus::Running && options_.realtime_factor > 0.0) {
      const auto due = anchor_wall_ + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(
                                          (clock_ - anchor_clock_) / options_.realtime_factor));
      cv_.wait_until(lk, due, [&] { return stop_ || status_ != RunStatus::Running; });
    }
  }
}

void Run::publish_frame() {
  auto f = std::make_shared<StateFrame>();
  const auto& w = sim_->world();
  f->run_id = id_;
  f->clock = w.clock();
  f->active_events = w.active_events();
  const auto& net = w.network();
  std::vector<std::pair<double, double>> spans;
  for (const auto& e : f->active_events) {
    const double s = net.locate(e.location).x;
    spans.push_back({s, s + e.extent});
  }
  for (const auto& v : w.vehicles()) {
    if (v.status != sim::Status::Driving) continue;
    VehicleView view;
    const auto ref = w.ref_of(v);
    view.id = v.id;
    view.edge = ref.edge_id;
    view.lane = v.lane;
    view.offset = ref.offset;
    view.speed = v.speed;
    view.equipped = v.equipped;
    view.informed = v.equipped && !v.inbox.empty();
    view.x = v.x;
    for (const auto& [s, e] : spans) {
      const double d = v.x < s ? s - v.x : (v.x <= e ? 0.0 : v.x - e);
      view.event_distance = std::min(view.event_distance, d);
    }
    f->vehicles.push_back(std::move(view));
  }
  if (!w.kpis().empty()) f->rolling_kpi = w.kpis().report();
  {
    std::lock_guard lk(mu_);
    f->seq = ++seq_;
    f->status = status_;
    frame_ = std::move(f);
  }
  frame_cv_.notify_all();
}

RunHandle RunManager::create_run(const harness::ExperimentSpec& spec, RunOptions options) {
  if (!spec.arm) throw ValidationError("service mode runs a single arm; set arm to manual or cits");
  std::string id;
  {
    std::lock_guard lk(mu_);
    id = "run-" + std::to_string(next_++);
  }
  auto run = std::make_shared<Run>(id, spec, std::move(options));
  auto h = run->handle();
  std::lock_guard lk(mu_);
  runs_[id] = std::move(run);
  return h;
}

std::shared_ptr<Run> RunManager::get(const std::string& run_id) const {
  std::lock_guard lk(mu_);
  auto it = runs_.find(run_id);
  if (it == runs_.end()) throw NotFoundError("no run " + run_id);
  return it->second;
}

std::vector<RunHandle> RunManager::list() const {
  std::vector<std::shared_ptr<Run>> runs;
  {
    std::lock_guard lk(mu_);
    for (const auto& [id, r] : runs_) runs.push_back(r);
  }
  std::vector<RunHandle> out;
  for (const auto& r : runs) out.push_back(r->handle());
  return out;
}

json presets_document() {
  json list = json::array();
  for (const auto& name : net::preset_names()) {
    const auto p = net::corridor_preset(name);
    json edges = json::array();
    int lanes = 0;
    for (const auto& e : p.network.edges()) {
      lanes = std::max(lanes, e.lane_count);
      edges.push_back(json{{"id", e.id},
                           {"length", e.length},
                           {"lanes", e.lane_count},
                           {"speed_limit_kmh", e.speed_limit * 3.6}});
    }
    json demand{{"baseline", p.demand.baseline_vehicles}};
    demand["high"] = p.demand.high_vehicles ? json(*p.demand.high_vehicles) : json(nullptr);
    list.push_back(json{{"name", name},
                        {"length_m", p.network.total_length()},
                        {"lanes", lanes},
                        {"rsu_count", p.rsus.positions.size()},
                        {"demand", demand},
                        {"edges", edges}});
  }
  return json{{"v", 1}, {"presets", list}};
}

struct ControlServer::Impl {
  RunManager& runs;
  double fps;
  std::size_t max_vehicles;
  httplib::Server http;
  std::thread thread;
  std::atomic<bool> stopping{false};

  Impl(RunManager& r, double f, std::size_t m) : runs(r), fps(f), max_vehicles(m) { routes(); }

  static void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void fail(httplib::Response& res, int status, const std::string& msg) {
    reply(res, status, json{{"v", 1}, {"error", msg}});
  }

  static json body_of(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    json j;
    try {
      j = json::parse(req.body);
    } catch (const json::exception& e) {
      throw ParseError(std::string("body: ") + e.what());
    }
    if (!j.is_object()) throw ParseError("body must be an object");
    if (j.contains("v") && j.at("v") != 1) throw ValidationError("unsupported schema version");
    return j;
  }

  // Maps library errors onto status codes.
  template <class F>
  static httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const NotFoundError& e) {
        fail(res, 404, e.what());
      } catch (const StateError& e) {
        fail(res, 409, e.what());
      } catch (const ParseError& e) {
        fail(res, 400, e.what());
      } catch (const ValidationError& e) {
        fail(res, 400, e.what());
      } catch (const json::exception& e) {
        fail(res, 400, e.what());
      } catch (const std::exception& e) {
        fail(res, 500, e.what());
      }
    };
  }

  void routes() {
    http.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
    http.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    http.Get("/presets", guarded([](const httplib::Request&, httplib::Response& res) {
      reply(res, 200, presets_document());
    }));

    http.Get("/runs", guarded([this](const httplib::Request&, httplib::Response& res) {
      json list = json::array();
      for (const auto& h : runs.list()) list.push_back(to_json(h));
      reply(res, 200, json{{"v", 1}, {"runs", list}});
    }));

    http.Post("/runs", guarded([this](const httplib::Request& req, httplib::Response& res) {
      json j = body_of(req);
      RunOptions opt;
      opt.realtime_factor = j.value("realtime_factor", opt.realtime_factor);
      if (j.contains("event") && j.at("event").is_null()) {
        opt.include_spec_event = false;
        j.erase("event");
      }
      if (!j.contains("arm")) j["arm"] = "cits";
      auto spec = harness::spec_from_json(j);
      if (!j.contains("seeds")) spec.seeds = {1};
      reply(res, 201, to_json(runs.create_run(spec, std::move(opt))));
    }));

    http.Post(R"(/runs/([^/]+)/start)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto run = runs.get(req.matches[1]);
      run->start();
      reply(res, 200, to_json(run->handle()));
    }));

    http.Post(R"(/runs/([^/]+)/pause)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto run = runs.get(req.matches[1]);
      run->pause();
      reply(res, 200, to_json(run->handle()));
    }));

    http.Post(R"(/runs/([^/]+)/advance)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto run = runs.get(req.matches[1]);
      run->advance(body_of(req).value("seconds", 1.0));
      reply(res, 200, to_json(run->handle()));
    }));

    http.Get(R"(/runs/([^/]+)/state)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      reply(res, 200, to_json(*runs.get(req.matches[1])->snapshot()));
    }));

    http.Get(R"(/runs/([^/]+)/kpi)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto f = runs.get(req.matches[1])->snapshot();
      reply(res, 200,
            json{{"v", 1},
                 {"run_id", f->run_id},
                 {"clock", f->clock},
                 {"kpi", f->rolling_kpi ? kpi::to_json(*f->rolling_kpi) : json(nullptr)}});
    }));

    http.Post(R"(/runs/([^/]+)/events)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto run = runs.get(req.matches[1]);
      json j = body_of(req);
      j.erase("v");
      const auto id = run->inject_event(net::hazard_event_from_json(j));
      reply(res, 201, json{{"v", 1}, {"event_id", id}});
    }));

    http.Delete(R"(/runs/([^/]+)/events/([^/]+))",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  runs.get(req.matches[1])->cancel_event(req.matches[2]);
                  reply(res, 200, json{{"v", 1}, {"event_id", std::string(req.matches[2])}, {"cancelled", true}});
                }));

    http.Get(R"(/runs/([^/]+)/stream)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto run = runs.get(req.matches[1]);
      const auto period = std::chrono::duration_cast<std::chrono::milliseconds>(
          std::chrono::duration<double>(fps > 0.0 ? 1.0 / fps : 0.5));
      auto last = std::make_shared<std::uint64_t>(0);
      auto next_due = std::make_shared<Clock::time_point>(Clock::now());
      res.set_header("Cache-Control", "no-cache");
      res.set_chunked_content_provider(
          "text/event-stream", [this, run, period, last, next_due](std::size_t, httplib::DataSink& sink) {
            if (stopping) return false;
            std::this_thread::sleep_until(*next_due);
            *next_due = std::max(*next_due + period, Clock::now());
            auto f = run->wait_frame(*last, period);
            if (stopping) return false;
            std::string chunk;
            if (f && f->seq > *last) {
              *last = f->seq;
              chunk = "event: frame\ndata: " + to_json(*f, max_vehicles).dump() + "\n\n";
            } else {
              chunk = ": idle\n\n";
            }
            if (!sink.write(chunk.data(), chunk.size())) return false;
            if (f && f->status == RunStatus::Finished && f->seq == *last) {
              sink.done();
            }
            return true;
          });
    }));
  }
};

ControlServer::ControlServer(RunManager& runs, double stream_fps, std::size_t stream_max_vehicles)
    : impl_(std::make_unique<Impl>(runs, stream_fps, stream_max_vehicles)) {}

ControlServer::~ControlServer() { stop(); }

int ControlServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->http.bind_to_any_port(host);
  } else if (!impl_->http.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->http.listen_after_bind(); });
  impl_->http.wait_until_ready();
  return bound;
}

void ControlServer::listen(const std::string& host, int port) {
  if (!impl_->http.listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
}

void ControlServer::stop() {
  impl_->stopping = true;
  impl_->http.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace citsim::control
