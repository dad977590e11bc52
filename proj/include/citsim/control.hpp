#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "citsim/harness.hpp"

namespace citsim::control {

enum class RunStatus { Created, Running, Paused, Finished };
std::string_view to_string(RunStatus s);

struct RunHandle {
  std::string run_id;
  RunStatus status = RunStatus::Created;
  double clock = 0.0;
  double realtime_factor = 10.0;  // <= 0: unpaced
};

nlohmann::json to_json(const RunHandle& h);

struct VehicleView {
  std::string id;
  std::string edge;
  int lane = 0;
  double offset = 0.0;
  double speed = 0.0;
  bool equipped = false;
  bool informed = false;
  double x = 0.0;                // chain offset
  double event_distance = 1e300;  // to the nearest active event, 0 inside one
};

struct StateFrame {
  std::uint64_t seq = 0;
  std::string run_id;
  RunStatus status = RunStatus::Created;
  double clock = 0.0;
  std::vector<VehicleView> vehicles;
  std::vector<net::HazardEvent> active_events;
  std::optional<kpi::KpiReport> rolling_kpi;  // empty during warm-up
};

/// `max_vehicles` > 0 keeps only that many vehicles, nearest to an active
/// event first, ties by id.
nlohmann::json to_json(const StateFrame& f, std::size_t max_vehicles = 0);

struct RunOptions {
  double realtime_factor = 10.0;
  /// false: the spec's event is left out and the run starts clean.
  bool include_spec_event = true;
  /// Attached to the simulation before the first step.
  std::function<void(const nlohmann::json&)> trajectory_log;
};

/// One live run. A private driver thread owns the simulation; commands are
/// queued and applied at step boundaries, and every step publishes an
/// immutable frame.
class Run {
public:
  /// `spec.arm` must name a single arm; the first seed is used.
  Run(std::string run_id, harness::ExperimentSpec spec, RunOptions options = {});
  ~Run();
  Run(const Run&) = delete;
  Run& operator=(const Run&) = delete;

  RunHandle handle() const;
  const harness::ExperimentSpec& spec() const { return spec_; }

  /// created|paused -> running. Throws StateError when finished.
  void start();
  /// running -> paused. Throws StateError unless running.
  void pause();

  /// Validates now, applies at the next step boundary with start_time = that
  /// boundary's clock. Throws NotFoundError/ValidationError/StateError.
  std::string inject_event(net::HazardEvent ev);
  /// Throws NotFoundError for unknown ids and StateError for events already
  /// cancelled or over.
  void cancel_event(const std::string& event_id);

  /// Advances a paused or created run by `seconds` of simulated time and
  /// waits for it. Throws StateError while running.
  void advance(double seconds);

  std::shared_ptr<const StateFrame> snapshot() const;
  /// Blocks until a frame newer than `after_seq` exists or the timeout passes.
  std::shared_ptr<const StateFrame> wait_frame(std::uint64_t after_seq, std::chrono::milliseconds timeout) const;

private:
  struct Command {
    enum Kind { Inject, Cancel } kind;
    net::HazardEvent event;
  };
  struct Known {
    double end_time = 0.0;
    bool cancelled = false;
  };

  void drive();
  void apply(Command& c);
  void publish_frame();

  std::string id_;
  harness::ExperimentSpec spec_;
  RunOptions options_;
  std::unique_ptr<harness::Simulation> sim_;

  mutable std::mutex mu_;
  mutable std::condition_variable cv_;        // driver wake-ups
  mutable std::condition_variable frame_cv_;  // frame subscribers
  RunStatus status_ = RunStatus::Created;
  double clock_ = 0.0;
  std::deque<Command> queue_;
  int advance_left_ = 0;
  bool stop_ = false;
  std::chrono::steady_clock::time_point anchor_wall_;
  double anchor_clock_ = 0.0;
  std::map<std::string, Known> events_;
  int next_event_ = 1;
  std::shared_ptr<const StateFrame> frame_;
  std::uint64_t seq_ = 0;
  std::thread driver_;
};

class RunManager {
public:
  /// Throws ValidationError when the spec has both arms or is invalid.
  RunHandle create_run(const harness::ExperimentSpec& spec, RunOptions options = {});
  /// Throws NotFoundError.
  std::shared_ptr<Run> get(const std::string& run_id) const;
  std::vector<RunHandle> list() const;

private:
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Run>> runs_;
  int next_ = 1;
};

/// {"v": 1, "presets": [...]} with length, lanes, limits and demand levels.
nlohmann::json presets_document();

/// The HTTP surface over a RunManager.
class ControlServer {
public:
  explicit ControlServer(RunManager& runs, double stream_fps = 2.0, std::size_t stream_max_vehicles = 2000);
  ~ControlServer();

  /// Binds and serves on a background thread. Port 0 picks a free port.
  /// Returns the bound port; throws Error when binding fails.
  int start(const std::string& host, int port);
  /// Serves on the calling thread until stop().
  void listen(const std::string& host, int port);
  void stop();

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace citsim::control
