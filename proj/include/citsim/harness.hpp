#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "citsim/kpi.hpp"
#include "citsim/microsim.hpp"
#include "citsim/netmodel.hpp"
#include "citsim/response.hpp"
#include "citsim/tcs.hpp"
#include "citsim/v2x.hpp"

namespace citsim::harness {

enum class Service { HlnWcw, Tja, RwwLc, HlnOr };
enum class Demand { Baseline, High };
enum class Arm { Manual, Cits };

/// Tokens: hln_wcw, tja, rww_lc, hln_or. Parsing also accepts '-' for '_'.
std::string_view to_string(Service s);
Service service_from_string(std::string_view s);
std::string_view to_string(Demand d);
Demand demand_from_string(std::string_view s);
std::string_view to_string(Arm a);
Arm arm_from_string(std::string_view s);

net::HazardKind service_kind(Service s);

/// The event a service is evaluated against: placed on the edge holding 60 %
/// of the chain, active from 600 s to 3600 s.
net::HazardEvent default_event(Service s, const net::RoadNetwork& net);

struct ExperimentSpec {
  std::string corridor = "attica";
  Service service = Service::HlnWcw;
  Demand demand = Demand::Baseline;
  v2x::ChannelKind channel = v2x::ChannelKind::Cellular;
  std::vector<std::uint64_t> seeds;
  net::HazardEvent event;
  response::ResponseProfile profile;
  nlohmann::json sim = nlohmann::json::object();  // SimConfig overrides
  double equipped_fraction = 1.0;                 // cits arm
  bool tcs_enabled = true;                        // cits arm
  std::optional<Arm> arm;                         // unset: both arms

  /// Throws ValidationError (or NotFoundError for an unknown corridor).
  void validate() const;
};

/// Preset corridor, default event and seeds 1..n.
ExperimentSpec default_spec(const std::string& corridor, Service service, Demand demand, int seeds = 10);

nlohmann::json to_json(const ExperimentSpec& s);
/// Missing keys fall back to default_spec for the given corridor/service/demand.
ExperimentSpec spec_from_json(const nlohmann::json& j);

/// Resolved simulation inputs for one arm of one seed.
struct ArmSetup {
  Arm arm = Arm::Manual;
  double equipped_fraction = 0.0;
  bool tcs = false;
  v2x::ChannelKind channel = v2x::ChannelKind::Cellular;
  double cam_period = 1.0;
  double tcs_period = 1.0;  // s between control cycles
};

/// A world wired to the message layer: CAMs feed the TCS, its Denms go out
/// through the dispatcher. Operator events are published when they become
/// active and cancelled when they end; TcsDetected events are left to the
/// detector.
class Simulation {
public:
  Simulation(const net::CorridorPreset& preset, sim::SimConfig config, response::ResponseProfile profile,
             ArmSetup setup, tcs::Thresholds thresholds = {}, kpi::Co2Model co2 = kpi::default_co2_model());

  void add_event(net::HazardEvent ev);
  /// Ends an event now; its Denm is withdrawn with the next step. Throws NotFoundError.
  void cancel_event(const std::string& event_id);

  void step();
  bool done() const { return world_->done(); }
  void run_to_end();

  const sim::World& world() const { return *world_; }
  sim::World& world() { return *world_; }
  const ArmSetup& setup() const { return setup_; }
  tcs::TrafficControlServer* tcs() { return tcs_.get(); }
  const tcs::TrafficControlServer* tcs() const { return tcs_.get(); }
  const v2x::Dispatcher* dispatcher() const { return dispatcher_.get(); }

  /// CAM and DENM records, in the pilot-log shape.
  std::function<void(const v2x::LogRecord&)> message_log;
  /// One record per driving vehicle per step.
  std::function<void(const nlohmann::json&)> trajectory_log;

private:
  void handle_event_change(const net::HazardEvent& ev, bool activated);

  std::shared_ptr<const net::RoadNetwork> net_;
  ArmSetup setup_;
  std::unique_ptr<sim::World> world_;
  std::unique_ptr<tcs::TrafficControlServer> tcs_;
  std::unique_ptr<v2x::Dispatcher> dispatcher_;
  std::unique_ptr<v2x::CamScheduler> cams_;
  std::vector<std::pair<net::HazardEvent, bool>> changes_;
  double next_cycle_ = 0.0;
};

/// SimConfig for an arm: preset demand, overrides, equipped fraction, seed.
sim::SimConfig arm_config(const ExperimentSpec& spec, const net::CorridorPreset& preset, Arm arm, std::uint64_t seed);
ArmSetup arm_setup(const ExperimentSpec& spec, Arm arm);

struct RunResult {
  Arm arm = Arm::Manual;
  std::uint64_t seed = 0;
  kpi::KpiReport kpi;
  sim::Population population;
  int tcs_confirmed = 0;
  double wall_seconds = 0.0;
};

struct RunHooks {
  std::function<void(const v2x::LogRecord&)> message_log;
  std::function<void(const nlohmann::json&)> trajectory_log;
};

/// One seed of one arm, run to completion.
RunResult run_arm(const ExperimentSpec& spec, Arm arm, std::uint64_t seed, const RunHooks& hooks = {});

struct ArmResult {
  Arm arm = Arm::Manual;
  std::vector<std::uint64_t> seeds;
  std::vector<kpi::KpiReport> per_seed;
  kpi::KpiReport mean;
  std::vector<RunResult> runs;
};

kpi::KpiReport mean_report(const std::vector<kpi::KpiReport>& reports);

struct ExperimentResult {
  ExperimentSpec spec;
  std::optional<ArmResult> manual;
  std::optional<ArmResult> cits;
};

/// Runs every (arm, seed) pair on a pool of `threads` workers (0: hardware
/// concurrency). Output order is by arm then seed regardless of scheduling.
ExperimentResult run_experiment(const ExperimentSpec& spec, unsigned threads = 0,
                                std::function<RunHooks(Arm, std::uint64_t)> hooks = {});

enum class Sign { Minus, Plus, Approx };
std::string_view to_string(Sign s);
Sign sign_from_string(std::string_view s);

enum class Kpi { LaneChanges, Collisions, Co2, Speed, TravelTime };
std::string_view to_string(Kpi k);
Kpi kpi_from_string(std::string_view s);
const std::vector<Kpi>& all_kpis();
double kpi_value(const kpi::KpiReport& r, Kpi k);

/// Sign of cits - manual with the approximate band |delta|/|manual| < band.
Sign classify(double manual, double cits, double band = 0.02);

struct KpiComparison {
  Kpi kpi;
  double manual = 0.0;
  double cits = 0.0;
  double delta = 0.0;
  Sign sign = Sign::Approx;
};

/// Throws ValidationError when the arms were run on different seeds.
std::vector<KpiComparison> compare_arms(const ArmResult& manual, const ArmResult& cits, double band = 0.02);

struct DirectionalExpectation {
  std::string corridor;
  Service service;
  Kpi kpi;
  std::string demand;       // baseline | high
  std::string manual_text;  // table cell as printed
  std::string cits_text;
  bool empty = false;       // blank cell, never checked
  double manual = 0.0;
  double cits = 0.0;
  Sign expected = Sign::Approx;
};

/// The shipped Table fixture. `path` empty: the copy compiled into the library.
std::vector<DirectionalExpectation> load_expectations(const std::filesystem::path& path = {});
std::vector<DirectionalExpectation> expectations_from_json(const nlohmann::json& j);
nlohmann::json expectations_document();

struct Verdict {
  Kpi kpi;
  Sign expected = Sign::Approx;
  Sign measured = Sign::Approx;
  double manual = 0.0;
  double cits = 0.0;
  double table_manual = 0.0;
  double table_cits = 0.0;
  bool skipped = false;
  bool pass = false;
};

/// One verdict per KPI of the corridor/service/demand. KPIs without a table
/// cell come back skipped. Throws NotFoundError when no row matches at all.
std::vector<Verdict> check_directions(const std::vector<KpiComparison>& comparison,
                                      const std::vector<DirectionalExpectation>& expectations,
                                      const std::string& corridor, Service service, Demand demand);

struct ReportFiles {
  std::filesystem::path csv;
  std::filesystem::path summary;
  std::filesystem::path jsonl;
  int failures = 0;
};

/// Writes results.csv (arm x seed rows), results.jsonl and summary.txt into
/// `dir`. Throws Error when the directory cannot be written.
ReportFiles write_report(const std::vector<ExperimentResult>& results,
                         const std::vector<DirectionalExpectation>& expectations,
                         const std::filesystem::path& dir);

}  // namespace citsim::harness
