// citsim command line: batch experiments, fixtures, log analysis, service mode.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>

#include <CLI11.hpp>

#include "citsim/control.hpp"
#include "citsim/error.hpp"
#include "citsim/harness.hpp"
#include "citsim/kpi.hpp"
#include "citsim/pilotlog.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace citsim;

namespace {

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot read " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(p.string() + ": " + e.what());
  }
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw Error("cannot write " + p.string());
}

struct SimulateArgs {
  std::string spec_file;
  std::string corridor = "attica";
  std::string service = "hln-wcw";
  std::string demand = "baseline";
  std::string arm = "both";
  std::string channel = "cellular";
  int seeds = 10;
  std::string out = "out";
  bool strict = false;
  bool trajectory_log = false;
  bool message_log = false;
  unsigned threads = 0;
  double equipped = -1.0;
};

int simulate(const SimulateArgs& a, const CLI::App& cmd) {
  auto given = [&](const char* name) { return cmd.count(name) > 0; };
  harness::ExperimentSpec spec;
  if (!a.spec_file.empty()) {
    spec = harness::spec_from_json(read_json(a.spec_file));
    if (given("--corridor") || given("--service") || given("--demand")) {
      // the event template follows the corridor and service
      auto base = harness::default_spec(given("--corridor") ? a.corridor : spec.corridor,
                                        given("--service") ? harness::service_from_string(a.service) : spec.service,
                                        given("--demand") ? harness::demand_from_string(a.demand) : spec.demand);
      base.seeds = spec.seeds;
      base.profile = spec.profile;
      base.sim = spec.sim;
      base.channel = spec.channel;
      base.equipped_fraction = spec.equipped_fraction;
      base.tcs_enabled = spec.tcs_enabled;
      base.arm = spec.arm;
      spec = base;
    }
  } else {
    spec = harness::default_spec(a.corridor, harness::service_from_string(a.service),
                                 harness::demand_from_string(a.demand), a.seeds);
  }
  if (given("--seeds")) {
    spec.seeds.clear();
    for (int i = 1; i <= a.seeds; ++i) spec.seeds.push_back(static_cast<std::uint64_t>(i));
  }
  if (a.spec_file.empty() || given("--arm")) {
    spec.arm.reset();
    if (a.arm != "both") spec.arm = harness::arm_from_string(a.arm);
  }
  if (a.spec_file.empty() || given("--channel")) spec.channel = v2x::channel_kind_from_string(a.channel);
  if (a.equipped >= 0.0) spec.equipped_fraction = a.equipped;
  spec.validate();

  const fs::path out(a.out);
  fs::create_directories(out);
  write_text(out / "spec.json", harness::to_json(spec).dump(2) + "\n");

  auto hooks = [&](harness::Arm arm, std::uint64_t seed) {
    harness::RunHooks h;
    const std::string tag = std::string(harness::to_string(arm)) + "-seed" + std::to_string(seed);
    if (a.trajectory_log) {
      auto f = std::make_shared<std::ofstream>(out / ("trajectory-" + tag + ".jsonl"));
      h.trajectory_log = [f](const json& r) { *f << r.dump() << '\n'; };
    }
    if (a.message_log) {
      auto f = std::make_shared<std::ofstream>(out / ("messages-" + tag + ".jsonl"));
      const std::string session = spec.corridor + "-" + std::string(harness::to_string(spec.service)) + "-" + tag;
      h.message_log = [f, session](const v2x::LogRecord& m) {
        *f << pilotlog::to_line(pilotlog::from_message(m, session)) << '\n';
      };
    }
    return h;
  };
  const auto result = harness::run_experiment(spec, a.threads, hooks);
  const auto files = harness::write_report({result}, harness::load_expectations(), out);
  std::ifstream summary(files.summary);
  std::cout << summary.rdbuf();
  if (a.strict && files.failures > 0) return 3;
  return 0;
}

void show_expectations() {
  const auto rows = harness::load_expectations();
  std::printf("%-8s %-8s %-9s %-13s %-14s %-14s %s\n", "corridor", "service", "demand", "kpi", "manual", "cits",
              "expected");
  for (const auto& e : rows) {
    std::printf("%-8s %-8s %-9s %-13s %-14s %-14s %s\n", e.corridor.c_str(),
                std::string(harness::to_string(e.service)).c_str(), e.demand.c_str(),
                std::string(harness::to_string(e.kpi)).c_str(), e.empty ? "-" : e.manual_text.c_str(),
                e.empty ? "-" : e.cits_text.c_str(), e.empty ? "skip" : std::string(harness::to_string(e.expected)).c_str());
  }
}

int loganalyze(const std::string& in, const std::string& windows, const std::string& out) {
  const auto w = pilotlog::load_windows(windows);
  const auto summaries = pilotlog::summarize_periods(pilotlog::list_log_files(in), w);
  const auto text = pilotlog::format_report(summaries);
  std::cout << text;
  if (!out.empty()) {
    write_text(out, text);
    write_text(out + ".json", pilotlog::to_json(summaries).dump(2) + "\n");
  }
  return 0;
}

control::ControlServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Motorway corridor simulator with a cooperative-ITS message layer"};
  app.require_subcommand(1);

  SimulateArgs sa;
  auto* sim = app.add_subcommand("simulate", "Run manual and C-ITS arms and check KPI directions");
  sim->add_option("--spec", sa.spec_file, "Experiment document (JSON)")->check(CLI::ExistingFile);
  sim->add_option("--corridor", sa.corridor, "attica | egnatia");
  sim->add_option("--service", sa.service, "hln-wcw | tja | rww-lc | hln-or");
  sim->add_option("--demand", sa.demand, "baseline | high");
  sim->add_option("--arm", sa.arm, "manual | cits | both");
  sim->add_option("--seeds", sa.seeds, "Replications, seeds 1..N")->check(CLI::PositiveNumber);
  sim->add_option("--channel", sa.channel, "itsg5 | cellular");
  sim->add_option("--out", sa.out, "Report directory");
  sim->add_option("--threads", sa.threads, "Worker threads, 0 = all cores");
  sim->add_option("--equipped-fraction", sa.equipped, "Equipped share in the C-ITS arm");
  sim->add_flag("--strict", sa.strict, "Exit 3 on any directional mismatch");
  sim->add_flag("--trajectory-log", sa.trajectory_log, "Write per-step vehicle records");
  sim->add_flag("--message-log", sa.message_log, "Write CAM/DENM records in session-log form");

  auto* ex = app.add_subcommand("expectations", "Directional expectation fixture");
  ex->require_subcommand(1);
  auto* ex_show = ex->add_subcommand("show", "Print the table cells and expected signs");
  auto* ex_dump = ex->add_subcommand("dump", "Print the fixture document");

  std::string la_in, la_windows, la_out;
  auto* la = app.add_subcommand("loganalyze", "Summarize session logs by period");
  la->add_option("--in", la_in, "Log directory")->required()->check(CLI::ExistingDirectory);
  la->add_option("--windows", la_windows, "Period windows (JSON)")->required()->check(CLI::ExistingFile);
  la->add_option("--out", la_out, "Report file; JSON goes next to it");

  std::string syn_out = "corpus";
  std::uint64_t syn_seed = 1;
  auto* syn = app.add_subcommand("synth-corpus", "Write the synthetic pilot-log corpus");
  syn->add_option("--out", syn_out, "Target directory");
  syn->add_option("--seed", syn_seed, "Generator seed");

  std::string host = "127.0.0.1";
  int port = 8080;
  double fps = 2.0;
  std::size_t max_vehicles = 2000;
  auto* serve = app.add_subcommand("serve", "Control API for live runs");
  serve->add_option("--host", host);
  serve->add_option("--port", port);
  serve->add_option("--fps", fps, "Stream frames per second of wall time");
  serve->add_option("--max-vehicles", max_vehicles, "Vehicles per streamed frame");

  std::string preset_out = "presets";
  auto* presets = app.add_subcommand("presets", "Corridor presets");
  presets->require_subcommand(1);
  auto* presets_list = presets->add_subcommand("list", "Print the corridor list");
  auto* presets_export = presets->add_subcommand("export", "Write <dir>/<name>/corridor.json");
  presets_export->add_option("--out", preset_out);
  auto* co2 = app.add_subcommand("co2-calibrate", "Print the default emission model document");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return simulate(sa, *sim);
    if (ex_show->parsed()) {
      show_expectations();
      return 0;
    }
    if (ex_dump->parsed()) {
      std::cout << harness::expectations_document().dump(2) << '\n';
      return 0;
    }
    if (la->parsed()) return loganalyze(la_in, la_windows, la_out);
    if (syn->parsed()) {
      const auto files = pilotlog::write_synthetic_corpus(syn_out, pilotlog::pilot_corpus_cells(), syn_seed);
      std::cout << files.size() << " files written under " << syn_out << '\n';
      return 0;
    }
    if (serve->parsed()) {
      control::RunManager runs;
      control::ControlServer server(runs, fps, max_vehicles);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cerr << "listening on " << host << ":" << port << '\n';
      server.listen(host, port);
      g_server = nullptr;
      return 0;
    }
    if (presets_list->parsed()) {
      std::cout << control::presets_document().dump(2) << '\n';
      return 0;
    }
    if (presets_export->parsed()) {
      for (const auto& name : net::preset_names()) {
        const fs::path p = fs::path(preset_out) / name / "corridor.json";
        write_text(p, net::save_preset_document(net::corridor_preset(name)));
        std::cout << p.string() << '\n';
      }
      return 0;
    }
    if (co2->parsed()) {
      std::cout << kpi::to_json(kpi::default_co2_model()).dump(2) << '\n';
      return 0;
    }
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return 2;
  } catch (const NotFoundError& e) {
    std::cerr << "not found: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
