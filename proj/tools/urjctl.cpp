// urjctl: operator entry point for the urjkit stack.

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include "urjkit/config.hpp"
#include "urjkit/hydrocalc.hpp"
#include "urjkit/leakwatch.hpp"
#include "urjkit/net.hpp"
#include "urjkit/runtime.hpp"
#include "urjkit/simulator.hpp"
#include "urjkit/telemetry.hpp"

using namespace urjkit;
using telemetry::json;

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

/// Diagnostics go to stderr, one per line, with a stable prefix.
int error(int code, const std::string& message) {
  std::string line = message;
  for (auto& c : line) {
    if (c == '\n') c = ' ';
  }
  std::fprintf(stderr, "urjctl: error: %s\n", line.c_str());
  return code;
}

void print(const json& j) { std::cout << j.dump() << std::endl; }

SystemConfig config_or_default(const std::string& path) { return path.empty() ? default_config() : load_config(path); }

/// Writes ENV envelopes (and LEAK injections as onset annotations) as a leak trace.
class TraceSink {
 public:
  explicit TraceSink(const std::string& path) : out_(path) {
    if (!out_) throw std::runtime_error("cannot open trace file " + path);
    out_ << "# urjkit leak trace v1\n";
  }
  void operator()(const telemetry::Envelope& env) {
    if (const auto* s = std::get_if<leak::EnvSample>(&env.body)) {
      out_ << leak::format_trace_line(*s);
    } else if (const auto* e = std::get_if<telemetry::EventBody>(&env.body)) {
      if (e->kind == "FAULT_INJECTED" && e->data.value("kind", "") == "LEAK") {
        out_ << "# onset " << e->data.value("zone", "?") << ' ' << e->data.value("at", env.t) << '\n';
      }
    }
  }

 private:
  std::ofstream out_;
};

struct ServeFlags {
  std::string listen;
  std::string ws;
  std::string token;
};

std::unique_ptr<net::TelemetryServer> maybe_serve(Session& session, const ServeFlags& f) {
  if (f.listen.empty() && f.ws.empty()) return nullptr;
  net::ServerOptions opts;
  if (!f.listen.empty()) opts.tcp = net::parse_endpoint(f.listen);
  if (!f.ws.empty()) opts.websocket = net::parse_endpoint(f.ws);
  opts.token = f.token.empty() ? session.config().token : f.token;
  auto server = std::make_unique<net::TelemetryServer>(session.hub(), session.dispatcher(), opts);
  server->start();
  std::fprintf(stderr, "urjctl: listening tcp=%u ws=%u\n", server->tcp_port(), server->websocket_port());
  return server;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"urjkit operator tool: simulate, operate, check leak traces, compute, replay"};
  app.require_subcommand(1);

  // sim
  auto* sim_cmd = app.add_subcommand("sim", "Run a scenario against the digital twin");
  std::string sim_config, sim_scenario, sim_log, sim_trace;
  bool sim_hyperbaric = false;
  std::optional<std::uint64_t> sim_seed;
  double sim_realtime = 0.0;
  ServeFlags sim_serve;
  sim_cmd->add_option("-c,--config", sim_config, "System config (JSON); built-in default if omitted");
  auto* scen_opt = sim_cmd->add_option("-s,--scenario", sim_scenario, "Scenario file (JSON)");
  sim_cmd->add_flag("--hyperbaric", sim_hyperbaric, "Run the built-in hyperbaric pressure staircase")->excludes(scen_opt);
  sim_cmd->add_option("--log", sim_log, "Telemetry log output");
  sim_cmd->add_option("--trace", sim_trace, "Leak trace output");
  sim_cmd->add_option("--seed", sim_seed, "Override the config seed");
  sim_cmd->add_option("--realtime", sim_realtime, "Virtual seconds per wall second (0: as fast as possible)");
  sim_cmd->add_option("--listen", sim_serve.listen, "Serve telemetry on host:port (stream socket)");
  sim_cmd->add_option("--ws", sim_serve.ws, "Serve the web-socket gateway on host:port");

  // operate
  auto* op_cmd = app.add_subcommand("operate", "Serve telemetry and commands for a live session");
  std::string op_config, op_backend = "sim", op_port, op_log, op_listen = "127.0.0.1:7300", op_ws = "127.0.0.1:7301",
                         op_token;
  double op_duration = std::numeric_limits<double>::infinity();
  double op_realtime = 1.0;
  op_cmd->add_option("-c,--config", op_config, "System config (JSON)");
  op_cmd->add_option("--backend", op_backend, "sim or serial")->check(CLI::IsMember({"sim", "serial"}));
  op_cmd->add_option("--port", op_port, "Serial device (overrides bus.port)");
  op_cmd->add_option("--log", op_log, "Telemetry log output");
  op_cmd->add_option("--listen", op_listen, "Stream socket host:port");
  op_cmd->add_option("--ws", op_ws, "Web-socket gateway host:port");
  op_cmd->add_option("--token", op_token, "Session token (overrides config)");
  op_cmd->add_option("--duration", op_duration, "Stop after this many seconds of session time");
  op_cmd->add_option("--realtime", op_realtime, "Virtual seconds per wall second (sim backend)");

  // leakcheck
  auto* lc_cmd = app.add_subcommand("leakcheck", "Run the leak detector over a trace file");
  std::string lc_trace;
  leak::DetectorConfig lc_cfg;
  bool lc_json = false;
  lc_cmd->add_option("trace", lc_trace, "Trace file")->required();
  lc_cmd->add_option("--window", lc_cfg.baseline_window_s, "Baseline window, s");
  lc_cmd->add_option("--delta", lc_cfg.alarm_delta, "Alarm threshold, %RH above baseline");
  lc_cmd->add_option("--warn", lc_cfg.warn_delta, "Warn threshold, %RH above baseline");
  lc_cmd->add_option("--persistence", lc_cfg.persistence, "Consecutive samples required");
  lc_cmd->add_option("--ceiling", lc_cfg.sensor_ceiling, "Sensor saturation ceiling, %RH");
  lc_cmd->add_flag("--absolute", lc_cfg.absolute_humidity_mode, "Use absolute humidity (g/m^3)");
  lc_cmd->add_flag("--json", lc_json, "JSON report");

  // calc
  auto* calc_cmd = app.add_subcommand("calc", "Hydrostatic and structural calculators");
  calc_cmd->require_subcommand(1);
  double rho = kSeawaterDensity;
  calc_cmd->add_option("--rho", rho, "Fluid density, kg/m^3");
  double c_bar = 0.0;
  auto* c_depth = calc_cmd->add_subcommand("depth", "Depth from absolute pressure");
  c_depth->add_option("pressure_bar", c_bar, "Absolute pressure, bar")->required();
  double c_m = 0.0;
  auto* c_press = calc_cmd->add_subcommand("pressure", "Absolute pressure at depth");
  c_press->add_option("depth_m", c_m, "Depth, m")->required();
  double c_mass = 0.0, c_material = 11340.0;
  auto* c_weight = calc_cmd->add_subcommand("weight", "Effective underwater weight of a ballast mass");
  c_weight->add_option("mass_kg", c_mass, "Mass, kg")->required();
  c_weight->add_option("--material-density", c_material, "Material density, kg/m^3 (default lead)");
  double c_dry = 0.449, c_sub = 0.250;
  std::optional<double> c_volume;
  auto* c_buoy = calc_cmd->add_subcommand("buoyancy", "Submerged weight and displaced volume");
  c_buoy->add_option("--dry-mass", c_dry, "Dry mass, kg");
  c_buoy->add_option("--underwater", c_sub, "Measured underwater weight, kgf");
  c_buoy->add_option("--volume", c_volume, "Displaced volume, m^3 (instead of --underwater)");
  hydro::Enclosure c_enc;
  double c_bdepth = 200.0;
  bool c_strict = false;
  auto* c_buck = calc_cmd->add_subcommand("buckling", "Canister collapse margin");
  c_buck->add_option("--diameter", c_enc.outer_diameter, "Outer diameter, m");
  c_buck->add_option("--thickness", c_enc.wall_thickness, "Wall thickness, m");
  c_buck->add_option("--length", c_enc.length, "Unsupported length, m");
  c_buck->add_option("--modulus", c_enc.material.elastic_modulus, "Elastic modulus, Pa");
  c_buck->add_option("--poisson", c_enc.material.poisson_ratio, "Poisson ratio");
  c_buck->add_option("--yield", c_enc.material.yield_strength, "Yield strength, Pa");
  c_buck->add_option("--depth", c_bdepth, "Rated depth, m");
  c_buck->add_flag("--strict", c_strict, "Reject thick walls instead of flagging them");

  // replay
  auto* rp_cmd = app.add_subcommand("replay", "Validate and re-emit a telemetry log");
  std::string rp_log;
  bool rp_print = false;
  rp_cmd->add_option("log", rp_log, "Log file")->required();
  rp_cmd->add_flag("--print", rp_print, "Print every envelope");

  // send / watch
  auto* send_cmd = app.add_subcommand("send", "Send one command to a running session");
  std::string s_connect = "127.0.0.1:7300", s_token = "urjkit", s_kind, s_args = "{}", s_id = "cli-1";
  send_cmd->add_option("--connect", s_connect, "Server host:port");
  send_cmd->add_option("--token", s_token, "Session token");
  send_cmd->add_option("kind", s_kind, "Command kind, e.g. ESTOP")->required();
  send_cmd->add_option("args", s_args, "Arguments as JSON");
  send_cmd->add_option("--id", s_id, "Correlation id");

  auto* watch_cmd = app.add_subcommand("watch", "Print telemetry from a running session");
  std::string w_connect = "127.0.0.1:7300", w_token = "urjkit";
  std::vector<std::string> w_topics;
  int w_count = 0;
  watch_cmd->add_option("--connect", w_connect, "Server host:port");
  watch_cmd->add_option("--token", w_token, "Session token");
  watch_cmd->add_option("--topics", w_topics, "Topics to subscribe")->delimiter(',');
  watch_cmd->add_option("--count", w_count, "Stop after this many envelopes (0: forever)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::Error& e) {
    return error(kExitUsage, e.what());
  }

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);

  try {
    if (*sim_cmd) {
      if (sim_scenario.empty() && !sim_hyperbaric) return error(kExitUsage, "sim needs --scenario or --hyperbaric");
      SystemConfig cfg = config_or_default(sim_config);
      if (sim_seed) cfg.sim.seed = *sim_seed;
      sim::SimScenario scenario;
      if (sim_hyperbaric) {
        sim::HyperbaricPlan plan;
        plan.joint = cfg.joints.front().name;
        scenario = sim::hyperbaric_scenario(plan);
      } else {
        scenario = load_scenario(sim_scenario);
      }
      SessionOptions opts;
      if (!sim_log.empty()) opts.log_path = sim_log;
      opts.log_header_extra = {{"scenario", scenario.name}};
      Session session(cfg, opts);
      std::unique_ptr<TraceSink> trace;
      if (!sim_trace.empty()) {
        trace = std::make_unique<TraceSink>(sim_trace);
        session.hub().add_sink([&](const telemetry::Envelope& env) { (*trace)(env); });
      }
      auto server = maybe_serve(session, sim_serve);
      const auto summary = session.run(scenario, RunControl{&g_stop, sim_realtime});
      print(to_json(summary));
      return exit_code(summary.reason);
    }

    if (*op_cmd) {
      SystemConfig cfg = config_or_default(op_config);
      if (!op_port.empty()) cfg.serial_port = op_port;
      SessionOptions opts;
      opts.backend = op_backend == "serial" ? Backend::Serial : Backend::Sim;
      if (!op_log.empty()) opts.log_path = op_log;
      Session session(cfg, opts);
      auto server = maybe_serve(session, ServeFlags{op_listen, op_ws, op_token});
      sim::SimScenario forever;
      forever.name = "operate";
      forever.duration = op_duration;
      const auto summary = session.run(forever, RunControl{&g_stop, op_realtime > 0 ? op_realtime : 1.0});
      print(to_json(summary));
      return exit_code(summary.reason);
    }

    if (*lc_cmd) {
      leak::validate(lc_cfg);
      std::ifstream in(lc_trace, std::ios::binary);
      if (!in) return error(kExitUsage, lc_trace + ": cannot open");
      std::ostringstream buf;
      buf << in.rdbuf();
      leak::Trace trace;
      try {
        trace = leak::parse_trace(buf.str());
      } catch (const leak::LeakError& e) {
        return error(kExitUsage, lc_trace + ": " + e.what());
      }
      const auto report = leak::check_trace(trace, lc_cfg);
      int alarms = 0;
      json zones = json::array();
      for (const auto& z : report.zones) {
        if (z.first_alarm) ++alarms;
        json tl = json::array();
        for (const auto& [t, st] : z.transitions) tl.push_back({{"t", t}, {"state", leak::to_string(st)}});
        json zj = {{"zone", z.zone}, {"final", leak::to_string(z.final.state)}, {"baseline", z.final.baseline},
                   {"timeline", tl}, {"false_alarm", z.false_alarm}};
        if (z.first_alarm) zj["first_alarm"] = *z.first_alarm;
        if (z.onset) zj["onset"] = *z.onset;
        if (z.latency) zj["latency"] = *z.latency;
        zones.push_back(zj);
        if (!lc_json) {
          std::cout << "zone " << z.zone << ": " << leak::to_string(z.final.state) << " baseline " << z.final.baseline;
          for (const auto& [t, st] : z.transitions) std::cout << " | " << t << "s " << leak::to_string(st);
          if (z.latency) std::cout << " | latency " << *z.latency << "s";
          if (z.false_alarm) std::cout << " | FALSE ALARM";
          std::cout << "\n";
        }
      }
      if (lc_json) {
        print({{"overall", leak::to_string(report.overall)}, {"false_alarms", report.false_alarms}, {"zones", zones}});
      } else {
        if (alarms == 0) std::cout << "no alarms\n";
        std::cout << "overall " << leak::to_string(report.overall) << ", false alarms " << report.false_alarms << "\n";
      }
      return alarms > 0 ? kExitAlarm : kExitOk;
    }

    if (*calc_cmd) {
      if (*c_depth) {
        const auto d = telemetry::depth_from_pressure(c_bar * 1e5, rho);
        print({{"pressure_bar", c_bar}, {"rho", rho}, {"depth_m", d.depth}, {"surface", d.surface}});
      } else if (*c_press) {
        const double p = hydro::pressure_at_depth(c_m, rho);
        print({{"depth_m", c_m}, {"rho", rho}, {"pressure_pa", p}, {"pressure_bar", p / 1e5}});
      } else if (*c_weight) {
        const auto w = hydro::effective_underwater_weight(c_mass, c_material, rho);
        print({{"mass_kg", c_mass}, {"material_density", c_material}, {"rho", rho}, {"kgf", w.kgf}, {"newtons", w.newtons}});
      } else if (*c_buoy) {
        const double v = c_volume ? *c_volume : hydro::displaced_volume_for(c_dry, c_sub, rho);
        const auto w = hydro::submerged_weight({c_dry, v, rho});
        print({{"dry_mass_kg", c_dry}, {"displaced_volume_m3", v}, {"rho", rho}, {"submerged_kgf", w.kgf},
               {"submerged_n", w.newtons}});
      } else if (*c_buck) {
        const auto r = hydro::buckling_margin(c_enc, c_bdepth, rho, c_strict);
        print({{"depth_m", c_bdepth},
               {"critical_pressure_pa", r.critical_pressure},
               {"yield_pressure_pa", r.yield_pressure},
               {"hydrostatic_pa", r.hydrostatic},
               {"margin", r.surface ? json("inf") : json(r.margin)},
               {"surface", r.surface},
               {"thin_wall_violation", r.thin_wall_violation}});
      }
      return kExitOk;
    }

    if (*rp_cmd) {
      const auto envs = sim::replay_log(rp_log);
      std::map<std::string, int> counts;
      for (const auto& e : envs) {
        ++counts[std::string(telemetry::to_string(e.topic()))];
        if (rp_print) std::cout << telemetry::serialize(e) << "\n";
      }
      if (!rp_print) print({{"envelopes", envs.size()}, {"topics", counts}});
      return kExitOk;
    }

    if (*send_cmd) {
      const auto kind = telemetry::command_kind_from_string(s_kind);
      if (!kind) return error(kExitUsage, "unknown command kind '" + s_kind + "'");
      json args;
      try {
        args = parse_json_text(s_args, "args");
      } catch (const ConfigError& e) {
        return error(kExitUsage, e.what());
      }
      net::TelemetryClient client;
      client.connect(net::parse_endpoint(s_connect), s_token, {telemetry::Topic::Event});
      const auto reply = client.send(telemetry::Command{s_id, *kind, args});
      print(telemetry::to_json(reply));
      return reply.ok ? kExitOk : kExitFailure;
    }

    if (*watch_cmd) {
      std::set<telemetry::Topic> topics;
      for (const auto& t : w_topics) {
        const auto topic = telemetry::topic_from_string(t);
        if (!topic) return error(kExitUsage, "unknown topic '" + t + "'");
        topics.insert(*topic);
      }
      if (topics.empty()) topics = telemetry::all_topics();
      net::TelemetryClient client;
      client.connect(net::parse_endpoint(w_connect), w_token, topics);
      int seen = 0;
      while (!g_stop && (w_count == 0 || seen < w_count)) {
        auto env = client.next(std::chrono::milliseconds(500));
        if (!env) {
          if (auto why = client.closed_reason()) return error(kExitFailure, "connection closed: " + *why);
          continue;
        }
        std::cout << telemetry::serialize(*env) << std::endl;
        ++seen;
      }
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    return error(kExitUsage, e.what());
  } catch (const std::invalid_argument& e) {
    return error(kExitUsage, e.what());
  } catch (const hydro::CalcError& e) {
    return error(kExitUsage, e.what());
  } catch (const sim::SimError& e) {
    return error(kExitFailure, e.what());
  } catch (const std::exception& e) {
    return error(kExitFailure, e.what());
  }
  return kExitOk;
}
