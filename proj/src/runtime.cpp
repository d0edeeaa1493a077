#include "urjkit/runtime.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <thread>

namespace urjkit {

using telemetry::json;

std::string_view to_string(ExitReason reason) {
  switch (reason) {
    case ExitReason::Completed: return "COMPLETED";
    case ExitReason::Alarm: return "ALARM";
    case ExitReason::Fault: return "FAULT";
    case ExitReason::Stopped: return "STOPPED";
  }
  return "?";
}

int exit_code(ExitReason reason) {
  switch (reason) {
    case ExitReason::Alarm: return kExitAlarm;
    case ExitReason::Fault: return kExitFault;
    default: return kExitOk;
  }
}

json to_json(const RunSummary& s) {
  json alarms = json::array();
  for (const auto& [t, zone] : s.alarms) alarms.push_back({{"t", t}, {"zone", zone}});
  json faults = json::array();
  for (const auto& [t, what] : s.faults) faults.push_back({{"t", t}, {"fault", what}});
  return {{"reason", to_string(s.reason)}, {"exit_code", exit_code(s.reason)}, {"t_end", s.t_end},
          {"ticks", s.ticks},              {"envelopes", s.envelopes},          {"alarms", alarms},
          {"faults", faults},              {"commands", s.commands},            {"nacks", s.nacks},
          {"pressure_steps", s.pressure_steps}};
}

Session::Session(SystemConfig config, SessionOptions options) : config_(std::move(config)), options_(std::move(options)) {
  const auto timeout = std::chrono::microseconds(std::llround(config_.bus_timeout_ms * 1000.0));
  if (options_.backend == Backend::Sim) {
    world_ = std::make_unique<sim::World>(config_.sim);
    master_ = std::make_unique<bus::BusMaster>(world_->bus(), timeout);
  } else {
    if (config_.serial_port.empty()) throw ConfigError("bus.port: required for the serial backend");
    serial_ = std::make_unique<bus::SerialPort>(config_.serial_port, config_.baud);
    master_ = std::make_unique<bus::BusMaster>(*serial_, timeout);
  }

  hub_.add_sink([this](const telemetry::Envelope& env) { observe(env); });
  if (options_.log_path) {
    json extra = options_.log_header_extra;
    extra["backend"] = options_.backend == Backend::Sim ? "SIM" : "SERIAL";
    if (world_) extra["seed"] = config_.sim.seed;
    log_ = std::make_unique<telemetry::LogWriter>(*options_.log_path, extra);
    hub_.add_sink([this](const telemetry::Envelope& env) { log_->write(env); });
  }

  robot_ = std::make_unique<Robot>(config_, *master_, options_.backend, hub_);
  if (world_) {
    robot_->set_fault_hook([this](const json& j) {
      auto resolve = [this](const std::string& name) -> std::optional<std::uint8_t> {
        if (const auto* jc = config_.find_joint(name)) return jc->device_id;
        return std::nullopt;
      };
      sim::Fault f = sim::fault_from_json(j, resolve);
      if (!j.contains("at")) f.at = world_->now();
      world_->inject(f);
    });
    robot_->set_fuse_hook([this] { world_->cut_power(); });
  }
  robot_->publish_event(0.0, event::kSession, "start",
                        {{"backend", options_.backend == Backend::Sim ? "SIM" : "SERIAL"},
                         {"joints", config_.joints.size()},
                         {"control_rate_hz", config_.control_rate_hz}});
}

Session::~Session() {
  try {
    shutdown("session closed");
  } catch (...) {
  }
}

void Session::observe(const telemetry::Envelope& env) {
  ++summary_.envelopes;
  const auto* ev = std::get_if<telemetry::EventBody>(&env.body);
  if (!ev) return;
  if (ev->kind == event::kLeakAlarm) {
    summary_.alarms.emplace_back(env.t, ev->detail);
  } else if (ev->kind == event::kOvercurrentShutdown || ev->kind == event::kBusFault || ev->kind == event::kFuse) {
    summary_.faults.emplace_back(env.t, ev->kind + ": " + ev->detail);
  } else if (ev->kind == event::kCommand) {
    ++summary_.commands;
    if (!ev->data.value("ok", true)) ++summary_.nacks;
  } else if (ev->kind == event::kPressure) {
    ++summary_.pressure_steps;
  }
}

void Session::submit(telemetry::Command cmd, telemetry::Dispatcher::ReplyFn reply_to) {
  dispatcher_.submit(std::move(cmd), reply_to ? std::move(reply_to) : [](const telemetry::Reply&) {});
}

void Session::apply(const sim::ScheduledAction& action) {
  if (action.pressure) {
    if (!world_) throw ConfigError("scenario pressure steps need the simulator backend");
    world_->set_pressure(*action.pressure);
    robot_->publish_event(now(), event::kPressure, "chamber pressure set",
                          {{"pressure_bar", *action.pressure / 1e5}});
  }
  if (action.command) submit(*action.command);
}

void Session::step() {
  dispatcher_.drain([this](const telemetry::Command& cmd) { return robot_->handle(cmd); });
  Observations obs;
  if (world_) {
    world_->step();
    obs.env = world_->take_env_samples();
    obs.pressure = world_->pressure();
    obs.power = world_->power();
  }
  ++ticks_;
  robot_->tick(now(), obs);
}

RunSummary Session::run(const sim::SimScenario& scenario, const RunControl& control) {
  const double tick = config_.tick();
  const bool endless = !std::isfinite(scenario.duration);
  const auto total = endless ? std::numeric_limits<std::uint64_t>::max()
                             : static_cast<std::uint64_t>(std::llround(scenario.duration / tick));
  const auto wall_start = std::chrono::steady_clock::now();
  const std::uint64_t tick0 = ticks_;
  std::size_t next = 0;
  ExitReason reason = ExitReason::Completed;

  while (ticks_ - tick0 < total) {
    if (control.stop && control.stop->load()) {
      reason = ExitReason::Stopped;
      break;
    }
    while (next < scenario.schedule.size() && scenario.schedule[next].t <= now() + 1e-9) {
      apply(scenario.schedule[next++]);
    }
    step();
    if (scenario.policy.abort_on_alarm && robot_->leak_overall() == leak::LeakState::Alarm) {
      reason = ExitReason::Alarm;
      break;
    }
    if (scenario.policy.abort_on_fault && (robot_->any_joint_fault() || robot_->fuse_blown())) {
      reason = ExitReason::Fault;
      break;
    }
    if (control.realtime > 0.0) {
      const auto due = wall_start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                        std::chrono::duration<double>(static_cast<double>(ticks_ - tick0) * tick /
                                                                      control.realtime));
      std::this_thread::sleep_until(due);
    }
  }
  summary_.reason = reason;
  shutdown(to_string(reason));
  summary_.t_end = now();
  summary_.ticks = ticks_;
  return summary_;
}

void Session::shutdown(std::string_view why) {
  if (shut_down_) return;
  shut_down_ = true;
  // Commands still queued are answered, not dropped.
  dispatcher_.drain([](const telemetry::Command& cmd) {
    return telemetry::Reply::nack(cmd.id, telemetry::reason::kPreempted, "session shutting down");
  });
  robot_->publish_event(now(), event::kShutdown, std::string(why));
  robot_->shutdown(why);
  if (log_) log_->flush();
}

}  // namespace urjkit
