#include "urjkit/robot.hpp"

#include <cmath>

#include "urjkit/simulator.hpp"

namespace urjkit {

using telemetry::Command;
using telemetry::CommandKind;
using telemetry::json;
using telemetry::Reply;
namespace reason = telemetry::reason;

Robot::Robot(const SystemConfig& config, bus::BusMaster& bus, Backend backend, telemetry::Hub& hub)
    : config_(config), bus_(bus), backend_(backend), hub_(hub), fleet_(config.detector) {
  joints_.reserve(config_.joints.size());
  for (const auto& jc : config_.joints) joints_.emplace_back(jc, bus_);
  for (const auto& z : config_.sim.zones) fleet_.add_zone(z.id);
}

joint::Joint* Robot::find_joint(const json& ref) {
  for (auto& j : joints_) {
    if (ref.is_string() && j.config().name == ref.get<std::string>()) return &j;
    if (ref.is_number_integer() && ref.get<int>() == j.id()) return &j;
  }
  return nullptr;
}

bool Robot::any_joint_fault() const {
  for (const auto& j : joints_) {
    if (j.state().fault) return true;
  }
  return false;
}

bool Robot::in_gait(const joint::Joint* j) const {
  if (!gait_) return false;
  for (const auto* g : gait_->joints) {
    if (g == j) return true;
  }
  return false;
}

void Robot::publish_event(double t, std::string_view kind, std::string detail, json data) {
  hub_.publish(t, telemetry::EventBody{std::string(kind), std::move(detail), std::move(data)});
}

void Robot::stop_gait(std::string_view why) {
  if (!gait_) return;
  gait_.reset();
  publish_event(now_, event::kGaitStop, std::string(why));
}

void Robot::all_torque_off(double now, std::string_view why) {
  std::vector<std::pair<std::uint8_t, std::int64_t>> entries;
  for (const auto& j : joints_) entries.emplace_back(j.id(), 0);
  json failed = json::array();
  try {
    bus_.sync_write(bus::Register::TorqueEnable, entries);
  } catch (const bus::BusError& e) {
    failed.push_back({{"joint", "broadcast"}, {"error", e.what()}});
  }
  json names = json::array();
  for (auto& j : joints_) {
    names.push_back(j.config().name);
    try {
      j.set_torque(false);
    } catch (const bus::BusError& e) {
      failed.push_back({{"joint", j.config().name}, {"error", e.what()}});
    }
    j.assume_torque_off();
  }
  publish_event(now, event::kTorqueOff, std::string(why), {{"joints", names}, {"failed", failed}});
}

void Robot::shutdown(std::string_view why) {
  stop_gait(why);
  all_torque_off(now_, why);
}

Reply Robot::handle(const Command& cmd) {
  Reply reply = do_handle(cmd);
  publish_event(now_, event::kCommand, std::string(telemetry::to_string(cmd.kind)),
                {{"id", cmd.id}, {"args", cmd.args}, {"ok", reply.ok}, {"reason", reply.reason}, {"detail", reply.detail}});
  return reply;
}

Reply Robot::do_handle(const Command& cmd) {
  try {
    if (cmd.kind == CommandKind::Estop) {
      stop_gait("ESTOP");
      all_torque_off(now_, "ESTOP");
      publish_event(now_, event::kEstop, "operator e-stop", {{"id", cmd.id}});
      return Reply::ack(cmd.id);
    }
    if (!cmd.args.is_object()) return Reply::nack(cmd.id, reason::kBadArgs, "args must be an object");
    if (fuse_blown_ && cmd.kind != CommandKind::ResetAlarm && cmd.kind != CommandKind::GaitStop) {
      return Reply::nack(cmd.id, reason::kFuseBlown, "motor rail is off");
    }
    switch (cmd.kind) {
      case CommandKind::SetMode: return set_mode(cmd);
      case CommandKind::Torque: return torque(cmd);
      case CommandKind::Goal: return goal(cmd);
      case CommandKind::GaitStart: return gait_start(cmd);
      case CommandKind::GaitStop: {
        const bool was = gait_active();
        stop_gait("operator");
        return was ? Reply::ack(cmd.id) : Reply{cmd.id, true, {}, "gait was not running"};
      }
      case CommandKind::ResetAlarm: return reset_alarm(cmd);
      case CommandKind::FaultInject: return fault_inject(cmd);
      case CommandKind::Estop: break;
    }
    return Reply::nack(cmd.id, reason::kBadArgs, "unhandled command");
  } catch (const joint::JointError& e) {
    switch (e.kind()) {
      case joint::JointErrorKind::TorqueEnabled: return Reply::nack(cmd.id, reason::kTorqueEnabled, e.what());
      case joint::JointErrorKind::TorqueDisabled: return Reply::nack(cmd.id, reason::kTorqueDisabled, e.what());
      case joint::JointErrorKind::ModeMismatch: return Reply::nack(cmd.id, reason::kModeMismatch, e.what());
      case joint::JointErrorKind::OutOfRegisterRange: return Reply::nack(cmd.id, reason::kLimits, e.what());
      case joint::JointErrorKind::FaultActive: return Reply::nack(cmd.id, reason::kFaultActive, e.what());
    }
    return Reply::nack(cmd.id, reason::kBadArgs, e.what());
  } catch (const bus::BusError& e) {
    return Reply::nack(cmd.id, reason::kBusError, e.what());
  } catch (const kin::KinematicsError& e) {
    return Reply::nack(cmd.id, reason::kInvalidGait, e.what());
  } catch (const json::exception& e) {
    return Reply::nack(cmd.id, reason::kBadArgs, e.what());
  }
}

Reply Robot::set_mode(const Command& cmd) {
  joint::Joint* j = find_joint(cmd.args.value("joint", json()));
  if (!j) return Reply::nack(cmd.id, reason::kUnknownJoint, cmd.args.value("joint", json()).dump());
  const auto mode = joint::mode_from_string(cmd.args.at("mode").get<std::string>());
  if (!mode) return Reply::nack(cmd.id, reason::kBadArgs, "mode must be POSITION, VELOCITY or CURRENT");
  j->set_mode(*mode);
  return Reply::ack(cmd.id);
}

Reply Robot::torque(const Command& cmd) {
  const json ref = cmd.args.value("joint", json());
  const bool enabled = cmd.args.at("enabled").get<bool>();
  std::vector<joint::Joint*> targets;
  if (ref == "all") {
    for (auto& j : joints_) targets.push_back(&j);
  } else if (auto* j = find_joint(ref)) {
    targets.push_back(j);
  } else {
    return Reply::nack(cmd.id, reason::kUnknownJoint, ref.dump());
  }
  if (enabled) {
    for (auto* j : targets) {
      if (j->state().fault == joint::JointFault::OvercurrentShutdown) {
        return Reply::nack(cmd.id, reason::kFaultActive, "overcurrent cooldown in progress on '" + j->config().name + "'");
      }
    }
  }
  for (auto* j : targets) {
    if (!enabled && in_gait(j)) stop_gait("torque disabled on '" + j->config().name + "'");
    j->set_torque(enabled);
  }
  return Reply::ack(cmd.id);
}

Reply Robot::goal(const Command& cmd) {
  joint::Joint* j = find_joint(cmd.args.value("joint", json()));
  if (!j) return Reply::nack(cmd.id, reason::kUnknownJoint, cmd.args.value("joint", json()).dump());
  std::optional<joint::Setpoint> sp;
  int given = 0;
  if (cmd.args.contains("position")) sp = joint::Setpoint::position(cmd.args.at("position").get<double>()), ++given;
  if (cmd.args.contains("velocity")) sp = joint::Setpoint::velocity(cmd.args.at("velocity").get<double>()), ++given;
  if (cmd.args.contains("current")) sp = joint::Setpoint::current(cmd.args.at("current").get<double>()), ++given;
  if (given != 1) return Reply::nack(cmd.id, reason::kBadArgs, "give exactly one of position, velocity, current");
  if (!std::isfinite(sp->value)) return Reply::nack(cmd.id, reason::kBadArgs, "setpoint must be finite");
  if (in_gait(j)) return Reply::nack(cmd.id, reason::kGaitActive, "'" + j->config().name + "' is driven by the gait");
  const auto outcome = j->command(*sp);
  Reply r = Reply::ack(cmd.id);
  if (outcome.clamped) r.detail = "clamped to " + std::to_string(outcome.applied);
  return r;
}

Reply Robot::gait_start(const Command& cmd) {
  if (!config_.leg) return Reply::nack(cmd.id, reason::kBadArgs, "no leg configured");
  if (gait_) return Reply::nack(cmd.id, reason::kGaitActive, "gait already running");
  kin::GaitParams gait = config_.leg->gait;
  for (auto it = cmd.args.begin(); it != cmd.args.end(); ++it) {
    const double v = it.value().get<double>();
    if (it.key() == "stride") gait.stride = v;
    else if (it.key() == "step_height") gait.step_height = v;
    else if (it.key() == "body_height") gait.body_height = v;
    else if (it.key() == "x_offset") gait.x_offset = v;
    else if (it.key() == "y_offset") gait.y_offset = v;
    else if (it.key() == "period") gait.period = v;
    else if (it.key() == "duty_factor") gait.duty_factor = v;
    else return Reply::nack(cmd.id, reason::kBadArgs, "unknown gait parameter '" + it.key() + "'");
  }
  Gait g;
  for (const auto& name : config_.leg->joints) {
    joint::Joint* j = find_joint(name);
    if (j->state().fault) return Reply::nack(cmd.id, reason::kFaultActive, "'" + name + "' is faulted");
    if (!j->state().torque_enabled) return Reply::nack(cmd.id, reason::kTorqueDisabled, "'" + name + "' has torque off");
    if (j->state().mode != joint::ControlMode::Position) {
      return Reply::nack(cmd.id, reason::kModeMismatch, "'" + name + "' is not in POSITION mode");
    }
    g.joints.push_back(j);
  }
  g.planner = std::make_unique<kin::GaitPlanner>(config_.leg->geometry, gait, config_.leg->branch,
                                                 config_.control_rate_hz, config_.leg->max_joint_rate);
  g.t0 = now_;
  gait_ = std::move(g);
  publish_event(now_, event::kGaitStart, "semi-elliptical gait",
                {{"stride", gait.stride},
                 {"step_height", gait.step_height},
                 {"body_height", gait.body_height},
                 {"period", gait.period},
                 {"duty_factor", gait.duty_factor}});
  return Reply::ack(cmd.id);
}

Reply Robot::reset_alarm(const Command& cmd) {
  const std::string zone = cmd.args.at("zone").get<std::string>();
  if (zone == "all") {
    fleet_.reset_all();
  } else if (fleet_.has_zone(zone)) {
    fleet_.reset(zone);
  } else {
    return Reply::nack(cmd.id, reason::kUnknownZone, zone);
  }
  const auto view = fleet_.view();
  for (const auto& [id, st] : view.zones) {
    if (zone == "all" || id == zone) hub_.publish(now_, st);
  }
  overall_ = view.overall;
  return Reply::ack(cmd.id);
}

Reply Robot::fault_inject(const Command& cmd) {
  if (backend_ != Backend::Sim || !fault_hook_) {
    return Reply::nack(cmd.id, reason::kSimOnly, "fault injection needs the simulator backend");
  }
  const json& fault = cmd.args.at("fault");
  try {
    fault_hook_(fault);
  } catch (const sim::SimError& e) {
    return Reply::nack(cmd.id, reason::kInvalidFault, e.what());
  }
  publish_event(now_, event::kFaultInjected, fault.value("kind", ""), fault);
  return Reply::ack(cmd.id);
}

bool Robot::every(double hz) const {
  const auto period = std::max<long long>(1, std::llround(config_.control_rate_hz / hz));
  return ticks_ % static_cast<std::uint64_t>(period) == 0;
}

void Robot::publish_joint_states() {
  telemetry::JointStatesBody body;
  for (const auto& j : joints_) body.joints.push_back({j.id(), j.config().name, j.state()});
  hub_.publish(now_, std::move(body));
}

void Robot::tick(double now, const Observations& obs) {
  const double dt = config_.tick();
  now_ = now;
  ++ticks_;

  for (auto& j : joints_) {
    const bool was_bus_fault = j.state().fault == joint::JointFault::BusFault;
    try {
      j.refresh(now);
    } catch (const bus::BusError& e) {
      if (!was_bus_fault) {
        publish_event(now, event::kBusFault, e.what(), {{"joint", j.config().name}});
        if (in_gait(&j)) stop_gait("bus fault on '" + j.config().name + "'");
      }
      continue;
    }
    try {
      const auto ev = j.supervise(now);
      if (ev == joint::OvercurrentSupervisor::Event::Shutdown) {
        publish_event(now, event::kOvercurrentShutdown, j.config().name,
                      {{"joint", j.config().name}, {"effort", j.state().effort}});
        if (in_gait(&j)) stop_gait("overcurrent on '" + j.config().name + "'");
      } else if (ev == joint::OvercurrentSupervisor::Event::Cleared) {
        publish_event(now, event::kOvercurrentCleared, j.config().name, {{"joint", j.config().name}});
      }
    } catch (const bus::BusError& e) {
      publish_event(now, event::kBusFault, e.what(), {{"joint", j.config().name}});
    }
  }

  if (gait_) {
    const auto q = gait_->planner->tick(now - gait_->t0);
    const double targets[] = {q.coxa, q.femur, q.tibia};
    try {
      joint::sync_position_goals(bus_, gait_->joints, targets);
    } catch (const std::exception& e) {
      stop_gait(e.what());
    }
  }

  for (const auto& s : obs.env) {
    if (!fleet_.has_zone(s.zone)) continue;
    const auto before = fleet_.view().zones.at(s.zone).state;
    const auto st = fleet_.ingest(s);
    hub_.publish(s.t, s);
    hub_.publish(s.t, st);
    if (st.state == leak::LeakState::Alarm && before != leak::LeakState::Alarm) {
      publish_event(s.t, event::kLeakAlarm, s.zone, {{"zone", s.zone}, {"baseline", st.baseline}, {"delta", st.delta}});
    }
  }
  if (!obs.env.empty()) overall_ = fleet_.view().overall;

  if (obs.pressure) pressure_ = obs.pressure;

  if (obs.power) {
    if (auto fuse = power_.update(obs.power->first, obs.power->second, dt)) {
      fuse_blown_ = true;
      stop_gait("fuse");
      publish_event(now, event::kFuse, "supply current above fuse rating",
                    {{"current", fuse->current}, {"rating", telemetry::kFuseRatingA}});
      for (auto& j : joints_) j.assume_torque_off();
      if (fuse_hook_) fuse_hook_();
    }
  }

  if (every(config_.rates.joint_states_hz)) publish_joint_states();
  if (obs.power && every(config_.rates.power_hz)) hub_.publish(now, power_.sample());
  if (pressure_ && every(config_.rates.depth_hz)) {
    hub_.publish(now, telemetry::depth_from_pressure(*pressure_, config_.fluid_density));
  }
}

}  // namespace urjkit
