#include "urjkit/joint.hpp"

#include <algorithm>
#include <cmath>

namespace urjkit::joint {

namespace {

constexpr double kTimeEps = 1e-9;

std::int64_t quantize(double value, double lsb, std::uint8_t width, std::string_view what) {
  if (!std::isfinite(value)) {
    throw JointError(JointErrorKind::OutOfRegisterRange, std::string(what) + " is not finite");
  }
  const double ticks = std::round(value / lsb);
  const double bound = std::ldexp(1.0, 8 * width - 1);
  if (ticks < -bound || ticks > bound - 1) {
    throw JointError(JointErrorKind::OutOfRegisterRange,
                     std::string(what) + " " + std::to_string(value) + " overflows register");
  }
  return static_cast<std::int64_t>(ticks);
}

}  // namespace

double joint_to_actuator(const Transmission& t, double q) { return t.direction * t.ratio * (q + t.offset); }
double actuator_to_joint(const Transmission& t, double theta) { return theta / (t.direction * t.ratio) - t.offset; }
double joint_to_actuator_velocity(const Transmission& t, double qdot) { return t.direction * t.ratio * qdot; }
double actuator_to_joint_velocity(const Transmission& t, double omega) { return omega / (t.direction * t.ratio); }
double joint_to_actuator_current(const Transmission& t, double milliamps) { return t.direction * milliamps; }
double actuator_to_joint_current(const Transmission& t, double milliamps) { return t.direction * milliamps; }

std::int64_t position_to_ticks(double rad) { return quantize(rad, kPositionLsb, 4, "position"); }
double ticks_to_position(std::int64_t ticks) { return static_cast<double>(ticks) * kPositionLsb; }
std::int64_t velocity_to_ticks(double rad_per_s) { return quantize(rad_per_s, kVelocityLsb, 4, "velocity"); }
double ticks_to_velocity(std::int64_t ticks) { return static_cast<double>(ticks) * kVelocityLsb; }
std::int64_t current_to_ticks(double milliamps) { return quantize(milliamps, kCurrentLsb, 2, "current"); }
double ticks_to_current(std::int64_t ticks) { return static_cast<double>(ticks) * kCurrentLsb; }

std::string_view to_string(ControlMode mode) {
  switch (mode) {
    case ControlMode::Current: return "CURRENT";
    case ControlMode::Velocity: return "VELOCITY";
    case ControlMode::Position: return "POSITION";
  }
  return "?";
}

std::optional<ControlMode> mode_from_string(std::string_view text) {
  if (text == "POSITION") return ControlMode::Position;
  if (text == "VELOCITY") return ControlMode::Velocity;
  if (text == "CURRENT") return ControlMode::Current;
  return std::nullopt;
}

std::optional<ControlMode> mode_from_register(std::int64_t value) {
  switch (value) {
    case 0: return ControlMode::Current;
    case 1: return ControlMode::Velocity;
    case 3: return ControlMode::Position;
    default: return std::nullopt;
  }
}

std::string_view to_string(JointFault fault) {
  return fault == JointFault::OvercurrentShutdown ? "OVERCURRENT_SHUTDOWN" : "BUS_FAULT";
}

std::string_view to_string(JointErrorKind kind) {
  switch (kind) {
    case JointErrorKind::TorqueEnabled: return "TORQUE_ENABLED";
    case JointErrorKind::TorqueDisabled: return "TORQUE_DISABLED";
    case JointErrorKind::ModeMismatch: return "MODE_MISMATCH";
    case JointErrorKind::OutOfRegisterRange: return "OUT_OF_REGISTER_RANGE";
    case JointErrorKind::FaultActive: return "FAULT_ACTIVE";
  }
  return "?";
}

JointError::JointError(JointErrorKind kind, const std::string& detail)
    : std::runtime_error(std::string(to_string(kind)) + ": " + detail), kind_(kind) {}

void validate(const JointConfig& c) {
  auto fail = [&](const std::string& field, const std::string& why) {
    throw std::invalid_argument("joint '" + c.name + "': " + field + ": " + why);
  };
  if (c.device_id > bus::kMaxDeviceId) fail("id", "must be 0..253");
  if (!(c.transmission.ratio > 0.0) || !std::isfinite(c.transmission.ratio)) fail("transmission.ratio", "must be > 0");
  if (c.transmission.direction != 1 && c.transmission.direction != -1) fail("transmission.direction", "must be +1 or -1");
  if (!std::isfinite(c.transmission.offset)) fail("transmission.offset", "must be finite");
  if (!(c.limits.position_min < c.limits.position_max)) fail("limits.position", "min must be < max");
  if (!(c.limits.velocity_max > 0.0)) fail("limits.velocity_max", "must be > 0");
  if (!(c.limits.current_max > 0.0)) fail("limits.current_max", "must be > 0");
  if (!(c.overcurrent.threshold_ma > 0.0)) fail("overcurrent.threshold_ma", "must be > 0");
  if (!(c.overcurrent.sustain_s > 0.0)) fail("overcurrent.sustain_s", "must be > 0");
  if (!(c.overcurrent.cooldown_s >= 0.0)) fail("overcurrent.cooldown_s", "must be >= 0");
  if (c.torque_constant && !(*c.torque_constant > 0.0)) fail("torque_constant", "must be > 0");
}

// ---------------------------------------------------------------------------

std::optional<OvercurrentSupervisor::Event> OvercurrentSupervisor::update(double now, double effort_ma) {
  if (tripped_at_) {
    if (now - *tripped_at_ >= config_.cooldown_s - kTimeEps) {
      tripped_at_.reset();
      above_since_.reset();
      return Event::Cleared;
    }
    return std::nullopt;
  }
  if (std::abs(effort_ma) > config_.threshold_ma) {
    if (!above_since_) above_since_ = now;
    if (now - *above_since_ >= config_.sustain_s - kTimeEps) {
      tripped_at_ = now;
      above_since_.reset();
      return Event::Shutdown;
    }
  } else {
    above_since_.reset();
  }
  return std::nullopt;
}

void OvercurrentSupervisor::reset() {
  above_since_.reset();
  tripped_at_.reset();
}

// ---------------------------------------------------------------------------

CommandOutcome plan_command(const JointConfig& config, Setpoint setpoint) {
  const auto& lim = config.limits;
  const auto& tr = config.transmission;
  CommandOutcome out;

  double lo = 0.0;
  double hi = 0.0;
  switch (setpoint.kind) {
    case ControlMode::Position: lo = lim.position_min; hi = lim.position_max; break;
    case ControlMode::Velocity: lo = -lim.velocity_max; hi = lim.velocity_max; break;
    case ControlMode::Current: lo = -lim.current_max; hi = lim.current_max; break;
  }
  double value = setpoint.value;
  if (std::isnan(value)) throw JointError(JointErrorKind::OutOfRegisterRange, "setpoint is NaN");
  if (value < lo || value > hi) {
    out.clamped = true;
    value = std::clamp(value, lo, hi);
  }

  auto to_ticks = [&](double q) -> std::int64_t {
    switch (setpoint.kind) {
      case ControlMode::Position: return position_to_ticks(joint_to_actuator(tr, q));
      case ControlMode::Velocity: return velocity_to_ticks(joint_to_actuator_velocity(tr, q));
      case ControlMode::Current: return current_to_ticks(joint_to_actuator_current(tr, q));
    }
    return 0;
  };
  auto from_ticks = [&](std::int64_t ticks) -> double {
    switch (setpoint.kind) {
      case ControlMode::Position: return actuator_to_joint(tr, ticks_to_position(ticks));
      case ControlMode::Velocity: return actuator_to_joint_velocity(tr, ticks_to_velocity(ticks));
      case ControlMode::Current: return actuator_to_joint_current(tr, ticks_to_current(ticks));
    }
    return 0.0;
  };

  std::int64_t ticks = to_ticks(value);
  // Rounding can land half an LSB past a limit; step back inside. Joint space
  // increases with ticks when direction is +1.
  const std::int64_t inward = tr.direction > 0 ? -1 : 1;
  for (int i = 0; i < 2 && from_ticks(ticks) > hi; ++i) ticks += inward;
  for (int i = 0; i < 2 && from_ticks(ticks) < lo; ++i) ticks -= inward;

  out.register_value = ticks;
  out.applied = from_ticks(ticks);
  switch (setpoint.kind) {
    case ControlMode::Position: out.goal_register = bus::Register::GoalPosition; break;
    case ControlMode::Velocity: out.goal_register = bus::Register::GoalVelocity; break;
    case ControlMode::Current: out.goal_register = bus::Register::GoalCurrent; break;
  }
  return out;
}

Joint::Joint(JointConfig config, bus::BusMaster& bus)
    : config_(std::move(config)), bus_(bus), supervisor_(config_.overcurrent) {
  validate(config_);
}

void Joint::set_torque(bool enabled) {
  if (enabled && state_.fault == JointFault::OvercurrentShutdown) {
    throw JointError(JointErrorKind::FaultActive, "overcurrent cooldown in progress on '" + config_.name + "'");
  }
  bus_.write_register(id(), bus::Register::TorqueEnable, enabled ? 1 : 0);
  state_.torque_enabled = enabled;
}

void Joint::set_mode(ControlMode mode) {
  if (state_.torque_enabled) {
    throw JointError(JointErrorKind::TorqueEnabled, "disable torque on '" + config_.name + "' before changing mode");
  }
  bus_.write_register(id(), bus::Register::OperatingMode, static_cast<std::int64_t>(mode));
  state_.mode = mode;
}

CommandOutcome Joint::command(Setpoint setpoint) {
  if (!state_.torque_enabled) {
    throw JointError(JointErrorKind::TorqueDisabled, "enable torque on '" + config_.name + "' first");
  }
  if (setpoint.kind != state_.mode) {
    throw JointError(JointErrorKind::ModeMismatch, std::string(to_string(setpoint.kind)) + " setpoint while '" +
                                                       config_.name + "' is in " + std::string(to_string(state_.mode)));
  }
  const CommandOutcome out = plan_command(config_, setpoint);
  bus_.write_register(id(), out.goal_register, out.register_value);
  return out;
}

const JointState& Joint::refresh(double now) {
  const auto& table = bus::ControlTable::standard();
  const auto& cur = table.info(bus::Register::PresentCurrent);
  const auto& vel = table.info(bus::Register::PresentVelocity);
  const auto& pos = table.info(bus::Register::PresentPosition);
  const auto span = static_cast<std::uint8_t>(pos.address + pos.width - cur.address);
  bus::Bytes block;
  try {
    block = bus_.read_block(id(), cur.address, span);
  } catch (const bus::BusError&) {
    state_.fault = JointFault::BusFault;
    throw;
  }
  const std::span<const std::uint8_t> view(block);
  const auto current = bus::unpack_le(view.subspan(0, cur.width), true);
  const auto velocity = bus::unpack_le(view.subspan(vel.address - cur.address, vel.width), true);
  const auto position = bus::unpack_le(view.subspan(pos.address - cur.address, pos.width), true);

  const auto& tr = config_.transmission;
  state_.t = now;
  state_.position = actuator_to_joint(tr, ticks_to_position(position));
  state_.velocity = actuator_to_joint_velocity(tr, ticks_to_velocity(velocity));
  state_.effort = actuator_to_joint_current(tr, ticks_to_current(current));
  if (state_.fault == JointFault::BusFault) state_.fault.reset();
  return state_;
}

std::optional<OvercurrentSupervisor::Event> Joint::supervise(double now) {
  const auto event = supervisor_.update(now, state_.effort);
  if (event == OvercurrentSupervisor::Event::Shutdown) {
    state_.fault = JointFault::OvercurrentShutdown;
    bus_.write_register(id(), bus::Register::TorqueEnable, 0);
    state_.torque_enabled = false;
  } else if (event == OvercurrentSupervisor::Event::Cleared) {
    state_.fault.reset();
  }
  return event;
}

std::optional<double> Joint::effort_torque() const {
  if (!config_.torque_constant) return std::nullopt;
  return state_.effort / 1000.0 * *config_.torque_constant;
}

std::vector<CommandOutcome> sync_position_goals(bus::BusMaster& bus, std::span<Joint* const> joints,
                                                std::span<const double> positions) {
  if (joints.size() != positions.size()) throw std::invalid_argument("joints/positions size mismatch");
  std::vector<CommandOutcome> outcomes;
  std::vector<std::pair<std::uint8_t, std::int64_t>> entries;
  for (std::size_t i = 0; i < joints.size(); ++i) {
    Joint& j = *joints[i];
    if (j.state().mode != ControlMode::Position) {
      throw JointError(JointErrorKind::ModeMismatch, "'" + j.config().name + "' is not in POSITION mode");
    }
    outcomes.push_back(plan_command(j.config(), Setpoint::position(positions[i])));
    entries.emplace_back(j.id(), outcomes.back().register_value);
  }
  bus.sync_write(bus::Register::GoalPosition, entries);
  return outcomes;
}

}  // namespace urjkit::joint
