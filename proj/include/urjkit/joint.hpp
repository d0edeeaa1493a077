#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "urjkit/constants.hpp"
#include "urjkit/servobus.hpp"

namespace urjkit::joint {

/// Affine map between joint space and actuator space:
/// actuator = direction * ratio * (joint + offset).
struct Transmission {
  double ratio = 1.0;
  int direction = 1;
  double offset = 0.0;  // rad, joint side
};

double joint_to_actuator(const Transmission& t, double q);
double actuator_to_joint(const Transmission& t, double theta);
double joint_to_actuator_velocity(const Transmission& t, double qdot);
double actuator_to_joint_velocity(const Transmission& t, double omega);
/// Effort is motor current; only the direction applies.
double joint_to_actuator_current(const Transmission& t, double milliamps);
double actuator_to_joint_current(const Transmission& t, double milliamps);

// Register quantization.
inline constexpr double kPositionLsb = 2.0 * kPi / 4096.0;  // rad
inline constexpr double kVelocityLsb = 0.025;               // rad/s
inline constexpr double kCurrentLsb = 1.0;                  // mA

std::int64_t position_to_ticks(double rad);
double ticks_to_position(std::int64_t ticks);
std::int64_t velocity_to_ticks(double rad_per_s);
double ticks_to_velocity(std::int64_t ticks);
std::int64_t current_to_ticks(double milliamps);
double ticks_to_current(std::int64_t ticks);

/// OPERATING_MODE register codes.
enum class ControlMode : std::uint8_t { Current = 0, Velocity = 1, Position = 3 };

std::string_view to_string(ControlMode mode);
std::optional<ControlMode> mode_from_string(std::string_view text);
std::optional<ControlMode> mode_from_register(std::int64_t value);

struct Limits {
  double position_min = -kPi;
  double position_max = kPi;
  double velocity_max = 4.0;    // rad/s
  double current_max = 2000.0;  // mA
};

struct OvercurrentConfig {
  double threshold_ma = 1500.0;
  double sustain_s = 1.0;
  double cooldown_s = 5.0;
};

struct JointConfig {
  std::string name;
  std::uint8_t device_id = 1;
  Transmission transmission;
  Limits limits;
  OvercurrentConfig overcurrent;
  /// Optional torque constant (N*m per A) for reporting effort as torque.
  std::optional<double> torque_constant;
};

/// Throws std::invalid_argument naming the offending field.
void validate(const JointConfig& config);

enum class JointFault { OvercurrentShutdown, BusFault };
std::string_view to_string(JointFault fault);

/// Joint-space snapshot.
struct JointState {
  double t = 0.0;
  double position = 0.0;  // rad
  double velocity = 0.0;  // rad/s
  double effort = 0.0;    // mA
  ControlMode mode = ControlMode::Position;
  bool torque_enabled = false;
  std::optional<JointFault> fault;

  friend bool operator==(const JointState&, const JointState&) = default;
};

enum class JointErrorKind { TorqueEnabled, TorqueDisabled, ModeMismatch, OutOfRegisterRange, FaultActive };
std::string_view to_string(JointErrorKind kind);

class JointError : public std::runtime_error {
 public:
  JointError(JointErrorKind kind, const std::string& detail);
  JointErrorKind kind() const { return kind_; }

 private:
  JointErrorKind kind_;
};

/// Trips when |effort| stays strictly above the threshold for at least the
/// sustain duration; clears after the cooldown. Pure function of the
/// (time, effort) history it is fed.
class OvercurrentSupervisor {
 public:
  enum class Event { Shutdown, Cleared };

  explicit OvercurrentSupervisor(OvercurrentConfig config) : config_(config) {}

  std::optional<Event> update(double now, double effort_ma);
  bool tripped() const { return tripped_at_.has_value(); }
  void reset();

 private:
  OvercurrentConfig config_;
  std::optional<double> above_since_;
  std::optional<double> tripped_at_;
};

struct Setpoint {
  ControlMode kind;
  double value;  // rad, rad/s or mA in joint space

  static Setpoint position(double rad) { return {ControlMode::Position, rad}; }
  static Setpoint velocity(double rad_per_s) { return {ControlMode::Velocity, rad_per_s}; }
  static Setpoint current(double milliamps) { return {ControlMode::Current, milliamps}; }
};

struct CommandOutcome {
  bool clamped = false;
  double applied = 0.0;           // joint space, after clamping and quantization
  bus::Register goal_register{};
  std::int64_t register_value = 0;
};

/// Goal register contents for a setpoint, clamped to the limits. The quantized
/// value never maps back outside the limits.
CommandOutcome plan_command(const JointConfig& config, Setpoint setpoint);

/// One actuator on the bus, seen in joint space.
class Joint {
 public:
  Joint(JointConfig config, bus::BusMaster& bus);

  const JointConfig& config() const { return config_; }
  std::uint8_t id() const { return config_.device_id; }

  void set_torque(bool enabled);
  /// Requires torque disabled.
  void set_mode(ControlMode mode);
  /// Requires torque enabled and matching mode.
  CommandOutcome command(Setpoint setpoint);
  /// Reads present current/velocity/position in one block.
  const JointState& refresh(double now);
  /// Call once per control tick after refresh().
  std::optional<OvercurrentSupervisor::Event> supervise(double now);

  const JointState& state() const { return state_; }
  /// Records a torque-off that was sent by broadcast.
  void assume_torque_off() { state_.torque_enabled = false; }
  /// Effort converted to N*m when a torque constant is configured.
  std::optional<double> effort_torque() const;

 private:
  JointConfig config_;
  bus::BusMaster& bus_;
  JointState state_;
  OvercurrentSupervisor supervisor_;
};

/// Writes GOAL_POSITION for several joints with a single SYNC_WRITE frame.
std::vector<CommandOutcome> sync_position_goals(bus::BusMaster& bus, std::span<Joint* const> joints,
                                                std::span<const double> positions);

}  // namespace urjkit::joint
