#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "urjkit/constants.hpp"
#include "urjkit/joint.hpp"
#include "urjkit/leakwatch.hpp"
#include "urjkit/servobus.hpp"
#include "urjkit/telemetry.hpp"

namespace urjkit::sim {

class SimError : public std::runtime_error {
 public:
  enum class Kind { InvalidFault, VersionMismatch, CorruptLog, Scenario };
  SimError(Kind kind, const std::string& detail, std::size_t offset = 0);
  Kind kind() const { return kind_; }
  /// Byte offset into the log for CorruptLog.
  std::size_t offset() const { return offset_; }

 private:
  Kind kind_;
  std::size_t offset_;
};

// ---------------------------------------------------------------------------
// Servo device model

struct DeviceParams {
  double time_constant = 0.05;  // s, position lag
  double velocity_limit = 4.8;  // rad/s, actuator side
  double idle_current = 60.0;   // mA with torque on
  double damping = 40.0;        // mA per rad/s of achieved speed
  double blocking_gain = 1000.0;  // mA per rad/s of demanded-but-not-achieved speed
  double current_limit = 3000.0;  // mA
};

/// One simulated smart servo answering on the bus through its control table.
class SimDevice {
 public:
  SimDevice(std::uint8_t id, DeviceParams params);

  std::uint8_t id() const { return id_; }
  /// Processes one request; returns the STATUS frame for addressed requests.
  std::optional<bus::BusFrame> handle(const bus::BusFrame& request);
  void step(double dt);

  std::int64_t reg(bus::Register r) const;
  double position() const { return position_; }  // actuator rad, unquantized
  double velocity() const { return velocity_; }
  double current() const { return current_; }     // mA

  void set_hardware_error(std::uint8_t bits) { hardware_error_ = bits; }
  void set_stuck(bool stuck) { stuck_ = stuck; }
  bool stuck() const { return stuck_; }
  void add_overload(double milliamps) { overload_ += milliamps; }
  /// Rail cut: the device stops answering and goes limp.
  void power_off();
  bool powered() const { return powered_; }

 private:
  bus::BusFrame status(bus::Bytes data, std::uint8_t extra_error = 0) const;
  bool write_register(std::uint16_t address, std::span<const std::uint8_t> data);
  void publish_present();

  std::uint8_t id_;
  DeviceParams params_;
  std::map<std::uint16_t, std::int64_t> regs_;
  double position_ = 0.0;
  double velocity_ = 0.0;
  double current_ = 0.0;
  double overload_ = 0.0;
  bool stuck_ = false;
  bool powered_ = true;
  std::uint8_t hardware_error_ = 0;
};

/// Instruction-level error flag reported in the STATUS error byte.
inline constexpr std::uint8_t kInstructionError = 0x80;

/// In-memory duplex channel between a BusMaster and simulated devices. Reads
/// that find nothing pending consume the timeout in virtual bus time.
class SimBus final : public bus::Transport {
 public:
  void attach(SimDevice device);
  SimDevice& device(std::uint8_t id);
  const SimDevice& device(std::uint8_t id) const;
  bool has_device(std::uint8_t id) const;
  std::vector<std::uint8_t> ids() const;

  void write(std::span<const std::uint8_t> bytes) override;
  std::size_t read(std::span<std::uint8_t> out, std::chrono::microseconds timeout) override;

  /// Flip a CRC bit in the next `count` responses.
  void corrupt_next_responses(int count) { corrupt_ += count; }
  void step(double dt);

  std::chrono::microseconds bus_time() const { return bus_time_; }
  std::uint64_t frames_seen() const { return frames_seen_; }
  std::uint64_t broadcasts_seen() const { return broadcasts_seen_; }

 private:
  std::map<std::uint8_t, SimDevice> devices_;
  bus::Bytes inbound_;
  bus::Bytes outbound_;
  int corrupt_ = 0;
  std::chrono::microseconds bus_time_{0};
  std::uint64_t frames_seen_ = 0;
  std::uint64_t broadcasts_seen_ = 0;
};

// ---------------------------------------------------------------------------
// Environment and faults

struct ZoneConfig {
  std::string id;
  double temperature = 20.0;  // degC
  double rh = 55.0;           // %RH
};

struct LeakModel {
  double target_rh = 95.0;
  double tau_s = 480.0;        // at severity 1
  double rise_delay_s = 60.0;  // at severity 1
  double propagation_delay_s = 600.0;
};

struct SimConfig {
  std::vector<std::uint8_t> device_ids;
  DeviceParams device;
  std::vector<ZoneConfig> zones;
  /// Zones sharing one 8-conductor harness, in cable order (at most 3).
  std::vector<std::vector<std::string>> harnesses;
  std::uint64_t seed = 1;
  double tick = 0.02;          // s
  double env_period = 2.0;     // s (0.5 Hz)
  double rh_noise_sigma = 0.3; // %RH before quantization
  double sensor_ceiling = 100.0;
  LeakModel leak;
  double supply_voltage = 12.0;
  double electronics_current = 0.35;  // A
  double initial_pressure = kAtmosphere;
};

/// Throws std::invalid_argument naming the offending field.
void validate(const SimConfig& config);

enum class FaultKind { Leak, Overload, Stuck, WirePropagation };
std::string_view to_string(FaultKind kind);

struct Fault {
  FaultKind kind = FaultKind::Leak;
  std::string zone;          // Leak
  double severity = 1.0;     // Leak
  std::uint8_t device = 0;   // Overload, Stuck
  double extra_ma = 0.0;     // Overload
  std::size_t harness = 0;   // WirePropagation
  double at = 0.0;           // virtual time, s
};

/// Fault JSON: {"kind": "LEAK", "zone": ..., "severity": ..., "at": ...} etc.
/// Joint references are resolved by `resolve_joint` (name -> device id).
Fault fault_from_json(const telemetry::json& j,
                      const std::function<std::optional<std::uint8_t>(const std::string&)>& resolve_joint);
telemetry::json to_json(const Fault& fault);

/// The digital twin: bus devices, canister atmospheres, chamber pressure and
/// the power rail, driven by a seeded virtual clock.
class World {
 public:
  explicit World(SimConfig config);

  const SimConfig& config() const { return config_; }
  SimBus& bus() { return bus_; }
  const SimBus& bus() const { return bus_; }

  /// Advances exactly one tick.
  void step();
  double now() const { return static_cast<double>(ticks_) * config_.tick; }
  std::uint64_t ticks() const { return ticks_; }

  /// Throws SimError(InvalidFault). Faults with `at` in the future are queued.
  void inject(const Fault& fault);

  /// ENV samples emitted since the last call.
  std::vector<leak::EnvSample> take_env_samples();
  double true_rh(const std::string& zone) const;
  bool leaking(const std::string& zone) const;

  void set_pressure(double p_abs) { pressure_ = p_abs; }
  double pressure() const { return pressure_; }
  /// Rail voltage and current (A) drawn this tick.
  std::pair<double, double> power() const;
  /// Cuts the motor rail (after a fuse event).
  void cut_power();

 private:
  struct Zone {
    ZoneConfig config;
    double rh = 0.0;
    std::optional<double> leak_onset;
    double leak_start_rh = 0.0;
    double severity = 1.0;
  };

  void apply(const Fault& fault);
  void check(const Fault& fault) const;
  Zone& zone(const std::string& id);
  const Zone& zone(const std::string& id) const;
  double gaussian();

  SimConfig config_;
  SimBus bus_;
  std::vector<Zone> zones_;
  std::vector<Fault> pending_;
  std::vector<leak::EnvSample> env_out_;
  std::mt19937_64 rng_;
  std::uint64_t ticks_ = 0;
  std::uint64_t env_every_ = 100;
  double pressure_ = kAtmosphere;
  bool power_cut_ = false;
};

// ---------------------------------------------------------------------------
// Scenarios

struct ScenarioPolicy {
  bool abort_on_alarm = false;
  bool abort_on_fault = false;
};

struct ScheduledAction {
  double t = 0.0;
  std::optional<double> pressure;          // Pa absolute
  std::optional<telemetry::Command> command;
};

struct SimScenario {
  std::string name;
  double duration = 0.0;
  ScenarioPolicy policy;
  std::vector<ScheduledAction> schedule;  // nondecreasing t
};

/// Scenario JSON: {"schema_version": 1, "name", "duration", "policy": {...},
/// "schedule": [{"t": 0, "pressure_bar": 1.5} | {"t": 0, "command": {...}}]}.
SimScenario scenario_from_json(const telemetry::json& j);
telemetry::json to_json(const SimScenario& scenario);

struct HyperbaricPlan {
  std::string joint = "j1";
  std::vector<double> pressures_bar = {1.5, 2.0, 3.0, 4.0, 5.0};
  double step_s = 600.0;
  double idle_s = 300.0;
  double half_cycle_s = 4.0;
};

/// Pressure staircase with an idle then a -180/+180 degree cycling phase per step.
SimScenario hyperbaric_scenario(const HyperbaricPlan& plan = {});

// ---------------------------------------------------------------------------
// Log replay

/// Parses a telemetry log. Throws VersionMismatch or CorruptLog (with the
/// byte offset of the bad record).
std::vector<telemetry::Envelope> replay_log(const std::string& path);
std::vector<telemetry::Envelope> replay_log_text(std::string_view text);

}  // namespace urjkit::sim
