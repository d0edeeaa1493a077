#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "urjkit/config.hpp"
#include "urjkit/joint.hpp"
#include "urjkit/kinematics.hpp"
#include "urjkit/leakwatch.hpp"
#include "urjkit/servobus.hpp"
#include "urjkit/telemetry.hpp"

namespace urjkit {

/// Event kinds published on the EVENT topic.
namespace event {
inline constexpr std::string_view kCommand = "COMMAND";
inline constexpr std::string_view kEstop = "ESTOP";
inline constexpr std::string_view kTorqueOff = "TORQUE_OFF";
inline constexpr std::string_view kOvercurrentShutdown = "OVERCURRENT_SHUTDOWN";
inline constexpr std::string_view kOvercurrentCleared = "OVERCURRENT_CLEARED";
inline constexpr std::string_view kBusFault = "BUS_FAULT";
inline constexpr std::string_view kFuse = "FUSE";
inline constexpr std::string_view kGaitStart = "GAIT_START";
inline constexpr std::string_view kGaitStop = "GAIT_STOP";
inline constexpr std::string_view kPressure = "PRESSURE";
inline constexpr std::string_view kFaultInjected = "FAULT_INJECTED";
inline constexpr std::string_view kLeakAlarm = "LEAK_ALARM";
inline constexpr std::string_view kSession = "SESSION";
inline constexpr std::string_view kShutdown = "SHUTDOWN";
}  // namespace event

enum class Backend { Sim, Serial };

/// What the plant reports for one tick besides the bus.
struct Observations {
  std::vector<leak::EnvSample> env;
  std::optional<double> pressure;                 // Pa absolute
  std::optional<std::pair<double, double>> power;  // V, A
};

/// The system commands act on: joints on one bus, the leak fleet, the gait
/// planner and power bookkeeping. All calls come from the control loop.
class Robot {
 public:
  /// Throws on sim-only faults; the message becomes the NACK detail.
  using FaultHook = std::function<void(const telemetry::json& fault)>;

  Robot(const SystemConfig& config, bus::BusMaster& bus, Backend backend, telemetry::Hub& hub);

  telemetry::Reply handle(const telemetry::Command& cmd);

  /// Refresh, supervise, run the gait, ingest sensors and publish. `now` is
  /// the time at the end of the tick.
  void tick(double now, const Observations& obs);

  void set_fault_hook(FaultHook hook) { fault_hook_ = std::move(hook); }
  /// Called once when the fuse blows.
  void set_fuse_hook(std::function<void()> hook) { fuse_hook_ = std::move(hook); }

  /// Stops the gait and disables torque; the TORQUE_OFF event is the last record.
  void shutdown(std::string_view why);
  /// Disables torque on every joint (broadcast plus per-joint write).
  void all_torque_off(double now, std::string_view why);
  void publish_event(double t, std::string_view kind, std::string detail, telemetry::json data = telemetry::json::object());

  Backend backend() const { return backend_; }
  std::vector<joint::Joint>& joints() { return joints_; }
  const std::vector<joint::Joint>& joints() const { return joints_; }
  joint::Joint* find_joint(const telemetry::json& ref);
  leak::Fleet& fleet() { return fleet_; }
  leak::LeakState leak_overall() const { return overall_; }
  bool gait_active() const { return gait_.has_value(); }
  bool fuse_blown() const { return fuse_blown_; }
  bool any_joint_fault() const;
  const telemetry::PowerMeter& power() const { return power_; }
  std::uint64_t ticks() const { return ticks_; }
  double now() const { return now_; }

 private:
  struct Gait {
    std::unique_ptr<kin::GaitPlanner> planner;
    double t0 = 0.0;
    std::vector<joint::Joint*> joints;
  };

  telemetry::Reply do_handle(const telemetry::Command& cmd);
  telemetry::Reply set_mode(const telemetry::Command& cmd);
  telemetry::Reply torque(const telemetry::Command& cmd);
  telemetry::Reply goal(const telemetry::Command& cmd);
  telemetry::Reply gait_start(const telemetry::Command& cmd);
  telemetry::Reply reset_alarm(const telemetry::Command& cmd);
  telemetry::Reply fault_inject(const telemetry::Command& cmd);
  void stop_gait(std::string_view why);
  bool in_gait(const joint::Joint* j) const;
  bool every(double hz) const;
  void publish_joint_states();

  SystemConfig config_;
  bus::BusMaster& bus_;
  Backend backend_;
  telemetry::Hub& hub_;
  std::vector<joint::Joint> joints_;
  leak::Fleet fleet_;
  leak::LeakState overall_ = leak::LeakState::Learning;
  std::optional<Gait> gait_;
  telemetry::PowerMeter power_;
  std::optional<double> pressure_;
  bool fuse_blown_ = false;
  FaultHook fault_hook_;
  std::function<void()> fuse_hook_;
  std::uint64_t ticks_ = 0;
  double now_ = 0.0;
};

}  // namespace urjkit
