#pragma once

#include <atomic>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "urjkit/config.hpp"
#include "urjkit/robot.hpp"
#include "urjkit/simulator.hpp"
#include "urjkit/telemetry.hpp"

namespace urjkit {

enum class ExitReason { Completed, Alarm, Fault, Stopped };
std::string_view to_string(ExitReason reason);

/// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitAlarm = 2;
inline constexpr int kExitFault = 3;
inline constexpr int kExitUsage = 64;

int exit_code(ExitReason reason);

struct RunSummary {
  ExitReason reason = ExitReason::Completed;
  double t_end = 0.0;
  std::uint64_t ticks = 0;
  std::uint64_t envelopes = 0;
  std::vector<std::pair<double, std::string>> alarms;  // (t, zone)
  std::vector<std::pair<double, std::string>> faults;  // (t, kind: detail)
  int commands = 0;
  int nacks = 0;
  int pressure_steps = 0;
};

telemetry::json to_json(const RunSummary& summary);

struct SessionOptions {
  Backend backend = Backend::Sim;
  std::optional<std::string> log_path;
  telemetry::json log_header_extra = telemetry::json::object();
};

struct RunControl {
  const std::atomic<bool>* stop = nullptr;
  /// Virtual seconds per wall second; 0 runs as fast as possible.
  double realtime = 0.0;
};

/// One control session: the backend (simulated world or serial bus), the
/// robot, the hub, the command queue and the log. Tick order: drain commands,
/// advance the plant, then refresh/supervise/publish.
class Session {
 public:
  Session(SystemConfig config, SessionOptions options = {});
  ~Session();
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  const SystemConfig& config() const { return config_; }
  telemetry::Hub& hub() { return hub_; }
  telemetry::Dispatcher& dispatcher() { return dispatcher_; }
  Robot& robot() { return *robot_; }
  bus::BusMaster& bus() { return *master_; }
  /// Null on the serial backend.
  sim::World* world() { return world_.get(); }

  double now() const { return static_cast<double>(ticks_) * config_.tick(); }
  std::uint64_t ticks() const { return ticks_; }

  /// Queues a command as if it arrived over the link.
  void submit(telemetry::Command cmd, telemetry::Dispatcher::ReplyFn reply_to = nullptr);
  /// Applies a scheduled action now.
  void apply(const sim::ScheduledAction& action);
  void step();

  /// Runs until the scenario ends, a policy aborts it, or `stop` is raised.
  /// An infinite duration runs until stopped. Always ends with shutdown().
  RunSummary run(const sim::SimScenario& scenario, const RunControl& control = {});

  /// SHUTDOWN event, then torque off on every joint, then log flush.
  void shutdown(std::string_view why);
  const RunSummary& summary() const { return summary_; }

 private:
  void observe(const telemetry::Envelope& env);

  SystemConfig config_;
  SessionOptions options_;
  std::unique_ptr<sim::World> world_;
  std::unique_ptr<bus::Transport> serial_;
  std::unique_ptr<bus::BusMaster> master_;
  telemetry::Hub hub_;
  telemetry::Dispatcher dispatcher_;
  std::unique_ptr<telemetry::LogWriter> log_;
  std::unique_ptr<Robot> robot_;
  std::uint64_t ticks_ = 0;
  RunSummary summary_;
  bool shut_down_ = false;
};

}  // namespace urjkit
