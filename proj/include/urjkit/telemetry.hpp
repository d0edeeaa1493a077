#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "urjkit/constants.hpp"
#include "urjkit/joint.hpp"
#include "urjkit/leakwatch.hpp"

namespace urjkit::telemetry {

using json = nlohmann::json;

inline constexpr int kWireVersion = 1;
inline constexpr double kFuseRatingA = 18.0;

// ---------------------------------------------------------------------------
// Depth and power bookkeeping

struct DepthReading {
  double pressure = 0.0;  // Pa absolute
  double depth = 0.0;     // m
  bool surface = false;   // pressure at or below atmospheric, depth clamped to 0

  friend bool operator==(const DepthReading&, const DepthReading&) = default;
};

/// depth = (p_abs - p_atm) / (rho * g), clamped at 0 with the surface flag.
DepthReading depth_from_pressure(double p_abs, double rho = kSeawaterDensity, double p_atm = kAtmosphere);

struct PowerSample {
  double voltage = 0.0;   // V
  double current = 0.0;   // A
  double energy_j = 0.0;  // accumulated, J
  bool fuse_blown = false;

  double energy_wh() const { return energy_j / 3600.0; }
  friend bool operator==(const PowerSample&, const PowerSample&) = default;
};

struct FuseEvent {
  double current = 0.0;  // A that tripped the fuse
  PowerSample last;      // state before the trip
};

/// Integrates v*i*dt. Current strictly above the 18 A rating blows the fuse.
std::variant<PowerSample, FuseEvent> account_power(const PowerSample& prev, double voltage, double current,
                                                   double dt);

/// Stateful wrapper: after a fuse event all downstream power reads zero.
class PowerMeter {
 public:
  /// Returns the fuse event once, on the sample that trips it.
  std::optional<FuseEvent> update(double voltage, double current, double dt);
  const PowerSample& sample() const { return sample_; }

 private:
  PowerSample sample_;
};

// ---------------------------------------------------------------------------
// Message schema

enum class Topic { JointStates, Env, Power, Depth, LeakStatus, Event };

std::string_view to_string(Topic topic);
std::optional<Topic> topic_from_string(std::string_view text);
std::set<Topic> all_topics();

struct JointReport {
  int id = 0;
  std::string name;
  joint::JointState state;

  friend bool operator==(const JointReport&, const JointReport&) = default;
};

struct JointStatesBody {
  std::vector<JointReport> joints;
  friend bool operator==(const JointStatesBody&, const JointStatesBody&) = default;
};

struct EventBody {
  std::string kind;
  std::string detail;
  json data = json::object();

  friend bool operator==(const EventBody&, const EventBody&) = default;
};

using Body = std::variant<JointStatesBody, leak::EnvSample, PowerSample, DepthReading, leak::LeakStatus, EventBody>;

Topic topic_of(const Body& body);

struct Envelope {
  std::uint64_t seq = 0;
  double t = 0.0;
  Body body;

  Topic topic() const { return topic_of(body); }
  friend bool operator==(const Envelope&, const Envelope&) = default;
};

enum class CommandKind { SetMode, Torque, Goal, GaitStart, GaitStop, Estop, ResetAlarm, FaultInject };

std::string_view to_string(CommandKind kind);
std::optional<CommandKind> command_kind_from_string(std::string_view text);

struct Command {
  std::string id;  // correlation token
  CommandKind kind = CommandKind::Estop;
  json args = json::object();

  friend bool operator==(const Command&, const Command&) = default;
};

/// NACK reasons.
namespace reason {
inline constexpr std::string_view kUnknownJoint = "UNKNOWN_JOINT";
inline constexpr std::string_view kUnknownZone = "UNKNOWN_ZONE";
inline constexpr std::string_view kModeMismatch = "MODE_MISMATCH";
inline constexpr std::string_view kTorqueEnabled = "TORQUE_ENABLED";
inline constexpr std::string_view kTorqueDisabled = "TORQUE_DISABLED";
inline constexpr std::string_view kFaultActive = "FAULT_ACTIVE";
inline constexpr std::string_view kLimits = "LIMITS";
inline constexpr std::string_view kSimOnly = "SIM_ONLY";
inline constexpr std::string_view kBadArgs = "BAD_ARGS";
inline constexpr std::string_view kBusError = "BUS_ERROR";
inline constexpr std::string_view kInvalidFault = "INVALID_FAULT";
inline constexpr std::string_view kInvalidGait = "INVALID_GAIT";
inline constexpr std::string_view kPreempted = "PREEMPTED";
inline constexpr std::string_view kFuseBlown = "FUSE_BLOWN";
inline constexpr std::string_view kUnauthorized = "UNAUTHORIZED";
inline constexpr std::string_view kGaitActive = "GAIT_ACTIVE";
}  // namespace reason

struct Reply {
  std::string id;
  bool ok = true;
  std::string reason;  // machine-readable, empty on ACK
  std::string detail;

  static Reply ack(std::string id) { return {std::move(id), true, {}, {}}; }
  static Reply nack(std::string id, std::string_view why, std::string detail = {}) {
    return {std::move(id), false, std::string(why), std::move(detail)};
  }
  friend bool operator==(const Reply&, const Reply&) = default;
};

class WireError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

json to_json(const Envelope& env);
Envelope envelope_from_json(const json& j);
json to_json(const Command& cmd);
Command command_from_json(const json& j);
json to_json(const Reply& reply);
Reply reply_from_json(const json& j);

/// Compact single-line JSON text; identical input gives identical bytes.
std::string serialize(const Envelope& env);
std::string serialize(const Command& cmd);
std::string serialize(const Reply& reply);
Envelope parse_envelope(std::string_view text);
Command parse_command(std::string_view text);

/// Stream framing: ASCII decimal byte count, ':', the UTF-8 record, '\n'.
std::string frame_record(std::string_view record);

/// Incremental decoder for framed records.
class RecordReader {
 public:
  static constexpr std::size_t kMaxRecord = 1 << 20;

  void feed(std::string_view bytes);
  /// Next complete record; throws WireError on malformed framing.
  std::optional<std::string> next();

 private:
  std::string buffer_;
};

// ---------------------------------------------------------------------------
// Fan-out hub

struct TelemetryRates {
  double joint_states_hz = 10.0;
  double env_hz = 0.5;
  double power_hz = 1.0;
  double depth_hz = 1.0;
};

/// Bounded per-subscriber queue. Overflow disconnects the subscriber instead
/// of blocking the publisher.
class Subscription {
 public:
  Subscription(std::set<Topic> topics, std::size_t capacity);

  bool wants(Topic topic) const { return topics_.count(topic) > 0; }
  std::optional<Envelope> try_pop();
  std::optional<Envelope> pop(std::chrono::milliseconds timeout);
  std::size_t pending() const;
  bool closed() const;
  /// "SUBSCRIBER_OVERFLOW" or "UNSUBSCRIBED" once closed.
  std::string close_reason() const;
  std::uint64_t delivered() const;
  /// Invoked (outside the lock) after each successful push.
  void set_notify(std::function<void()> fn);

 private:
  friend class Hub;
  bool push(double t, const Body& body);
  void close(std::string reason);

  std::set<Topic> topics_;
  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<Envelope> queue_;
  std::uint64_t next_seq_ = 1;
  bool closed_ = false;
  std::string reason_;
  std::function<void()> notify_;
};

class Hub {
 public:
  static constexpr std::size_t kDefaultCapacity = 1000;

  std::shared_ptr<Subscription> subscribe(std::set<Topic> topics, std::size_t capacity = kDefaultCapacity);
  void unsubscribe(const std::shared_ptr<Subscription>& sub);

  /// Synchronous sink with its own sequence numbering (used for the log).
  using Sink = std::function<void(const Envelope&)>;
  void add_sink(Sink sink);

  void publish(double t, Body body);
  /// The envelope's seq is ignored; each connection numbers its own stream.
  void publish(const Envelope& env) { publish(env.t, env.body); }

  std::size_t subscriber_count() const;
  std::uint64_t published() const;

 private:
  mutable std::mutex mutex_;
  std::vector<std::shared_ptr<Subscription>> subs_;
  struct SinkEntry {
    Sink fn;
    std::uint64_t next_seq = 1;
  };
  std::vector<SinkEntry> sinks_;
  std::uint64_t published_ = 0;
};

/// Line-delimited telemetry log: one header record, then one envelope per line.
class LogWriter {
 public:
  LogWriter(const std::string& path, const json& header_extra = json::object());
  void write(const Envelope& env);
  void flush();
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> file_;
};

json log_header(const json& extra = json::object());

// ---------------------------------------------------------------------------
// Command dispatch

/// Serialized command queue. ESTOP jumps the queue: it is executed and
/// acknowledged first, and every command pending at that moment is NACKed
/// with PREEMPTED.
class Dispatcher {
 public:
  using Handler = std::function<Reply(const Command&)>;
  using ReplyFn = std::function<void(const Reply&)>;

  void submit(Command cmd, ReplyFn reply_to);
  /// Executes everything pending; called from the control loop.
  std::size_t drain(const Handler& handler);
  std::size_t pending() const;

 private:
  struct Pending {
    Command cmd;
    ReplyFn reply_to;
  };
  mutable std::mutex mutex_;
  std::deque<Pending> priority_;
  std::deque<Pending> preempted_;
  std::deque<Pending> queue_;
};

/// Immediate single-command dispatch.
Reply dispatch(const Command& cmd, const Dispatcher::Handler& handler);

}  // namespace urjkit::telemetry
