#pragma once

#include <map>
#include <mutex>
#include <optional>
#include <utility>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace urjkit::leak {

/// One temperature/humidity reading from a canister sensor.
struct EnvSample {
  std::string zone;
  double t = 0.0;            // s
  double temperature = 0.0;  // degC, 1 degC resolution
  double rh = 0.0;           // %RH, 1 % resolution

  friend bool operator==(const EnvSample&, const EnvSample&) = default;
};

struct DetectorConfig {
  double baseline_window_s = 60.0;
  double alarm_delta = 5.0;  // %RH above baseline
  double warn_delta = 3.0;   // %RH above baseline
  int persistence = 3;       // consecutive samples
  /// Readings at or above this count as fully saturated (delta = 100 - baseline).
  double sensor_ceiling = 100.0;
  /// Compare absolute humidity (g/m^3) instead of %RH. Thresholds are then
  /// interpreted in g/m^3.
  bool absolute_humidity_mode = false;
};

/// Throws std::invalid_argument naming the offending field.
void validate(const DetectorConfig& config);

enum class LeakState { Learning = 0, Ok = 1, Warn = 2, Alarm = 3 };

std::string_view to_string(LeakState state);
std::optional<LeakState> state_from_string(std::string_view text);

struct LeakStatus {
  std::string zone;
  LeakState state = LeakState::Learning;
  double baseline = 0.0;
  double delta = 0.0;
  double since = 0.0;  // time the current state was entered

  friend bool operator==(const LeakStatus&, const LeakStatus&) = default;
};

enum class LeakErrorKind { OutOfOrder, UnknownZone, Domain };

class LeakError : public std::runtime_error {
 public:
  LeakError(LeakErrorKind kind, const std::string& detail);
  LeakErrorKind kind() const { return kind_; }

 private:
  LeakErrorKind kind_;
};

/// Absolute humidity in g/m^3 (Magnus form). T must lie in [-40, 80] degC.
double absolute_humidity(double temperature_c, double rh_percent);

/// Baseline-relative humidity-rise detector for one zone.
class Detector {
 public:
  Detector(std::string zone, DetectorConfig config = {});

  /// Samples must arrive in nondecreasing time order.
  const LeakStatus& ingest(const EnvSample& sample);
  /// Clears a latched alarm; learning restarts from the next sample.
  void reset();

  const LeakStatus& status() const { return status_; }
  const std::string& zone() const { return status_.zone; }
  const DetectorConfig& config() const { return config_; }

 private:
  double measure(const EnvSample& sample) const;
  void enter(LeakState state, double t);

  DetectorConfig config_;
  LeakStatus status_;
  std::optional<double> learning_start_;
  std::optional<double> last_t_;
  std::vector<double> learning_;
  int warn_run_ = 0;
  int alarm_run_ = 0;
};

struct FleetView {
  std::map<std::string, LeakStatus> zones;
  LeakState overall = LeakState::Learning;
  /// Zones at the overall severity (only filled when above OK).
  std::vector<std::string> worst_zones;
};

/// Detectors for every monitored zone.
class Fleet {
 public:
  explicit Fleet(DetectorConfig config = {}) : config_(config) {}

  void add_zone(const std::string& zone);
  bool has_zone(const std::string& zone) const;
  /// Throws UnknownZone for unregistered zones.
  LeakStatus ingest(const EnvSample& sample);
  void reset(const std::string& zone);
  void reset_all();

  /// Consistent snapshot across all zones.
  FleetView view() const;

 private:
  DetectorConfig config_;
  mutable std::mutex mutex_;
  std::map<std::string, Detector> detectors_;
};

// ---------------------------------------------------------------------------
// Trace files
//
//   # urjkit leak trace v1
//   # onset <zone> <t>          optional ingress annotation
//   <t> <zone> <temperature> <rh>
//
// Whitespace separated, one sample per line, '#' starts a comment.

struct Trace {
  std::vector<EnvSample> samples;
  std::map<std::string, double> onsets;
};

/// Throws LeakError naming the 1-based line of the first bad row.
Trace parse_trace(std::string_view text);
std::string format_trace(const Trace& trace);
std::string format_trace_line(const EnvSample& sample);

struct ZoneReport {
  std::string zone;
  std::vector<std::pair<double, LeakState>> transitions;
  std::optional<double> first_warn;
  std::optional<double> first_alarm;
  std::optional<double> onset;
  std::optional<double> latency;  // first_alarm - onset
  bool false_alarm = false;       // alarm with no onset, or before it
  LeakStatus final;
};

struct TraceReport {
  std::vector<ZoneReport> zones;  // first-appearance order
  LeakState overall = LeakState::Learning;
  int false_alarms = 0;
};

TraceReport check_trace(const Trace& trace, const DetectorConfig& config = {});

}  // namespace urjkit::leak
