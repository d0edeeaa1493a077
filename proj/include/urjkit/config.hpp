#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "urjkit/joint.hpp"
#include "urjkit/kinematics.hpp"
#include "urjkit/leakwatch.hpp"
#include "urjkit/simulator.hpp"
#include "urjkit/telemetry.hpp"

namespace urjkit {

inline constexpr int kConfigSchemaVersion = 1;

/// Parse errors carry "file:line:col"; semantic errors carry the key path.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LegConfig {
  kin::LegGeometry geometry;
  kin::GaitParams gait;
  kin::KneeBranch branch = kin::KneeBranch::KneeUp;
  std::vector<std::string> joints;  // coxa, femur, tibia joint names
  double max_joint_rate = 10.0;     // rad/s
};

struct SystemConfig {
  std::vector<joint::JointConfig> joints;
  std::optional<LegConfig> leg;
  leak::DetectorConfig detector;
  telemetry::TelemetryRates rates;
  double control_rate_hz = 50.0;
  double bus_timeout_ms = 20.0;
  std::string serial_port;
  int baud = 1000000;
  std::string token = "urjkit";
  double fluid_density = kSeawaterDensity;
  /// Sim-side settings. device_ids and tick are derived from the joints and
  /// control rate.
  sim::SimConfig sim;

  double tick() const { return 1.0 / control_rate_hz; }
  const joint::JointConfig* find_joint(const std::string& name) const;
};

SystemConfig config_from_json(const telemetry::json& j);
telemetry::json to_json(const SystemConfig& config);

/// Parses JSON text; `source` names the file in diagnostics.
telemetry::json parse_json_text(const std::string& text, const std::string& source);
telemetry::json load_json_file(const std::string& path);

SystemConfig load_config(const std::string& path);
sim::SimScenario load_scenario(const std::string& path);

/// Three-joint leg on the simulated bus with five canister zones, two harnesses.
SystemConfig default_config();

}  // namespace urjkit
