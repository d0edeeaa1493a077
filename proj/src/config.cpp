#include "urjkit/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace urjkit {

using telemetry::json;

namespace {

/// Walks a JSON object, tracking the key path and rejecting unknown keys.
class Node {
 public:
  Node(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail("expected an object");
  }

  [[noreturn]] void fail(const std::string& why) const { throw ConfigError(path_ + ": " + why); }
  std::string path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const json& at(const std::string& key) {
    if (!has(key)) throw ConfigError(path(key) + ": required");
    return j_.at(key);
  }

  Node child(const std::string& key) { return Node(at(key), path(key)); }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    out = as<T>(j_.at(key), path(key));
  }

  template <typename T>
  T require(const std::string& key) {
    return as<T>(at(key), path(key));
  }

  void done() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(path(it.key()) + ": unknown key");
    }
  }

  template <typename T>
  static T as(const json& v, const std::string& where) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(where + ": expected a boolean");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(where + ": expected a string");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(where + ": expected an integer");
    } else {
      if (!v.is_number()) throw ConfigError(where + ": expected a number");
    }
    return v.get<T>();
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename F>
void rethrow_at(const std::string& path, F&& fn) {
  try {
    fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

joint::JointConfig parse_joint(Node n) {
  joint::JointConfig c;
  c.name = n.require<std::string>("name");
  const int id = n.require<int>("id");
  if (id < 0 || id > bus::kMaxDeviceId) throw ConfigError(n.path("id") + ": must be in [0, 253]");
  c.device_id = static_cast<std::uint8_t>(id);
  if (n.has("transmission")) {
    Node t = n.child("transmission");
    t.get("ratio", c.transmission.ratio);
    t.get("direction", c.transmission.direction);
    t.get("offset", c.transmission.offset);
    t.done();
  }
  if (n.has("limits")) {
    Node l = n.child("limits");
    l.get("position_min", c.limits.position_min);
    l.get("position_max", c.limits.position_max);
    l.get("velocity_max", c.limits.velocity_max);
    l.get("current_max", c.limits.current_max);
    l.done();
  }
  if (n.has("overcurrent")) {
    Node o = n.child("overcurrent");
    o.get("threshold_ma", c.overcurrent.threshold_ma);
    o.get("sustain_s", c.overcurrent.sustain_s);
    o.get("cooldown_s", c.overcurrent.cooldown_s);
    o.done();
  }
  if (n.has("torque_constant")) c.torque_constant = n.require<double>("torque_constant");
  n.done();
  return c;
}

LegConfig parse_leg(Node n) {
  LegConfig leg;
  if (n.has("geometry")) {
    Node g = n.child("geometry");
    g.get("coxa", leg.geometry.coxa);
    g.get("femur", leg.geometry.femur);
    g.get("tibia", leg.geometry.tibia);
    g.done();
  }
  if (n.has("gait")) {
    Node g = n.child("gait");
    g.get("stride", leg.gait.stride);
    g.get("step_height", leg.gait.step_height);
    g.get("body_height", leg.gait.body_height);
    g.get("x_offset", leg.gait.x_offset);
    g.get("y_offset", leg.gait.y_offset);
    g.get("period", leg.gait.period);
    g.get("duty_factor", leg.gait.duty_factor);
    g.done();
  }
  if (n.has("branch")) {
    const auto b = n.require<std::string>("branch");
    if (b == "KNEE_UP") leg.branch = kin::KneeBranch::KneeUp;
    else if (b == "KNEE_DOWN") leg.branch = kin::KneeBranch::KneeDown;
    else throw ConfigError(n.path("branch") + ": expected KNEE_UP or KNEE_DOWN");
  }
  const json& names = n.at("joints");
  if (!names.is_array() || names.size() != 3) throw ConfigError(n.path("joints") + ": expected 3 joint names");
  for (std::size_t i = 0; i < 3; ++i) {
    leg.joints.push_back(Node::as<std::string>(names[i], n.path("joints") + "[" + std::to_string(i) + "]"));
  }
  n.get("max_joint_rate", leg.max_joint_rate);
  n.done();
  return leg;
}

void parse_sim(Node n, sim::SimConfig& s) {
  n.get("seed", s.seed);
  n.get("rh_noise_sigma", s.rh_noise_sigma);
  n.get("sensor_ceiling", s.sensor_ceiling);
  n.get("supply_voltage", s.supply_voltage);
  n.get("electronics_current", s.electronics_current);
  if (n.has("initial_pressure_bar")) s.initial_pressure = n.require<double>("initial_pressure_bar") * 1e5;
  if (n.has("zones")) {
    const json& zones = n.at("zones");
    if (!zones.is_array()) throw ConfigError(n.path("zones") + ": expected an array");
    s.zones.clear();
    for (std::size_t i = 0; i < zones.size(); ++i) {
      Node z(zones[i], n.path("zones") + "[" + std::to_string(i) + "]");
      sim::ZoneConfig zc;
      zc.id = z.require<std::string>("id");
      z.get("temperature", zc.temperature);
      z.get("rh", zc.rh);
      z.done();
      s.zones.push_back(zc);
    }
  }
  if (n.has("harnesses")) {
    const json& hs = n.at("harnesses");
    if (!hs.is_array()) throw ConfigError(n.path("harnesses") + ": expected an array");
    s.harnesses.clear();
    for (std::size_t i = 0; i < hs.size(); ++i) {
      const std::string where = n.path("harnesses") + "[" + std::to_string(i) + "]";
      if (!hs[i].is_array()) throw ConfigError(where + ": expected an array of zone ids");
      std::vector<std::string> h;
      for (std::size_t k = 0; k < hs[i].size(); ++k) {
        h.push_back(Node::as<std::string>(hs[i][k], where + "[" + std::to_string(k) + "]"));
      }
      s.harnesses.push_back(std::move(h));
    }
  }
  if (n.has("leak")) {
    Node l = n.child("leak");
    l.get("target_rh", s.leak.target_rh);
    l.get("tau_s", s.leak.tau_s);
    l.get("rise_delay_s", s.leak.rise_delay_s);
    l.get("propagation_delay_s", s.leak.propagation_delay_s);
    l.done();
  }
  if (n.has("device")) {
    Node d = n.child("device");
    d.get("time_constant", s.device.time_constant);
    d.get("velocity_limit", s.device.velocity_limit);
    d.get("idle_current", s.device.idle_current);
    d.get("damping", s.device.damping);
    d.get("blocking_gain", s.device.blocking_gain);
    d.get("current_limit", s.device.current_limit);
    d.done();
  }
  n.done();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path + ": cannot open");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

const joint::JointConfig* SystemConfig::find_joint(const std::string& name) const {
  for (const auto& j : joints) {
    if (j.name == name) return &j;
  }
  return nullptr;
}

SystemConfig config_from_json(const json& j) {
  SystemConfig c;
  Node root(j, "");
  const int version = root.require<int>("schema_version");
  if (version != kConfigSchemaVersion) {
    throw ConfigError("schema_version: unsupported version " + std::to_string(version));
  }

  const json& joints = root.at("joints");
  if (!joints.is_array() || joints.empty()) throw ConfigError("joints: expected a non-empty array");
  std::set<std::string> names;
  std::set<int> ids;
  for (std::size_t i = 0; i < joints.size(); ++i) {
    const std::string where = "joints[" + std::to_string(i) + "]";
    auto jc = parse_joint(Node(joints[i], where));
    rethrow_at(where, [&] { joint::validate(jc); });
    if (!names.insert(jc.name).second) throw ConfigError(where + ".name: duplicate joint '" + jc.name + "'");
    if (!ids.insert(jc.device_id).second) throw ConfigError(where + ".id: duplicate device id");
    c.joints.push_back(std::move(jc));
  }

  if (root.has("leg")) {
    c.leg = parse_leg(root.child("leg"));
    for (std::size_t i = 0; i < 3; ++i) {
      if (!c.find_joint(c.leg->joints[i])) {
        throw ConfigError("leg.joints[" + std::to_string(i) + "]: unknown joint '" + c.leg->joints[i] + "'");
      }
    }
    rethrow_at("leg.geometry", [&] { kin::validate(c.leg->geometry); });
    rethrow_at("leg.gait", [&] {
      kin::GaitPlanner(c.leg->geometry, c.leg->gait, c.leg->branch, c.control_rate_hz, c.leg->max_joint_rate);
    });
  }

  if (root.has("detector")) {
    Node d = root.child("detector");
    d.get("baseline_window_s", c.detector.baseline_window_s);
    d.get("alarm_delta", c.detector.alarm_delta);
    d.get("warn_delta", c.detector.warn_delta);
    d.get("persistence", c.detector.persistence);
    d.get("sensor_ceiling", c.detector.sensor_ceiling);
    d.get("absolute_humidity_mode", c.detector.absolute_humidity_mode);
    d.done();
    rethrow_at("detector", [&] { leak::validate(c.detector); });
  }

  if (root.has("telemetry")) {
    Node t = root.child("telemetry");
    t.get("token", c.token);
    if (t.has("rates")) {
      Node r = t.child("rates");
      r.get("joint_states_hz", c.rates.joint_states_hz);
      r.get("env_hz", c.rates.env_hz);
      r.get("power_hz", c.rates.power_hz);
      r.get("depth_hz", c.rates.depth_hz);
      r.done();
    }
    t.done();
    for (double hz : {c.rates.joint_states_hz, c.rates.env_hz, c.rates.power_hz, c.rates.depth_hz}) {
      if (!(hz > 0.0)) throw ConfigError("telemetry.rates: rates must be > 0");
    }
  }

  root.get("control_rate_hz", c.control_rate_hz);
  if (!(c.control_rate_hz >= 20.0 && c.control_rate_hz <= 1000.0)) {
    throw ConfigError("control_rate_hz: must be in [20, 1000]");
  }
  if (root.has("bus")) {
    Node b = root.child("bus");
    b.get("timeout_ms", c.bus_timeout_ms);
    b.get("port", c.serial_port);
    b.get("baud", c.baud);
    b.done();
    if (!(c.bus_timeout_ms > 0.0)) throw ConfigError("bus.timeout_ms: must be > 0");
  }
  root.get("fluid_density", c.fluid_density);
  if (!(c.fluid_density > 0.0)) throw ConfigError("fluid_density: must be > 0");

  if (root.has("sim")) parse_sim(root.child("sim"), c.sim);
  c.sim.tick = c.tick();
  c.sim.env_period = 1.0 / c.rates.env_hz;
  c.sim.sensor_ceiling = std::min(c.sim.sensor_ceiling, 100.0);
  c.sim.device_ids.clear();
  for (const auto& jc : c.joints) c.sim.device_ids.push_back(jc.device_id);
  rethrow_at("sim", [&] { sim::validate(c.sim); });
  root.done();
  return c;
}

json to_json(const SystemConfig& c) {
  json joints = json::array();
  for (const auto& jc : c.joints) {
    json j = {{"name", jc.name},
              {"id", jc.device_id},
              {"transmission",
               {{"ratio", jc.transmission.ratio},
                {"direction", jc.transmission.direction},
                {"offset", jc.transmission.offset}}},
              {"limits",
               {{"position_min", jc.limits.position_min},
                {"position_max", jc.limits.position_max},
                {"velocity_max", jc.limits.velocity_max},
                {"current_max", jc.limits.current_max}}},
              {"overcurrent",
               {{"threshold_ma", jc.overcurrent.threshold_ma},
                {"sustain_s", jc.overcurrent.sustain_s},
                {"cooldown_s", jc.overcurrent.cooldown_s}}}};
    if (jc.torque_constant) j["torque_constant"] = *jc.torque_constant;
    joints.push_back(j);
  }
  json zones = json::array();
  for (const auto& z : c.sim.zones) zones.push_back({{"id", z.id}, {"temperature", z.temperature}, {"rh", z.rh}});
  json out = {
      {"schema_version", kConfigSchemaVersion},
      {"joints", joints},
      {"detector",
       {{"baseline_window_s", c.detector.baseline_window_s},
        {"alarm_delta", c.detector.alarm_delta},
        {"warn_delta", c.detector.warn_delta},
        {"persistence", c.detector.persistence},
        {"sensor_ceiling", c.detector.sensor_ceiling},
        {"absolute_humidity_mode", c.detector.absolute_humidity_mode}}},
      {"telemetry",
       {{"token", c.token},
        {"rates",
         {{"joint_states_hz", c.rates.joint_states_hz},
          {"env_hz", c.rates.env_hz},
          {"power_hz", c.rates.power_hz},
          {"depth_hz", c.rates.depth_hz}}}}},
      {"control_rate_hz", c.control_rate_hz},
      {"bus", {{"timeout_ms", c.bus_timeout_ms}, {"port", c.serial_port}, {"baud", c.baud}}},
      {"fluid_density", c.fluid_density},
      {"sim",
       {{"seed", c.sim.seed},
        {"rh_noise_sigma", c.sim.rh_noise_sigma},
        {"sensor_ceiling", c.sim.sensor_ceiling},
        {"supply_voltage", c.sim.supply_voltage},
        {"electronics_current", c.sim.electronics_current},
        {"initial_pressure_bar", c.sim.initial_pressure / 1e5},
        {"zones", zones},
        {"harnesses", c.sim.harnesses},
        {"leak",
         {{"target_rh", c.sim.leak.target_rh},
          {"tau_s", c.sim.leak.tau_s},
          {"rise_delay_s", c.sim.leak.rise_delay_s},
          {"propagation_delay_s", c.sim.leak.propagation_delay_s}}},
        {"device",
         {{"time_constant", c.sim.device.time_constant},
          {"velocity_limit", c.sim.device.velocity_limit},
          {"idle_current", c.sim.device.idle_current},
          {"damping", c.sim.device.damping},
          {"blocking_gain", c.sim.device.blocking_gain},
          {"current_limit", c.sim.device.current_limit}}}}}};
  if (c.leg) {
    const auto& l = *c.leg;
    out["leg"] = {{"geometry", {{"coxa", l.geometry.coxa}, {"femur", l.geometry.femur}, {"tibia", l.geometry.tibia}}},
                  {"gait",
                   {{"stride", l.gait.stride},
                    {"step_height", l.gait.step_height},
                    {"body_height", l.gait.body_height},
                    {"x_offset", l.gait.x_offset},
                    {"y_offset", l.gait.y_offset},
                    {"period", l.gait.period},
                    {"duty_factor", l.gait.duty_factor}}},
                  {"branch", l.branch == kin::KneeBranch::KneeUp ? "KNEE_UP" : "KNEE_DOWN"},
                  {"joints", l.joints},
                  {"max_joint_rate", l.max_joint_rate}};
  }
  return out;
}

json parse_json_text(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    // e.byte is 1-based and points just past the offending character.
    const std::size_t at = e.byte == 0 ? 0 : std::min<std::size_t>(e.byte - 1, text.size());
    std::size_t line = 1;
    std::size_t col = 1;
    for (std::size_t i = 0; i < at; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    std::string what = e.what();
    const auto cut = what.find(": ", what.find("parse error"));
    throw ConfigError(source + ":" + std::to_string(line) + ":" + std::to_string(col) +
                      ": parse error: " + (cut == std::string::npos ? what : what.substr(cut + 2)));
  }
}

json load_json_file(const std::string& path) { return parse_json_text(read_file(path), path); }

SystemConfig load_config(const std::string& path) {
  const json j = load_json_file(path);
  try {
    return config_from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

sim::SimScenario load_scenario(const std::string& path) {
  const json j = load_json_file(path);
  try {
    return sim::scenario_from_json(j);
  } catch (const sim::SimError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

SystemConfig default_config() {
  SystemConfig c;
  const char* names[] = {"coxa", "femur", "tibia"};
  for (int i = 0; i < 3; ++i) {
    joint::JointConfig jc;
    jc.name = names[i];
    jc.device_id = static_cast<std::uint8_t>(i + 1);
    c.joints.push_back(jc);
  }
  c.leg = LegConfig{};
  c.leg->joints = {"coxa", "femur", "tibia"};
  c.sim.zones = {{"control", 20.0, 63.0}, {"coxa", 20.0, 60.0}, {"femur", 20.0, 60.0},
                 {"tibia", 20.0, 61.0}, {"battery", 20.0, 58.0}};
  c.sim.harnesses = {{"control", "coxa", "femur"}, {"tibia", "battery"}};
  c.sim.tick = c.tick();
  for (const auto& jc : c.joints) c.sim.device_ids.push_back(jc.device_id);
  return c;
}

}  // namespace urjkit
