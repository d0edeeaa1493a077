#include "urjkit/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace urjkit::sim {

using telemetry::json;

SimError::SimError(Kind kind, const std::string& detail, std::size_t offset)
    : std::runtime_error(detail), kind_(kind), offset_(offset) {}

// ---------------------------------------------------------------------------

SimDevice::SimDevice(std::uint8_t id, DeviceParams params) : id_(id), params_(params) {
  for (const auto& r : bus::ControlTable::standard().registers()) regs_[r.address] = 0;
  regs_[static_cast<std::uint16_t>(bus::Register::ModelNumber)] = bus::kModelNumber;
  regs_[static_cast<std::uint16_t>(bus::Register::OperatingMode)] = static_cast<std::int64_t>(joint::ControlMode::Position);
  regs_[static_cast<std::uint16_t>(bus::Register::Temperature)] = 25;
}

std::int64_t SimDevice::reg(bus::Register r) const { return regs_.at(static_cast<std::uint16_t>(r)); }

bus::BusFrame SimDevice::status(bus::Bytes data, std::uint8_t extra_error) const {
  bus::Bytes payload;
  payload.reserve(data.size() + 1);
  payload.push_back(static_cast<std::uint8_t>(hardware_error_ | extra_error));
  payload.insert(payload.end(), data.begin(), data.end());
  return {id_, bus::Instruction::Status, std::move(payload)};
}

bool SimDevice::write_register(std::uint16_t address, std::span<const std::uint8_t> data) {
  const auto* info = bus::ControlTable::standard().find(address);
  if (!info || info->access != bus::Access::ReadWrite || data.size() != info->width) return false;
  const std::int64_t value = bus::unpack_le(data, info->is_signed);
  const bool torque_on = reg(bus::Register::TorqueEnable) != 0;
  switch (static_cast<bus::Register>(address)) {
    case bus::Register::OperatingMode:
      if (torque_on || !joint::mode_from_register(value)) return false;
      break;
    case bus::Register::TorqueEnable:
      if (value != 0 && value != 1) return false;
      break;
    default:
      break;
  }
  regs_[address] = value;
  return true;
}

std::optional<bus::BusFrame> SimDevice::handle(const bus::BusFrame& request) {
  if (!powered_) return std::nullopt;
  if (request.is_broadcast()) {
    if (request.instruction == bus::Instruction::SyncWrite && request.payload.size() >= 3) {
      const auto address = static_cast<std::uint16_t>(bus::unpack_le(std::span(request.payload).subspan(0, 2), false));
      const std::size_t width = request.payload[2];
      if (width == 0) return std::nullopt;
      for (std::size_t pos = 3; pos + 1 + width <= request.payload.size(); pos += 1 + width) {
        if (request.payload[pos] == id_) {
          write_register(address, std::span(request.payload).subspan(pos + 1, width));
        }
      }
    }
    return std::nullopt;
  }
  if (request.device_id != id_) return std::nullopt;

  switch (request.instruction) {
    case bus::Instruction::Ping:
      return status(bus::pack_le(reg(bus::Register::ModelNumber), 2));
    case bus::Instruction::Read: {
      if (request.payload.size() != 3) return status({}, kInstructionError);
      const auto address = static_cast<std::size_t>(bus::unpack_le(std::span(request.payload).subspan(0, 2), false));
      const std::size_t length = request.payload[2];
      const std::size_t table_size = bus::ControlTable::standard().size();
      if (length == 0 || address + length > table_size) return status({}, kInstructionError);
      bus::Bytes image(table_size, 0);
      for (const auto& r : bus::ControlTable::standard().registers()) {
        const auto bytes = bus::pack_le(regs_.at(r.address), r.width);
        std::copy(bytes.begin(), bytes.end(), image.begin() + r.address);
      }
      return status(bus::Bytes(image.begin() + static_cast<std::ptrdiff_t>(address),
                               image.begin() + static_cast<std::ptrdiff_t>(address + length)));
    }
    case bus::Instruction::Write: {
      if (request.payload.size() < 3) return status({}, kInstructionError);
      const auto address = static_cast<std::uint16_t>(bus::unpack_le(std::span(request.payload).subspan(0, 2), false));
      const bool ok = write_register(address, std::span(request.payload).subspan(2));
      return status({}, ok ? 0 : kInstructionError);
    }
    default:
      return std::nullopt;
  }
}

namespace {

/// First-order lag toward `goal` with the slew limited to `vmax`, integrated
/// exactly over `dt`.
double lag_step(double pos, double goal, double dt, double tau, double vmax) {
  double err = goal - pos;
  const double knee = vmax * tau;
  if (std::abs(err) > knee) {
    const double saturated_for = (std::abs(err) - knee) / vmax;
    const double dir = err > 0 ? 1.0 : -1.0;
    if (saturated_for >= dt) return pos + dir * vmax * dt;
    pos += dir * vmax * saturated_for;
    dt -= saturated_for;
    err = goal - pos;
  }
  return goal - err * std::exp(-dt / tau);
}

}  // namespace

void SimDevice::step(double dt) {
  const bool torque = powered_ && reg(bus::Register::TorqueEnable) != 0;
  const auto mode = joint::mode_from_register(reg(bus::Register::OperatingMode)).value_or(joint::ControlMode::Position);
  const double tau = params_.time_constant;
  const double vmax = params_.velocity_limit;

  double demanded = 0.0;  // velocity the controller asks for
  double wanted = 0.0;    // velocity the setpoint asks for
  double drive_current = 0.0;
  bool current_mode = false;
  if (torque) {
    switch (mode) {
      case joint::ControlMode::Position: {
        const double goal = joint::ticks_to_position(reg(bus::Register::GoalPosition));
        demanded = (lag_step(position_, goal, dt, tau, vmax) - position_) / dt;
        wanted = demanded;
        break;
      }
      case joint::ControlMode::Velocity: {
        const double target = std::clamp(joint::ticks_to_velocity(reg(bus::Register::GoalVelocity)), -vmax, vmax);
        demanded = target + (velocity_ - target) * std::exp(-dt / tau);
        wanted = target;
        break;
      }
      case joint::ControlMode::Current: {
        drive_current = joint::ticks_to_current(reg(bus::Register::GoalCurrent));
        current_mode = true;
        const double target = std::clamp(drive_current / params_.blocking_gain, -vmax, vmax);
        demanded = target + (velocity_ - target) * std::exp(-dt / tau);
        wanted = target;
        break;
      }
    }
  }

  const double achieved = stuck_ ? 0.0 : demanded;
  position_ += achieved * dt;
  velocity_ = achieved;

  if (!torque) {
    current_ = 0.0;
  } else {
    const double sign = demanded < 0 ? -1.0 : 1.0;
    double magnitude = current_mode ? std::abs(drive_current)
                                    : params_.idle_current + params_.damping * std::abs(achieved) +
                                          params_.blocking_gain * std::abs(wanted - achieved);
    magnitude = std::min(magnitude + overload_, params_.current_limit);
    current_ = sign * magnitude;
  }
  publish_present();
}

void SimDevice::publish_present() {
  regs_[static_cast<std::uint16_t>(bus::Register::PresentPosition)] = std::llround(position_ / joint::kPositionLsb);
  regs_[static_cast<std::uint16_t>(bus::Register::PresentVelocity)] = std::llround(velocity_ / joint::kVelocityLsb);
  regs_[static_cast<std::uint16_t>(bus::Register::PresentCurrent)] =
      std::clamp<std::int64_t>(std::llround(current_ / joint::kCurrentLsb), -32768, 32767);
}

void SimDevice::power_off() {
  powered_ = false;
  regs_[static_cast<std::uint16_t>(bus::Register::TorqueEnable)] = 0;
  velocity_ = 0.0;
  current_ = 0.0;
  publish_present();
}

// ---------------------------------------------------------------------------

void SimBus::attach(SimDevice device) {
  const auto id = device.id();
  devices_.insert_or_assign(id, std::move(device));
}

SimDevice& SimBus::device(std::uint8_t id) {
  auto it = devices_.find(id);
  if (it == devices_.end()) throw std::out_of_range("no simulated device " + std::to_string(id));
  return it->second;
}

const SimDevice& SimBus::device(std::uint8_t id) const {
  auto it = devices_.find(id);
  if (it == devices_.end()) throw std::out_of_range("no simulated device " + std::to_string(id));
  return it->second;
}

bool SimBus::has_device(std::uint8_t id) const { return devices_.count(id) > 0; }

std::vector<std::uint8_t> SimBus::ids() const {
  std::vector<std::uint8_t> out;
  for (const auto& [id, _] : devices_) out.push_back(id);
  return out;
}

void SimBus::write(std::span<const std::uint8_t> bytes) {
  inbound_.insert(inbound_.end(), bytes.begin(), bytes.end());
  for (;;) {
    const auto r = bus::decode_frame(inbound_);
    if (r.consumed == 0) break;
    inbound_.erase(inbound_.begin(), inbound_.begin() + static_cast<std::ptrdiff_t>(r.consumed));
    if (r.status != bus::DecodeStatus::Ok) continue;
    ++frames_seen_;
    const bus::BusFrame& frame = *r.frame;
    if (frame.is_broadcast()) {
      ++broadcasts_seen_;
      for (auto& [_, dev] : devices_) dev.handle(frame);
      continue;
    }
    auto it = devices_.find(frame.device_id);
    if (it == devices_.end()) continue;
    if (auto reply = it->second.handle(frame)) {
      bus::Bytes wire = bus::encode_frame(*reply);
      if (corrupt_ > 0) {
        --corrupt_;
        wire.back() ^= 0x01;
      }
      outbound_.insert(outbound_.end(), wire.begin(), wire.end());
    }
  }
}

std::size_t SimBus::read(std::span<std::uint8_t> out, std::chrono::microseconds timeout) {
  if (outbound_.empty()) {
    bus_time_ += timeout;
    return 0;
  }
  const std::size_t n = std::min(out.size(), outbound_.size());
  std::copy_n(outbound_.begin(), n, out.begin());
  outbound_.erase(outbound_.begin(), outbound_.begin() + static_cast<std::ptrdiff_t>(n));
  return n;
}

void SimBus::step(double dt) {
  for (auto& [_, dev] : devices_) dev.step(dt);
}

// ---------------------------------------------------------------------------

void validate(const SimConfig& c) {
  auto fail = [](const std::string& what) { throw std::invalid_argument("sim." + what); };
  if (!(c.tick > 0.0)) fail("tick: must be > 0");
  if (!(c.env_period >= c.tick)) fail("env_period: must be >= tick");
  if (!(c.rh_noise_sigma >= 0.0)) fail("rh_noise_sigma: must be >= 0");
  if (!(c.leak.tau_s > 0.0)) fail("leak.tau_s: must be > 0");
  if (!(c.leak.target_rh > 0.0 && c.leak.target_rh <= 100.0)) fail("leak.target_rh: must be in (0, 100]");
  std::set<std::string> zones;
  for (const auto& z : c.zones) {
    if (z.id.empty()) fail("zones: empty zone id");
    if (!zones.insert(z.id).second) fail("zones: duplicate zone '" + z.id + "'");
    if (!(z.rh >= 0.0 && z.rh <= 100.0)) fail("zones." + z.id + ".rh: must be in [0, 100]");
  }
  std::set<std::string> harnessed;
  for (std::size_t i = 0; i < c.harnesses.size(); ++i) {
    const auto& h = c.harnesses[i];
    if (h.empty() || h.size() > 3) fail("harnesses[" + std::to_string(i) + "]: must hold 1 to 3 zones");
    for (const auto& z : h) {
      if (!zones.count(z)) fail("harnesses[" + std::to_string(i) + "]: unknown zone '" + z + "'");
      if (!harnessed.insert(z).second) fail("harnesses: zone '" + z + "' on two harnesses");
    }
  }
  std::set<std::uint8_t> ids;
  for (auto id : c.device_ids) {
    if (id > bus::kMaxDeviceId) fail("device_ids: id out of range");
    if (!ids.insert(id).second) fail("device_ids: duplicate id " + std::to_string(id));
  }
}

std::string_view to_string(FaultKind kind) {
  switch (kind) {
    case FaultKind::Leak: return "LEAK";
    case FaultKind::Overload: return "OVERLOAD";
    case FaultKind::Stuck: return "STUCK";
    case FaultKind::WirePropagation: return "WIRE_PROPAGATION";
  }
  return "?";
}

Fault fault_from_json(const json& j,
                      const std::function<std::optional<std::uint8_t>(const std::string&)>& resolve_joint) {
  auto bad = [](const std::string& why) { return SimError(SimError::Kind::InvalidFault, why); };
  if (!j.is_object()) throw bad("fault must be an object");
  Fault f;
  const std::string kind = j.value("kind", "");
  f.at = j.value("at", 0.0);
  auto joint_id = [&]() -> std::uint8_t {
    if (!j.contains("joint")) throw bad(kind + " fault needs 'joint'");
    const json& ref = j.at("joint");
    if (ref.is_number_integer()) return static_cast<std::uint8_t>(ref.get<int>());
    if (!ref.is_string()) throw bad("fault 'joint' must be a name or id");
    const auto id = resolve_joint ? resolve_joint(ref.get<std::string>()) : std::nullopt;
    if (!id) throw bad("unknown joint '" + ref.get<std::string>() + "'");
    return *id;
  };
  try {
    if (kind == "LEAK") {
      f.kind = FaultKind::Leak;
      f.zone = j.at("zone").get<std::string>();
      f.severity = j.value("severity", 1.0);
    } else if (kind == "OVERLOAD") {
      f.kind = FaultKind::Overload;
      f.device = joint_id();
      f.extra_ma = j.at("extra_ma").get<double>();
    } else if (kind == "STUCK") {
      f.kind = FaultKind::Stuck;
      f.device = joint_id();
    } else if (kind == "WIRE_PROPAGATION") {
      f.kind = FaultKind::WirePropagation;
      f.harness = j.at("harness").get<std::size_t>();
    } else {
      throw bad("unknown fault kind '" + kind + "'");
    }
  } catch (const json::exception& e) {
    throw bad(std::string("fault field: ") + e.what());
  }
  return f;
}

json to_json(const Fault& f) {
  json j = {{"kind", to_string(f.kind)}, {"at", f.at}};
  switch (f.kind) {
    case FaultKind::Leak: j["zone"] = f.zone; j["severity"] = f.severity; break;
    case FaultKind::Overload: j["joint"] = f.device; j["extra_ma"] = f.extra_ma; break;
    case FaultKind::Stuck: j["joint"] = f.device; break;
    case FaultKind::WirePropagation: j["harness"] = f.harness; break;
  }
  return j;
}

World::World(SimConfig config) : config_(std::move(config)), rng_(config_.seed) {
  validate(config_);
  for (auto id : config_.device_ids) bus_.attach(SimDevice(id, config_.device));
  for (const auto& z : config_.zones) zones_.push_back(Zone{z, z.rh, std::nullopt, 0.0, 1.0});
  env_every_ = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(config_.env_period / config_.tick)));
  pressure_ = config_.initial_pressure;
}

World::Zone& World::zone(const std::string& id) {
  for (auto& z : zones_) {
    if (z.config.id == id) return z;
  }
  throw SimError(SimError::Kind::InvalidFault, "unknown zone '" + id + "'");
}

const World::Zone& World::zone(const std::string& id) const {
  return const_cast<World*>(this)->zone(id);
}

double World::true_rh(const std::string& id) const { return zone(id).rh; }
bool World::leaking(const std::string& id) const { return zone(id).leak_onset.has_value(); }

double World::gaussian() {
  auto uniform = [&] { return (static_cast<double>(rng_() >> 11) + 0.5) * 0x1.0p-53; };
  const double u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
}

void World::check(const Fault& f) const {
  auto bad = [](const std::string& why) { return SimError(SimError::Kind::InvalidFault, why); };
  switch (f.kind) {
    case FaultKind::Leak:
      zone(f.zone);
      if (!(f.severity > 0.0)) throw bad("leak severity must be > 0");
      break;
    case FaultKind::Overload:
      if (!bus_.has_device(f.device)) throw bad("no device " + std::to_string(f.device));
      if (!(f.extra_ma >= 0.0)) throw bad("overload current must be >= 0");
      break;
    case FaultKind::Stuck:
      if (!bus_.has_device(f.device)) throw bad("no device " + std::to_string(f.device));
      break;
    case FaultKind::WirePropagation: {
      if (f.harness >= config_.harnesses.size()) throw bad("no harness " + std::to_string(f.harness));
      const double when = std::max(f.at, now());
      bool active = false;
      for (const auto& zid : config_.harnesses[f.harness]) {
        if (zone(zid).leak_onset) active = true;
        for (const auto& p : pending_) {
          if (p.kind == FaultKind::Leak && p.zone == zid && p.at <= when) active = true;
        }
      }
      if (!active) throw bad("wire propagation needs an active leak on harness " + std::to_string(f.harness));
      break;
    }
  }
}

void World::inject(const Fault& fault) {
  check(fault);
  if (fault.at <= now()) {
    apply(fault);
  } else {
    pending_.push_back(fault);
    std::stable_sort(pending_.begin(), pending_.end(), [](const Fault& a, const Fault& b) { return a.at < b.at; });
  }
}

void World::apply(const Fault& f) {
  switch (f.kind) {
    case FaultKind::Leak: {
      Zone& z = zone(f.zone);
      if (!z.leak_onset) {
        z.leak_onset = now();
        z.leak_start_rh = z.rh;
        z.severity = f.severity;
      }
      break;
    }
    case FaultKind::Overload: bus_.device(f.device).add_overload(f.extra_ma); break;
    case FaultKind::Stuck: bus_.device(f.device).set_stuck(true); break;
    case FaultKind::WirePropagation: {
      const auto& h = config_.harnesses[f.harness];
      std::optional<std::size_t> source;
      for (std::size_t i = 0; i < h.size(); ++i) {
        if (zone(h[i]).leak_onset && (!source || *zone(h[i]).leak_onset < *zone(h[*source]).leak_onset)) source = i;
      }
      if (!source) break;
      const double severity = zone(h[*source]).severity;
      for (std::size_t i = 0; i < h.size(); ++i) {
        if (i == *source || zone(h[i]).leak_onset) continue;
        const double hops = std::abs(static_cast<double>(i) - static_cast<double>(*source));
        Fault leak;
        leak.kind = FaultKind::Leak;
        leak.zone = h[i];
        leak.severity = severity;
        leak.at = now() + hops * config_.leak.propagation_delay_s;
        pending_.push_back(leak);
      }
      std::stable_sort(pending_.begin(), pending_.end(), [](const Fault& a, const Fault& b) { return a.at < b.at; });
      break;
    }
  }
}

void World::step() {
  ++ticks_;
  const double t = now();

  while (!pending_.empty() && pending_.front().at <= t + 1e-9) {
    const Fault f = pending_.front();
    pending_.erase(pending_.begin());
    apply(f);
  }

  bus_.step(config_.tick);

  for (auto& z : zones_) {
    if (!z.leak_onset) continue;
    const double delay = config_.leak.rise_delay_s / z.severity;
    const double tau = config_.leak.tau_s / z.severity;
    const double elapsed = t - *z.leak_onset - delay;
    if (elapsed > 0.0) {
      z.rh = z.leak_start_rh + (config_.leak.target_rh - z.leak_start_rh) * (1.0 - std::exp(-elapsed / tau));
    }
  }

  if (ticks_ % env_every_ == 0) {
    for (const auto& z : zones_) {
      const double noisy = z.rh + config_.rh_noise_sigma * gaussian();
      const double rh = std::round(std::clamp(noisy, 0.0, config_.sensor_ceiling));
      env_out_.push_back(leak::EnvSample{z.config.id, t, std::round(z.config.temperature), rh});
    }
  }
}

std::vector<leak::EnvSample> World::take_env_samples() {
  std::vector<leak::EnvSample> out;
  out.swap(env_out_);
  return out;
}

std::pair<double, double> World::power() const {
  if (power_cut_) return {0.0, 0.0};
  double amps = config_.electronics_current;
  for (auto id : bus_.ids()) amps += std::abs(bus_.device(id).current()) / 1000.0;
  return {config_.supply_voltage, amps};
}

void World::cut_power() {
  power_cut_ = true;
  for (auto id : bus_.ids()) bus_.device(id).power_off();
}

// ---------------------------------------------------------------------------

SimScenario scenario_from_json(const json& j) {
  auto bad = [](const std::string& why) { return SimError(SimError::Kind::Scenario, "scenario: " + why); };
  if (!j.is_object()) throw bad("top level must be an object");
  if (j.value("schema_version", 0) != 1) throw bad("schema_version: expected 1");
  SimScenario s;
  s.name = j.value("name", "");
  if (!j.contains("duration") || !j.at("duration").is_number()) throw bad("duration: required number");
  s.duration = j.at("duration").get<double>();
  if (!(s.duration > 0)) throw bad("duration: must be > 0");
  if (j.contains("policy")) {
    const json& p = j.at("policy");
    s.policy.abort_on_alarm = p.value("abort_on_alarm", false);
    s.policy.abort_on_fault = p.value("abort_on_fault", false);
  }
  double last = 0.0;
  const json schedule = j.value("schedule", json::array());
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    const json& e = schedule[i];
    const std::string where = "schedule[" + std::to_string(i) + "]";
    if (!e.is_object() || !e.contains("t") || !e.at("t").is_number()) throw bad(where + ".t: required number");
    ScheduledAction a;
    a.t = e.at("t").get<double>();
    if (a.t < last) throw bad(where + ".t: times must be nondecreasing");
    last = a.t;
    if (e.contains("pressure_bar")) {
      a.pressure = e.at("pressure_bar").get<double>() * 1e5;
    } else if (e.contains("pressure_pa")) {
      a.pressure = e.at("pressure_pa").get<double>();
    } else if (e.contains("command")) {
      json c = e.at("command");
      if (!c.is_object()) throw bad(where + ".command: must be an object");
      if (!c.contains("type")) c["type"] = "command";
      if (!c.contains("id")) c["id"] = "s" + std::to_string(i);
      try {
        a.command = telemetry::command_from_json(c);
      } catch (const telemetry::WireError& err) {
        throw bad(where + ".command: " + err.what());
      }
    } else {
      throw bad(where + ": needs pressure_bar, pressure_pa or command");
    }
    s.schedule.push_back(std::move(a));
  }
  return s;
}

json to_json(const SimScenario& s) {
  json schedule = json::array();
  for (const auto& a : s.schedule) {
    json e = {{"t", a.t}};
    if (a.pressure) e["pressure_pa"] = *a.pressure;
    if (a.command) e["command"] = telemetry::to_json(*a.command);
    schedule.push_back(e);
  }
  return {{"schema_version", 1},
          {"name", s.name},
          {"duration", s.duration},
          {"policy", {{"abort_on_alarm", s.policy.abort_on_alarm}, {"abort_on_fault", s.policy.abort_on_fault}}},
          {"schedule", schedule}};
}

SimScenario hyperbaric_scenario(const HyperbaricPlan& plan) {
  using telemetry::Command;
  using telemetry::CommandKind;
  SimScenario s;
  s.name = "hyperbaric";
  s.duration = plan.step_s * static_cast<double>(plan.pressures_bar.size());
  int n = 0;
  auto command = [&](double t, CommandKind kind, json args) {
    ScheduledAction a;
    a.t = t;
    a.command = Command{"h" + std::to_string(n++), kind, std::move(args)};
    s.schedule.push_back(std::move(a));
  };
  command(0.0, CommandKind::SetMode, {{"joint", plan.joint}, {"mode", "POSITION"}});
  command(0.0, CommandKind::Torque, {{"joint", plan.joint}, {"enabled", true}});
  command(0.0, CommandKind::Goal, {{"joint", plan.joint}, {"position", 0.0}});
  const double cycle = 2.0 * plan.half_cycle_s;
  const double motion = plan.step_s - plan.idle_s;
  const int cycles = static_cast<int>(std::floor(motion / cycle + 1e-9));
  for (std::size_t i = 0; i < plan.pressures_bar.size(); ++i) {
    const double t0 = plan.step_s * static_cast<double>(i);
    ScheduledAction p;
    p.t = t0;
    p.pressure = plan.pressures_bar[i] * 1e5;
    s.schedule.push_back(p);
    for (int c = 0; c < cycles; ++c) {
      const double tc = t0 + plan.idle_s + cycle * c;
      command(tc, CommandKind::Goal, {{"joint", plan.joint}, {"position", -kPi}});
      command(tc + plan.half_cycle_s, CommandKind::Goal, {{"joint", plan.joint}, {"position", kPi}});
    }
  }
  return s;
}

// ---------------------------------------------------------------------------

std::vector<telemetry::Envelope> replay_log_text(std::string_view text) {
  std::vector<telemetry::Envelope> out;
  std::size_t offset = 0;
  bool header_seen = false;
  while (offset < text.size()) {
    const std::size_t nl = text.find('\n', offset);
    if (nl == std::string_view::npos) {
      throw SimError(SimError::Kind::CorruptLog, "truncated record at byte " + std::to_string(offset), offset);
    }
    const std::string_view line = text.substr(offset, nl - offset);
    json j;
    try {
      j = json::parse(line.begin(), line.end());
    } catch (const json::parse_error&) {
      throw SimError(SimError::Kind::CorruptLog, "unparsable record at byte " + std::to_string(offset), offset);
    }
    if (!header_seen) {
      if (!j.is_object() || j.value("type", "") != "log_header" || j.value("schema", "") != "urjkit-telemetry") {
        throw SimError(SimError::Kind::CorruptLog, "missing log header", offset);
      }
      if (j.value("version", -1) != telemetry::kWireVersion) {
        throw SimError(SimError::Kind::VersionMismatch,
                       "log schema version " + j.value("version", json(nullptr)).dump() + ", expected " +
                           std::to_string(telemetry::kWireVersion));
      }
      header_seen = true;
    } else {
      try {
        out.push_back(telemetry::envelope_from_json(j));
      } catch (const telemetry::WireError& e) {
        throw SimError(SimError::Kind::CorruptLog,
                       "bad envelope at byte " + std::to_string(offset) + ": " + e.what(), offset);
      }
    }
    offset = nl + 1;
  }
  if (!header_seen) throw SimError(SimError::Kind::CorruptLog, "empty log", 0);
  return out;
}

std::vector<telemetry::Envelope> replay_log(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open log " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return replay_log_text(buf.str());
}

}  // namespace urjkit::sim
