#include <doctest.h>

#include <cmath>
#include <fstream>

#include "urjkit/joint.hpp"
#include "urjkit/leakwatch.hpp"
#include "urjkit/simulator.hpp"
#include "urjkit/telemetry.hpp"

using namespace urjkit;
using namespace urjkit::sim;

namespace {

SimConfig base_config() {
  SimConfig c;
  c.device_ids = {1, 2, 3};
  c.zones = {{"a", 20, 63}, {"b", 19, 60}, {"c", 21, 61}, {"d", 20, 58}};
  c.harnesses = {{"a", "b", "c"}, {"d"}};
  c.seed = 42;
  return c;
}

void step_for(World& w, double seconds) {
  const auto n = static_cast<std::uint64_t>(std::llround(seconds / w.config().tick));
  for (std::uint64_t i = 0; i < n; ++i) w.step();
}

// Position of a first-order lag with slew limit after a step of size `step`
// from rest, written from the two-phase closed form.
double step_response(double step, double vmax, double tau, double t) {
  const double knee = vmax * tau;
  const double t1 = step > knee ? (step - knee) / vmax : 0.0;
  if (t <= t1) return vmax * t;
  const double e0 = step > knee ? knee : step;
  return step - e0 * std::exp(-(t - t1) / tau);
}

double leak_rh(double rh0, double target, double tau, double delay, double since_onset) {
  const double e = since_onset - delay;
  return e <= 0 ? rh0 : rh0 + (target - rh0) * (1 - std::exp(-e / tau));
}

}  // namespace

TEST_CASE("config validation") {
  CHECK_NOTHROW(validate(base_config()));
  auto c = base_config();
  c.harnesses = {{"a", "b", "c", "d"}};
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
  c = base_config();
  c.harnesses = {{"a", "zz"}};
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
  c = base_config();
  c.tick = 0;
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
}

TEST_CASE("position step response matches the closed form") {
  DeviceParams p;
  p.velocity_limit = 2.0;
  p.time_constant = 0.05;
  SimBus bus;
  bus.attach(SimDevice(1, p));
  bus::BusMaster m(bus);
  m.write_register(1, bus::Register::TorqueEnable, 1);
  const auto ticks = joint::position_to_ticks(1.0);
  const double goal = joint::ticks_to_position(ticks);
  m.write_register(1, bus::Register::GoalPosition, ticks);

  const double dt = 0.01;
  double worst = 0;
  for (int i = 1; i <= 150; ++i) {
    bus.step(dt);
    worst = std::max(worst, std::abs(bus.device(1).position() - step_response(goal, 2.0, 0.05, i * dt)));
  }
  CHECK(worst < 1e-12);
  // Saturated until the error falls to vmax * tau = 0.1 rad, i.e. t = 0.45 s.
  CHECK(step_response(1.0, 2.0, 0.05, 0.45) == doctest::Approx(0.9));
  CHECK(std::abs(bus.device(1).position() - goal) < 1e-6);
  CHECK(std::abs(joint::ticks_to_position(bus.device(1).reg(bus::Register::PresentPosition)) - goal) <=
        joint::kPositionLsb / 2);
}

TEST_CASE("torque off draws no current and holds still") {
  SimBus bus;
  bus.attach(SimDevice(1, {}));
  bus::BusMaster m(bus);
  m.write_register(1, bus::Register::GoalPosition, 1000);
  for (int i = 0; i < 100; ++i) bus.step(0.02);
  CHECK(bus.device(1).position() == 0.0);
  CHECK(bus.device(1).current() == 0.0);
}

TEST_CASE("quiescent world keeps the initial humidity") {
  auto c = base_config();
  World w(c);
  step_for(w, 600);
  const auto samples = w.take_env_samples();
  CHECK(samples.size() == 4 * 300);
  for (const auto& s : samples) {
    const auto& z = *std::find_if(c.zones.begin(), c.zones.end(), [&](auto& zc) { return zc.id == s.zone; });
    REQUIRE(std::abs(s.rh - z.rh) <= 1.0);
    REQUIRE(s.temperature == z.temperature);
    REQUIRE(s.rh == std::round(s.rh));
  }
  for (const auto& z : c.zones) CHECK(w.true_rh(z.id) == z.rh);

  c.rh_noise_sigma = 0.0;
  World exact(c);
  step_for(exact, 600);
  for (const auto& s : exact.take_env_samples()) {
    const auto& z = *std::find_if(c.zones.begin(), c.zones.end(), [&](auto& zc) { return zc.id == s.zone; });
    REQUIRE(s.rh == z.rh);
  }
}

TEST_CASE("same seed gives the same trajectory") {
  auto run = [](std::uint64_t seed) {
    auto c = base_config();
    c.seed = seed;
    World w(c);
    Fault leak;
    leak.zone = "b";
    leak.at = 30;
    w.inject(leak);
    step_for(w, 400);
    return w.take_env_samples();
  };
  CHECK(run(5) == run(5));
  CHECK_FALSE(run(5) == run(6));
}

TEST_CASE("leak follows the exponential model and trips the detector") {
  auto c = base_config();
  World w(c);
  Fault leak;
  leak.zone = "a";
  w.inject(leak);
  CHECK(w.leaking("a"));

  leak::Detector det("a");
  double prev = 0;
  std::optional<double> alarm;
  std::optional<double> cross80;
  for (int i = 1; i <= 50 * 1500; ++i) {
    w.step();
    const double t = w.now();
    const double rh = w.true_rh("a");
    REQUIRE(rh >= prev);
    prev = rh;
    if (i % 50 == 0) REQUIRE(rh == doctest::Approx(leak_rh(63, 95, 480, 60, t)).epsilon(1e-12));
    if (!cross80 && rh >= 80) cross80 = t;
    for (const auto& s : w.take_env_samples()) {
      if (s.zone == "a" && det.ingest(s).state == leak::LeakState::Alarm && !alarm) alarm = s.t;
    }
  }
  // Onset of the rise is the rise delay after ingress.
  REQUIRE(alarm);
  CHECK(*alarm - 60.0 <= 90.0);
  CHECK(*alarm - 60.0 >= 0.0);
  REQUIRE(cross80);
  CHECK(*cross80 == doctest::Approx(60 + 480 * std::log(32.0 / 15.0)).epsilon(1e-3));
}

TEST_CASE("severity scales delay and time constant") {
  auto c = base_config();
  c.rh_noise_sigma = 0;
  World w(c);
  Fault leak;
  leak.zone = "a";
  leak.severity = 4;
  w.inject(leak);
  step_for(w, 100);
  CHECK(w.true_rh("a") == doctest::Approx(leak_rh(63, 95, 120, 15, 100)).epsilon(1e-9));
  CHECK(w.true_rh("b") == 60.0);
}

TEST_CASE("wire propagation reaches harness zones in cable order") {
  auto c = base_config();
  c.leak.propagation_delay_s = 120;
  World w(c);

  Fault bad;
  bad.kind = FaultKind::WirePropagation;
  bad.harness = 1;
  CHECK_THROWS_AS(w.inject(bad), SimError);
  bad.harness = 7;
  CHECK_THROWS_AS(w.inject(bad), SimError);

  Fault leak;
  leak.zone = "a";
  leak.severity = 2;
  leak.at = 10;
  w.inject(leak);
  Fault prop;
  prop.kind = FaultKind::WirePropagation;
  prop.harness = 0;
  prop.at = 10;
  CHECK_NOTHROW(w.inject(prop));

  leak::Fleet fleet;
  for (auto z : {"a", "b", "c", "d"}) fleet.add_zone(z);
  std::map<std::string, double> first_alarm;
  std::map<std::string, double> first_leak;
  for (int i = 0; i < 50 * 900; ++i) {
    w.step();
    for (auto z : {"a", "b", "c", "d"}) {
      if (w.leaking(z) && !first_leak.count(z)) first_leak[z] = w.now();
    }
    for (const auto& s : w.take_env_samples()) {
      if (fleet.ingest(s).state == leak::LeakState::Alarm && !first_alarm.count(s.zone)) first_alarm[s.zone] = s.t;
    }
  }
  CHECK(first_leak.at("a") == doctest::Approx(10.0));
  CHECK(first_leak.at("b") == doctest::Approx(130.0));
  CHECK(first_leak.at("c") == doctest::Approx(250.0));
  CHECK_FALSE(first_leak.count("d"));
  REQUIRE(first_alarm.count("a"));
  REQUIRE(first_alarm.count("b"));
  REQUIRE(first_alarm.count("c"));
  CHECK(first_alarm["a"] < first_alarm["b"]);
  CHECK(first_alarm["b"] < first_alarm["c"]);
  CHECK_FALSE(first_alarm.count("d"));
}

TEST_CASE("pending leak on the harness allows propagation") {
  World w(base_config());
  Fault leak;
  leak.zone = "c";
  leak.at = 50;
  w.inject(leak);
  Fault prop;
  prop.kind = FaultKind::WirePropagation;
  prop.at = 60;
  CHECK_NOTHROW(w.inject(prop));
  step_for(w, 61);
  CHECK(w.leaking("c"));
  CHECK_FALSE(w.leaking("b"));
  CHECK_FALSE(w.leaking("a"));
}

TEST_CASE("stuck joint under a goal: no motion, rising effort, supervisor fires") {
  World w(base_config());
  bus::BusMaster master(w.bus());
  joint::JointConfig jc;
  jc.name = "femur";
  jc.device_id = 2;
  joint::Joint j(jc, master);
  j.set_torque(true);
  Fault stuck;
  stuck.kind = FaultKind::Stuck;
  stuck.device = 2;
  w.inject(stuck);
  j.command(joint::Setpoint::position(2.0));

  std::optional<joint::OvercurrentSupervisor::Event> ev;
  double peak = 0;
  while (!ev && w.now() < 5.0) {
    w.step();
    j.refresh(w.now());
    peak = std::max(peak, std::abs(j.state().effort));
    ev = j.supervise(w.now());
  }
  REQUIRE(ev == joint::OvercurrentSupervisor::Event::Shutdown);
  CHECK(j.state().position == 0.0);
  CHECK(peak > jc.overcurrent.threshold_ma);
  CHECK(w.now() == doctest::Approx(1.0 + w.config().tick).epsilon(0.05));
}

TEST_CASE("overload adds to present current") {
  World w(base_config());
  bus::BusMaster m(w.bus());
  m.write_register(1, bus::Register::TorqueEnable, 1);
  step_for(w, 1);
  const auto before = m.read_register(1, bus::Register::PresentCurrent);
  Fault f;
  f.kind = FaultKind::Overload;
  f.device = 1;
  f.extra_ma = 700;
  w.inject(f);
  step_for(w, 1);
  CHECK(m.read_register(1, bus::Register::PresentCurrent) == before + 700);
  CHECK(w.power().second == doctest::Approx(0.35 + (before + 700) / 1000.0).epsilon(1e-3));
  w.cut_power();
  CHECK(w.power().second == 0.0);
}

TEST_CASE("fault json") {
  auto resolve = [](const std::string& n) -> std::optional<std::uint8_t> {
    if (n == "tibia") return 3;
    return std::nullopt;
  };
  const auto f = fault_from_json({{"kind", "STUCK"}, {"joint", "tibia"}, {"at", 4}}, resolve);
  CHECK(f.kind == FaultKind::Stuck);
  CHECK(f.device == 3);
  CHECK(f.at == 4.0);
  const auto back = fault_from_json(to_json(f), resolve);
  CHECK(back.device == 3);
  CHECK_THROWS_AS(fault_from_json({{"kind", "STUCK"}, {"joint", "hip"}}, resolve), SimError);
  CHECK_THROWS_AS(fault_from_json({{"kind", "FLOOD"}}, resolve), SimError);
  CHECK_THROWS_AS(fault_from_json({{"kind", "LEAK"}}, resolve), SimError);
  World w(base_config());
  CHECK_THROWS_AS(w.inject(fault_from_json({{"kind", "LEAK"}, {"zone", "nope"}}, resolve)), SimError);
  CHECK_THROWS_AS(w.inject(fault_from_json({{"kind", "OVERLOAD"}, {"joint", 9}, {"extra_ma", 1}}, resolve)), SimError);
}

TEST_CASE("scenario json") {
  const telemetry::json j = {
      {"schema_version", 1},
      {"name", "demo"},
      {"duration", 30},
      {"policy", {{"abort_on_alarm", true}}},
      {"schedule",
       {{{"t", 0}, {"pressure_bar", 2.0}},
        {{"t", 5}, {"command", {{"kind", "TORQUE"}, {"args", {{"joint", "coxa"}, {"enable", true}}}}}}}}};
  const auto s = scenario_from_json(j);
  CHECK(s.name == "demo");
  CHECK(s.duration == 30.0);
  CHECK(s.policy.abort_on_alarm);
  REQUIRE(s.schedule.size() == 2);
  CHECK(*s.schedule[0].pressure == doctest::Approx(2e5));
  CHECK(s.schedule[1].command->kind == telemetry::CommandKind::Torque);
  CHECK_FALSE(s.schedule[1].command->id.empty());
  const auto again = scenario_from_json(to_json(s));
  CHECK(again.schedule.size() == 2);

  auto bad = j;
  bad["schedule"][1]["t"] = -1;
  CHECK_THROWS_AS(scenario_from_json(bad), SimError);
  bad = j;
  bad["schema_version"] = 2;
  CHECK_THROWS_AS(scenario_from_json(bad), SimError);
  bad = j;
  bad.erase("duration");
  CHECK_THROWS_AS(scenario_from_json(bad), SimError);
}

TEST_CASE("hyperbaric schedule structure") {
  const auto s = hyperbaric_scenario();
  CHECK(s.duration == 3000.0);
  std::vector<std::pair<double, double>> steps;
  int goals = 0;
  for (const auto& a : s.schedule) {
    if (a.pressure) steps.emplace_back(a.t, *a.pressure);
    if (a.command && a.command->kind == telemetry::CommandKind::Goal) ++goals;
  }
  REQUIRE(steps.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(steps[i].first == doctest::Approx(600.0 * i));
  CHECK(steps[0].second == doctest::Approx(1.5e5));
  for (std::size_t i = 1; i < 5; ++i) CHECK(steps[i].second - steps[i - 1].second == doctest::Approx(i == 1 ? 0.5e5 : 1e5));
  // floor(300 / 8) cycles of two goals per step plus the initial goal.
  CHECK(goals == 1 + 5 * 37 * 2);
}

TEST_CASE("log replay and corruption") {
  std::string text = telemetry::log_header({{"backend", "sim"}}).dump() + "\n";
  std::vector<telemetry::Envelope> envs;
  for (std::uint64_t i = 1; i <= 20; ++i) {
    envs.push_back({i, i * 0.5, telemetry::DepthReading{1e5 + i, 0.1 * i, false}});
    text += telemetry::serialize(envs.back()) + "\n";
  }
  CHECK(replay_log_text(text) == envs);

  const auto cut = text.size() - 17;
  try {
    replay_log_text(text.substr(0, cut));
    FAIL("truncated log accepted");
  } catch (const SimError& e) {
    CHECK(e.kind() == SimError::Kind::CorruptLog);
    CHECK(e.offset() == text.rfind('\n', cut - 1) + 1);
  }

  auto header = telemetry::log_header();
  header["version"] = telemetry::kWireVersion + 1;
  try {
    replay_log_text(header.dump() + "\n");
    FAIL("foreign version accepted");
  } catch (const SimError& e) {
    CHECK(e.kind() == SimError::Kind::VersionMismatch);
  }
  try {
    replay_log_text(telemetry::serialize(envs[0]) + "\n");
    FAIL("headerless log accepted");
  } catch (const SimError& e) {
    CHECK(e.kind() == SimError::Kind::CorruptLog);
  }

  const std::string path = "test_simulator_replay.jsonl";
  {
    std::ofstream out(path, std::ios::binary);
    out << text;
  }
  CHECK(replay_log(path) == envs);
  std::remove(path.c_str());
}
