#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "urjkit/config.hpp"
#include "urjkit/hydrocalc.hpp"
#include "urjkit/kinematics.hpp"
#include "urjkit/leakwatch.hpp"
#include "urjkit/runtime.hpp"
#include "urjkit/servobus.hpp"
#include "urjkit/simulator.hpp"
#include "urjkit/telemetry.hpp"

namespace py = pybind11;
using namespace urjkit;
using telemetry::json;

namespace {

py::object to_python(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

json from_python(const py::object& o) {
  return json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

bus::Bytes bytes_of(const py::bytes& b) {
  const std::string s = b;
  return bus::Bytes(s.begin(), s.end());
}

py::bytes to_bytes(const bus::Bytes& b) { return py::bytes(reinterpret_cast<const char*>(b.data()), b.size()); }

std::string status_name(bus::DecodeStatus s) {
  switch (s) {
    case bus::DecodeStatus::Ok: return "OK";
    case bus::DecodeStatus::NeedMore: return "NEED_MORE";
    case bus::DecodeStatus::CrcMismatch: return "CRC_MISMATCH";
    case bus::DecodeStatus::Malformed: return "MALFORMED";
  }
  return "?";
}

kin::KneeBranch branch_of(const std::string& name) {
  if (name == "KNEE_UP") return kin::KneeBranch::KneeUp;
  if (name == "KNEE_DOWN") return kin::KneeBranch::KneeDown;
  throw py::value_error("branch must be KNEE_UP or KNEE_DOWN");
}

kin::GaitParams gait_of(const py::dict& d) {
  kin::GaitParams g;
  for (const auto& [k, v] : d) {
    const auto key = k.cast<std::string>();
    const double x = v.cast<double>();
    if (key == "stride") g.stride = x;
    else if (key == "step_height") g.step_height = x;
    else if (key == "body_height") g.body_height = x;
    else if (key == "x_offset") g.x_offset = x;
    else if (key == "y_offset") g.y_offset = x;
    else if (key == "period") g.period = x;
    else if (key == "duty_factor") g.duty_factor = x;
    else throw py::key_error("unknown gait parameter '" + key + "'");
  }
  return g;
}

py::dict margin_dict(const hydro::BucklingResult& r) {
  py::dict d;
  d["critical_pressure"] = r.critical_pressure;
  d["yield_pressure"] = r.yield_pressure;
  d["hydrostatic"] = r.hydrostatic;
  d["margin"] = r.margin;
  d["surface"] = r.surface;
  d["thin_wall_violation"] = r.thin_wall_violation;
  return d;
}

}  // namespace

PYBIND11_MODULE(urjkit, m) {
  m.doc() = "Servo bus codec, leg kinematics, leak detection, hydrostatics and the simulated session";

  py::register_exception<bus::BusError>(m, "BusError", PyExc_ValueError);
  py::register_exception<kin::KinematicsError>(m, "KinematicsError", PyExc_ValueError);
  py::register_exception<hydro::CalcError>(m, "CalcError", PyExc_ValueError);
  py::register_exception<leak::LeakError>(m, "LeakError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<sim::SimError>(m, "SimError", PyExc_RuntimeError);

  // servo bus
  m.def("crc16", [](const py::bytes& data) { return bus::crc16(bytes_of(data)); });
  m.def(
      "encode_frame",
      [](int device_id, int instruction, const py::bytes& payload) {
        const auto ins = bus::instruction_from_code(static_cast<std::uint8_t>(instruction));
        if (!ins || device_id < 0 || device_id > 254) throw py::value_error("bad device id or instruction");
        return to_bytes(bus::encode_frame({static_cast<std::uint8_t>(device_id), *ins, bytes_of(payload)}));
      },
      py::arg("device_id"), py::arg("instruction"), py::arg("payload") = py::bytes());
  m.def("decode_frame", [](const py::bytes& stream) {
    const auto data = bytes_of(stream);
    const auto r = bus::decode_frame(data);
    py::dict d;
    d["status"] = status_name(r.status);
    d["consumed"] = r.consumed;
    d["skipped"] = r.skipped;
    if (r.frame) {
      d["device_id"] = r.frame->device_id;
      d["instruction"] = static_cast<int>(r.frame->instruction);
      d["payload"] = to_bytes(r.frame->payload);
    }
    return d;
  });

  // kinematics
  m.def(
      "fk",
      [](double coxa, double femur, double tibia, std::array<double, 3> links) {
        const auto p = kin::fk({links[0], links[1], links[2]}, {coxa, femur, tibia});
        return std::array<double, 3>{p.x, p.y, p.z};
      },
      py::arg("coxa"), py::arg("femur"), py::arg("tibia"), py::arg("links") = std::array<double, 3>{0.05, 0.10, 0.15});
  m.def(
      "ik",
      [](double x, double y, double z, const std::string& branch, std::array<double, 3> links) {
        const auto q = kin::ik({links[0], links[1], links[2]}, {x, y, z}, branch_of(branch));
        return std::array<double, 3>{q.coxa, q.femur, q.tibia};
      },
      py::arg("x"), py::arg("y"), py::arg("z"), py::arg("branch") = "KNEE_UP",
      py::arg("links") = std::array<double, 3>{0.05, 0.10, 0.15});
  m.def(
      "semi_ellipse",
      [](double phase, const py::dict& gait) {
        const auto p = kin::semi_ellipse(gait_of(gait), phase);
        return std::array<double, 3>{p.x, p.y, p.z};
      },
      py::arg("phase"), py::arg("gait") = py::dict());

  // hydrostatics
  m.def(
      "pressure_at_depth", [](double depth, double rho) { return hydro::pressure_at_depth(depth, rho); }, py::arg("depth"), py::arg("rho") = kSeawaterDensity);
  m.def(
      "depth_from_pressure",
      [](double p, double rho) { return telemetry::depth_from_pressure(p, rho).depth; }, py::arg("pressure"),
      py::arg("rho") = kSeawaterDensity);
  m.def(
      "effective_underwater_weight",
      [](double mass, double material, double rho) {
        const auto w = hydro::effective_underwater_weight(mass, material, rho);
        return std::pair<double, double>{w.kgf, w.newtons};
      },
      py::arg("mass"), py::arg("material_density") = 11340.0, py::arg("rho") = kSeawaterDensity);
  m.def("displaced_volume_for", &hydro::displaced_volume_for, py::arg("dry_mass"), py::arg("underwater_kgf"),
        py::arg("rho") = kSeawaterDensity);
  m.def(
      "submerged_weight",
      [](double dry, double volume, double rho) {
        const auto w = hydro::submerged_weight({dry, volume, rho});
        return std::pair<double, double>{w.kgf, w.newtons};
      },
      py::arg("dry_mass"), py::arg("volume"), py::arg("rho") = kSeawaterDensity);
  m.def(
      "buckling_margin",
      [](double depth, double diameter, double thickness, double length, double modulus, double rho) {
        hydro::Enclosure e;
        e.outer_diameter = diameter;
        e.wall_thickness = thickness;
        e.length = length;
        e.material.elastic_modulus = modulus;
        return margin_dict(hydro::buckling_margin(e, depth, rho));
      },
      py::arg("depth"), py::arg("diameter") = hydro::Enclosure{}.outer_diameter,
      py::arg("thickness") = hydro::Enclosure{}.wall_thickness, py::arg("length") = hydro::Enclosure{}.length,
      py::arg("modulus") = hydro::Enclosure{}.material.elastic_modulus, py::arg("rho") = kSeawaterDensity);

  // leak detection
  m.def("absolute_humidity", &leak::absolute_humidity, py::arg("temperature"), py::arg("rh"));
  py::class_<leak::Detector>(m, "Detector")
      .def(py::init([](const std::string& zone, double window, double delta, int persistence) {
             leak::DetectorConfig c;
             c.baseline_window_s = window;
             c.alarm_delta = delta;
             c.persistence = persistence;
             leak::validate(c);
             return leak::Detector(zone, c);
           }),
           py::arg("zone") = "zone", py::arg("window") = 60.0, py::arg("delta") = 5.0, py::arg("persistence") = 3)
      .def(
          "ingest",
          [](leak::Detector& d, double t, double rh, double temperature) {
            return std::string(leak::to_string(d.ingest({d.zone(), t, temperature, rh}).state));
          },
          py::arg("t"), py::arg("rh"), py::arg("temperature") = 20.0)
      .def("reset", &leak::Detector::reset)
      .def_property_readonly("state", [](const leak::Detector& d) { return std::string(leak::to_string(d.status().state)); })
      .def_property_readonly("baseline", [](const leak::Detector& d) { return d.status().baseline; });
  m.def("check_trace", [](const std::string& text) {
    const auto r = leak::check_trace(leak::parse_trace(text));
    py::list zones;
    for (const auto& z : r.zones) {
      py::dict d;
      d["zone"] = z.zone;
      d["final"] = std::string(leak::to_string(z.final.state));
      d["first_alarm"] = z.first_alarm ? py::cast(*z.first_alarm) : py::none();
      d["latency"] = z.latency ? py::cast(*z.latency) : py::none();
      d["false_alarm"] = z.false_alarm;
      zones.append(d);
    }
    py::dict out;
    out["overall"] = std::string(leak::to_string(r.overall));
    out["false_alarms"] = r.false_alarms;
    out["zones"] = zones;
    return out;
  });

  // sessions
  m.def("default_config", [] { return to_python(to_json(default_config())); });
  m.def("hyperbaric_scenario", [](const std::string& joint) {
    sim::HyperbaricPlan plan;
    plan.joint = joint;
    return to_python(sim::to_json(sim::hyperbaric_scenario(plan)));
  }, py::arg("joint") = "coxa");
  m.def(
      "run_scenario",
      [](const py::object& scenario, const py::object& config, const std::optional<std::string>& log_path) {
        const SystemConfig cfg = config.is_none() ? default_config() : config_from_json(from_python(config));
        const auto sc = sim::scenario_from_json(from_python(scenario));
        SessionOptions opts;
        opts.log_path = log_path;
        RunSummary summary;
        {
          py::gil_scoped_release release;
          Session session(cfg, opts);
          summary = session.run(sc);
        }
        return to_python(to_json(summary));
      },
      py::arg("scenario"), py::arg("config") = py::none(), py::arg("log_path") = py::none());
  m.def("replay_log", [](const std::string& path) {
    py::list out;
    for (const auto& e : sim::replay_log(path)) out.append(to_python(telemetry::to_json(e)));
    return out;
  });
  m.attr("WIRE_VERSION") = telemetry::kWireVersion;
  m.attr("FUSE_RATING_A") = telemetry::kFuseRatingA;
}
