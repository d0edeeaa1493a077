#include "urjkit/leakwatch.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace urjkit::leak {

std::string_view to_string(LeakState state) {
  switch (state) {
    case LeakState::Learning: return "LEARNING";
    case LeakState::Ok: return "OK";
    case LeakState::Warn: return "WARN";
    case LeakState::Alarm: return "ALARM";
  }
  return "?";
}

std::optional<LeakState> state_from_string(std::string_view text) {
  for (auto s : {LeakState::Learning, LeakState::Ok, LeakState::Warn, LeakState::Alarm}) {
    if (to_string(s) == text) return s;
  }
  return std::nullopt;
}

LeakError::LeakError(LeakErrorKind kind, const std::string& detail) : std::runtime_error(detail), kind_(kind) {}

void validate(const DetectorConfig& c) {
  if (!(c.warn_delta > 0.0)) throw std::invalid_argument("detector.warn_delta must be > 0");
  if (!(c.warn_delta < c.alarm_delta)) throw std::invalid_argument("detector.warn_delta must be < alarm_delta");
  if (c.persistence < 1) throw std::invalid_argument("detector.persistence must be >= 1");
  // 0.5 Hz cadence: the window must hold at least five samples.
  if (!(c.baseline_window_s >= 10.0)) throw std::invalid_argument("detector.baseline_window_s must cover >= 5 samples");
  if (!(c.sensor_ceiling > 0.0 && c.sensor_ceiling <= 100.0)) {
    throw std::invalid_argument("detector.sensor_ceiling must be in (0, 100]");
  }
}

double absolute_humidity(double temperature_c, double rh_percent) {
  if (!(temperature_c >= -40.0 && temperature_c <= 80.0)) {
    throw LeakError(LeakErrorKind::Domain, "temperature outside [-40, 80] degC");
  }
  if (!(rh_percent >= 0.0 && rh_percent <= 100.0)) {
    throw LeakError(LeakErrorKind::Domain, "relative humidity outside [0, 100] %");
  }
  const double vapour_hpa = rh_percent / 100.0 * 6.112 * std::exp(17.62 * temperature_c / (243.12 + temperature_c));
  return 216.7 * vapour_hpa / (273.15 + temperature_c);
}

Detector::Detector(std::string zone, DetectorConfig config) : config_(config) {
  validate(config_);
  status_.zone = std::move(zone);
}

double Detector::measure(const EnvSample& s) const {
  double rh = std::clamp(s.rh, 0.0, 100.0);
  if (rh >= config_.sensor_ceiling) rh = 100.0;
  if (config_.absolute_humidity_mode) return absolute_humidity(s.temperature, rh);
  return rh;
}

void Detector::enter(LeakState state, double t) {
  if (status_.state != state) {
    status_.state = state;
    status_.since = t;
  }
}

const LeakStatus& Detector::ingest(const EnvSample& sample) {
  if (last_t_ && sample.t < *last_t_) {
    throw LeakError(LeakErrorKind::OutOfOrder, "zone '" + status_.zone + "': sample at t=" + std::to_string(sample.t) +
                                                   " older than t=" + std::to_string(*last_t_));
  }
  last_t_ = sample.t;
  const double value = measure(sample);

  if (!learning_start_) {
    learning_start_ = sample.t;
    status_.since = sample.t;
  }

  if (status_.state == LeakState::Learning) {
    if (sample.t < *learning_start_ + config_.baseline_window_s) {
      learning_.push_back(value);
      return status_;
    }
    std::vector<double> sorted = learning_;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    status_.baseline = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    enter(LeakState::Ok, sample.t);
  }

  status_.delta = value - status_.baseline;
  if (status_.state == LeakState::Alarm) return status_;

  warn_run_ = status_.delta >= config_.warn_delta ? warn_run_ + 1 : 0;
  alarm_run_ = status_.delta >= config_.alarm_delta ? alarm_run_ + 1 : 0;
  if (alarm_run_ >= config_.persistence) {
    enter(LeakState::Alarm, sample.t);
  } else if (warn_run_ >= config_.persistence) {
    enter(LeakState::Warn, sample.t);
  } else {
    enter(LeakState::Ok, sample.t);
  }
  return status_;
}

void Detector::reset() {
  const std::string zone = status_.zone;
  status_ = LeakStatus{};
  status_.zone = zone;
  learning_start_.reset();
  learning_.clear();
  warn_run_ = 0;
  alarm_run_ = 0;
}

// ---------------------------------------------------------------------------

void Fleet::add_zone(const std::string& zone) {
  std::lock_guard lock(mutex_);
  detectors_.try_emplace(zone, zone, config_);
}

bool Fleet::has_zone(const std::string& zone) const {
  std::lock_guard lock(mutex_);
  return detectors_.count(zone) > 0;
}

LeakStatus Fleet::ingest(const EnvSample& sample) {
  std::lock_guard lock(mutex_);
  auto it = detectors_.find(sample.zone);
  if (it == detectors_.end()) throw LeakError(LeakErrorKind::UnknownZone, "unknown zone '" + sample.zone + "'");
  return it->second.ingest(sample);
}

void Fleet::reset(const std::string& zone) {
  std::lock_guard lock(mutex_);
  auto it = detectors_.find(zone);
  if (it == detectors_.end()) throw LeakError(LeakErrorKind::UnknownZone, "unknown zone '" + zone + "'");
  it->second.reset();
}

void Fleet::reset_all() {
  std::lock_guard lock(mutex_);
  for (auto& [_, d] : detectors_) d.reset();
}

FleetView Fleet::view() const {
  std::lock_guard lock(mutex_);
  FleetView v;
  bool any = false;
  for (const auto& [zone, d] : detectors_) {
    v.zones.emplace(zone, d.status());
    if (!any || d.status().state > v.overall) v.overall = d.status().state;
    any = true;
  }
  if (v.overall > LeakState::Ok) {
    for (const auto& [zone, st] : v.zones) {
      if (st.state == v.overall) v.worst_zones.push_back(zone);
    }
  }
  return v;
}

// ---------------------------------------------------------------------------

Trace parse_trace(std::string_view text) {
  Trace trace;
  std::map<std::string, double> last;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  auto fail = [&](const std::string& why) {
    throw LeakError(LeakErrorKind::Domain, "line " + std::to_string(line_no) + ": " + why);
  };
  while (pos <= text.size()) {
    const std::size_t nl = std::min(text.find('\n', pos), text.size());
    std::string line(text.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();

    std::istringstream in(line);
    std::string first;
    if (!(in >> first)) continue;
    if (first[0] == '#') {
      std::string word;
      if (first == "#" ? static_cast<bool>(in >> word) : false) {
        if (word == "onset") {
          std::string zone;
          double t = 0.0;
          if (!(in >> zone >> t)) fail("onset annotation needs <zone> <t>");
          trace.onsets[zone] = t;
        }
      }
      continue;
    }
    EnvSample s;
    try {
      std::size_t used = 0;
      s.t = std::stod(first, &used);
      if (used != first.size()) fail("bad timestamp '" + first + "'");
    } catch (const std::logic_error&) {
      fail("bad timestamp '" + first + "'");
    }
    std::string extra;
    if (!(in >> s.zone >> s.temperature >> s.rh)) fail("expected <t> <zone> <temperature> <rh>");
    if (in >> extra) fail("trailing field '" + extra + "'");
    if (!std::isfinite(s.t) || !std::isfinite(s.temperature)) fail("non-finite value");
    if (!(s.rh >= 0.0 && s.rh <= 100.0)) fail("rh outside [0, 100]");
    auto it = last.find(s.zone);
    if (it != last.end() && s.t < it->second) {
      fail("out-of-order sample for zone " + s.zone + " (t=" + first + ")");
    }
    last[s.zone] = s.t;
    trace.samples.push_back(std::move(s));
  }
  return trace;
}

std::string format_trace_line(const EnvSample& s) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(3) << s.t << ' ' << s.zone << ' ' << std::setprecision(0) << s.temperature
      << ' ' << s.rh << '\n';
  return out.str();
}

std::string format_trace(const Trace& trace) {
  std::ostringstream out;
  out << "# urjkit leak trace v1\n";
  for (const auto& [zone, t] : trace.onsets) out << "# onset " << zone << ' ' << std::fixed << std::setprecision(3) << t << '\n';
  for (const auto& s : trace.samples) out << format_trace_line(s);
  return out.str();
}

TraceReport check_trace(const Trace& trace, const DetectorConfig& config) {
  TraceReport report;
  std::map<std::string, std::size_t> index;
  std::vector<Detector> detectors;
  for (const auto& s : trace.samples) {
    auto it = index.find(s.zone);
    if (it == index.end()) {
      it = index.emplace(s.zone, detectors.size()).first;
      detectors.emplace_back(s.zone, config);
      ZoneReport z;
      z.zone = s.zone;
      if (auto o = trace.onsets.find(s.zone); o != trace.onsets.end()) z.onset = o->second;
      report.zones.push_back(std::move(z));
    }
    ZoneReport& z = report.zones[it->second];
    const LeakStatus st = detectors[it->second].ingest(s);
    if (z.transitions.empty() || z.transitions.back().second != st.state) z.transitions.emplace_back(s.t, st.state);
    if (st.state == LeakState::Warn && !z.first_warn) z.first_warn = s.t;
    if (st.state == LeakState::Alarm && !z.first_alarm) {
      z.first_alarm = s.t;
      if (z.onset && s.t >= *z.onset) {
        z.latency = s.t - *z.onset;
      } else {
        z.false_alarm = true;
        ++report.false_alarms;
      }
    }
    z.final = st;
  }
  for (const auto& z : report.zones) report.overall = std::max(report.overall, z.final.state);
  return report;
}

}  // namespace urjkit::leak
