#include "urjkit/kinematics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "urjkit/constants.hpp"

namespace urjkit::kin {

namespace {

// Relative slack on the workspace boundary so the fully extended pose stays
// reachable despite rounding.
constexpr double kReachSlack = 1e-12;

}  // namespace

double distance(const FootPoint& a, const FootPoint& b) {
  return std::sqrt((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y) + (a.z - b.z) * (a.z - b.z));
}

std::string_view to_string(KneeBranch branch) { return branch == KneeBranch::KneeUp ? "KNEE_UP" : "KNEE_DOWN"; }

KinematicsError::KinematicsError(KinErrorKind kind, const std::string& detail, double value)
    : std::runtime_error(detail), kind_(kind), value_(value) {}

void validate(const LegGeometry& g) {
  if (!(g.coxa > 0 && g.femur > 0 && g.tibia > 0)) {
    throw std::invalid_argument("leg link lengths must be positive");
  }
}

FootPoint fk(const LegGeometry& g, const JointAngles& q) {
  const double knee = q.femur + q.tibia;
  const double r = g.coxa + g.femur * std::cos(q.femur) + g.tibia * std::cos(knee);
  return {r * std::cos(q.coxa), r * std::sin(q.coxa), g.femur * std::sin(q.femur) + g.tibia * std::sin(knee)};
}

JointAngles ik(const LegGeometry& g, const FootPoint& p, KneeBranch branch) {
  const double r = std::hypot(p.x, p.y);
  const double scale = g.coxa + g.femur + g.tibia;
  if (r <= 1e-12 * scale) {
    throw KinematicsError(KinErrorKind::Singular, "foot on the coxa axis: yaw is indeterminate");
  }
  const double u = r - g.coxa;
  const double v = p.z;
  const double d = std::hypot(u, v);
  const double d_min = std::abs(g.femur - g.tibia);
  const double d_max = g.femur + g.tibia;
  const double slack = kReachSlack * scale;
  if (d > d_max + slack || d < d_min - slack) {
    std::ostringstream msg;
    msg << "planar distance " << d << " m outside [" << d_min << ", " << d_max << "]";
    throw KinematicsError(KinErrorKind::Unreachable, msg.str(), d);
  }

  double c = (d * d - g.femur * g.femur - g.tibia * g.tibia) / (2.0 * g.femur * g.tibia);
  c = std::clamp(c, -1.0, 1.0);
  const double bend = std::acos(c);
  const double tibia = branch == KneeBranch::KneeUp ? -bend : bend;
  const double femur = std::atan2(v, u) - std::atan2(g.tibia * std::sin(tibia), g.femur + g.tibia * std::cos(tibia));
  return {std::atan2(p.y, p.x), std::remainder(femur, 2.0 * kPi), tibia};
}

void validate(const GaitParams& gait) {
  auto fail = [](const std::string& what) { throw KinematicsError(KinErrorKind::InvalidGait, what); };
  if (!(gait.stride > 0)) fail("gait stride must be > 0");
  if (!(gait.step_height > 0)) fail("gait step height must be > 0");
  if (!(gait.period > 0)) fail("gait period must be > 0");
  if (!(gait.duty_factor > 0 && gait.duty_factor < 1)) fail("gait duty factor must be in (0, 1)");
}

FootPoint semi_ellipse(const GaitParams& gait, double phase) {
  if (!(phase >= 0.0 && phase < 1.0)) {
    throw KinematicsError(KinErrorKind::Domain, "phase " + std::to_string(phase) + " outside [0, 1)", phase);
  }
  const double half = gait.stride / 2.0;
  const double beta = gait.duty_factor;
  if (phase < beta) {
    const double s = phase / beta;
    return {gait.x_offset + half - gait.stride * s, gait.y_offset, gait.body_height};
  }
  const double angle = kPi * (phase - beta) / (1.0 - beta);
  return {gait.x_offset - half * std::cos(angle), gait.y_offset, gait.body_height + gait.step_height * std::sin(angle)};
}

double gait_phase(const GaitParams& gait, double t) {
  double phase = std::fmod(t, gait.period) / gait.period;
  if (phase < 0.0) phase += 1.0;
  if (phase >= 1.0) phase = 0.0;
  return phase;
}

JointAngles gait_tick(const LegGeometry& g, const GaitParams& gait, double t, KneeBranch branch) {
  const double phase = gait_phase(gait, t);
  try {
    return ik(g, semi_ellipse(gait, phase), branch);
  } catch (const KinematicsError& e) {
    throw KinematicsError(e.kind(), std::string(e.what()) + " at phase " + std::to_string(phase), phase);
  }
}

GaitCheck check_gait(const LegGeometry& g, const GaitParams& gait, KneeBranch branch, double rate_hz) {
  validate(g);
  validate(gait);
  GaitCheck check;
  const int samples = std::max(2, static_cast<int>(std::ceil(gait.period * rate_hz)));
  bool have_prev = false;
  JointAngles prev;
  for (int i = 0; i <= samples; ++i) {
    const double phase = static_cast<double>(i % samples) / samples;
    try {
      const JointAngles q = ik(g, semi_ellipse(gait, phase), branch);
      if (have_prev) {
        const double step = std::max({std::abs(std::remainder(q.coxa - prev.coxa, 2 * kPi)),
                                      std::abs(std::remainder(q.femur - prev.femur, 2 * kPi)),
                                      std::abs(q.tibia - prev.tibia)});
        check.max_joint_step = std::max(check.max_joint_step, step);
      }
      prev = q;
      have_prev = true;
    } catch (const KinematicsError&) {
      if (i < samples) check.unreachable_phases.push_back(phase);
      have_prev = false;
      check.ok = false;
    }
  }
  return check;
}

GaitPlanner::GaitPlanner(LegGeometry geometry, GaitParams gait, KneeBranch branch, double rate_hz,
                         double max_joint_rate)
    : geometry_(geometry), gait_(gait), branch_(branch) {
  check_ = check_gait(geometry_, gait_, branch_, rate_hz);
  if (!check_.ok) {
    std::ostringstream msg;
    msg << "gait leaves the workspace at " << check_.unreachable_phases.size() << " phases:";
    const std::size_t shown = std::min<std::size_t>(check_.unreachable_phases.size(), 8);
    for (std::size_t i = 0; i < shown; ++i) msg << ' ' << check_.unreachable_phases[i];
    if (shown < check_.unreachable_phases.size()) msg << " ...";
    throw KinematicsError(KinErrorKind::InvalidGait, msg.str(), check_.unreachable_phases.front());
  }
  const double max_step = max_joint_rate / rate_hz;
  if (check_.max_joint_step >= max_step) {
    std::ostringstream msg;
    msg << "gait needs " << check_.max_joint_step * rate_hz << " rad/s, limit " << max_joint_rate;
    throw KinematicsError(KinErrorKind::InvalidGait, msg.str());
  }
}

JointAngles GaitPlanner::tick(double t) const { return gait_tick(geometry_, gait_, t, branch_); }

FootPoint GaitPlanner::foot(double t) const { return semi_ellipse(gait_, gait_phase(gait_, t)); }

}  // namespace urjkit::kin
