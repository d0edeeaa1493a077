#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace urjkit::kin {

/// Coxa, femur and tibia link lengths in meters.
struct LegGeometry {
  double coxa = 0.05;
  double femur = 0.10;
  double tibia = 0.15;
};

/// Coxa yaw, femur pitch, tibia pitch (rad).
struct JointAngles {
  double coxa = 0.0;
  double femur = 0.0;
  double tibia = 0.0;
};

/// Leg-base frame: z up, all-zero angles put the foot on +x.
struct FootPoint {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

double distance(const FootPoint& a, const FootPoint& b);

/// KneeUp: femur raised, tibia pitched down (negative tibia angle).
enum class KneeBranch { KneeUp, KneeDown };

std::string_view to_string(KneeBranch branch);

enum class KinErrorKind { Unreachable, Singular, Domain, InvalidGait };

class KinematicsError : public std::runtime_error {
 public:
  KinematicsError(KinErrorKind kind, const std::string& detail, double value = 0.0);
  KinErrorKind kind() const { return kind_; }
  /// Offending planar distance (Unreachable) or phase (gait errors).
  double value() const { return value_; }

 private:
  KinErrorKind kind_;
  double value_;
};

void validate(const LegGeometry& g);

FootPoint fk(const LegGeometry& g, const JointAngles& q);

/// Closed-form inverse kinematics. Throws Unreachable when the planar
/// distance leaves [|femur - tibia|, femur + tibia], Singular on the coxa axis.
JointAngles ik(const LegGeometry& g, const FootPoint& p, KneeBranch branch = KneeBranch::KneeUp);

struct GaitParams {
  double stride = 0.06;        // m
  double step_height = 0.03;   // m
  double body_height = -0.10;  // z of the ground line, m (negative: below the base)
  double x_offset = 0.15;      // neutral foot x, m
  double y_offset = 0.0;       // m
  double period = 2.0;         // s
  double duty_factor = 0.6;    // fraction of the period in stance
};

void validate(const GaitParams& gait);

/// Stance: straight line at body height from x0+S/2 back to x0-S/2.
/// Swing: half ellipse from x0-S/2 to x0+S/2 peaking at body height + H.
FootPoint semi_ellipse(const GaitParams& gait, double phase);

/// Phase of time t within the gait period, in [0, 1).
double gait_phase(const GaitParams& gait, double t);

struct GaitCheck {
  bool ok = true;
  std::vector<double> unreachable_phases;
  double max_joint_step = 0.0;  // largest per-sample joint change, rad
};

/// Samples one period at `rate_hz` and reports unreachable phases and the
/// largest joint change between consecutive samples.
GaitCheck check_gait(const LegGeometry& g, const GaitParams& gait, KneeBranch branch, double rate_hz);

/// Gait trajectory validated against the workspace at construction.
class GaitPlanner {
 public:
  /// Throws KinematicsError(InvalidGait) listing offending phases, or when the
  /// joint change per sample at `rate_hz` reaches `max_joint_rate` (rad/s).
  GaitPlanner(LegGeometry geometry, GaitParams gait, KneeBranch branch = KneeBranch::KneeUp,
              double rate_hz = 50.0, double max_joint_rate = 10.0);

  JointAngles tick(double t) const;
  FootPoint foot(double t) const;

  const GaitParams& gait() const { return gait_; }
  const LegGeometry& geometry() const { return geometry_; }
  KneeBranch branch() const { return branch_; }
  const GaitCheck& check() const { return check_; }

 private:
  LegGeometry geometry_;
  GaitParams gait_;
  KneeBranch branch_;
  GaitCheck check_;
};

/// ik(semi_ellipse(gait, phase(t))). Unreachable errors carry the phase.
JointAngles gait_tick(const LegGeometry& g, const GaitParams& gait, double t,
                      KneeBranch branch = KneeBranch::KneeUp);

}  // namespace urjkit::kin
