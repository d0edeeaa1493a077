#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "urjkit/constants.hpp"

namespace urjkit::hydro {

class CalcError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct Material {
  double elastic_modulus = 68.9e9;  // Pa
  double poisson_ratio = 0.33;
  double density = 2700.0;          // kg/m^3
  double yield_strength = 276e6;    // Pa
};

/// 6061-T6 aluminium.
inline constexpr Material kAluminium6061{68.9e9, 0.33, 2700.0, 276e6};

struct Enclosure {
  double outer_diameter = 0.066;  // m
  double wall_thickness = 0.003;  // m
  double length = 0.082;          // m, unsupported length between end caps
  Material material = kAluminium6061;

  bool thin_wall() const { return wall_thickness < outer_diameter / 10.0; }
};

struct Weight {
  double kgf = 0.0;
  double newtons = 0.0;
};

struct BodyMass {
  double dry_mass = 0.0;          // kg
  double displaced_volume = 0.0;  // m^3
  double fluid_density = kSeawaterDensity;
};

/// Dry mass minus the mass of displaced fluid.
Weight submerged_weight(const BodyMass& body);

/// Displaced volume that yields the given submerged weight.
double displaced_volume_for(double dry_mass, double submerged_kgf, double fluid_density);

/// Effective weight of a solid mass immersed in fluid. Throws when the
/// material would float.
Weight effective_underwater_weight(double mass, double material_density, double fluid_density);

/// Absolute pressure at depth, Pa.
double pressure_at_depth(double depth, double fluid_density = kSeawaterDensity, double p_atm = kAtmosphere);

struct BucklingResult {
  double critical_pressure = 0.0;  // Pa, elastic collapse pressure
  double yield_pressure = 0.0;     // Pa, hoop-stress yield limit 2*sigma_y*t/D
  double hydrostatic = 0.0;        // Pa, gauge pressure at depth
  double margin = 0.0;             // critical_pressure / hydrostatic, +inf at the surface
  bool surface = false;
  bool thin_wall_violation = false;
};

/// Windenburg-Trilling critical external pressure of a short cylinder,
/// radial load dominant.
double critical_pressure(const Enclosure& e);

/// When `strict` is set a thick wall throws instead of being flagged.
BucklingResult buckling_margin(const Enclosure& e, double depth, double fluid_density = kSeawaterDensity,
                               bool strict = false);

}  // namespace urjkit::hydro
