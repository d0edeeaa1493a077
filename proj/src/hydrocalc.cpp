#include "urjkit/hydrocalc.hpp"

#include <cmath>
#include <limits>

namespace urjkit::hydro {

Weight submerged_weight(const BodyMass& b) {
  const double kgf = b.dry_mass - b.fluid_density * b.displaced_volume;
  return {kgf, kgf * kGravity};
}

double displaced_volume_for(double dry_mass, double submerged_kgf, double fluid_density) {
  if (!(fluid_density > 0)) throw CalcError("fluid density must be > 0");
  return (dry_mass - submerged_kgf) / fluid_density;
}

Weight effective_underwater_weight(double mass, double material_density, double fluid_density) {
  if (!(material_density > 0)) throw CalcError("material density must be > 0");
  if (!(material_density > fluid_density)) throw CalcError("material floats: density not above fluid density");
  const double kgf = mass * (1.0 - fluid_density / material_density);
  return {kgf, kgf * kGravity};
}

double pressure_at_depth(double depth, double fluid_density, double p_atm) {
  if (!(depth >= 0)) throw CalcError("depth must be >= 0");
  if (!(fluid_density > 0)) throw CalcError("fluid density must be > 0");
  return p_atm + fluid_density * kGravity * depth;
}

double critical_pressure(const Enclosure& e) {
  const double t_over_d = e.wall_thickness / e.outer_diameter;
  const double l_over_d = e.length / e.outer_diameter;
  const double denom = l_over_d - 0.45 * std::sqrt(t_over_d);
  if (!(e.outer_diameter > 0 && e.wall_thickness > 0 && e.length > 0)) {
    throw CalcError("enclosure dimensions must be positive");
  }
  if (!(denom > 0)) throw CalcError("cylinder too short for the short-cylinder collapse formula");
  const double nu = e.material.poisson_ratio;
  return 2.42 * e.material.elastic_modulus * std::pow(t_over_d, 2.5) / (std::pow(1.0 - nu * nu, 0.75) * denom);
}

BucklingResult buckling_margin(const Enclosure& e, double depth, double fluid_density, bool strict) {
  BucklingResult r;
  r.thin_wall_violation = !e.thin_wall();
  if (r.thin_wall_violation && strict) {
    throw CalcError("THIN_WALL_VIOLATION: wall thickness not below a tenth of the diameter");
  }
  r.critical_pressure = critical_pressure(e);
  r.yield_pressure = 2.0 * e.material.yield_strength * e.wall_thickness / e.outer_diameter;
  r.hydrostatic = pressure_at_depth(depth, fluid_density, 0.0);
  if (r.hydrostatic <= 0.0) {
    r.surface = true;
    r.margin = std::numeric_limits<double>::infinity();
  } else {
    r.margin = r.critical_pressure / r.hydrostatic;
  }
  return r;
}

}  // namespace urjkit::hydro
