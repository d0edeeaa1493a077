#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "oracles.hpp"
#include "urjkit/hydrocalc.hpp"
#include "urjkit/telemetry.hpp"

using namespace urjkit;
using namespace urjkit::hydro;

TEST_CASE("pressure at depth") {
  CHECK(pressure_at_depth(0.0) == kAtmosphere);
  // 1025 kg/m^3 * 9.80665 * 40 m + 101325 Pa, written out by hand.
  CHECK(pressure_at_depth(40.0, 1025.0) == doctest::Approx(503397.65).epsilon(1e-9));
  CHECK(pressure_at_depth(40.0, 1025.0) / 1e5 == doctest::Approx(5.03).epsilon(0.002));
  CHECK_THROWS_AS(pressure_at_depth(-1.0), CalcError);
  for (double d : {1.0, 13.0, 200.0}) {
    const double a = pressure_at_depth(d, 1000.0) - kAtmosphere;
    const double b = pressure_at_depth(d, 2000.0) - kAtmosphere;
    CHECK(b == doctest::Approx(2 * a).epsilon(1e-14));
  }
}

TEST_CASE("depth and pressure are exact inverses") {
  const auto r = telemetry::depth_from_pressure(5.0e5, 1025.0);
  CHECK(r.depth == doctest::Approx(39.66).epsilon(1e-3));
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> depth(0.0, 6000.0), rho(990.0, 1100.0);
  for (int i = 0; i < 100000; ++i) {
    const double d = depth(rng), p = rho(rng);
    REQUIRE(std::abs(telemetry::depth_from_pressure(pressure_at_depth(d, p), p).depth - d) <= 1e-9);
  }
  CHECK(telemetry::depth_from_pressure(9.0e4).surface);
  CHECK(telemetry::depth_from_pressure(9.0e4).depth == 0.0);
}

TEST_CASE("effective underwater weight of lead") {
  const auto one = effective_underwater_weight(1.0, 11340.0, 1025.0);
  const auto eight = effective_underwater_weight(8.0, 11340.0, 1025.0);
  // m * (1 - 1025 / 11340)
  CHECK(one.kgf == doctest::Approx(1.0 - 1025.0 / 11340.0));
  CHECK(std::abs(one.kgf - 0.91) <= 0.005);
  CHECK(std::abs(eight.kgf - 7.28) <= 0.005);
  CHECK(std::abs(one.newtons - 8.9) <= 0.1);
  CHECK(std::abs(eight.newtons - 71.4) <= 0.1);
  CHECK(effective_underwater_weight(3.0, 11340.0, 0.0).kgf == 3.0);
  CHECK_THROWS_AS(effective_underwater_weight(1.0, 900.0, 1025.0), CalcError);
}

TEST_CASE("submerged weight of the joint") {
  const double v = displaced_volume_for(0.449, 0.250, 1025.0);
  CHECK(v == doctest::Approx((0.449 - 0.250) / 1025.0).epsilon(1e-12));
  CHECK(v * 1e6 == doctest::Approx(194.1).epsilon(1e-3));
  const auto w = submerged_weight({0.449, v, 1025.0});
  CHECK(std::abs(w.kgf - 0.250) <= 0.001);
  CHECK(w.newtons == doctest::Approx(w.kgf * kGravity));
  CHECK(submerged_weight({0.449, 0.0, 1025.0}).kgf == 0.449);
  CHECK(std::abs(submerged_weight({2.0, 2.0 / 1025.0, 1025.0}).kgf) < 1e-15);
}

TEST_CASE("critical pressure agrees with the dimensional closed form") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> dia(0.03, 0.3), frac(0.005, 0.09), len(0.5, 5.0), mod(40e9, 210e9);
  for (int i = 0; i < 2000; ++i) {
    Enclosure e;
    e.outer_diameter = dia(rng);
    e.wall_thickness = e.outer_diameter * frac(rng);
    e.length = e.outer_diameter * len(rng);
    e.material.elastic_modulus = mod(rng);
    const double ref = oracle::collapse_pressure_dimensional(e.material.elastic_modulus, e.material.poisson_ratio,
                                                            e.outer_diameter, e.wall_thickness, e.length);
    REQUIRE(critical_pressure(e) == doctest::Approx(ref).epsilon(1e-10));
  }
}

TEST_CASE("canister buckling margin at 200 m") {
  const Enclosure canister;  // 66 x 82 x 3 mm, 6061-T6
  const auto r = buckling_margin(canister, 200.0, 1025.0);
  CHECK_FALSE(r.thin_wall_violation);
  CHECK(r.hydrostatic == doctest::Approx(1025.0 * kGravity * 200.0));
  CHECK(r.margin > 1.0);
  CHECK(r.margin == doctest::Approx(r.critical_pressure / r.hydrostatic));
  CHECK(r.yield_pressure == doctest::Approx(2 * 276e6 * 0.003 / 0.066));

  const auto top = buckling_margin(canister, 0.0);
  CHECK(top.surface);
  CHECK(top.margin == std::numeric_limits<double>::infinity());
}

TEST_CASE("buckling monotonicity grid") {
  const Enclosure base;
  const double p0 = critical_pressure(base);
  int passed = 0;
  for (int k = 1; k <= 5; ++k) {
    const double f = 1.0 + 0.1 * k;
    Enclosure e = base;
    e.wall_thickness *= f;
    passed += critical_pressure(e) > p0;
    e = base;
    e.material.elastic_modulus *= f;
    passed += critical_pressure(e) > p0;
    e = base;
    e.length *= f;
    passed += critical_pressure(e) < p0;
    e = base;
    e.outer_diameter *= f;
    passed += critical_pressure(e) < p0;
  }
  CHECK(passed == 20);
  Enclosure twice = base;
  twice.wall_thickness *= 2;
  CHECK(critical_pressure(twice) > p0);
}

TEST_CASE("thick wall is flagged or refused") {
  Enclosure thick;
  thick.wall_thickness = 0.01;
  CHECK(buckling_margin(thick, 100.0).thin_wall_violation);
  CHECK_THROWS_AS(buckling_margin(thick, 100.0, kSeawaterDensity, true), CalcError);
}
