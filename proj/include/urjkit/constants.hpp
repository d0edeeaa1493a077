#pragma once

namespace urjkit {

/// Standard gravity, m/s^2.
inline constexpr double kGravity = 9.80665;
/// Standard atmosphere, Pa.
inline constexpr double kAtmosphere = 101325.0;
inline constexpr double kSeawaterDensity = 1025.0;
inline constexpr double kPi = 3.14159265358979323846;

}  // namespace urjkit
