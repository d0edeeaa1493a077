#pragma once

// Independent reference implementations used only by the tests.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace oracle {

/// Bit-at-a-time polynomial long division, MSB first, poly 0x8005, init 0.
inline std::uint16_t crc16_bitwise(std::span<const std::uint8_t> data) {
  std::uint32_t reg = 0;
  for (std::uint8_t byte : data) {
    for (int bit = 7; bit >= 0; --bit) {
      const bool in = (byte >> bit) & 1u;
      const bool top = (reg >> 15) & 1u;
      reg = (reg << 1) & 0xFFFFu;
      if (in != top) reg ^= 0x8005u;
    }
  }
  return static_cast<std::uint16_t>(reg);
}

using Mat4 = std::array<std::array<double, 4>, 4>;

inline Mat4 identity() {
  Mat4 m{};
  for (int i = 0; i < 4; ++i) m[i][i] = 1.0;
  return m;
}

inline Mat4 mul(const Mat4& a, const Mat4& b) {
  Mat4 c{};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 4; ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline Mat4 rot_z(double a) {
  Mat4 m = identity();
  m[0][0] = std::cos(a), m[0][1] = -std::sin(a);
  m[1][0] = std::sin(a), m[1][1] = std::cos(a);
  return m;
}

/// Rotation about the local -y axis, so a positive angle raises +x toward +z.
inline Mat4 pitch_up(double a) {
  Mat4 m = identity();
  m[0][0] = std::cos(a), m[0][2] = -std::sin(a);
  m[2][0] = std::sin(a), m[2][2] = std::cos(a);
  return m;
}

inline Mat4 trans_x(double d) {
  Mat4 m = identity();
  m[0][3] = d;
  return m;
}

/// Homogeneous-transform chain for the yaw-pitch-pitch leg.
inline std::array<double, 3> fk_chain(double l1, double l2, double l3, double q1, double q2, double q3) {
  Mat4 t = rot_z(q1);
  t = mul(t, trans_x(l1));
  t = mul(t, pitch_up(q2));
  t = mul(t, trans_x(l2));
  t = mul(t, pitch_up(q3));
  t = mul(t, trans_x(l3));
  return {t[0][3], t[1][3], t[2][3]};
}

/// Damped least squares with a numeric Jacobian, started from `q0`.
inline std::array<double, 3> ik_dls(double l1, double l2, double l3, std::array<double, 3> target,
                                    std::array<double, 3> q0, int iterations = 500, double damping = 1e-3) {
  auto q = q0;
  for (int it = 0; it < iterations; ++it) {
    const auto p = fk_chain(l1, l2, l3, q[0], q[1], q[2]);
    const std::array<double, 3> e{target[0] - p[0], target[1] - p[1], target[2] - p[2]};
    if (std::hypot(e[0], e[1], e[2]) < 1e-15) break;
    double j[3][3];
    const double h = 1e-7;
    for (int c = 0; c < 3; ++c) {
      auto qp = q, qm = q;
      qp[c] += h;
      qm[c] -= h;
      const auto pp = fk_chain(l1, l2, l3, qp[0], qp[1], qp[2]);
      const auto pm = fk_chain(l1, l2, l3, qm[0], qm[1], qm[2]);
      for (int r = 0; r < 3; ++r) j[r][c] = (pp[r] - pm[r]) / (2 * h);
    }
    // (J^T J + lambda^2 I) dq = J^T e
    double a[3][3], b[3];
    for (int r = 0; r < 3; ++r) {
      b[r] = 0;
      for (int k = 0; k < 3; ++k) b[r] += j[k][r] * e[k];
      for (int c = 0; c < 3; ++c) {
        a[r][c] = 0;
        for (int k = 0; k < 3; ++k) a[r][c] += j[k][r] * j[k][c];
      }
      a[r][r] += damping * damping;
    }
    // Gaussian elimination.
    for (int p = 0; p < 3; ++p) {
      int best = p;
      for (int r = p + 1; r < 3; ++r)
        if (std::abs(a[r][p]) > std::abs(a[best][p])) best = r;
      std::swap(a[p], a[best]);
      std::swap(b[p], b[best]);
      for (int r = p + 1; r < 3; ++r) {
        const double f = a[r][p] / a[p][p];
        for (int c = p; c < 3; ++c) a[r][c] -= f * a[p][c];
        b[r] -= f * b[p];
      }
    }
    double dq[3];
    for (int r = 2; r >= 0; --r) {
      double s = b[r];
      for (int c = r + 1; c < 3; ++c) s -= a[r][c] * dq[c];
      dq[r] = s / a[r][r];
    }
    for (int c = 0; c < 3; ++c) q[c] += dq[c];
  }
  return q;
}

/// Reachable planar distance band of the femur-tibia pair found by scanning
/// the knee angle.
inline std::pair<double, double> planar_reach_scan(double l2, double l3, int samples = 200000) {
  double lo = 1e300, hi = 0;
  for (int i = 0; i <= samples; ++i) {
    const double q3 = -M_PI + 2 * M_PI * i / samples;
    const double d = std::hypot(l2 + l3 * std::cos(q3), l3 * std::sin(q3));
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
  return {lo, hi};
}

/// Saturation vapour pressure over water, kPa, from a published table at 5 degC steps.
inline double saturation_kpa_table(double t_c) {
  static const double table[][2] = {{0, 0.6113},  {5, 0.8726},  {10, 1.2281}, {15, 1.7056}, {20, 2.3388},
                                    {25, 3.1690}, {30, 4.2455}, {35, 5.6267}, {40, 7.3814}};
  for (std::size_t i = 0; i + 1 < std::size(table); ++i) {
    if (t_c >= table[i][0] && t_c <= table[i + 1][0]) {
      const double f = (t_c - table[i][0]) / (table[i + 1][0] - table[i][0]);
      return table[i][1] + f * (table[i + 1][1] - table[i][1]);
    }
  }
  return NAN;
}

/// Absolute humidity from the ideal-gas law for water vapour, g/m^3.
inline double absolute_humidity_table(double t_c, double rh) {
  const double e_pa = rh / 100.0 * saturation_kpa_table(t_c) * 1000.0;
  return e_pa / (461.5 * (t_c + 273.15)) * 1000.0;
}

/// Short-cylinder collapse pressure written in dimensional form.
inline double collapse_pressure_dimensional(double e, double nu, double d, double t, double l) {
  return 2.42 * e * std::pow(t, 2.5) / (std::pow(1 - nu * nu, 0.75) * std::pow(d, 1.5) * (l - 0.45 * std::sqrt(t * d)));
}

/// Tick-by-tick restatement of the overcurrent rule. Returns the index of
/// the tick at which shutdown fires.
inline std::optional<std::size_t> overcurrent_trip_tick(const std::vector<double>& effort, double dt, double threshold,
                                                        double sustain) {
  std::size_t run = 0;  // consecutive ticks above threshold
  for (std::size_t i = 0; i < effort.size(); ++i) {
    run = std::abs(effort[i]) > threshold ? run + 1 : 0;
    // The run started at tick i-run+1; it has lasted (run-1) ticks of dt.
    if (run > 0 && static_cast<double>(run - 1) * dt >= sustain - 1e-9) return i;
  }
  return std::nullopt;
}

}  // namespace oracle
