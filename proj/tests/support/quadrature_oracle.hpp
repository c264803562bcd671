#pragma once

// Dense product-rule quadrature for low-dimensional normal probabilities.
// Deliberately independent of the library's integrators: only std::erfc is
// shared.

#include <cmath>
#include <numbers>
#include <vector>

namespace oracle {

inline double phi(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }
inline double Phi(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

// Composite 5-point Gauss-Legendre on [lo, hi] with `panels` panels.
template <class F>
double integrate(F&& f, double lo, double hi, int panels = 400) {
  static const double x[5] = {-0.9061798459386640, -0.5384693101056831, 0.0, 0.5384693101056831,
                              0.9061798459386640};
  static const double w[5] = {0.2369268850561891, 0.4786286704993665, 0.5688888888888889, 0.4786286704993665,
                              0.2369268850561891};
  const double h = (hi - lo) / panels;
  double s = 0.0;
  for (int p = 0; p < panels; ++p) {
    const double mid = lo + (p + 0.5) * h;
    for (int j = 0; j < 5; ++j) s += w[j] * f(mid + 0.5 * h * x[j]);
  }
  return s * 0.5 * h;
}

constexpr double kLow = -9.0;

// P(Z1 < b1, Z2 < b2), |r| < 1.
inline double bvn(double b1, double b2, double r) {
  const double s = std::sqrt(1.0 - r * r);
  return integrate([&](double x) { return phi(x) * Phi((b2 - r * x) / s); }, kLow, std::fmin(b1, 9.0));
}

// P(Z1 < b1, Z2 < b2, Z3 < b3) for a nonsingular correlation matrix R.
inline double tvn(const double b[3], const double R[3][3]) {
  const double r12 = R[0][1], r13 = R[0][2], r23 = R[1][2];
  const double s2 = std::sqrt(1.0 - r12 * r12);
  // Z3 | Z1, Z2 regression coefficients.
  const double det = 1.0 - r12 * r12;
  const double c1 = (r13 - r12 * r23) / det;
  const double c2 = (r23 - r12 * r13) / det;
  const double v3 = 1.0 - (c1 * r13 + c2 * r23);
  const double s3 = std::sqrt(v3);
  return integrate(
      [&](double x1) {
        // Z2 = r12 x1 + s2 u.
        const double uhi = (std::fmin(b[1], 9.0) - r12 * x1) / s2;
        if (uhi <= kLow) return 0.0;
        const double inner = integrate(
            [&](double u) {
              const double x2 = r12 * x1 + s2 * u;
              return phi(u) * Phi((b[2] - c1 * x1 - c2 * x2) / s3);
            },
            kLow, std::fmin(uhi, 9.0), 200);
        return phi(x1) * inner;
      },
      kLow, std::fmin(b[0], 9.0), 200);
}

}  // namespace oracle
