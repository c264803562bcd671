#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

namespace wpgsd::detail {

struct RootResult {
  double x = 0.0;
  double fx = 0.0;
  int iterations = 0;
};

/// Brent's method on [a, b] with f(a) = fa and f(b) = fb of opposite sign.
/// Stops when |f| <= ftol or the bracket is narrower than xtol.
template <class F>
RootResult brent(F&& f, double a, double b, double fa, double fb, double ftol, double xtol = 1e-14,
                 int max_iter = 200) {
  if (fa == 0.0) return {a, fa, 0};
  if (fb == 0.0) return {b, fb, 0};
  if ((fa > 0.0) == (fb > 0.0)) throw std::domain_error("root is not bracketed");
  double c = a, fc = fa, d = b - a, e = d;
  int it = 0;
  for (; it < max_iter; ++it) {
    if ((fb > 0.0) == (fc > 0.0)) {
      c = a;
      fc = fa;
      d = e = b - a;
    }
    if (std::fabs(fc) < std::fabs(fb)) {
      a = b;
      b = c;
      c = a;
      fa = fb;
      fb = fc;
      fc = fa;
    }
    const double tol = 2.0 * 1e-16 * std::fabs(b) + 0.5 * xtol;
    const double m = 0.5 * (c - b);
    if (std::fabs(fb) <= ftol || std::fabs(m) <= tol) break;
    if (std::fabs(e) >= tol && std::fabs(fa) > std::fabs(fb)) {
      double p, q, r;
      const double s = fb / fa;
      if (a == c) {
        p = 2.0 * m * s;
        q = 1.0 - s;
      } else {
        q = fa / fc;
        r = fb / fc;
        p = s * (2.0 * m * q * (q - r) - (b - a) * (r - 1.0));
        q = (q - 1.0) * (r - 1.0) * (s - 1.0);
      }
      if (p > 0.0) q = -q;
      p = std::fabs(p);
      if (2.0 * p < std::min(3.0 * m * q - std::fabs(tol * q), std::fabs(e * q))) {
        e = d;
        d = p / q;
      } else {
        d = m;
        e = m;
      }
    } else {
      d = m;
      e = m;
    }
    a = b;
    fa = fb;
    b += std::fabs(d) > tol ? d : (m > 0.0 ? tol : -tol);
    fb = f(b);
  }
  return {b, fb, it};
}

template <class F>
RootResult brent(F&& f, double a, double b, double ftol, double xtol = 1e-14, int max_iter = 200) {
  const double fa = f(a), fb = f(b);
  return brent(f, a, b, fa, fb, ftol, xtol, max_iter);
}

/// Root of an increasing function g on [floor, cap], starting from `guess`.
/// The bracket is grown geometrically by `grow` above the guess. Returns
/// `floor` when g(floor) >= 0, which happens only through integration noise
/// when the root sits at the floor.
template <class G>
double solve_increasing(G&& g, double floor, double guess, double cap, double grow, double ftol, double xtol) {
  guess = std::clamp(guess, floor, cap);
  const double g0 = g(guess);
  if (g0 == 0.0) return guess;
  double lo, hi, glo, ghi;
  if (g0 > 0.0) {
    if (guess <= floor) return floor;
    hi = guess;
    ghi = g0;
    lo = floor;
    glo = g(lo);
    if (glo >= 0.0) return floor;
  } else {
    lo = guess;
    glo = g0;
    hi = guess;
    ghi = g0;
    while (ghi < 0.0) {
      if (hi >= cap) throw std::domain_error("root is not bracketed below the search cap");
      lo = hi;
      glo = ghi;
      hi = std::min(cap, hi * grow);
      ghi = g(hi);
    }
  }
  return brent(g, lo, hi, glo, ghi, ftol, xtol).x;
}

}  // namespace wpgsd::detail
