#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

#include "wpgsd/detail/gauss_legendre.hpp"
#include "wpgsd/normal.hpp"

namespace wpgsd {

/// P(X > h, Y > k) for a standard bivariate normal pair with correlation r.
///
/// Drezner-Wesolowsky / Genz BVNU: Gauss-Legendre quadrature of the
/// Plackett integral for |r| < 0.925 and the asymptotic expansion around
/// |r| = 1 otherwise. Accurate to about 1e-15.
inline double bvn_upper(double h, double k, double r) {
  if (h == kInf || k == kInf) return 0.0;
  if (h == -kInf) return k == -kInf ? 1.0 : norm_sf(k);
  if (k == -kInf) return norm_sf(h);
  r = std::clamp(r, -1.0, 1.0);

  static const auto rules = [] {
    return std::array<detail::QuadratureRule, 3>{detail::gauss_legendre(6), detail::gauss_legendre(12),
                                                 detail::gauss_legendre(20)};
  }();
  const auto& rule = std::fabs(r) < 0.3 ? rules[0] : std::fabs(r) < 0.75 ? rules[1] : rules[2];
  constexpr double two_pi = 2.0 * std::numbers::pi;

  double hk = h * k;
  double bvn = 0.0;
  if (std::fabs(r) < 0.925) {
    const double hs = (h * h + k * k) / 2.0;
    const double asr = std::asin(r);
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
      const double sn = std::sin(asr * (rule.nodes[i] + 1.0) / 2.0);
      bvn += rule.weights[i] * std::exp((sn * hk - hs) / (1.0 - sn * sn));
    }
    return bvn * asr / (2.0 * two_pi) + norm_sf(h) * norm_sf(k);
  }
  if (r < 0.0) {
    k = -k;
    hk = -hk;
  }
  if (std::fabs(r) < 1.0) {
    const double as = (1.0 - r) * (1.0 + r);
    double a = std::sqrt(as);
    const double bs = (h - k) * (h - k);
    const double c = (4.0 - hk) / 8.0;
    const double d = (12.0 - hk) / 16.0;
    bvn = a * std::exp(-(bs / as + hk) / 2.0) * (1.0 - c * (bs - as) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as * as / 5.0);
    if (hk > -160.0) {
      const double b = std::sqrt(bs);
      bvn -= std::exp(-hk / 2.0) * std::sqrt(two_pi) * norm_cdf(-b / a) * b * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
    }
    a /= 2.0;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
      const double xs = (a * (rule.nodes[i] + 1.0)) * (a * (rule.nodes[i] + 1.0));
      const double rs = std::sqrt(1.0 - xs);
      bvn += a * rule.weights[i] *
             (std::exp(-bs / (2.0 * xs) - hk / (1.0 + rs)) / rs - std::exp(-(bs / xs + hk) / 2.0) * (1.0 + c * xs * (1.0 + d * xs)));
    }
    bvn = -bvn / two_pi;
  }
  if (r > 0.0) return std::clamp(bvn + norm_sf(std::max(h, k)), 0.0, 1.0);
  bvn = -bvn;
  if (k > h) bvn += h < 0.0 ? norm_cdf(k) - norm_cdf(h) : norm_sf(h) - norm_sf(k);
  return std::clamp(bvn, 0.0, 1.0);
}

/// P(X < b1, Y < b2).
inline double bvn_cdf(double b1, double b2, double r) { return bvn_upper(-b1, -b2, r); }

inline constexpr std::uint64_t kDefaultMvnSeed = 0x5eed5eedULL;

/// Rectangle probability P(lower < Z < upper) for Z ~ N(0, R).
struct MvnProblem {
  std::vector<double> upper;
  Eigen::MatrixXd correlation;
  /// Empty means -infinity in every coordinate.
  std::vector<double> lower;
  double abs_tol = 1e-6;
  /// Lattice points per randomized shift before giving up.
  std::size_t max_evaluations = std::size_t{1} << 20;
  std::uint64_t seed = kDefaultMvnSeed;
};

struct MvnResult {
  double probability = 0.0;
  /// 1 - probability, computed without cancellation when it is small.
  double complement = 1.0;
  double error = 0.0;
  /// False when the evaluation budget ran out before abs_tol was met.
  bool converged = true;
  std::size_t evaluations = 0;
};

inline double min_eigenvalue(const Eigen::MatrixXd& m) {
  if (m.rows() == 0) return 1.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

namespace detail {

inline constexpr double kSingularPivot = 1e-10;
inline constexpr double kPerfectCorrelation = 1.0 - 1e-12;
inline constexpr std::size_t kShifts = 12;
inline constexpr double kErrorMultiplier = 3.0;

/// Separation-of-variables form: lower-triangular Cholesky factor of the
/// reordered correlation matrix together with the reordered limits.
struct SovPlan {
  std::size_t d = 0;
  std::vector<double> chol;
  std::vector<double> lower, upper;
};

inline double interval_prob(double a, double b) {
  const double pa = a == -kInf ? 0.0 : norm_cdf(a);
  const double pb = b == kInf ? 1.0 : norm_cdf(b);
  return std::max(0.0, pb - pa);
}

/// Pivoted Cholesky with Genz-Bretz variable prioritization: at each step the
/// remaining variable with the smallest conditional interval probability,
/// evaluated at the truncated means of the variables already placed, goes next.
inline SovPlan plan_sov(Eigen::MatrixXd cov, std::vector<double> a, std::vector<double> b) {
  const std::size_t d = a.size();
  SovPlan plan;
  plan.d = d;
  std::vector<double> C(d * d, 0.0), y(d, 0.0);
  auto c = [&](std::size_t r, std::size_t col) -> double& { return C[r * d + col]; };

  for (std::size_t i = 0; i < d; ++i) {
    std::size_t best = i;
    double best_prob = kInf;
    for (std::size_t j = i; j < d; ++j) {
      double s = 0.0, v = cov(j, j);
      for (std::size_t l = 0; l < i; ++l) {
        s += c(j, l) * y[l];
        v -= c(j, l) * c(j, l);
      }
      double prob;
      if (v > kSingularPivot) {
        const double sd = std::sqrt(v);
        prob = interval_prob((a[j] - s) / sd, (b[j] - s) / sd);
      } else {
        prob = (a[j] <= s && s <= b[j]) ? 1.0 : 0.0;
      }
      if (prob < best_prob) {
        best_prob = prob;
        best = j;
      }
    }
    if (best != i) {
      cov.row(i).swap(cov.row(best));
      cov.col(i).swap(cov.col(best));
      std::swap(a[i], a[best]);
      std::swap(b[i], b[best]);
      for (std::size_t l = 0; l < i; ++l) std::swap(c(i, l), c(best, l));
    }
    double v = cov(i, i);
    for (std::size_t l = 0; l < i; ++l) v -= c(i, l) * c(i, l);
    if (v < -kSingularPivot) throw std::domain_error("correlation matrix is not positive semidefinite");
    const double cii = v > kSingularPivot ? std::sqrt(v) : 0.0;
    c(i, i) = cii;
    for (std::size_t k = i + 1; k < d; ++k) {
      double s = cov(k, i);
      for (std::size_t l = 0; l < i; ++l) s -= c(k, l) * c(i, l);
      c(k, i) = cii > 0.0 ? s / cii : 0.0;
    }
    if (cii > 0.0) {
      double s = 0.0;
      for (std::size_t l = 0; l < i; ++l) s += c(i, l) * y[l];
      const double ta = (a[i] - s) / cii, tb = (b[i] - s) / cii;
      const double p = interval_prob(ta, tb);
      const double fa = ta == -kInf ? 0.0 : norm_pdf(ta);
      const double fb = tb == kInf ? 0.0 : norm_pdf(tb);
      if (p > 1e-300) {
        y[i] = (fa - fb) / p;
      } else {
        y[i] = ta == -kInf ? tb : (tb == kInf ? ta : 0.5 * (ta + tb));
      }
    }
  }
  plan.chol = std::move(C);
  plan.lower = std::move(a);
  plan.upper = std::move(b);
  return plan;
}

/// Integrand of the transformed problem at u in [0,1]^(d-1).
inline double sov_integrand(const SovPlan& p, const double* u, double* y) {
  const std::size_t d = p.d;
  const double* C = p.chol.data();
  constexpr double lo = std::numeric_limits<double>::min();
  constexpr double hi = 1.0 - 1e-16;
  double f = 1.0;
  for (std::size_t i = 0; i < d; ++i) {
    double s = 0.0;
    for (std::size_t l = 0; l < i; ++l) s += C[i * d + l] * y[l];
    const double cii = C[i * d + i];
    double di, ei;
    if (cii > 0.0) {
      di = p.lower[i] == -kInf ? 0.0 : norm_cdf((p.lower[i] - s) / cii);
      ei = p.upper[i] == kInf ? 1.0 : norm_cdf((p.upper[i] - s) / cii);
      f *= std::max(0.0, ei - di);
    } else {
      if (!(p.lower[i] <= s && s <= p.upper[i])) return 0.0;
      di = 0.0;
      ei = 1.0;
    }
    if (f == 0.0) return 0.0;
    if (i + 1 < d) y[i] = cii > 0.0 ? norm_quantile(std::clamp(di + u[i] * (ei - di), lo, hi)) : 0.0;
  }
  return f;
}

inline const std::vector<double>& lattice_generators() {
  static const std::vector<double> gens = [] {
    std::vector<double> g;
    for (int n = 2; g.size() < 64; ++n) {
      bool prime = true;
      for (int q = 2; q * q <= n; ++q) {
        if (n % q == 0) {
          prime = false;
          break;
        }
      }
      if (prime) {
        const double s = std::sqrt(static_cast<double>(n));
        g.push_back(s - std::floor(s));
      }
    }
    return g;
  }();
  return gens;
}

/// Randomized Richtmyer lattice rule with baker's transform and antithetic
/// pairs; `kShifts` independent shifts give the error estimate.
inline MvnResult integrate_sov(const SovPlan& plan, double abs_tol, std::size_t max_points, std::uint64_t seed) {
  const std::size_t dim = plan.d - 1;
  const auto& gen = lattice_generators();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> shifts(kShifts * dim);
  for (auto& s : shifts) s = unif(rng);

  std::array<double, kShifts> sums{};
  std::vector<double> x(dim), xa(dim), y(plan.d);
  MvnResult res;
  std::size_t n = 0, next = 256;
  for (;;) {
    for (std::size_t r = 0; r < kShifts; ++r) {
      const double* shift = shifts.data() + r * dim;
      double acc = 0.0;
      for (std::size_t j = n + 1; j <= next; ++j) {
        for (std::size_t l = 0; l < dim; ++l) {
          double v = static_cast<double>(j) * gen[l] + shift[l];
          v -= std::floor(v);
          x[l] = std::fabs(2.0 * v - 1.0);
          xa[l] = 1.0 - x[l];
        }
        acc += 0.5 * (sov_integrand(plan, x.data(), y.data()) + sov_integrand(plan, xa.data(), y.data()));
      }
      sums[r] += acc;
    }
    res.evaluations += 2 * kShifts * (next - n);
    n = next;
    double mean = 0.0;
    for (double s : sums) mean += s / static_cast<double>(n);
    mean /= kShifts;
    double var = 0.0;
    for (double s : sums) {
      const double dv = s / static_cast<double>(n) - mean;
      var += dv * dv;
    }
    var /= static_cast<double>(kShifts * (kShifts - 1));
    res.probability = std::clamp(mean, 0.0, 1.0);
    res.error = kErrorMultiplier * std::sqrt(var);
    if (res.error <= abs_tol) break;
    if (2 * n > max_points) {
      res.converged = false;
      break;
    }
    next = 2 * n;
  }
  return res;
}

/// Below this union bound on P(some Z_i >= b_i) upper-orthant problems are
/// integrated through their complement.
inline constexpr double kComplementThreshold = 0.5;

/// 1 - P(Z < b) as a sum over the first coordinate to exceed its limit:
/// sum_t P(Z_t >= b_t, Z_s < b_s for s before t). Each term's integrand is
/// bounded by the tail P(Z_t >= b_t), so the lattice error scales with the
/// (small) complement instead of with P itself. Coordinates are taken in
/// decreasing tail probability so the high-dimensional terms are the small
/// ones.
inline MvnResult first_exceedance(const Eigen::MatrixXd& R, const std::vector<double>& b, double abs_tol,
                                  std::size_t max_points, std::uint64_t seed) {
  const std::size_t d = b.size();
  std::vector<std::size_t> order(d);
  for (std::size_t i = 0; i < d; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return b[x] < b[y]; });

  MvnResult res;
  res.complement = norm_sf(b[order[0]]);
  res.evaluations = 1;
  {
    const std::size_t i = order[1], j = order[0];
    res.complement += norm_sf(b[i]) - bvn_upper(b[i], b[j], R(i, j));
    res.evaluations += 1;
  }
  const double term_tol = abs_tol / std::sqrt(static_cast<double>(d - 2));
  double var = 0.0;
  for (std::size_t t = 2; t < d; ++t) {
    const std::size_t n = t + 1;
    Eigen::MatrixXd S(n, n);
    std::vector<double> lo(n, -kInf), hi(n);
    for (std::size_t p = 0; p < n; ++p) {
      hi[p] = b[order[p]];
      for (std::size_t q = 0; q < n; ++q) S(p, q) = R(order[p], order[q]);
    }
    lo[t] = b[order[t]];
    hi[t] = kInf;
    const auto term = integrate_sov(plan_sov(S, lo, hi), term_tol, max_points, seed + t);
    res.complement += term.probability;
    res.evaluations += term.evaluations;
    res.converged = res.converged && term.converged;
    var += (term.error / kErrorMultiplier) * (term.error / kErrorMultiplier);
  }
  res.complement = std::clamp(res.complement, 0.0, 1.0);
  res.probability = 1.0 - res.complement;
  res.error = kErrorMultiplier * std::sqrt(var);
  return res;
}

}  // namespace detail

/// Multivariate normal rectangle probability with an absolute error
/// estimate. d <= 2 is computed deterministically; larger problems use
/// randomized lattice quasi-Monte Carlo with a fixed seed, so repeated calls
/// with the same problem return identical results.
inline MvnResult mvn_cdf(const MvnProblem& prob) {
  const std::size_t d0 = prob.upper.size();
  const auto& R = prob.correlation;
  if (d0 == 0) return {1.0, 0.0, 0.0, true, 0};
  if (static_cast<std::size_t>(R.rows()) != d0 || static_cast<std::size_t>(R.cols()) != d0) {
    throw std::invalid_argument("correlation matrix does not match the number of limits");
  }
  if (!prob.lower.empty() && prob.lower.size() != d0) throw std::invalid_argument("lower limits have wrong length");
  for (std::size_t i = 0; i < d0; ++i) {
    for (std::size_t j = 0; j < d0; ++j) {
      const double v = R(i, j);
      if (!std::isfinite(v)) throw std::domain_error("correlation matrix contains NaN or infinity");
      if (std::fabs(v) > 1.0 + 1e-12) throw std::domain_error("correlation outside [-1, 1]");
      if (std::fabs(v - R(j, i)) > 1e-12) throw std::domain_error("correlation matrix is not symmetric");
    }
    if (std::fabs(R(i, i) - 1.0) > 1e-12) throw std::domain_error("correlation matrix needs a unit diagonal");
  }

  std::vector<double> a(d0, -kInf), b = prob.upper;
  if (!prob.lower.empty()) a = prob.lower;
  for (std::size_t i = 0; i < d0; ++i) {
    if (std::isnan(a[i]) || std::isnan(b[i])) throw std::domain_error("NaN integration limit");
    if (!(a[i] < b[i])) return {0.0, 1.0, 0.0, true, 0};
  }

  // Drop unconstrained coordinates and merge perfectly (anti)correlated ones.
  std::vector<std::size_t> keep;
  std::vector<bool> gone(d0, false);
  for (std::size_t i = 0; i < d0; ++i) {
    if (gone[i]) continue;
    if (a[i] == -kInf && b[i] == kInf) continue;
    for (std::size_t j = i + 1; j < d0; ++j) {
      if (gone[j] || (a[j] == -kInf && b[j] == kInf)) continue;
      if (R(i, j) >= detail::kPerfectCorrelation) {
        a[i] = std::max(a[i], a[j]);
        b[i] = std::min(b[i], b[j]);
        gone[j] = true;
      } else if (R(i, j) <= -detail::kPerfectCorrelation) {
        a[i] = std::max(a[i], -b[j]);
        b[i] = std::min(b[i], -a[j]);
        gone[j] = true;
      }
    }
    if (!(a[i] < b[i])) return {0.0, 1.0, 0.0, true, 0};
    keep.push_back(i);
  }
  const std::size_t d = keep.size();
  if (d == 0) return {1.0, 0.0, 0.0, true, 0};
  if (d == 1) {
    const double lo = a[keep[0]], hi = b[keep[0]];
    const double p = detail::interval_prob(lo, hi);
    const double q = (lo == -kInf ? 0.0 : norm_cdf(lo)) + (hi == kInf ? 0.0 : norm_sf(hi));
    return {p, q, 0.0, true, 1};
  }
  if (d == 2) {
    const std::size_t i = keep[0], j = keep[1];
    const double r = R(i, j);
    if (a[i] == -kInf && a[j] == -kInf) {
      // P(Z_i >= b_i or Z_j >= b_j) from the two tails and their overlap.
      const double q = norm_sf(b[i]) + norm_sf(b[j]) - bvn_upper(b[i], b[j], r);
      const double p = bvn_cdf(b[i], b[j], r);
      return {std::clamp(p, 0.0, 1.0), std::clamp(q, 0.0, 1.0), 1e-14, true, 4};
    }
    const double p = std::clamp(bvn_upper(a[i], a[j], r) - bvn_upper(b[i], a[j], r) - bvn_upper(a[i], b[j], r) +
                                    bvn_upper(b[i], b[j], r),
                                0.0, 1.0);
    return {p, 1.0 - p, 1e-14, true, 4};
  }

  Eigen::MatrixXd sub(d, d);
  std::vector<double> sa(d), sb(d);
  for (std::size_t p = 0; p < d; ++p) {
    sa[p] = a[keep[p]];
    sb[p] = b[keep[p]];
    for (std::size_t q = 0; q < d; ++q) sub(p, q) = R(keep[p], keep[q]);
  }
  if (Eigen::LLT<Eigen::MatrixXd>(sub).info() != Eigen::Success) {
    if (min_eigenvalue(sub) < -1e-10) throw std::domain_error("correlation matrix is not positive semidefinite");
    // Singular or rounding-level negative: clamp the spectrum.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sub);
    const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
    Eigen::MatrixXd fixed = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    const Eigen::VectorXd s = fixed.diagonal().cwiseSqrt().cwiseInverse();
    sub = s.asDiagonal() * fixed * s.asDiagonal();
  }

  const bool upper_only = std::all_of(sa.begin(), sa.end(), [](double x) { return x == -kInf; });
  double union_bound = 0.0;
  for (double x : sb) union_bound += norm_sf(x);
  if (upper_only && union_bound <= detail::kComplementThreshold) {
    return detail::first_exceedance(sub, sb, prob.abs_tol, prob.max_evaluations, prob.seed);
  }
  auto res = detail::integrate_sov(detail::plan_sov(sub, sa, sb), prob.abs_tol, prob.max_evaluations, prob.seed);
  res.complement = 1.0 - res.probability;
  return res;
}

/// Convenience overload for upper limits only.
inline MvnResult mvn_cdf(const std::vector<double>& upper, const Eigen::MatrixXd& corr, double abs_tol = 1e-6) {
  MvnProblem p;
  p.upper = upper;
  p.correlation = corr;
  p.abs_tol = abs_tol;
  return mvn_cdf(p);
}

}  // namespace wpgsd
