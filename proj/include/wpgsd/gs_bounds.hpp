#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "wpgsd/detail/root.hpp"
#include "wpgsd/mvn.hpp"
#include "wpgsd/normal.hpp"
#include "wpgsd/spending.hpp"

namespace wpgsd {

/// Spend increments below this are treated as "no test at this analysis".
inline constexpr double kMinIncrement = 1e-12;

struct SingleBoundResult {
  /// Nominal one-sided p-value bound per analysis; 0 when untestable.
  std::vector<double> p;
  /// Z bound Phi^{-1}(1 - p); +infinity when untestable.
  std::vector<double> z;
  /// Cumulative alpha spent through each analysis.
  std::vector<double> cumulative;
  std::vector<bool> testable;
};

/// MVN tolerance used by boundary solvers for a problem of dimension d.
inline double boundary_mvn_tol(std::size_t d) { return d <= 6 ? 1e-7 : 1e-6; }

namespace detail {

inline void check_information(const std::vector<double>& t) {
  if (t.empty()) throw std::invalid_argument("need at least one analysis");
  for (std::size_t k = 0; k < t.size(); ++k) {
    if (!(t[k] > 0.0 && t[k] <= 1.0)) throw std::domain_error("information fractions must lie in (0, 1]");
    if (k > 0 && !(t[k] > t[k - 1])) throw std::domain_error("information fractions must be strictly increasing");
  }
}

}  // namespace detail

/// Bounds for one hypothesis whose statistics across analyses have
/// correlation `R` (K x K), given the cumulative alpha to spend by each
/// analysis.
inline SingleBoundResult gs_single_bounds_corr(const Eigen::MatrixXd& R, const std::vector<double>& cumulative) {
  const std::size_t K = cumulative.size();
  if (K == 0) throw std::invalid_argument("need at least one analysis");
  if (static_cast<std::size_t>(R.rows()) != K || static_cast<std::size_t>(R.cols()) != K) {
    throw std::invalid_argument("temporal correlation must be K x K");
  }
  SingleBoundResult out;
  out.p.assign(K, 0.0);
  out.z.assign(K, kInf);
  out.cumulative = cumulative;
  out.testable.assign(K, false);

  double prev = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    const double target = cumulative[k];
    if (!(target >= prev - 1e-15) || !(target < 1.0)) throw std::domain_error("cumulative spend must be nondecreasing in [0, 1)");
    const double inc = target - prev;
    if (inc < kMinIncrement) continue;
    if (k == 0) {
      out.z[0] = z_from_p(target);
    } else {
      // Earlier bounds stay fixed; only finite ones constrain.
      std::vector<std::size_t> idx;
      std::vector<double> lim;
      for (std::size_t j = 0; j < k; ++j) {
        if (out.testable[j]) {
          idx.push_back(j);
          lim.push_back(out.z[j]);
        }
      }
      idx.push_back(k);
      lim.push_back(0.0);
      Eigen::MatrixXd S(idx.size(), idx.size());
      for (std::size_t a = 0; a < idx.size(); ++a)
        for (std::size_t b = 0; b < idx.size(); ++b) S(a, b) = R(idx[a], idx[b]);
      MvnProblem prob;
      prob.correlation = S;
      prob.abs_tol = boundary_mvn_tol(idx.size());
      double prior = 0.0;
      if (idx.size() > 1) {
        MvnProblem pp = prob;
        pp.correlation = S.topLeftCorner(idx.size() - 1, idx.size() - 1);
        pp.upper.assign(lim.begin(), lim.end() - 1);
        prior = mvn_cdf(pp).complement;
      }
      // P(no earlier crossing, Z_k >= c) - inc, decreasing in c.
      auto g = [&](double c) {
        prob.upper = lim;
        prob.upper.back() = c;
        return mvn_cdf(prob).complement - prior - inc;
      };
      const double c_hi = z_from_p(inc);
      double c_lo = c_hi - 0.5;
      double g_hi = g(c_hi);
      if (g_hi >= 0.0) {
        out.z[k] = c_hi;
      } else {
        while (g(c_lo) < 0.0) {
          c_lo -= 1.0;
          if (c_lo < -40.0) throw std::domain_error("single-hypothesis bound not bracketed");
        }
        out.z[k] = detail::brent(g, c_lo, c_hi, 1e-13, 1e-10).x;
      }
    }
    out.testable[k] = true;
    out.p[k] = p_from_z(out.z[k]);
    prev = target;
  }
  return out;
}

/// Bounds for one hypothesis given its information fractions and the
/// cumulative alpha to spend by each analysis.
inline SingleBoundResult gs_single_bounds(const std::vector<double>& info, const std::vector<double>& cumulative) {
  detail::check_information(info);
  const std::size_t K = info.size();
  if (cumulative.size() != K) throw std::invalid_argument("need one cumulative spend per analysis");
  Eigen::MatrixXd R(K, K);
  for (std::size_t j = 0; j < K; ++j)
    for (std::size_t k = 0; k < K; ++k) R(j, k) = std::sqrt(std::min(info[j], info[k]) / std::max(info[j], info[k]));
  return gs_single_bounds_corr(R, cumulative);
}

/// Bounds when `level` is spent with f at spending times s.
inline SingleBoundResult gs_single_bounds(const std::vector<double>& info, const std::vector<double>& spending_times,
                                          const SpendingFunction& f, double level) {
  if (spending_times.size() != info.size()) throw std::invalid_argument("need one spending time per analysis");
  std::vector<double> cum(info.size());
  for (std::size_t k = 0; k < info.size(); ++k) cum[k] = spend_at(f, k, spending_times[k], level);
  return gs_single_bounds(info, cum);
}

struct WellOrderedResult {
  bool ok = true;
  /// First violation: analysis (0-based) and the pair of levels.
  std::size_t analysis = 0;
  double gamma_low = 0.0, gamma_high = 0.0;
};

/// Checks c_k(gamma1) >= c_k(gamma2) for every analysis and consecutive
/// grid levels gamma1 < gamma2. `schedule(gamma)` gives the cumulative spend
/// at each analysis when the hypothesis is allocated level gamma.
inline WellOrderedResult check_well_ordered(const std::function<std::vector<double>(double)>& schedule,
                                            const std::vector<double>& info, const std::vector<double>& gamma_grid) {
  for (std::size_t g = 0; g < gamma_grid.size(); ++g) {
    if (!(gamma_grid[g] > 0.0 && gamma_grid[g] < 1.0) || (g > 0 && !(gamma_grid[g] > gamma_grid[g - 1]))) {
      throw std::invalid_argument("gamma grid must be strictly increasing in (0, 1)");
    }
  }
  WellOrderedResult res;
  std::optional<SingleBoundResult> prev;
  for (std::size_t g = 0; g < gamma_grid.size(); ++g) {
    auto cur = gs_single_bounds(info, schedule(gamma_grid[g]));
    if (prev) {
      for (std::size_t k = 0; k < info.size(); ++k) {
        if (cur.z[k] > prev->z[k] + 1e-9) {
          res.ok = false;
          res.analysis = k;
          res.gamma_low = gamma_grid[g - 1];
          res.gamma_high = gamma_grid[g];
          return res;
        }
      }
    }
    prev = std::move(cur);
  }
  return res;
}

inline WellOrderedResult check_well_ordered(const SpendingFunction& f, const std::vector<double>& info,
                                            const std::vector<double>& gamma_grid) {
  return check_well_ordered(
      [&](double gamma) {
        std::vector<double> cum(info.size());
        for (std::size_t k = 0; k < info.size(); ++k) cum[k] = spend_at(f, k, info[k], gamma);
        return cum;
      },
      info, gamma_grid);
}

}  // namespace wpgsd
