#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "wpgsd/design.hpp"
#include "wpgsd/mvn.hpp"

namespace wpgsd {

/// Correlation of all m*K test statistics. Statistic (i, k), both 0-based,
/// sits at row k*m + i.
using CorrelationMatrix = Eigen::MatrixXd;

inline std::size_t stat_index(std::size_t i, std::size_t k, std::size_t m) { return k * m + i; }

/// "H<i>:A<k>" label with 1-based indices.
inline std::string stat_label(std::size_t i, std::size_t k) {
  return "H" + std::to_string(i + 1) + ":A" + std::to_string(k + 1);
}

/// rho[(i,k),(i',k')] = n_{i^i', k^k'} / sqrt(n_ik n_i'k').
inline CorrelationMatrix corr_from_overlap(const EventCountMatrix& ev) {
  const std::size_t m = ev.hypotheses(), K = ev.analyses();
  CorrelationMatrix R(m * K, m * K);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t i = 0; i < m; ++i) {
      const double nik = ev.count(i, k);
      if (!(nik > 0.0)) throw std::domain_error("zero event count for " + stat_label(i, k));
      for (std::size_t k2 = 0; k2 < K; ++k2) {
        for (std::size_t i2 = 0; i2 < m; ++i2) {
          const auto r = stat_index(i, k, m), c = stat_index(i2, k2, m);
          R(r, c) = (r == c) ? 1.0 : ev.overlap(i, i2, k, k2) / std::sqrt(nik * ev.count(i2, k2));
        }
      }
    }
  }
  return R;
}

/// Event counts per arm (arm 0 is the shared control), population and
/// analysis, together with the events each arm has in the intersection of
/// two populations.
struct ArmPopulationCounts {
  /// counts[arm][population][k]
  std::vector<std::vector<std::vector<double>>> counts;
  /// overlap[arm][j][j2][k]; empty means disjoint populations.
  std::vector<std::vector<std::vector<std::vector<double>>>> overlap;

  std::size_t arms() const { return counts.size(); }
  std::size_t populations() const { return counts.empty() ? 0 : counts[0].size(); }
  std::size_t analyses() const { return populations() == 0 ? 0 : counts[0][0].size(); }

  double shared(std::size_t arm, std::size_t j, std::size_t j2, std::size_t k) const {
    if (j == j2) return counts.at(arm).at(j).at(k);
    if (overlap.empty()) return 0.0;
    if (overlap.size() != counts.size()) throw std::invalid_argument("population overlap needs every arm");
    const auto& cell = overlap[arm].at(j).at(j2);
    if (cell.size() != analyses()) {
      throw std::invalid_argument("missing population overlap for arm " + std::to_string(arm) + ", populations " +
                                  std::to_string(j + 1) + "," + std::to_string(j2 + 1));
    }
    return cell[k];
  }

  /// Fills the overlap table for nested populations, where the intersection
  /// of two populations is the smaller one.
  void set_nested() {
    const std::size_t A = arms(), P = populations(), K = analyses();
    overlap.assign(A, std::vector<std::vector<std::vector<double>>>(P, std::vector<std::vector<double>>(P)));
    for (std::size_t a = 0; a < A; ++a) {
      for (std::size_t j = 0; j < P; ++j) {
        for (std::size_t j2 = 0; j2 < P; ++j2) {
          auto& cell = overlap[a][j][j2];
          cell.resize(K);
          for (std::size_t k = 0; k < K; ++k) cell[k] = std::min(counts[a][j][k], counts[a][j2][k]);
        }
      }
    }
  }
};

/// Hypothesis "arm vs control in population".
struct ArmPopulation {
  std::size_t arm = 1;
  std::size_t population = 0;
};

/// Event counts for treatment-vs-control hypotheses. Hypothesis (a, j)
/// counts control plus arm-a events in population j; two hypotheses share
/// the control events in the intersection of their populations, plus the
/// arm's own events there when they test the same arm.
inline EventCountMatrix events_from_arms(const ArmPopulationCounts& ac, const std::vector<ArmPopulation>& hyps) {
  const std::size_t m = hyps.size(), K = ac.analyses();
  if (ac.arms() < 2) throw std::invalid_argument("need a control and at least one experimental arm");
  for (const auto& h : hyps) {
    if (h.arm == 0 || h.arm >= ac.arms()) throw std::invalid_argument("hypothesis refers to an unknown arm");
    if (h.population >= ac.populations()) throw std::invalid_argument("hypothesis refers to an unknown population");
  }
  std::vector<std::vector<double>> marginal(m, std::vector<double>(K));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < K; ++k) {
      marginal[i][k] = ac.counts[0][hyps[i].population][k] + ac.counts[hyps[i].arm][hyps[i].population][k];
      if (!(marginal[i][k] > 0.0)) throw std::domain_error("hypothesis " + std::to_string(i + 1) + " has no events");
    }
  }
  EventCountMatrix ev(marginal);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t i2 = i + 1; i2 < m; ++i2) {
      std::vector<double> s(K);
      const auto j = hyps[i].population, j2 = hyps[i2].population;
      for (std::size_t k = 0; k < K; ++k) {
        s[k] = ac.shared(0, j, j2, k);
        if (hyps[i].arm == hyps[i2].arm) s[k] += ac.shared(hyps[i].arm, j, j2, k);
      }
      ev.set_shared(i, i2, std::move(s));
    }
  }
  return ev;
}

/// Several experimental arms against one shared control in a single
/// population; hypothesis i is arm i+1 vs control.
inline CorrelationMatrix corr_shared_control(const ArmPopulationCounts& ac) {
  if (ac.populations() != 1) throw std::invalid_argument("shared-control correlation expects one population");
  if (ac.arms() < 3) throw std::invalid_argument("shared-control correlation needs at least two experimental arms");
  std::vector<ArmPopulation> hyps;
  for (std::size_t a = 1; a < ac.arms(); ++a) hyps.push_back({a, 0});
  return corr_from_overlap(events_from_arms(ac, hyps));
}

inline CorrelationMatrix corr_multiarm_multipop(const ArmPopulationCounts& ac, const std::vector<ArmPopulation>& hyps) {
  return corr_from_overlap(events_from_arms(ac, hyps));
}

/// Expected event counts for the three overlapping-population hypotheses
/// (population 1, population 2, overall) when events fall in the four
/// biomarker cells {1+2-, 1-2+, 1+2+, 1-2-} in proportion to `cell_fraction`.
inline EventCountMatrix overlapping_population_events(const std::array<double, 4>& cell_fraction,
                                                      const std::vector<double>& overall_events) {
  double total = 0.0;
  for (double p : cell_fraction) {
    if (!(p >= 0.0)) throw std::invalid_argument("cell fractions must be nonnegative");
    total += p;
  }
  if (std::fabs(total - 1.0) > 1e-9) throw std::invalid_argument("cell fractions must sum to 1");
  const double p1 = cell_fraction[0] + cell_fraction[2];
  const double p2 = cell_fraction[1] + cell_fraction[2];
  const double p12 = cell_fraction[2];
  const std::size_t K = overall_events.size();
  std::vector<std::vector<double>> marginal(3, std::vector<double>(K));
  std::vector<double> s12(K), s13(K), s23(K);
  for (std::size_t k = 0; k < K; ++k) {
    const double n = overall_events[k];
    marginal[0][k] = p1 * n;
    marginal[1][k] = p2 * n;
    marginal[2][k] = n;
    s12[k] = p12 * n;
    s13[k] = p1 * n;
    s23[k] = p2 * n;
  }
  EventCountMatrix ev(marginal);
  ev.set_shared(0, 1, s12);
  ev.set_shared(0, 2, s13);
  ev.set_shared(1, 2, s23);
  return ev;
}

/// Returns R unchanged when it is positive semidefinite, a spectrum-clamped
/// and rescaled copy when the smallest eigenvalue is a rounding-level
/// negative (> -1e-8), and throws otherwise.
inline CorrelationMatrix ensure_psd(const CorrelationMatrix& R) {
  const double lo = min_eigenvalue(R);
  if (lo >= -1e-10) return R;
  if (lo < -1e-8) throw std::domain_error("correlation matrix is not positive semidefinite");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(R);
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
  Eigen::MatrixXd fixed = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  const Eigen::VectorXd s = fixed.diagonal().cwiseSqrt().cwiseInverse();
  fixed = s.asDiagonal() * fixed * s.asDiagonal();
  fixed.diagonal().setOnes();
  return fixed;
}

/// Correlation of the statistics listed in `idx` (rows of R).
inline Eigen::MatrixXd submatrix(const CorrelationMatrix& R, const std::vector<std::size_t>& idx) {
  Eigen::MatrixXd S(idx.size(), idx.size());
  for (std::size_t p = 0; p < idx.size(); ++p)
    for (std::size_t q = 0; q < idx.size(); ++q) S(p, q) = R(idx[p], idx[q]);
  return S;
}

}  // namespace wpgsd
