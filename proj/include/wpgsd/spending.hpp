#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "wpgsd/normal.hpp"
#include "wpgsd/subsets.hpp"

namespace wpgsd {

enum class SpendingFamily { HSD, LanDeMetsOBF, LanDeMetsPocock, Power, FixedIncrements };

/// An alpha-spending function family f(t, level).
///
/// `parameter` is gamma for HSD and rho for Power. FixedIncrements carries
/// cumulative levels per analysis for the design level (last entry); other
/// levels scale them proportionally, so f(k, level) = level * L_k / L_K.
struct SpendingFunction {
  SpendingFamily family = SpendingFamily::HSD;
  double parameter = 0.0;
  std::vector<double> fixed_levels;

  static SpendingFunction hsd(double gamma) { return {SpendingFamily::HSD, gamma, {}}; }
  static SpendingFunction ldof() { return {SpendingFamily::LanDeMetsOBF, 0.0, {}}; }
  static SpendingFunction ldpocock() { return {SpendingFamily::LanDeMetsPocock, 0.0, {}}; }
  static SpendingFunction power(double rho) { return {SpendingFamily::Power, rho, {}}; }
  static SpendingFunction fixed(std::vector<double> levels) {
    return {SpendingFamily::FixedIncrements, 0.0, std::move(levels)};
  }
};

inline std::string family_name(SpendingFamily f) {
  switch (f) {
    case SpendingFamily::HSD: return "hsd";
    case SpendingFamily::LanDeMetsOBF: return "ldof";
    case SpendingFamily::LanDeMetsPocock: return "ldpocock";
    case SpendingFamily::Power: return "power";
    case SpendingFamily::FixedIncrements: return "fixed";
  }
  return "?";
}

inline SpendingFamily parse_family(const std::string& s) {
  if (s == "hsd") return SpendingFamily::HSD;
  if (s == "ldof") return SpendingFamily::LanDeMetsOBF;
  if (s == "ldpocock") return SpendingFamily::LanDeMetsPocock;
  if (s == "power") return SpendingFamily::Power;
  if (s == "fixed") return SpendingFamily::FixedIncrements;
  throw std::invalid_argument("unknown spending family '" + s + "'");
}

/// Cumulative alpha spent by information/spending time t for the analytic
/// families. FixedIncrements depends on the analysis index, use spend_at.
inline double spend(const SpendingFunction& f, double t, double alpha) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw std::domain_error("spending time " + std::to_string(t) + " outside [0, 1]");
  }
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw std::domain_error("spending level must lie in (0, 1)");
  }
  if (t == 1.0) return alpha;
  if (t == 0.0) return 0.0;
  switch (f.family) {
    case SpendingFamily::HSD: {
      const double g = f.parameter;
      if (std::fabs(g) < 1e-12) return alpha * t;
      return alpha * std::expm1(-g * t) / std::expm1(-g);
    }
    case SpendingFamily::LanDeMetsOBF: {
      const double z = z_from_p(alpha / 2.0);
      return 2.0 * norm_sf(z / std::sqrt(t));
    }
    case SpendingFamily::LanDeMetsPocock:
      return alpha * std::log1p((std::numbers::e - 1.0) * t);
    case SpendingFamily::Power:
      return alpha * std::pow(t, f.parameter);
    case SpendingFamily::FixedIncrements:
      throw std::invalid_argument("fixed spending levels are indexed by analysis; use spend_at");
  }
  return alpha;
}

/// Cumulative alpha spent at analysis k (0-based) with spending time t.
inline double spend_at(const SpendingFunction& f, std::size_t k, double t, double alpha) {
  if (f.family != SpendingFamily::FixedIncrements) return spend(f, t, alpha);
  const auto& lv = f.fixed_levels;
  if (k >= lv.size()) throw std::out_of_range("analysis index beyond fixed spending levels");
  if (k + 1 == lv.size()) return alpha;
  return alpha * lv[k] / lv.back();
}

enum class SpendingTimePolicy {
  MinInformationFraction,
  PerHypothesisInformationFraction,
  FixedSchedule,
  MinPlannedActual,
};

inline std::string policy_name(SpendingTimePolicy p) {
  switch (p) {
    case SpendingTimePolicy::MinInformationFraction: return "min-information";
    case SpendingTimePolicy::PerHypothesisInformationFraction: return "information";
    case SpendingTimePolicy::FixedSchedule: return "fixed-schedule";
    case SpendingTimePolicy::MinPlannedActual: return "min-planned-actual";
  }
  return "?";
}

inline SpendingTimePolicy parse_policy(const std::string& s) {
  if (s == "min-information") return SpendingTimePolicy::MinInformationFraction;
  if (s == "information") return SpendingTimePolicy::PerHypothesisInformationFraction;
  if (s == "fixed-schedule") return SpendingTimePolicy::FixedSchedule;
  if (s == "min-planned-actual") return SpendingTimePolicy::MinPlannedActual;
  throw std::invalid_argument("unknown spending time policy '" + s + "'");
}

/// Counts that drive spending times. Rows are hypotheses, columns analyses.
struct SpendingTimeInputs {
  std::vector<std::vector<double>> observed;
  std::vector<std::vector<double>> planned;
  std::vector<double> planned_final;
  std::vector<double> schedule;
};

namespace detail {

inline double information_fraction(const SpendingTimeInputs& in, std::size_t i, std::size_t k,
                                   const std::vector<std::vector<double>>& counts) {
  if (i >= in.planned_final.size() || !(in.planned_final[i] > 0.0)) {
    throw std::domain_error("planned final count for hypothesis " + std::to_string(i + 1) +
                            " must be positive");
  }
  return std::min(1.0, counts.at(i).at(k) / in.planned_final[i]);
}

}  // namespace detail

/// Spending time t_k(J) for analysis k (0-based) of K.
inline double spending_time(SpendingTimePolicy policy, Subset J, std::size_t k, std::size_t K,
                            const SpendingTimeInputs& in) {
  if (J.empty()) throw std::invalid_argument("spending time of an empty hypothesis set");
  if (k >= K) throw std::out_of_range("analysis index out of range");
  switch (policy) {
    case SpendingTimePolicy::FixedSchedule:
      if (in.schedule.size() != K) throw std::invalid_argument("fixed schedule needs K entries");
      return in.schedule[k];
    case SpendingTimePolicy::PerHypothesisInformationFraction:
      if (J.size() != 1) {
        throw std::invalid_argument("per-hypothesis information fraction needs a single hypothesis");
      }
      [[fallthrough]];
    case SpendingTimePolicy::MinInformationFraction: {
      double t = 1.0;
      for (auto i : J.members()) t = std::min(t, detail::information_fraction(in, i, k, in.observed));
      return t;
    }
    case SpendingTimePolicy::MinPlannedActual: {
      if (k + 1 == K) return 1.0;
      double t = 1.0;
      for (auto i : J.members()) {
        const double actual = detail::information_fraction(in, i, k, in.observed);
        const double planned = detail::information_fraction(in, i, k, in.planned);
        t = std::min({t, actual, planned});
      }
      return t;
    }
  }
  return 1.0;
}

}  // namespace wpgsd
