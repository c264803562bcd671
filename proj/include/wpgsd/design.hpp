#pragma once

#include <cmath>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "wpgsd/detail/rational.hpp"
#include "wpgsd/spending.hpp"
#include "wpgsd/subsets.hpp"

namespace wpgsd {

inline constexpr std::size_t kMaxAnalyses = 10;

enum class WeightScheme { GraphTransition, BonferroniHolm };

/// Initial weights w_i(I) and transition matrix G of a graphical weighting
/// strategy. Under BonferroniHolm the matrix is not consulted.
struct WeightingStrategy {
  std::vector<Rational> initial_weights;
  std::vector<std::vector<Rational>> transition;
  WeightScheme scheme = WeightScheme::GraphTransition;

  std::size_t size() const { return initial_weights.size(); }
};

/// Cumulative event counts per hypothesis and analysis, plus the counts
/// shared by pairs of test statistics.
///
/// Statistics accumulate data, so the events common to Z_{ik} and Z_{i'k'}
/// are the events shared by hypotheses i and i' up to analysis min(k, k');
/// `shared[i][i'][k]` stores exactly that. Counts are real-valued so that
/// expected counts can drive design-stage correlations.
class EventCountMatrix {
 public:
  EventCountMatrix() = default;
  EventCountMatrix(std::vector<std::vector<double>> marginal,
                   std::vector<std::vector<std::vector<double>>> shared)
      : marginal_(std::move(marginal)), shared_(std::move(shared)) {}

  /// Marginal counts only; every pair starts with zero shared events.
  explicit EventCountMatrix(std::vector<std::vector<double>> marginal) : marginal_(std::move(marginal)) {
    const auto m = marginal_.size();
    const auto K = m ? marginal_[0].size() : 0;
    shared_.assign(m, std::vector<std::vector<double>>(m, std::vector<double>(K, 0.0)));
    for (std::size_t i = 0; i < m; ++i) shared_[i][i] = marginal_[i];
  }

  std::size_t hypotheses() const { return marginal_.size(); }
  std::size_t analyses() const { return marginal_.empty() ? 0 : marginal_[0].size(); }

  double count(std::size_t i, std::size_t k) const { return marginal_.at(i).at(k); }

  /// n_{i^i', k^k'}.
  double overlap(std::size_t i, std::size_t i2, std::size_t k, std::size_t k2) const {
    const auto kk = std::min(k, k2);
    if (i == i2) return marginal_.at(i).at(kk);
    return shared_.at(i).at(i2).at(kk);
  }

  void set_shared(std::size_t i, std::size_t i2, std::vector<double> counts) {
    shared_.at(i).at(i2) = counts;
    shared_.at(i2).at(i) = std::move(counts);
  }

  const std::vector<std::vector<double>>& marginal() const { return marginal_; }
  const std::vector<std::vector<std::vector<double>>>& shared() const { return shared_; }

 private:
  std::vector<std::vector<double>> marginal_;
  std::vector<std::vector<std::vector<double>>> shared_;
};

enum class SpendingMethod { FHO, CommonSpend, PerHypothesisSpend };

inline std::string method_name(SpendingMethod m) {
  switch (m) {
    case SpendingMethod::FHO: return "fho";
    case SpendingMethod::CommonSpend: return "common";
    case SpendingMethod::PerHypothesisSpend: return "per-hypothesis";
  }
  return "?";
}

inline SpendingMethod parse_method(const std::string& s) {
  if (s == "fho") return SpendingMethod::FHO;
  if (s == "common") return SpendingMethod::CommonSpend;
  if (s == "per-hypothesis") return SpendingMethod::PerHypothesisSpend;
  throw std::invalid_argument("unknown spending method '" + s + "'");
}

struct SpendingPlan {
  SpendingMethod method = SpendingMethod::CommonSpend;
  std::vector<double> fho_levels;
  SpendingFunction family = SpendingFunction::hsd(-4.0);
  /// Per-hypothesis families for PerHypothesisSpend; empty means `family`
  /// for every hypothesis.
  std::vector<SpendingFunction> per_hypothesis_family;
  SpendingTimePolicy spending_time_policy = SpendingTimePolicy::MinInformationFraction;
  std::vector<double> planned_final_counts;
  /// Spending times per analysis for FixedSchedule.
  std::vector<double> schedule;

  const SpendingFunction& family_for(std::size_t i) const {
    return per_hypothesis_family.empty() ? family : per_hypothesis_family.at(i);
  }
};

struct DesignSpec {
  double alpha = 0.025;
  std::vector<std::string> hypothesis_names;
  std::size_t analyses = 1;
  WeightingStrategy weighting;
  EventCountMatrix events;
  SpendingPlan spending;
  /// Blocks of 0-based hypothesis indices with known correlation inside
  /// each block and unknown correlation between blocks.
  std::optional<std::vector<std::vector<std::size_t>>> correlation_partition;

  std::size_t hypotheses() const { return hypothesis_names.size(); }
};

struct Violation {
  std::string code;
  std::string message;
};

namespace detail {

inline std::string hyp(std::size_t i) { return "H" + std::to_string(i + 1); }

inline void validate_events(const EventCountMatrix& ev, std::size_t m, std::size_t K,
                            std::vector<Violation>& out) {
  if (ev.hypotheses() != m || ev.analyses() != K) {
    out.push_back({"events_shape", "event counts must be " + std::to_string(m) + " x " + std::to_string(K)});
    return;
  }
  for (std::size_t i = 0; i < m; ++i) {
    if (ev.marginal()[i].size() != K) {
      out.push_back({"events_shape", "ragged event counts for " + hyp(i)});
      return;
    }
    for (std::size_t k = 0; k < K; ++k) {
      const double n = ev.count(i, k);
      if (!std::isfinite(n) || n <= 0.0) {
        out.push_back({"events_nonpositive", "event count for " + hyp(i) + " at analysis " +
                                                 std::to_string(k + 1) + " must be positive"});
      }
      if (k > 0 && !(n > ev.count(i, k - 1))) {
        out.push_back({"events_non_monotone", "non-monotone event counts for " + hyp(i) + " between analyses " +
                                                  std::to_string(k) + " and " + std::to_string(k + 1)});
      }
    }
  }
  if (ev.shared().size() != m) {
    out.push_back({"events_shape", "overlap table must cover every hypothesis pair"});
    return;
  }
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      if (ev.shared()[i].size() != m || ev.shared()[i][j].size() != K || ev.shared()[j][i].size() != K) {
        out.push_back({"events_shape", "overlap counts for " + hyp(i) + "," + hyp(j) + " need one entry per analysis"});
        continue;
      }
      for (std::size_t k = 0; k < K; ++k) {
        const double s = ev.shared()[i][j][k];
        if (s != ev.shared()[j][i][k]) {
          out.push_back({"overlap_asymmetric", "overlap of " + hyp(i) + "," + hyp(j) + " is not symmetric"});
        }
        if (!std::isfinite(s) || s < 0.0) {
          out.push_back({"overlap_negative", "overlap of " + hyp(i) + "," + hyp(j) + " must be nonnegative"});
        }
        if (s > std::min(ev.count(i, k), ev.count(j, k))) {
          out.push_back({"overlap_exceeds_marginal", "overlap exceeds marginal for " + hyp(i) + "," + hyp(j) +
                                                         " at analysis " + std::to_string(k + 1)});
        }
        if (k > 0 && s < ev.shared()[i][j][k - 1]) {
          out.push_back({"overlap_non_monotone", "overlap of " + hyp(i) + "," + hyp(j) + " decreases over analyses"});
        }
      }
    }
  }
}

inline void validate_family(const SpendingFunction& f, std::size_t K, double alpha, const std::string& where,
                            std::vector<Violation>& out) {
  if (f.family == SpendingFamily::Power && !(f.parameter > 0.0)) {
    out.push_back({"spending_parameter", where + ": power spending needs rho > 0"});
  }
  if (!std::isfinite(f.parameter)) out.push_back({"spending_parameter", where + ": parameter must be finite"});
  if (f.family == SpendingFamily::FixedIncrements) {
    if (f.fixed_levels.size() != K) {
      out.push_back({"fixed_levels", where + ": fixed levels need one entry per analysis"});
      return;
    }
    for (std::size_t k = 0; k < K; ++k) {
      if (!(f.fixed_levels[k] > 0.0) || (k > 0 && !(f.fixed_levels[k] > f.fixed_levels[k - 1]))) {
        out.push_back({"fixed_levels", where + ": fixed levels must be positive and strictly increasing"});
        return;
      }
    }
    (void)alpha;
  }
}

}  // namespace detail

/// Every invariant violation of `spec`; empty when the design is usable.
inline std::vector<Violation> validate(const DesignSpec& spec) {
  using detail::hyp;
  std::vector<Violation> out;
  const std::size_t m = spec.hypotheses();
  const std::size_t K = spec.analyses;
  if (m == 0) out.push_back({"no_hypotheses", "at least one hypothesis is required"});
  if (m > kMaxHypotheses) {
    out.push_back({"too_many_hypotheses", "closed testing is limited to " + std::to_string(kMaxHypotheses) + " hypotheses"});
  }
  if (K == 0 || K > kMaxAnalyses) {
    out.push_back({"analyses_range", "number of analyses must lie in 1.." + std::to_string(kMaxAnalyses)});
  }
  if (!(spec.alpha > 0.0 && spec.alpha < 0.5)) out.push_back({"alpha_range", "alpha must lie in (0, 0.5)"});
  if (!out.empty()) return out;

  // Weighting strategy.
  const auto& w = spec.weighting;
  if (w.initial_weights.size() != m) {
    out.push_back({"weights_shape", "need one initial weight per hypothesis"});
  } else {
    Rational total = 0;
    for (std::size_t i = 0; i < m; ++i) {
      if (w.initial_weights[i] <= 0) out.push_back({"weight_nonpositive", "initial weight of " + hyp(i) + " must be > 0"});
      total += w.initial_weights[i];
    }
    if (total > 1) out.push_back({"weights_sum", "initial weights sum to more than 1"});
  }
  if (w.scheme == WeightScheme::GraphTransition) {
    if (w.transition.size() != m) {
      out.push_back({"transition_shape", "transition matrix must be m x m"});
    } else {
      for (std::size_t i = 0; i < m; ++i) {
        if (w.transition[i].size() != m) {
          out.push_back({"transition_shape", "transition matrix must be m x m"});
          continue;
        }
        Rational row = 0;
        for (std::size_t j = 0; j < m; ++j) {
          const auto& g = w.transition[i][j];
          if (g < 0 || g > 1) out.push_back({"transition_range", "g[" + std::to_string(i + 1) + "][" + std::to_string(j + 1) + "] outside [0, 1]"});
          row += g;
        }
        if (w.transition[i][i] != 0) out.push_back({"transition_diagonal", "g[" + std::to_string(i + 1) + "][" + std::to_string(i + 1) + "] must be 0"});
        if (row > 1) out.push_back({"transition_row_sum", "row " + std::to_string(i + 1) + " of the transition matrix sums to more than 1"});
      }
    }
  }

  detail::validate_events(spec.events, m, K, out);

  // Spending plan.
  const auto& sp = spec.spending;
  switch (sp.method) {
    case SpendingMethod::FHO: {
      const auto& lv = sp.fho_levels;
      if (lv.size() != K) {
        out.push_back({"fho_levels", "FHO plan needs one cumulative level per analysis"});
        break;
      }
      for (std::size_t k = 0; k < K; ++k) {
        if (!(lv[k] > 0.0) || (k > 0 && !(lv[k] > lv[k - 1]))) {
          out.push_back({"fho_levels", "FHO levels must be positive and strictly increasing"});
          break;
        }
      }
      if (std::fabs(lv.back() - spec.alpha) > 1e-15) out.push_back({"fho_levels", "last FHO level must equal alpha"});
      break;
    }
    case SpendingMethod::CommonSpend:
      detail::validate_family(sp.family, K, spec.alpha, "spending", out);
      if (sp.spending_time_policy == SpendingTimePolicy::PerHypothesisInformationFraction) {
        out.push_back({"policy_method", "per-hypothesis information fraction needs per-hypothesis spending"});
      }
      break;
    case SpendingMethod::PerHypothesisSpend:
      if (!sp.per_hypothesis_family.empty() && sp.per_hypothesis_family.size() != m) {
        out.push_back({"spending_shape", "need one spending family per hypothesis"});
      }
      for (std::size_t i = 0; i < m && (sp.per_hypothesis_family.empty() || i < sp.per_hypothesis_family.size()); ++i) {
        detail::validate_family(sp.family_for(i), K, spec.alpha, "spending for " + hyp(i), out);
      }
      break;
  }
  if (sp.method != SpendingMethod::FHO) {
    if (sp.spending_time_policy == SpendingTimePolicy::FixedSchedule) {
      if (sp.schedule.size() != K) {
        out.push_back({"schedule", "fixed schedule needs one spending time per analysis"});
      } else {
        for (std::size_t k = 0; k < K; ++k) {
          if (!(sp.schedule[k] > 0.0 && sp.schedule[k] <= 1.0) || (k > 0 && sp.schedule[k] < sp.schedule[k - 1])) {
            out.push_back({"schedule", "schedule must be nondecreasing in (0, 1]"});
            break;
          }
        }
        if (sp.schedule.back() != 1.0) out.push_back({"schedule", "schedule must end at 1"});
      }
    } else {
      if (sp.planned_final_counts.size() != m) {
        out.push_back({"planned_final", "need one planned final event count per hypothesis"});
      } else {
        for (std::size_t i = 0; i < m; ++i) {
          if (!(sp.planned_final_counts[i] > 0.0)) {
            out.push_back({"planned_final", "planned final count of " + hyp(i) + " must be positive"});
          }
        }
      }
    }
  }

  if (spec.correlation_partition) {
    std::vector<int> seen(m, 0);
    for (const auto& block : *spec.correlation_partition) {
      if (block.empty()) out.push_back({"partition", "partition blocks must be nonempty"});
      for (auto i : block) {
        if (i >= m) {
          out.push_back({"partition", "partition refers to unknown hypothesis " + std::to_string(i + 1)});
        } else {
          ++seen[i];
        }
      }
    }
    for (std::size_t i = 0; i < m; ++i) {
      if (seen[i] != 1) out.push_back({"partition", hyp(i) + " must appear in exactly one partition block"});
    }
  }
  return out;
}

namespace detail {

/// Removes hypothesis j from the graph (w, G) restricted to `active`.
inline void remove_node(std::vector<Rational>& w, std::vector<std::vector<Rational>>& G, Subset active,
                        std::size_t j) {
  const auto rest = active.without(j).members();
  for (auto l : rest) w[l] += w[j] * G[j][l];
  auto next = G;
  for (auto l : rest) {
    for (auto k : rest) {
      if (l == k) {
        next[l][k] = 0;
        continue;
      }
      const Rational denom = 1 - G[l][j] * G[j][l];
      next[l][k] = denom > 0 ? Rational((G[l][k] + G[l][j] * G[j][k]) / denom) : Rational(0);
    }
  }
  w[j] = 0;
  for (std::size_t l = 0; l < G.size(); ++l) {
    next[j][l] = 0;
    next[l][j] = 0;
  }
  G = std::move(next);
}

}  // namespace detail

/// Weights w_i(J), indexed by hypothesis; zero outside J.
///
/// Graph strategies remove the hypotheses outside J one at a time, passing
/// their weight along the transition matrix. `removal_order` may fix the
/// order (it must list exactly the hypotheses outside J); the default is
/// ascending index.
inline std::vector<Rational> subset_weights(const WeightingStrategy& ws, Subset J,
                                            const std::vector<std::size_t>& removal_order = {}) {
  if (J.empty()) throw std::invalid_argument("subset weights need a nonempty hypothesis set");
  const std::size_t m = ws.size();
  if (!J.is_subset_of(Subset::full(m))) throw std::out_of_range("hypothesis set outside the design");
  std::vector<Rational> out(m, Rational(0));

  if (ws.scheme == WeightScheme::BonferroniHolm) {
    Rational total = 0;
    for (auto i : J.members()) total += ws.initial_weights[i];
    for (auto i : J.members()) out[i] = ws.initial_weights[i] / total;
    return out;
  }

  auto w = ws.initial_weights;
  auto G = ws.transition;
  Subset active = Subset::full(m);
  std::vector<std::size_t> order = removal_order;
  if (order.empty()) {
    for (std::size_t i = 0; i < m; ++i) {
      if (!J.contains(i)) order.push_back(i);
    }
  }
  if (order.size() != m - J.size()) throw std::invalid_argument("removal order must list every hypothesis outside J");
  for (auto j : order) {
    if (J.contains(j) || !active.contains(j)) throw std::invalid_argument("invalid removal order");
    detail::remove_node(w, G, active, j);
    active = active.without(j);
  }
  for (auto i : J.members()) out[i] = w[i];
  return out;
}

inline std::vector<double> to_doubles(const std::vector<Rational>& v) {
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& r : v) out.push_back(detail::to_double(r));
  return out;
}

/// Spending-time inputs implied by the design, with `observed` marginal
/// counts standing in for actual data (the planned counts when absent).
inline SpendingTimeInputs spending_time_inputs(const DesignSpec& spec, const EventCountMatrix* observed = nullptr) {
  SpendingTimeInputs in;
  in.planned = spec.events.marginal();
  in.observed = observed ? observed->marginal() : spec.events.marginal();
  in.planned_final = spec.spending.planned_final_counts;
  in.schedule = spec.spending.schedule;
  return in;
}

}  // namespace wpgsd
