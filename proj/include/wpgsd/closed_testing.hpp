#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "wpgsd/normal.hpp"
#include "wpgsd/subsets.hpp"
#include "wpgsd/wpgsd.hpp"

namespace wpgsd {

/// Observed nominal one-sided p-values per hypothesis and analysis.
/// A cell is either absent, observed, or explicitly unavailable (the
/// hypothesis has no data at that analysis yet and never rejects there).
class TrialOutcome {
 public:
  TrialOutcome() = default;
  TrialOutcome(std::size_t m, std::size_t K) : m_(m), K_(K), p_(m * K), unavailable_(m * K, false) {}

  std::size_t hypotheses() const { return m_; }
  std::size_t analyses() const { return K_; }

  void set_p(std::size_t i, std::size_t k, double p) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw std::domain_error("p-value for " + stat_label(i, k) + " must lie in [0, 1]");
    }
    p_.at(cell(i, k)) = p;
    unavailable_[cell(i, k)] = false;
  }
  /// Stores p = 1 - Phi(z).
  void set_z(std::size_t i, std::size_t k, double z) {
    if (std::isnan(z)) throw std::domain_error("Z statistic for " + stat_label(i, k) + " is NaN");
    set_p(i, k, p_from_z(z));
  }
  void set_unavailable(std::size_t i, std::size_t k) {
    p_.at(cell(i, k)).reset();
    unavailable_[cell(i, k)] = true;
  }

  bool has(std::size_t i, std::size_t k) const { return p_.at(cell(i, k)).has_value(); }
  bool unavailable(std::size_t i, std::size_t k) const { return unavailable_.at(cell(i, k)); }
  /// Observed p-value, 1 for unavailable cells.
  double p(std::size_t i, std::size_t k) const {
    const auto& v = p_.at(cell(i, k));
    if (v) return *v;
    if (unavailable_[cell(i, k)]) return 1.0;
    throw std::invalid_argument("missing observed p-value for " + stat_label(i, k));
  }

 private:
  std::size_t cell(std::size_t i, std::size_t k) const {
    if (i >= m_ || k >= K_) throw std::out_of_range("observation " + stat_label(i, k) + " outside the design");
    return k * m_ + i;
  }

  std::size_t m_ = 0, K_ = 0;
  std::vector<std::optional<double>> p_;
  std::vector<bool> unavailable_;
};

struct AnalysisReport {
  std::size_t k = 0;
  /// Elementary hypotheses first rejected at this analysis.
  Subset newly_rejected;
  /// Hypotheses without data at this analysis.
  Subset unavailable;
  /// For every surviving hypothesis, the unrejected intersections that
  /// contain it (filled when explanations are requested).
  std::vector<std::pair<std::size_t, std::vector<Subset>>> blocking;
};

class RejectionState;

template <class Source>
RejectionState run_analysis(Source& src, const TrialOutcome& outcome, std::size_t k, const RejectionState& prior,
                            bool explain = true);

/// Closed-testing state after a number of analyses. Rejection of an
/// intersection hypothesis is cumulative: H_J is rejected by analysis k iff
/// p_ij <= p_ij(J) for some member i and some analysis j <= k.
class RejectionState {
 public:
  RejectionState() = default;
  explicit RejectionState(std::size_t m)
      : m_(m), rejected_at_(std::size_t{1} << m, -1), tested_through_(std::size_t{1} << m, -1), elementary_at_(m, -1) {
    if (m == 0 || m > kMaxHypotheses) throw std::invalid_argument("invalid number of hypotheses");
  }

  std::size_t hypotheses() const { return m_; }
  /// Number of analyses processed so far.
  std::size_t analyses_done() const { return history_.size(); }

  /// Analysis (0-based) at which H_J was found rejected by its own bounds,
  /// or -1 if it was not (or not evaluated).
  int rejected_at(Subset J) const { return rejected_at_.at(J.mask()); }
  /// Intersections containing a rejected elementary hypothesis count as
  /// rejected.
  bool intersection_rejected(Subset J) const { return rejected_at(J) >= 0 || !(J & rejected()).empty(); }

  /// Analysis at which H_i was rejected, or -1.
  int elementary_rejected_at(std::size_t i) const { return elementary_at_.at(i); }
  Subset rejected() const {
    Subset s;
    for (std::size_t i = 0; i < m_; ++i) {
      if (elementary_at_[i] >= 0) s = s.with(i);
    }
    return s;
  }
  /// The index set I_k still in play.
  Subset surviving() const { return Subset(Subset::full(m_).mask() & ~rejected().mask()); }

  const std::vector<AnalysisReport>& history() const { return history_; }

 private:
  template <class Source>
  friend RejectionState run_analysis(Source&, const TrialOutcome&, std::size_t, const RejectionState&, bool);

  std::size_t m_ = 0;
  std::vector<int> rejected_at_;
  std::vector<int> tested_through_;
  std::vector<int> elementary_at_;
  std::vector<AnalysisReport> history_;
};

namespace detail {

template <class Source>
bool rejects_at(Source& src, Subset J, std::size_t k, std::size_t i, double p) {
  const double b = src.p_bound(J, k, i);
  return b > 0.0 && p <= b;
}

}  // namespace detail

/// Processes analysis k (0-based) given the state after analysis k - 1.
/// `src` supplies p_bound(J, k, i), or decide(J, k, p) to settle a whole
/// intersection at once (BoundaryEngine does this lazily). With `explain`
/// every intersection blocking a surviving hypothesis is evaluated and
/// reported.
template <class Source>
RejectionState run_analysis(Source& src, const TrialOutcome& outcome, std::size_t k, const RejectionState& prior,
                            bool explain) {
  const std::size_t m = prior.hypotheses();
  if (outcome.hypotheses() != m) throw std::invalid_argument("outcome and state disagree on the number of hypotheses");
  if (k >= outcome.analyses()) throw std::out_of_range("analysis index out of range");
  if (prior.analyses_done() != k) {
    throw std::invalid_argument("analyses must be processed in order; expected analysis " +
                                std::to_string(prior.analyses_done() + 1));
  }
  RejectionState st = prior;
  const Subset live = prior.surviving();
  AnalysisReport report;
  report.k = k;
  for (auto i : live.members()) {
    if (outcome.unavailable(i, k)) {
      report.unavailable = report.unavailable.with(i);
    } else if (!outcome.has(i, k)) {
      throw std::invalid_argument("missing observed p-value for live hypothesis " + stat_label(i, k));
    }
  }

  auto rejected = [&](Subset J) {
    auto& at = st.rejected_at_[J.mask()];
    if (at >= 0) return true;
    auto& through = st.tested_through_[J.mask()];
    for (std::size_t j = static_cast<std::size_t>(through + 1); j <= k; ++j) {
      if constexpr (requires { src.decide(J, j, std::vector<double>{}); }) {
        std::vector<double> p(m, 1.0);
        for (auto i : J.members()) p[i] = outcome.p(i, j);
        if (src.decide(J, j, p)) at = static_cast<int>(j);
      } else {
        for (auto i : J.members()) {
          if (outcome.unavailable(i, j)) continue;
          if (detail::rejects_at(src, J, j, i, outcome.p(i, j))) {
            at = static_cast<int>(j);
            break;
          }
        }
      }
      through = static_cast<int>(j);
      if (at >= 0) return true;
    }
    return false;
  };

  // Intersections that contain an already rejected hypothesis are rejected,
  // so only subsets of the live set matter.
  const auto family = closed_family(live);
  for (auto i : live.members()) {
    bool all = true;
    std::vector<Subset> blockers;
    for (auto J : family) {
      if (!J.contains(i) || rejected(J)) continue;
      all = false;
      if (!explain) break;
      blockers.push_back(J);
    }
    if (all) {
      st.elementary_at_[i] = static_cast<int>(k);
      report.newly_rejected = report.newly_rejected.with(i);
    } else if (explain) {
      report.blocking.emplace_back(i, std::move(blockers));
    }
  }
  st.history_.push_back(std::move(report));
  return st;
}

/// Runs analyses 0..last in order.
template <class Source>
RejectionState run_trial(Source& src, const TrialOutcome& outcome, std::optional<std::size_t> last = std::nullopt,
                         bool explain = true) {
  RejectionState st(outcome.hypotheses());
  const std::size_t end = last ? *last + 1 : outcome.analyses();
  for (std::size_t k = 0; k < end; ++k) st = run_analysis(src, outcome, k, st, explain);
  return st;
}

/// True when the table admits the sequentially rejective short cut.
inline bool shortcut_available(const BoundaryTable& table) { return check_consonance(table).empty(); }

/// Sequentially rejective execution on a consonant table: at analysis k,
/// reject any surviving H_i with p_ij <= p_ij(I) for some j <= k, where I
/// is the current surviving set, drop it and repeat. Returns the elementary
/// hypotheses rejected at each analysis.
inline std::vector<Subset> shortcut_decisions(const BoundaryTable& table, const TrialOutcome& outcome) {
  if (outcome.hypotheses() != table.m) throw std::invalid_argument("outcome and table disagree on hypotheses");
  std::vector<Subset> out;
  Subset I = Subset::full(table.m);
  for (std::size_t k = 0; k < outcome.analyses() && k < table.K; ++k) {
    Subset now;
    bool progress = true;
    while (progress && !I.empty()) {
      progress = false;
      for (auto i : I.members()) {
        for (std::size_t j = 0; j <= k && !progress; ++j) {
          if (outcome.unavailable(i, j)) continue;
          const double b = table.p_bound(I, j, i);
          if (b > 0.0 && outcome.p(i, j) <= b) progress = true;
        }
        if (progress) {
          I = I.without(i);
          now = now.with(i);
          break;
        }
      }
    }
    out.push_back(now);
  }
  return out;
}

}  // namespace wpgsd
