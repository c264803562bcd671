#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "wpgsd/correlation.hpp"
#include "wpgsd/design.hpp"
#include "wpgsd/detail/root.hpp"
#include "wpgsd/gs_bounds.hpp"
#include "wpgsd/mvn.hpp"
#include "wpgsd/subsets.hpp"

namespace wpgsd {

struct SolverOptions {
  /// Worker threads for full tables; 0 uses the hardware concurrency.
  unsigned threads = 0;
  /// MVN absolute tolerance by problem dimension.
  double small_dim_tol = 1e-7;
  double large_dim_tol = 1e-6;
  std::size_t small_dim = 6;
  std::uint64_t seed = kDefaultMvnSeed;
  /// Residual tolerance of the boundary root searches.
  double root_ftol = 1e-10;

  double mvn_tol(std::size_t d) const { return d <= small_dim ? small_dim_tol : large_dim_tol; }
};

/// Bounds for one intersection hypothesis H_J at one analysis.
struct BoundaryEntry {
  Subset J;
  std::size_t k = 0;
  /// False when no alpha is spent for H_J at this analysis.
  bool testable = true;
  /// w_i(J) per hypothesis (0 outside J).
  std::vector<double> weight;
  /// Nominal p-value bound p_ik(J) per hypothesis; 0 for members that
  /// cannot reject here and outside J.
  std::vector<double> p_bound;
  /// c_ik(J) = Phi^{-1}(1 - p_ik(J)); +infinity when p_ik(J) = 0.
  std::vector<double> z_bound;
  /// Weighted Bonferroni comparator bounds.
  std::vector<double> bonferroni_p;
  std::vector<double> bonferroni_z;
  /// Cumulative alpha alpha_k(J) the bounds exhaust.
  double alpha_cumulative = 0.0;
  /// Root alpha*_k(J) for the alpha*-search methods with a single block.
  double alpha_star = std::numeric_limits<double>::quiet_NaN();
  /// Inflation factor: solved for per-hypothesis spending, otherwise the
  /// ratio of summed WPGSD to summed Bonferroni bounds.
  double xi = 1.0;
  /// Rejection probability of the final bounds and its integration error.
  double achieved = 0.0;
  double mvn_error = 0.0;
};

struct BoundaryTable {
  std::size_t m = 0;
  std::size_t K = 0;
  std::vector<std::string> names;
  SpendingMethod method = SpendingMethod::CommonSpend;
  /// Analysis-major; subsets in canonical order within an analysis.
  std::vector<BoundaryEntry> entries;

  const BoundaryEntry* find(Subset J, std::size_t k) const {
    const std::size_t key = static_cast<std::size_t>(J.mask()) * K + k;
    if (key >= index_.size() || index_[key] < 0) return nullptr;
    return &entries[static_cast<std::size_t>(index_[key])];
  }
  const BoundaryEntry& at(Subset J, std::size_t k) const {
    const auto* e = find(J, k);
    if (!e) throw std::out_of_range("no bounds for " + J.label() + " at analysis " + std::to_string(k + 1));
    return *e;
  }
  /// p_ik(J).
  double p_bound(Subset J, std::size_t k, std::size_t i) const { return at(J, k).p_bound.at(i); }

  void rebuild_index() {
    index_.assign((std::size_t{1} << m) * K, -1);
    for (std::size_t e = 0; e < entries.size(); ++e) {
      index_[static_cast<std::size_t>(entries[e].J.mask()) * K + entries[e].k] = static_cast<std::ptrdiff_t>(e);
    }
  }

 private:
  std::vector<std::ptrdiff_t> index_;
};

/// Computes boundary entries on demand, memoizing every (J, k) so that the
/// bounds of earlier analyses are fixed once found. Not thread-safe as a
/// whole; full_table parallelizes internally over subsets of one analysis.
class BoundaryEngine {
 public:
  BoundaryEngine(DesignSpec spec, CorrelationMatrix corr, std::optional<EventCountMatrix> observed = std::nullopt,
                 SolverOptions opt = {})
      : spec_(std::move(spec)), corr_(std::move(corr)), opt_(opt) {
    const auto problems = validate(spec_);
    if (!problems.empty()) throw std::invalid_argument("invalid design: " + problems.front().message);
    m_ = spec_.hypotheses();
    K_ = spec_.analyses;
    if (static_cast<std::size_t>(corr_.rows()) != m_ * K_ || static_cast<std::size_t>(corr_.cols()) != m_ * K_) {
      throw std::invalid_argument("correlation matrix must be (m*K) x (m*K)");
    }
    if (observed) {
      if (observed->hypotheses() != m_ || observed->analyses() != K_) {
        throw std::invalid_argument("observed event counts have the wrong shape");
      }
      observed_ = std::move(observed);
    }
    times_ = spending_time_inputs(spec_, observed_ ? &*observed_ : nullptr);
    const std::size_t n = std::size_t{1} << m_;
    subsets_.resize(n);
    entries_.resize(n * K_);
  }

  const DesignSpec& spec() const { return spec_; }
  const CorrelationMatrix& correlation() const { return corr_; }
  std::size_t hypotheses() const { return m_; }
  std::size_t analyses() const { return K_; }

  /// Bounds for H_J at analysis k, solving earlier analyses first.
  const BoundaryEntry& entry(Subset J, std::size_t k) {
    check(J, k);
    for (std::size_t j = 0; j <= k; ++j) {
      auto& slot = entries_[slot_index(J, j)];
      if (!slot) slot = solve(J, j);
    }
    return *entries_[slot_index(J, k)];
  }

  double p_bound(Subset J, std::size_t k, std::size_t i) { return entry(J, k).p_bound.at(i); }

  /// Weighted Bonferroni bound for member i of J at analysis k.
  double bonferroni_bound(Subset J, std::size_t k, std::size_t i) {
    check(J, k);
    const SubsetData& d = subset_data(J);
    return J.contains(i) && d.weight[i] > 0.0 ? d.bonferroni[i].p[k] : 0.0;
  }

  /// Settles p <= p_ik(J) without a solve when the weighted Bonferroni
  /// bound (which never exceeds p_ik(J)) or the cumulative level (which
  /// p_ik(J) never exceeds) decides it; nullopt otherwise.
  std::optional<bool> quick_reject(Subset J, std::size_t k, std::size_t i, double p) {
    check(J, k);
    if (const auto& slot = entries_[slot_index(J, k)]) {
      const double b = slot->p_bound.at(i);
      return b > 0.0 && p <= b;
    }
    const SubsetData& d = subset_data(J);
    if (!J.contains(i) || !(d.weight[i] > 0.0) || p > d.alpha[k]) return false;
    const double b = d.bonferroni[i].p[k];
    if (b > 0.0 && p <= b) return true;
    return std::nullopt;
  }

  /// Whether H_J is rejected at analysis k, i.e. p[i] <= p_ik(J) for some
  /// member i (p indexed by hypothesis). Bounds are increasing in the root
  /// variable, so a single rejection-probability evaluation at the smallest
  /// root value that would reject decides this without solving for the
  /// bounds at k. Earlier analyses of J are solved as needed.
  bool decide(Subset J, std::size_t k, const std::vector<double>& p) {
    check(J, k);
    if (p.size() != m_) throw std::invalid_argument("need one p-value per hypothesis");
    bool open = false;
    for (auto i : J.members()) {
      const auto q = quick_reject(J, k, i, p[i]);
      if (q && *q) return true;
      if (!q) open = true;
    }
    if (!open) return false;
    const auto parts = blocks(J);
    if (parts.size() != 1) {
      const auto& e = entry(J, k);
      for (auto i : J.members()) {
        if (e.p_bound[i] > 0.0 && p[i] <= e.p_bound[i]) return true;
      }
      return false;
    }
    for (std::size_t j = 0; j < k; ++j) entry(J, j);
    auto bp = block_problem(J, k, J, true);
    if (!bp) return false;
    double x = kInf;
    for (std::size_t q = 0; q < bp->live.size(); ++q) x = std::min(x, p[bp->live[q]] / bp->base[q]);
    if (bp->lone) return x <= 1.0;
    if (x <= bp->floor) return true;
    if (x >= bp->cap) return false;
    return bp->eval(x).complement <= bp->target;
  }

  /// Every nonempty J at every analysis (or up to `last_analysis`).
  BoundaryTable full_table(std::optional<std::size_t> last_analysis = std::nullopt) {
    const std::size_t K_end = last_analysis ? std::min(*last_analysis + 1, K_) : K_;
    const auto family = closed_family(m_);
    for (std::size_t k = 0; k < K_end; ++k) {
      std::vector<Subset> todo;
      for (auto J : family) {
        if (!entries_[slot_index(J, k)]) todo.push_back(J);
      }
      run_parallel(todo.size(), [&](std::size_t t) {
        const Subset J = todo[t];
        entries_[slot_index(J, k)] = solve(J, k);
      });
    }
    BoundaryTable table;
    table.m = m_;
    table.K = K_;
    table.names = spec_.hypothesis_names;
    table.method = spec_.spending.method;
    for (std::size_t k = 0; k < K_end; ++k) {
      for (auto J : family) table.entries.push_back(*entries_[slot_index(J, k)]);
    }
    table.rebuild_index();
    return table;
  }

 private:
  struct SubsetData {
    std::vector<double> weight;
    /// alpha_k(J) per analysis.
    std::vector<double> alpha;
    /// Per member: cumulative Bonferroni spend and its bounds.
    std::vector<std::vector<double>> member_cumulative;
    std::vector<SingleBoundResult> bonferroni;
  };

  void check(Subset J, std::size_t k) const {
    if (J.empty() || !J.is_subset_of(Subset::full(m_))) throw std::out_of_range("hypothesis set outside the design");
    if (k >= K_) throw std::out_of_range("analysis index out of range");
  }

  std::size_t slot_index(Subset J, std::size_t k) const { return static_cast<std::size_t>(J.mask()) * K_ + k; }

  template <class F>
  void run_parallel(std::size_t n, F&& fn) {
    unsigned threads = opt_.threads ? opt_.threads : std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
    if (threads <= 1) {
      for (std::size_t t = 0; t < n; ++t) fn(t);
      return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < threads; ++w) {
      pool.emplace_back([&] {
        for (std::size_t t = next++; t < n; t = next++) {
          try {
            fn(t);
          } catch (...) {
            std::lock_guard<std::mutex> lock(error_mutex);
            if (!error) error = std::current_exception();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
  }

  Eigen::MatrixXd temporal(std::size_t i) const {
    Eigen::MatrixXd R(K_, K_);
    for (std::size_t j = 0; j < K_; ++j)
      for (std::size_t k = 0; k < K_; ++k) R(j, k) = corr_(stat_index(i, j, m_), stat_index(i, k, m_));
    return R;
  }

  double spend_time(Subset J, std::size_t k) const {
    return spending_time(spec_.spending.spending_time_policy, J, k, K_, times_);
  }

  /// Cumulative spend for hypothesis i at analysis k under per-hypothesis
  /// spending with allocated level `level`.
  double own_spend(std::size_t i, std::size_t k, double level) const {
    return spend_at(spec_.spending.family_for(i), k, spend_time(Subset::single(i), k), level);
  }

  const SubsetData& subset_data(Subset J) {
    auto& slot = subsets_[J.mask()];
    if (slot) return *slot;
    SubsetData d;
    d.weight = to_doubles(subset_weights(spec_.weighting, J));
    const double alpha = spec_.alpha;
    const auto& sp = spec_.spending;
    d.alpha.assign(K_, 0.0);
    d.member_cumulative.assign(m_, std::vector<double>(K_, 0.0));
    for (std::size_t k = 0; k < K_; ++k) {
      switch (sp.method) {
        case SpendingMethod::FHO:
          d.alpha[k] = sp.fho_levels[k];
          break;
        case SpendingMethod::CommonSpend:
          d.alpha[k] = spend_at(sp.family, k, spend_time(J, k), alpha);
          break;
        case SpendingMethod::PerHypothesisSpend:
          for (auto i : J.members()) {
            if (d.weight[i] > 0.0) d.alpha[k] += own_spend(i, k, d.weight[i] * alpha);
          }
          break;
      }
      for (auto i : J.members()) {
        if (d.weight[i] <= 0.0) continue;
        d.member_cumulative[i][k] = sp.method == SpendingMethod::PerHypothesisSpend
                                        ? own_spend(i, k, d.weight[i] * alpha)
                                        : d.weight[i] * d.alpha[k];
      }
    }
    d.bonferroni.resize(m_);
    for (auto i : J.members()) {
      if (d.weight[i] > 0.0) d.bonferroni[i] = gs_single_bounds_corr(temporal(i), d.member_cumulative[i]);
    }
    slot = std::make_unique<SubsetData>(std::move(d));
    return *slot;
  }

  /// Blocks of J with known correlation inside each block.
  std::vector<Subset> blocks(Subset J) const {
    if (!spec_.correlation_partition) return {J};
    std::vector<Subset> out;
    for (const auto& b : *spec_.correlation_partition) {
      const Subset part = Subset::of(b) & J;
      if (!part.empty()) out.push_back(part);
    }
    return out;
  }

  /// Rejection problem of one block of J at analysis k. Member q's bound
  /// is base[q] * x for the root variable x (alpha* or xi).
  struct BlockProblem {
    std::vector<std::size_t> live;
    std::vector<double> base;
    std::size_t n_prior = 0;
    MvnProblem prob;
    double target = 0.0;
    double floor = 0.0, guess = 0.0, cap = 0.0, xtol = 0.0;
    bool lone = false;

    void set_limits(double x) {
      for (std::size_t q = 0; q < live.size(); ++q) {
        const double p = base[q] * x;
        prob.upper[n_prior + q] = p > 0.0 ? z_from_p(std::min(p, 1.0)) : kInf;
      }
    }
    /// Rejection probability minus target; increasing in x.
    MvnResult eval(double x) {
      set_limits(x);
      return mvn_cdf(prob);
    }
  };

  /// Builds the block problem, or nullopt when the block spends nothing at
  /// analysis k. Earlier analyses of J must already be solved.
  std::optional<BlockProblem> block_problem(Subset J, std::size_t k, Subset B, bool single_block) {
    const SubsetData& d = subset_data(J);
    const bool per_hyp = spec_.spending.method == SpendingMethod::PerHypothesisSpend;
    BlockProblem bp;
    double wsum = 0.0, wmax = 0.0;
    for (auto i : B.members()) {
      if (d.weight[i] > 0.0) {
        bp.live.push_back(i);
        wsum += d.weight[i];
        wmax = std::max(wmax, d.weight[i]);
      }
    }
    if (bp.live.empty()) return std::nullopt;

    // Cumulative target for this block now and at the previous analysis.
    auto block_target = [&](std::size_t kk) {
      if (single_block) return d.alpha[kk];
      double t = 0.0;
      for (auto i : bp.live) t += d.member_cumulative[i][kk];
      return t;
    };
    bp.target = block_target(k);
    const double inc = bp.target - (k > 0 ? block_target(k - 1) : 0.0);
    if (inc < kMinIncrement) return std::nullopt;

    // Constraints from earlier analyses, then the current statistics.
    std::vector<std::size_t> idx;
    std::vector<double> lim;
    for (std::size_t j = 0; j < k; ++j) {
      const auto& prev = *entries_[slot_index(J, j)];
      for (auto i : bp.live) {
        if (std::isfinite(prev.z_bound[i])) {
          idx.push_back(stat_index(i, j, m_));
          lim.push_back(prev.z_bound[i]);
        }
      }
    }
    bp.n_prior = idx.size();
    double bmax = 0.0;
    for (auto i : bp.live) {
      idx.push_back(stat_index(i, k, m_));
      bp.base.push_back(per_hyp ? d.bonferroni[i].p[k] : d.weight[i]);
      bmax = std::max(bmax, bp.base.back());
    }
    if (!(bmax > 0.0)) return std::nullopt;
    bp.prob.correlation = submatrix(corr_, idx);
    bp.prob.abs_tol = opt_.mvn_tol(idx.size());
    bp.prob.seed = opt_.seed;
    bp.prob.upper = lim;
    bp.prob.upper.resize(idx.size());
    if (per_hyp) {
      // A lone member's Bonferroni bounds already exhaust its own spend.
      bp.lone = bp.live.size() == 1;
      bp.floor = bp.guess = 1.0;
      bp.cap = (1.0 - 1e-9) / bmax;
      bp.xtol = 1e-9;
    } else {
      bp.floor = inc / wsum;
      bp.guess = bp.target / wsum;
      bp.cap = std::min(0.5, (1.0 - 1e-9) / wmax);
      bp.xtol = 1e-12;
    }
    return bp;
  }

  BoundaryEntry solve(Subset J, std::size_t k) {
    const SubsetData& d = subset_data(J);
    const bool per_hyp = spec_.spending.method == SpendingMethod::PerHypothesisSpend;

    BoundaryEntry e;
    e.J = J;
    e.k = k;
    e.weight = d.weight;
    e.p_bound.assign(m_, 0.0);
    e.z_bound.assign(m_, kInf);
    e.bonferroni_p.assign(m_, 0.0);
    e.bonferroni_z.assign(m_, kInf);
    e.alpha_cumulative = d.alpha[k];
    for (auto i : J.members()) {
      if (d.weight[i] > 0.0) {
        e.bonferroni_p[i] = d.bonferroni[i].p[k];
        e.bonferroni_z[i] = d.bonferroni[i].z[k];
      }
    }

    const auto parts = blocks(J);
    const bool single_block = parts.size() == 1;
    bool any_testable = false;
    double achieved = 0.0, err2 = 0.0;
    for (const Subset B : parts) {
      auto bp = block_problem(J, k, B, single_block);
      if (!bp) continue;
      auto g = [&](double x) { return bp->eval(x).complement - bp->target; };
      const double x = bp->lone ? 1.0
                                : detail::solve_increasing(g, bp->floor, bp->guess, bp->cap, 1.25, opt_.root_ftol,
                                                           bp->xtol);
      const MvnResult last = bp->eval(x);
      achieved += last.complement;
      err2 += last.error * last.error;
      any_testable = true;
      for (std::size_t q = 0; q < bp->live.size(); ++q) {
        const auto i = bp->live[q];
        e.p_bound[i] = bp->base[q] * x;
        e.z_bound[i] = e.p_bound[i] > 0.0 ? z_from_p(e.p_bound[i]) : kInf;
      }
      if (single_block) {
        if (per_hyp) {
          e.xi = x;
        } else {
          e.alpha_star = x;
        }
      }
    }
    e.testable = any_testable;
    e.achieved = achieved;
    e.mvn_error = std::sqrt(err2);
    if (!(per_hyp && single_block)) {
      double num = 0.0, den = 0.0;
      for (auto i : J.members()) {
        num += e.p_bound[i];
        den += e.bonferroni_p[i];
      }
      e.xi = den > 0.0 ? num / den : 1.0;
    }
    return e;
  }

  DesignSpec spec_;
  CorrelationMatrix corr_;
  SolverOptions opt_;
  std::optional<EventCountMatrix> observed_;
  SpendingTimeInputs times_;
  std::size_t m_ = 0, K_ = 0;
  std::vector<std::unique_ptr<SubsetData>> subsets_;
  std::vector<std::optional<BoundaryEntry>> entries_;
};

/// Correlation implied by the design's planned (or observed) event counts.
inline CorrelationMatrix design_correlation(const DesignSpec& spec, const EventCountMatrix* observed = nullptr) {
  return ensure_psd(corr_from_overlap(observed ? *observed : spec.events));
}

/// Full boundary table for a design.
inline BoundaryTable full_table(const DesignSpec& spec, const std::optional<EventCountMatrix>& observed = std::nullopt,
                                SolverOptions opt = {}) {
  BoundaryEngine engine(spec, design_correlation(spec, observed ? &*observed : nullptr), observed, opt);
  return engine.full_table();
}

struct ConsonanceViolation {
  Subset J;
  Subset J_sub;
  std::size_t i = 0;
  std::size_t k = 0;
  double p_J = 0.0;
  double p_sub = 0.0;
};

/// Every (J' subset of J, i in J', k) with p_ik(J) > p_ik(J'), i.e.
/// c_ik(J) < c_ik(J'). Members with no bound at either level are skipped.
inline std::vector<ConsonanceViolation> check_consonance(const BoundaryTable& table, double tol = 1e-9) {
  std::vector<ConsonanceViolation> out;
  const auto family = closed_family(table.m);
  for (std::size_t k = 0; k < table.K; ++k) {
    for (auto J : family) {
      const auto* eJ = table.find(J, k);
      if (!eJ) continue;
      const std::uint32_t u = J.mask();
      for (std::uint32_t s = (u - 1) & u; s != 0; s = (s - 1) & u) {
        const Subset Js(s);
        const auto* eS = table.find(Js, k);
        if (!eS) continue;
        for (auto i : Js.members()) {
          const double pJ = eJ->p_bound[i], pS = eS->p_bound[i];
          if (pJ > 0.0 && pJ > pS + tol) out.push_back({J, Js, i, k, pJ, pS});
        }
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const ConsonanceViolation& a, const ConsonanceViolation& b) {
    if (a.k != b.k) return a.k < b.k;
    if (a.J != b.J) return canonical_less(a.J, b.J);
    if (a.J_sub != b.J_sub) return canonical_less(a.J_sub, b.J_sub);
    return a.i < b.i;
  });
  return out;
}

}  // namespace wpgsd
