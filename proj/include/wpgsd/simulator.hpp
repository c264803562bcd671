#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <numeric>
#include <random>
#include <stdexcept>
#include <thread>
#include <vector>

#include "wpgsd/closed_testing.hpp"
#include "wpgsd/correlation.hpp"
#include "wpgsd/design.hpp"
#include "wpgsd/wpgsd.hpp"

namespace wpgsd {

/// Biomarker cells in the order {1+2-, 1-2+, 1+2+, 1-2-}.
inline constexpr std::size_t kCells = 4;

/// One operating-characteristics scenario for the three overlapping
/// populations (population 1, population 2, overall).
struct Scenario {
  std::array<double, kCells> hazard_ratio{1.0, 1.0, 1.0, 1.0};
  std::array<double, kCells> prevalence{0.2, 0.2, 0.5, 0.1};
  /// Exponential hazard in the control arm (per month).
  double control_hazard = std::log(2.0) / 12.0;
  /// Subjects enrolled uniformly over `enrollment_duration` months.
  std::size_t subjects = 650;
  double enrollment_duration = 24.0;
  /// Overall-population events that trigger each analysis.
  std::vector<std::size_t> analysis_events{225, 450};
  /// Logrank stratified by biomarker cell within each tested population.
  bool stratified = false;
  std::size_t replications = 10000;
  std::uint64_t seed = 20240101;
  unsigned threads = 0;
  /// Tolerances for the per-replication boundary solves.
  double mvn_tol = 1e-6;
};

struct RateEstimate {
  double rate = 0.0;
  double se = 0.0;
};

struct MethodRates {
  std::array<RateEstimate, 3> reject{};
  RateEstimate any;
};

struct SimResult {
  MethodRates bonferroni;
  MethodRates wpgsd;
  std::size_t replications = 0;
  /// Replications redrawn with a larger cohort to reach the event targets.
  std::size_t redrawn = 0;
};

/// Population membership of each cell: population 1, population 2, overall.
inline bool in_population(std::size_t cell, std::size_t pop) {
  switch (pop) {
    case 0: return cell == 0 || cell == 2;
    case 1: return cell == 1 || cell == 2;
    default: return true;
  }
}

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent generator for replication `rep`.
inline std::mt19937_64 replication_rng(std::uint64_t seed, std::uint64_t rep) {
  return std::mt19937_64(splitmix64(splitmix64(seed) ^ splitmix64(rep + 0x632be59bd9b4e019ULL)));
}

struct Subject {
  std::uint8_t cell;
  bool treated;
  double entry;
  double event_time;  // calendar time of the event
};

struct Observation {
  double time;
  bool event;
  bool treated;
  std::uint8_t cell;
};

inline void validate_scenario(const Scenario& s) {
  double total = 0.0;
  for (std::size_t c = 0; c < kCells; ++c) {
    if (!(s.prevalence[c] >= 0.0)) throw std::invalid_argument("prevalences must be nonnegative");
    if (!(s.hazard_ratio[c] > 0.0)) throw std::invalid_argument("hazard ratios must be positive");
    total += s.prevalence[c];
  }
  if (std::fabs(total - 1.0) > 1e-9) throw std::invalid_argument("prevalences must sum to 1");
  if (!(s.control_hazard > 0.0)) throw std::invalid_argument("control hazard must be positive");
  if (!(s.enrollment_duration >= 0.0)) throw std::invalid_argument("enrollment duration must be nonnegative");
  if (s.analysis_events.empty()) throw std::invalid_argument("need at least one analysis");
  for (std::size_t k = 0; k < s.analysis_events.size(); ++k) {
    if (s.analysis_events[k] == 0 || (k > 0 && s.analysis_events[k] <= s.analysis_events[k - 1])) {
      throw std::invalid_argument("analysis event targets must be positive and increasing");
    }
  }
  if (s.subjects == 0) throw std::invalid_argument("need at least one subject");
  if (s.replications == 0) throw std::invalid_argument("need at least one replication");
}

inline std::vector<Subject> draw_cohort(const Scenario& s, std::size_t n, std::mt19937_64& rng) {
  std::discrete_distribution<int> cell(s.prevalence.begin(), s.prevalence.end());
  std::bernoulli_distribution arm(0.5);
  std::uniform_real_distribution<double> entry(0.0, s.enrollment_duration);
  std::exponential_distribution<double> unit(1.0);
  std::vector<Subject> out(n);
  for (auto& x : out) {
    x.cell = static_cast<std::uint8_t>(cell(rng));
    x.treated = arm(rng);
    x.entry = entry(rng);
    const double hazard = s.control_hazard * (x.treated ? s.hazard_ratio[x.cell] : 1.0);
    x.event_time = x.entry + unit(rng) / hazard;
  }
  return out;
}

/// One-sided logrank Z (positive favours treatment) over the observations
/// whose cell is selected, optionally stratified by cell.
inline double logrank_z(const std::vector<Observation>& obs, const std::array<bool, kCells>& cells, bool stratified) {
  auto accumulate = [&](const std::array<bool, kCells>& use, double& o_minus_e, double& var) {
    std::size_t at_risk = 0, at_risk_t = 0;
    for (const auto& x : obs) {
      if (use[x.cell]) {
        ++at_risk;
        at_risk_t += x.treated;
      }
    }
    // obs is sorted by time; tied times are processed together.
    std::size_t p = 0;
    while (p < obs.size()) {
      std::size_t q = p;
      double d = 0, d_t = 0, leaving = 0, leaving_t = 0;
      while (q < obs.size() && obs[q].time == obs[p].time) {
        if (use[obs[q].cell]) {
          leaving += 1;
          leaving_t += obs[q].treated;
          if (obs[q].event) {
            d += 1;
            d_t += obs[q].treated;
          }
        }
        ++q;
      }
      if (d > 0 && at_risk > 1) {
        const double n = static_cast<double>(at_risk), n_t = static_cast<double>(at_risk_t);
        o_minus_e += d_t - d * n_t / n;
        var += d * (n_t / n) * (1.0 - n_t / n) * (n - d) / (n - 1.0);
      }
      at_risk -= static_cast<std::size_t>(leaving);
      at_risk_t -= static_cast<std::size_t>(leaving_t);
      p = q;
    }
  };
  double ome = 0.0, var = 0.0;
  if (stratified) {
    for (std::size_t c = 0; c < kCells; ++c) {
      if (!cells[c]) continue;
      std::array<bool, kCells> one{};
      one[c] = true;
      accumulate(one, ome, var);
    }
  } else {
    accumulate(cells, ome, var);
  }
  if (!(var > 0.0)) return 0.0;
  return -ome / std::sqrt(var);
}

struct Replication {
  std::array<bool, 3> bonferroni{};
  std::array<bool, 3> wpgsd{};
  bool redrawn = false;
};

/// Weighted Bonferroni bounds of a design, as a bound source for closed
/// testing.
struct BonferroniSource {
  BoundaryEngine* engine;
  double p_bound(Subset J, std::size_t k, std::size_t i) { return engine->bonferroni_bound(J, k, i); }
};

}  // namespace detail

/// Events of the three hypotheses at each cut, with their overlaps.
inline EventCountMatrix realized_events(const std::vector<std::array<double, kCells>>& cell_events) {
  const std::size_t K = cell_events.size();
  std::vector<std::vector<double>> marginal(3, std::vector<double>(K));
  std::vector<double> s12(K), s13(K), s23(K);
  for (std::size_t k = 0; k < K; ++k) {
    const auto& e = cell_events[k];
    marginal[0][k] = e[0] + e[2];
    marginal[1][k] = e[1] + e[2];
    marginal[2][k] = e[0] + e[1] + e[2] + e[3];
    s12[k] = e[2];
    s13[k] = marginal[0][k];
    s23[k] = marginal[1][k];
  }
  EventCountMatrix ev(marginal);
  ev.set_shared(0, 1, s12);
  ev.set_shared(0, 2, s13);
  ev.set_shared(1, 2, s23);
  return ev;
}

/// Simulates one trial and applies both procedures. `design` supplies the
/// weighting, alpha and spending plan; its event counts are replaced by the
/// realized ones.
inline detail::Replication simulate_replication(const Scenario& s, const DesignSpec& design, std::uint64_t rep) {
  auto rng = detail::replication_rng(s.seed, rep);
  const std::size_t K = s.analysis_events.size();
  detail::Replication out;

  std::size_t n = s.subjects;
  std::vector<detail::Subject> cohort;
  std::vector<double> times;
  while (true) {
    cohort = detail::draw_cohort(s, n, rng);
    if (cohort.size() >= s.analysis_events.back()) break;
    out.redrawn = true;
    n = std::max(n + 1, n * 3 / 2);
  }
  times.reserve(cohort.size());
  for (const auto& x : cohort) times.push_back(x.event_time);
  std::sort(times.begin(), times.end());

  TrialOutcome outcome(3, K);
  std::vector<std::array<double, kCells>> cell_events(K);
  std::vector<detail::Observation> obs;
  obs.reserve(cohort.size());
  for (std::size_t k = 0; k < K; ++k) {
    const double cut = times[s.analysis_events[k] - 1];
    obs.clear();
    cell_events[k].fill(0.0);
    for (const auto& x : cohort) {
      if (x.entry >= cut) continue;
      const bool event = x.event_time <= cut;
      obs.push_back({event ? x.event_time - x.entry : cut - x.entry, event, x.treated, x.cell});
      if (event) cell_events[k][x.cell] += 1;
    }
    std::sort(obs.begin(), obs.end(), [](const auto& a, const auto& b) { return a.time < b.time; });
    for (std::size_t pop = 0; pop < 3; ++pop) {
      std::array<bool, kCells> cells{};
      for (std::size_t c = 0; c < kCells; ++c) cells[c] = in_population(c, pop);
      outcome.set_z(pop, k, detail::logrank_z(obs, cells, s.stratified));
    }
  }

  DesignSpec d = design;
  d.analyses = K;
  d.events = realized_events(cell_events);
  SolverOptions opt;
  opt.threads = 1;
  opt.small_dim_tol = opt.large_dim_tol = s.mvn_tol;
  BoundaryEngine engine(d, design_correlation(d), std::nullopt, opt);

  detail::BonferroniSource bonf{&engine};
  const auto sb = run_trial(bonf, outcome, std::nullopt, false);
  const auto sw = run_trial(engine, outcome, std::nullopt, false);
  for (std::size_t i = 0; i < 3; ++i) {
    out.bonferroni[i] = sb.rejected().contains(i);
    out.wpgsd[i] = sw.rejected().contains(i);
  }
  return out;
}

/// Monte Carlo rejection rates of weighted Bonferroni and WPGSD closed
/// testing. Results depend only on the seed, not on the thread count.
inline SimResult simulate(const Scenario& s, const DesignSpec& design) {
  detail::validate_scenario(s);
  if (design.hypotheses() != 3) throw std::invalid_argument("simulation design must have three hypotheses");
  if (design.analyses != s.analysis_events.size()) {
    throw std::invalid_argument("design and scenario disagree on the number of analyses");
  }
  const std::size_t R = s.replications;
  std::vector<detail::Replication> reps(R);

  unsigned threads = s.threads ? s.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, R));
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t r = next++; r < R; r = next++) {
      try {
        reps[r] = simulate_replication(s, design, r);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next = R;
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (error) std::rethrow_exception(error);

  SimResult res;
  res.replications = R;
  auto estimate = [R](std::size_t hits) {
    const double p = static_cast<double>(hits) / static_cast<double>(R);
    return RateEstimate{p, std::sqrt(p * (1.0 - p) / static_cast<double>(R))};
  };
  auto tally = [&](auto pick) {
    std::array<std::size_t, 3> hits{};
    std::size_t any = 0;
    for (const auto& r : reps) {
      const auto& v = pick(r);
      for (std::size_t i = 0; i < 3; ++i) hits[i] += v[i];
      any += v[0] || v[1] || v[2];
    }
    MethodRates m;
    for (std::size_t i = 0; i < 3; ++i) m.reject[i] = estimate(hits[i]);
    m.any = estimate(any);
    return m;
  };
  res.bonferroni = tally([](const detail::Replication& r) -> const std::array<bool, 3>& { return r.bonferroni; });
  res.wpgsd = tally([](const detail::Replication& r) -> const std::array<bool, 3>& { return r.wpgsd; });
  for (const auto& r : reps) res.redrawn += r.redrawn;
  return res;
}

}  // namespace wpgsd
