// Command-line front end: corr, bounds, consonance, test, simulate, mvn.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "wpgsd/closed_testing.hpp"
#include "wpgsd/correlation.hpp"
#include "wpgsd/design_io.hpp"
#include "wpgsd/format.hpp"
#include "wpgsd/mvn.hpp"
#include "wpgsd/simulator.hpp"
#include "wpgsd/wpgsd.hpp"

namespace {

using namespace wpgsd;
namespace fmt = wpgsd::format;

enum Exit { kOk = 0, kInputError = 1, kNumericalError = 2, kNotConsonant = 3 };

struct Common {
  std::string design;
  std::string observed_events;
  std::string format = "csv";
  int precision = 4;
  unsigned threads = 0;
};

unsigned default_threads() {
  if (const char* env = std::getenv("WPGSD_THREADS")) {
    try {
      return static_cast<unsigned>(std::stoul(env));
    } catch (const std::exception&) {
      throw InputError("usage", "WPGSD_THREADS must be a nonnegative integer");
    }
  }
  return 0;
}

void add_common(CLI::App* cmd, Common& c, bool needs_design = true) {
  if (needs_design) {
    cmd->add_option("--design", c.design, "Design file (JSON)")->required();
    cmd->add_option("--observed-events", c.observed_events, "Observed event counts (JSON, same form as design events)");
  }
  cmd->add_option("--format", c.format, "Output format: csv, json or markdown");
  cmd->add_option("--precision", c.precision, "Decimal places (1-12)");
  cmd->add_option("--threads", c.threads, "Worker threads (0 = hardware concurrency)");
}

fmt::OutputFormat output_format(const Common& c) {
  if (c.precision < fmt::kMinPrecision || c.precision > fmt::kMaxPrecision) {
    throw InputError("usage", "--precision must lie in [1, 12]");
  }
  try {
    return fmt::parse_format(c.format);
  } catch (const std::invalid_argument& e) {
    throw InputError("usage", e.what());
  }
}

struct Loaded {
  DesignSpec spec;
  std::optional<EventCountMatrix> observed;
};

Loaded load(const Common& c) {
  Loaded l{load_design(c.design), std::nullopt};
  if (!c.observed_events.empty()) {
    l.observed = load_observed_events(c.observed_events, l.spec);
    DesignSpec check = l.spec;
    check.events = *l.observed;
    auto v = validate(check);
    if (!v.empty()) throw ValidationError(std::move(v));
  }
  return l;
}

BoundaryTable compute_table(const Loaded& l, unsigned threads) {
  SolverOptions opt;
  opt.threads = threads;
  return full_table(l.spec, l.observed, opt);
}

/// Upper limits on the first line, then the correlation matrix row by row.
MvnProblem read_mvn_problem(std::istream& in) {
  std::string line;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::vector<double> row;
    std::string tok;
    while (ls >> tok) {
      if (tok == "inf" || tok == "Inf") {
        row.push_back(kInf);
      } else {
        try {
          row.push_back(std::stod(tok));
        } catch (const std::exception&) {
          throw InputError("schema", "mvn input: '" + tok + "' is not a number");
        }
      }
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  if (rows.empty()) throw InputError("schema", "mvn input is empty");
  MvnProblem p;
  p.upper = rows[0];
  const std::size_t d = p.upper.size();
  if (rows.size() != d + 1) throw InputError("schema", "mvn input needs a " + std::to_string(d) + "x" + std::to_string(d) + " correlation matrix");
  p.correlation.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (std::size_t r = 0; r < d; ++r) {
    if (rows[r + 1].size() != d) throw InputError("schema", "mvn correlation rows must have " + std::to_string(d) + " entries");
    for (std::size_t c = 0; c < d; ++c) p.correlation(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r + 1][c];
  }
  return p;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weighted parametric group sequential design boundaries and closed testing"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  Common common;
  bool z_scale = false;
  std::string observed_path, bounds_path, scenario_path;
  std::optional<std::size_t> reps;
  std::optional<std::uint64_t> seed;
  bool stratified = false;
  double abs_tol = 1e-6;
  std::uint64_t mvn_seed = kDefaultMvnSeed;

  auto* corr = app.add_subcommand("corr", "Correlation matrix of all test statistics");
  add_common(corr, common);
  auto* bounds = app.add_subcommand("bounds", "Boundary table for every intersection hypothesis");
  add_common(bounds, common);
  bounds->add_flag("--z", z_scale, "Report Z-statistic bounds instead of nominal p-values (csv/markdown)");
  auto* cons = app.add_subcommand("consonance", "List consonance violations; exit 0 iff consonant");
  add_common(cons, common);
  auto* test = app.add_subcommand("test", "Closed testing of observed results");
  add_common(test, common);
  test->add_option("--observed", observed_path, "Observed results CSV (hypothesis,analysis,p|z)")->required();
  test->add_option("--bounds", bounds_path, "Precomputed bounds table (JSON from `bounds --format json`)");
  auto* sim = app.add_subcommand("simulate", "Monte Carlo rejection rates, Bonferroni vs WPGSD");
  add_common(sim, common);
  sim->add_option("--scenario", scenario_path, "Scenario file (JSON)")->required();
  sim->add_option("--reps", reps, "Replications (overrides the scenario)");
  sim->add_option("--seed", seed, "Random seed (overrides the scenario; default 20240101)");
  sim->add_flag("--stratified", stratified, "Stratify logrank tests by biomarker cell");
  auto* mvn = app.add_subcommand("mvn", "MVN rectangle probability from stdin");
  mvn->group("");  // debugging aid, kept out of the help listing
  add_common(mvn, common, false);
  mvn->add_option("--abs-tol", abs_tol, "Absolute error target");
  mvn->add_option("--seed", mvn_seed, "Lattice shift seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error[usage]: " << e.what() << "\n";
    return kInputError;
  }

  try {
    if (common.threads == 0) common.threads = default_threads();
    const auto f = output_format(common);

    if (*corr) {
      const auto l = load(common);
      const auto R = design_correlation(l.spec, l.observed ? &*l.observed : nullptr);
      std::cout << fmt::render_correlation(R, l.spec.hypothesis_names, l.spec.analyses, f, common.precision);
      return kOk;
    }
    if (*bounds) {
      const auto l = load(common);
      std::cout << fmt::render_bounds(compute_table(l, common.threads), f, common.precision, z_scale);
      return kOk;
    }
    if (*cons) {
      const auto l = load(common);
      const auto table = compute_table(l, common.threads);
      const auto v = check_consonance(table);
      std::cout << fmt::render_consonance(v, table.names, f, common.precision);
      return v.empty() ? kOk : kNotConsonant;
    }
    if (*test) {
      const auto l = load(common);
      BoundaryTable table;
      if (!bounds_path.empty()) {
        try {
          table = fmt::table_from_json(read_json_file(bounds_path));
        } catch (const InputError&) {
          throw;
        } catch (const std::invalid_argument& e) {
          throw InputError("schema", e.what());
        }
        if (table.names != l.spec.hypothesis_names || table.K != l.spec.analyses) {
          throw InputError("validation", "bounds table does not match the design");
        }
      } else {
        table = compute_table(l, common.threads);
      }
      const auto outcome = load_observed(observed_path, l.spec);
      RejectionState st(l.spec.hypotheses());
      for (std::size_t k = 0; k < outcome.analyses(); ++k) {
        bool any = false;
        for (std::size_t i = 0; i < outcome.hypotheses(); ++i) any = any || outcome.has(i, k) || outcome.unavailable(i, k);
        if (!any) break;  // analyses not yet performed
        st = run_analysis(table, outcome, k, st);
      }
      std::cout << fmt::render_test(st, l.spec.hypothesis_names, f, shortcut_available(table));
      return kOk;
    }
    if (*sim) {
      const auto spec = load_design(common.design);
      auto scenario = scenario_from_json(read_json_file(scenario_path));
      if (reps) scenario.replications = *reps;
      if (seed) scenario.seed = *seed;
      if (stratified) scenario.stratified = true;
      scenario.threads = common.threads;
      const auto res = simulate(scenario, spec);
      std::cout << fmt::render_simulation(res, spec.hypothesis_names, f, common.precision);
      return kOk;
    }
    if (*mvn) {
      auto p = read_mvn_problem(std::cin);
      p.abs_tol = abs_tol;
      p.seed = mvn_seed;
      std::cout << fmt::render_mvn(mvn_cdf(p), f, common.precision);
      return kOk;
    }
  } catch (const ValidationError& e) {
    std::cerr << "error[validation]: " << e.what() << "\n";
    return kInputError;
  } catch (const InputError& e) {
    std::cerr << "error[" << e.kind() << "]: " << e.what() << "\n";
    return kInputError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error[validation]: " << e.what() << "\n";
    return kInputError;
  } catch (const std::exception& e) {
    std::cerr << "error[numerical]: " << e.what() << "\n";
    return kNumericalError;
  }
  return kInputError;
}
