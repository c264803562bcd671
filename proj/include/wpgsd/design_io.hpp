#pragma once

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <istream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "wpgsd/closed_testing.hpp"
#include "wpgsd/correlation.hpp"
#include "wpgsd/design.hpp"
#include "wpgsd/detail/rational.hpp"
#include "wpgsd/simulator.hpp"

namespace wpgsd {

using Json = nlohmann::json;

/// Input problem with a message class: "io", "schema" or "validation".
class InputError : public std::invalid_argument {
 public:
  InputError(std::string kind, const std::string& msg) : std::invalid_argument(msg), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

class ValidationError : public InputError {
 public:
  explicit ValidationError(std::vector<Violation> v)
      : InputError("validation", summary(v)), violations_(std::move(v)) {}
  const std::vector<Violation>& violations() const { return violations_; }

 private:
  static std::string summary(const std::vector<Violation>& v) {
    std::string s = "design has " + std::to_string(v.size()) + " violation(s)";
    for (const auto& x : v) s += "\n  " + x.code + ": " + x.message;
    return s;
  }
  std::vector<Violation> violations_;
};

namespace detail {

[[noreturn]] inline void schema_error(const std::string& msg) { throw InputError("schema", msg); }

inline void check_keys(const Json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) schema_error(where + " must be an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return it.key() == a; })) {
      schema_error("unknown key '" + it.key() + "' in " + where);
    }
  }
}

inline const Json& require(const Json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) schema_error("missing key '" + std::string(key) + "' in " + where);
  return obj.at(key);
}

inline double as_number(const Json& v, const std::string& where) {
  if (!v.is_number()) schema_error(where + " must be a number");
  return v.get<double>();
}

inline std::size_t as_count(const Json& v, const std::string& where) {
  if (!v.is_number_integer() || v.get<long long>() < 0) schema_error(where + " must be a nonnegative integer");
  return v.get<std::size_t>();
}

inline std::string as_string(const Json& v, const std::string& where) {
  if (!v.is_string()) schema_error(where + " must be a string");
  return v.get<std::string>();
}

/// Number or exact fraction string ("3/7").
inline Rational as_rational(const Json& v, const std::string& where) {
  try {
    if (v.is_number()) return rational_from_double(v.get<double>());
    if (v.is_string()) return parse_rational(v.get<std::string>());
  } catch (const std::invalid_argument& e) {
    schema_error(where + ": " + e.what());
  }
  schema_error(where + " must be a number or a fraction string");
}

inline std::vector<double> as_numbers(const Json& v, const std::string& where) {
  if (!v.is_array()) schema_error(where + " must be an array of numbers");
  std::vector<double> out;
  for (std::size_t q = 0; q < v.size(); ++q) out.push_back(as_number(v[q], where + "[" + std::to_string(q) + "]"));
  return out;
}

inline std::vector<std::vector<double>> as_matrix(const Json& v, const std::string& where) {
  if (!v.is_array()) schema_error(where + " must be an array of arrays");
  std::vector<std::vector<double>> out;
  for (std::size_t q = 0; q < v.size(); ++q) out.push_back(as_numbers(v[q], where + "[" + std::to_string(q) + "]"));
  return out;
}

/// 1-based index into `names`, given either as an integer or a name.
inline std::size_t as_index(const Json& v, const std::vector<std::string>& names, const std::string& where) {
  if (v.is_number_integer()) {
    const long long i = v.get<long long>();
    if (i < 1 || static_cast<std::size_t>(i) > names.size()) schema_error(where + " index out of range");
    return static_cast<std::size_t>(i - 1);
  }
  if (v.is_string()) {
    const auto it = std::find(names.begin(), names.end(), v.get<std::string>());
    if (it == names.end()) schema_error(where + " refers to unknown name '" + v.get<std::string>() + "'");
    return static_cast<std::size_t>(it - names.begin());
  }
  schema_error(where + " must be a 1-based index or a name");
}

inline SpendingFunction parse_spending_function(const Json& v, const std::string& where) {
  check_keys(v, {"family", "parameter", "levels"}, where);
  SpendingFunction f;
  try {
    f.family = parse_family(as_string(require(v, "family", where), where + ".family"));
  } catch (const InputError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    schema_error(where + ": " + e.what());
  }
  if (v.contains("parameter")) f.parameter = as_number(v["parameter"], where + ".parameter");
  if (v.contains("levels")) f.fixed_levels = as_numbers(v["levels"], where + ".levels");
  return f;
}

inline EventCountMatrix parse_marginal_events(const Json& ev, std::size_t m) {
  check_keys(ev, {"marginal", "overlap"}, "events");
  EventCountMatrix out(as_matrix(require(ev, "marginal", "events"), "events.marginal"));
  if (out.hypotheses() != m) schema_error("events.marginal needs one row per hypothesis");
  if (ev.contains("overlap")) {
    const auto& ov = ev["overlap"];
    if (!ov.is_array()) schema_error("events.overlap must be an array");
    for (std::size_t q = 0; q < ov.size(); ++q) {
      const std::string where = "events.overlap[" + std::to_string(q) + "]";
      check_keys(ov[q], {"pair", "counts"}, where);
      const auto& pair = require(ov[q], "pair", where);
      if (!pair.is_array() || pair.size() != 2) schema_error(where + ".pair must list two hypotheses");
      const auto i = as_count(pair[0], where + ".pair"), j = as_count(pair[1], where + ".pair");
      if (i < 1 || j < 1 || i > m || j > m || i == j) schema_error(where + ".pair must name two distinct hypotheses");
      out.set_shared(i - 1, j - 1, as_numbers(require(ov[q], "counts", where), where + ".counts"));
    }
  }
  return out;
}

/// Arm-by-population form: hypotheses test an experimental arm against
/// the shared control within a population.
inline EventCountMatrix parse_arm_events(const Json& ev, std::size_t m) {
  check_keys(ev, {"arms", "populations", "counts", "nested", "population_overlap", "map"}, "events");
  const auto& arms_j = require(ev, "arms", "events");
  const auto& pops_j = require(ev, "populations", "events");
  std::vector<std::string> arms, pops;
  if (!arms_j.is_array() || !pops_j.is_array()) schema_error("events.arms and events.populations must be arrays");
  for (const auto& a : arms_j) arms.push_back(as_string(a, "events.arms"));
  for (const auto& p : pops_j) pops.push_back(as_string(p, "events.populations"));

  ArmPopulationCounts ac;
  const auto& counts = require(ev, "counts", "events");
  if (!counts.is_array() || counts.size() != arms.size()) schema_error("events.counts needs one entry per arm");
  for (std::size_t a = 0; a < arms.size(); ++a) {
    auto rows = as_matrix(counts[a], "events.counts[" + std::to_string(a) + "]");
    if (rows.size() != pops.size()) schema_error("events.counts[" + std::to_string(a) + "] needs one row per population");
    ac.counts.push_back(std::move(rows));
  }
  const bool nested = ev.value("nested", false);
  if (ev.contains("nested") && !ev["nested"].is_boolean()) schema_error("events.nested must be a boolean");
  if (nested && ev.contains("population_overlap")) schema_error("use either events.nested or events.population_overlap");
  if (nested) {
    ac.set_nested();
  } else if (ev.contains("population_overlap")) {
    const auto& ov = ev["population_overlap"];
    if (!ov.is_array()) schema_error("events.population_overlap must be an array");
    const std::size_t K = ac.analyses();
    ac.overlap.assign(arms.size(), std::vector<std::vector<std::vector<double>>>(
                                       pops.size(), std::vector<std::vector<double>>(pops.size())));
    for (std::size_t a = 0; a < arms.size(); ++a)
      for (std::size_t j = 0; j < pops.size(); ++j) ac.overlap[a][j][j] = ac.counts[a][j];
    for (std::size_t q = 0; q < ov.size(); ++q) {
      const std::string where = "events.population_overlap[" + std::to_string(q) + "]";
      check_keys(ov[q], {"arm", "populations", "counts"}, where);
      const auto a = as_index(require(ov[q], "arm", where), arms, where + ".arm");
      const auto& pp = require(ov[q], "populations", where);
      if (!pp.is_array() || pp.size() != 2) schema_error(where + ".populations must list two populations");
      const auto j = as_index(pp[0], pops, where + ".populations"), j2 = as_index(pp[1], pops, where + ".populations");
      auto c = as_numbers(require(ov[q], "counts", where), where + ".counts");
      if (c.size() != K) schema_error(where + ".counts needs one entry per analysis");
      ac.overlap[a][j][j2] = c;
      ac.overlap[a][j2][j] = std::move(c);
    }
  }
  const auto& map = require(ev, "map", "events");
  if (!map.is_array() || map.size() != m) schema_error("events.map needs one entry per hypothesis");
  std::vector<ArmPopulation> hyps;
  for (std::size_t q = 0; q < m; ++q) {
    const std::string where = "events.map[" + std::to_string(q) + "]";
    check_keys(map[q], {"arm", "population"}, where);
    hyps.push_back({as_index(require(map[q], "arm", where), arms, where + ".arm"),
                    as_index(require(map[q], "population", where), pops, where + ".population")});
  }
  try {
    return events_from_arms(ac, hyps);
  } catch (const std::exception& e) {
    schema_error(std::string("events: ") + e.what());
  }
}

}  // namespace detail

/// Builds a design from its JSON document; schema problems throw
/// InputError("schema"). The result is not validated.
inline DesignSpec design_from_json(const Json& doc) {
  using namespace detail;
  check_keys(doc, {"alpha", "hypotheses", "analyses", "weights", "transition", "events", "spending", "partition"},
             "design");
  DesignSpec spec;
  spec.alpha = as_number(require(doc, "alpha", "design"), "alpha");
  const auto& names = require(doc, "hypotheses", "design");
  if (!names.is_array() || names.empty()) schema_error("hypotheses must be a nonempty array of names");
  for (const auto& n : names) spec.hypothesis_names.push_back(as_string(n, "hypotheses"));
  const std::size_t m = spec.hypotheses();
  if (m > kMaxHypotheses) schema_error("at most " + std::to_string(kMaxHypotheses) + " hypotheses are supported");
  spec.analyses = as_count(require(doc, "analyses", "design"), "analyses");

  const auto& w = require(doc, "weights", "design");
  if (!w.is_array()) schema_error("weights must be an array");
  for (std::size_t q = 0; q < w.size(); ++q) {
    spec.weighting.initial_weights.push_back(as_rational(w[q], "weights[" + std::to_string(q) + "]"));
  }
  const auto& g = require(doc, "transition", "design");
  if (g.is_string()) {
    if (g.get<std::string>() != "bonferroni-holm") schema_error("transition must be a matrix or \"bonferroni-holm\"");
    spec.weighting.scheme = WeightScheme::BonferroniHolm;
  } else {
    if (!g.is_array()) schema_error("transition must be a matrix or \"bonferroni-holm\"");
    for (std::size_t r = 0; r < g.size(); ++r) {
      if (!g[r].is_array()) schema_error("transition must be an array of rows");
      std::vector<Rational> row;
      for (std::size_t c = 0; c < g[r].size(); ++c) {
        row.push_back(as_rational(g[r][c], "transition[" + std::to_string(r) + "][" + std::to_string(c) + "]"));
      }
      spec.weighting.transition.push_back(std::move(row));
    }
  }

  const auto& ev = require(doc, "events", "design");
  if (!ev.is_object()) schema_error("events must be an object");
  spec.events = ev.contains("arms") ? parse_arm_events(ev, m) : parse_marginal_events(ev, m);

  const auto& sp = require(doc, "spending", "design");
  check_keys(sp, {"method", "levels", "family", "parameter", "per_hypothesis", "policy", "planned_final", "schedule"},
             "spending");
  auto& plan = spec.spending;
  try {
    plan.method = parse_method(as_string(require(sp, "method", "spending"), "spending.method"));
    if (sp.contains("policy")) plan.spending_time_policy = parse_policy(as_string(sp["policy"], "spending.policy"));
  } catch (const InputError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    schema_error(std::string("spending: ") + e.what());
  }
  if (sp.contains("levels")) plan.fho_levels = as_numbers(sp["levels"], "spending.levels");
  if (sp.contains("family")) {
    Json f = {{"family", sp["family"]}};
    if (sp.contains("parameter")) f["parameter"] = sp["parameter"];
    plan.family = parse_spending_function(f, "spending");
  } else if (sp.contains("parameter")) {
    schema_error("spending.parameter needs spending.family");
  }
  if (sp.contains("per_hypothesis")) {
    const auto& ph = sp["per_hypothesis"];
    if (!ph.is_array()) schema_error("spending.per_hypothesis must be an array");
    for (std::size_t q = 0; q < ph.size(); ++q) {
      plan.per_hypothesis_family.push_back(
          parse_spending_function(ph[q], "spending.per_hypothesis[" + std::to_string(q) + "]"));
    }
  }
  if (sp.contains("planned_final")) plan.planned_final_counts = as_numbers(sp["planned_final"], "spending.planned_final");
  if (sp.contains("schedule")) plan.schedule = as_numbers(sp["schedule"], "spending.schedule");

  if (doc.contains("partition")) {
    const auto& p = doc["partition"];
    if (!p.is_array()) schema_error("partition must be an array of blocks");
    std::vector<std::vector<std::size_t>> blocks;
    for (std::size_t b = 0; b < p.size(); ++b) {
      if (!p[b].is_array()) schema_error("partition blocks must be arrays of hypothesis indices");
      std::vector<std::size_t> block;
      for (const auto& i : p[b]) {
        const auto idx = as_count(i, "partition");
        if (idx < 1) schema_error("partition uses 1-based hypothesis indices");
        block.push_back(idx - 1);
      }
      blocks.push_back(std::move(block));
    }
    spec.correlation_partition = std::move(blocks);
  }
  return spec;
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("io", "cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw InputError("schema", "'" + path + "' is not valid JSON: " + e.what());
  }
}

/// Reads and validates a design file.
inline DesignSpec load_design(const std::string& path) {
  DesignSpec spec = design_from_json(read_json_file(path));
  auto v = validate(spec);
  if (!v.empty()) throw ValidationError(std::move(v));
  return spec;
}

/// Observed results as CSV with header `hypothesis,analysis,p` or
/// `hypothesis,analysis,z`. Hypotheses are names or 1-based indices;
/// "NA" marks a hypothesis without data at that analysis.
inline TrialOutcome read_observed_csv(std::istream& in, const DesignSpec& spec) {
  const std::size_t m = spec.hypotheses(), K = spec.analyses;
  TrialOutcome out(m, K);
  auto split = [](const std::string& line) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      const auto b = cell.find_first_not_of(" \t\r");
      const auto e = cell.find_last_not_of(" \t\r");
      f.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
    }
    return f;
  };
  std::string line;
  std::size_t line_no = 0;
  bool z_scale = false, have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    const auto f = split(line);
    const std::string where = "observed line " + std::to_string(line_no);
    if (!have_header) {
      if (f.size() != 3 || f[0] != "hypothesis" || f[1] != "analysis" || (f[2] != "p" && f[2] != "z")) {
        throw InputError("schema", "observed file needs the header 'hypothesis,analysis,p' or 'hypothesis,analysis,z'");
      }
      z_scale = f[2] == "z";
      have_header = true;
      continue;
    }
    if (f.size() != 3) throw InputError("schema", where + ": expected 3 fields");
    std::size_t i = m;
    const auto it = std::find(spec.hypothesis_names.begin(), spec.hypothesis_names.end(), f[0]);
    if (it != spec.hypothesis_names.end()) {
      i = static_cast<std::size_t>(it - spec.hypothesis_names.begin());
    } else {
      try {
        std::size_t used = 0;
        const long v = std::stol(f[0], &used);
        if (used == f[0].size() && v >= 1 && static_cast<std::size_t>(v) <= m) i = static_cast<std::size_t>(v - 1);
      } catch (const std::exception&) {
      }
    }
    if (i >= m) throw InputError("schema", where + ": unknown hypothesis '" + f[0] + "'");
    std::size_t k = K;
    try {
      std::size_t used = 0;
      const long v = std::stol(f[1], &used);
      if (used == f[1].size() && v >= 1 && static_cast<std::size_t>(v) <= K) k = static_cast<std::size_t>(v - 1);
    } catch (const std::exception&) {
    }
    if (k >= K) throw InputError("schema", where + ": analysis must be 1.." + std::to_string(K));
    if (out.has(i, k) || out.unavailable(i, k)) throw InputError("schema", where + ": duplicate observation");
    if (f[2] == "NA") {
      out.set_unavailable(i, k);
      continue;
    }
    double v = 0.0;
    try {
      std::size_t used = 0;
      v = std::stod(f[2], &used);
      if (used != f[2].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw InputError("schema", where + ": '" + f[2] + "' is not a number");
    }
    try {
      if (z_scale) {
        out.set_z(i, k, v);
      } else {
        out.set_p(i, k, v);
      }
    } catch (const std::domain_error& e) {
      throw InputError("validation", where + ": " + e.what());
    }
  }
  if (!have_header) throw InputError("schema", "observed file is empty");
  return out;
}

inline TrialOutcome load_observed(const std::string& path, const DesignSpec& spec) {
  std::ifstream in(path);
  if (!in) throw InputError("io", "cannot open '" + path + "'");
  return read_observed_csv(in, spec);
}

/// Observed event counts file: {"marginal": ..., "overlap": ...} in the
/// same form as the design's events block.
inline EventCountMatrix load_observed_events(const std::string& path, const DesignSpec& spec) {
  const Json doc = read_json_file(path);
  if (doc.is_object() && doc.contains("arms")) return detail::parse_arm_events(doc, spec.hypotheses());
  return detail::parse_marginal_events(doc, spec.hypotheses());
}

inline Scenario scenario_from_json(const Json& doc) {
  using namespace detail;
  check_keys(doc,
             {"hazard_ratio", "prevalence", "control_hazard", "subjects", "enrollment_duration", "analysis_events",
              "stratified", "replications", "seed", "mvn_tol"},
             "scenario");
  Scenario s;
  auto four = [&](const char* key, std::array<double, kCells>& dst) {
    if (!doc.contains(key)) return;
    const auto v = as_numbers(doc[key], key);
    if (v.size() != kCells) schema_error(std::string(key) + " needs 4 entries (cells 1+2-, 1-2+, 1+2+, 1-2-)");
    std::copy(v.begin(), v.end(), dst.begin());
  };
  four("hazard_ratio", s.hazard_ratio);
  four("prevalence", s.prevalence);
  if (doc.contains("control_hazard")) s.control_hazard = as_number(doc["control_hazard"], "control_hazard");
  if (doc.contains("subjects")) s.subjects = as_count(doc["subjects"], "subjects");
  if (doc.contains("enrollment_duration")) {
    s.enrollment_duration = as_number(doc["enrollment_duration"], "enrollment_duration");
  }
  if (doc.contains("analysis_events")) {
    s.analysis_events.clear();
    const auto& a = doc["analysis_events"];
    if (!a.is_array()) schema_error("analysis_events must be an array");
    for (const auto& x : a) s.analysis_events.push_back(as_count(x, "analysis_events"));
  }
  if (doc.contains("stratified")) {
    if (!doc["stratified"].is_boolean()) schema_error("stratified must be a boolean");
    s.stratified = doc["stratified"].get<bool>();
  }
  if (doc.contains("replications")) s.replications = as_count(doc["replications"], "replications");
  if (doc.contains("seed")) s.seed = static_cast<std::uint64_t>(as_count(doc["seed"], "seed"));
  if (doc.contains("mvn_tol")) s.mvn_tol = as_number(doc["mvn_tol"], "mvn_tol");
  try {
    detail::validate_scenario(s);
  } catch (const std::invalid_argument& e) {
    throw InputError("validation", std::string("scenario: ") + e.what());
  }
  return s;
}

}  // namespace wpgsd
