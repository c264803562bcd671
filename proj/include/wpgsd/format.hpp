#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "wpgsd/closed_testing.hpp"
#include "wpgsd/correlation.hpp"
#include "wpgsd/mvn.hpp"
#include "wpgsd/simulator.hpp"
#include "wpgsd/wpgsd.hpp"

namespace wpgsd::format {

using Json = nlohmann::json;

enum class OutputFormat { csv, json, markdown };

inline OutputFormat parse_format(const std::string& s) {
  if (s == "csv") return OutputFormat::csv;
  if (s == "json") return OutputFormat::json;
  if (s == "markdown" || s == "md") return OutputFormat::markdown;
  throw std::invalid_argument("unknown output format '" + s + "'");
}

inline constexpr int kMinPrecision = 1;
inline constexpr int kMaxPrecision = 12;

/// Fixed-point text with `precision` decimals. glibc prints the exact
/// binary value and breaks exact ties to even, so this is round-half-even.
inline std::string fixed(double x, int precision) {
  if (precision < kMinPrecision || precision > kMaxPrecision) throw std::invalid_argument("precision must lie in [1, 12]");
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[512];
  std::snprintf(buf, sizeof buf, "%.*f", precision, x);
  std::string s(buf);
  if (s[0] == '-' && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
  return s;
}

/// Shortest decimal that reads back as the same double.
inline std::string exact(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

inline double parse_exact(const std::string& s) {
  if (s == "inf") return kInf;
  if (s == "-inf") return -kInf;
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) throw std::invalid_argument("bad number '" + s + "'");
  return v;
}

/// 64-bit FNV-1a of `s` as 16 hex digits.
inline std::string content_hash(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace detail {

/// Number as a JSON value rounded to `precision` decimals.
inline Json rounded(double x, int precision) {
  if (!std::isfinite(x)) return nullptr;
  return Json::parse(fixed(x, precision));
}

inline std::string markdown_row(const std::vector<std::string>& cells) {
  std::string s = "|";
  for (const auto& c : cells) s += " " + c + " |";
  return s + "\n";
}

inline std::string markdown_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::string s = markdown_row(header);
  s += "|";
  for (std::size_t c = 0; c < header.size(); ++c) s += c < 2 ? " --- |" : " ---: |";
  s += "\n";
  for (const auto& r : rows) s += markdown_row(r);
  return s;
}

inline std::string csv_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  auto line = [](const std::vector<std::string>& cells) {
    std::string s;
    for (std::size_t c = 0; c < cells.size(); ++c) s += (c ? "," : "") + cells[c];
    return s + "\n";
  };
  std::string s = line(header);
  for (const auto& r : rows) s += line(r);
  return s;
}

inline std::string tabular(OutputFormat f, const std::vector<std::string>& header,
                           const std::vector<std::vector<std::string>>& rows) {
  return f == OutputFormat::markdown ? markdown_table(header, rows) : csv_table(header, rows);
}

/// Prepends the content hash: a comment line for text formats, a key for
/// JSON.
inline std::string hashed_text(const std::string& body) {
  return "# content-hash: " + content_hash(body) + "\n" + body;
}

inline std::string hashed_json(Json doc) {
  const std::string body = doc.dump(2);
  doc["content_hash"] = content_hash(body);
  return doc.dump(2) + "\n";
}

}  // namespace detail

/// Name-based label of J, members joined by `sep`.
inline std::string set_label(Subset J, const std::vector<std::string>& names, const std::string& sep = "&") {
  std::string s;
  for (auto i : J.members()) s += (s.empty() ? "" : sep) + names.at(i);
  return s;
}

inline std::vector<std::string> member_names(Subset J, const std::vector<std::string>& names) {
  std::vector<std::string> out;
  for (auto i : J.members()) out.push_back(names.at(i));
  return out;
}

inline std::string render_correlation(const CorrelationMatrix& R, const std::vector<std::string>& names, std::size_t K,
                                      OutputFormat f, int precision) {
  const std::size_t m = names.size();
  std::vector<std::string> labels;
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t i = 0; i < m; ++i) labels.push_back(names[i] + ":A" + std::to_string(k + 1));
  if (f == OutputFormat::json) {
    Json doc;
    doc["labels"] = labels;
    Json rows = Json::array();
    for (Eigen::Index r = 0; r < R.rows(); ++r) {
      Json row = Json::array();
      for (Eigen::Index c = 0; c < R.cols(); ++c) row.push_back(detail::rounded(R(r, c), precision));
      rows.push_back(row);
    }
    doc["correlation"] = rows;
    return detail::hashed_json(doc);
  }
  std::vector<std::string> header{""};
  header.insert(header.end(), labels.begin(), labels.end());
  std::vector<std::vector<std::string>> rows;
  for (Eigen::Index r = 0; r < R.rows(); ++r) {
    std::vector<std::string> row{labels[static_cast<std::size_t>(r)]};
    for (Eigen::Index c = 0; c < R.cols(); ++c) row.push_back(fixed(R(r, c), precision));
    rows.push_back(std::move(row));
  }
  return detail::hashed_text(detail::tabular(f, header, rows));
}

/// Boundary table in the layout of the paper's tables: one row per
/// intersection hypothesis and analysis, Bonferroni and WPGSD nominal
/// p-value bounds per member, then the inflation factor.
inline std::string render_bounds(const BoundaryTable& t, OutputFormat f, int precision, bool z_scale = false) {
  const auto& names = t.names;
  if (f == OutputFormat::json) {
    Json doc;
    doc["hypotheses"] = names;
    doc["analyses"] = t.K;
    doc["method"] = method_name(t.method);
    Json entries = Json::array();
    for (const auto& e : t.entries) {
      Json je;
      je["set"] = member_names(e.J, names);
      je["analysis"] = e.k + 1;
      je["testable"] = e.testable;
      je["alpha_cumulative"] = detail::rounded(e.alpha_cumulative, precision);
      je["xi"] = detail::rounded(e.xi, precision);
      if (!std::isnan(e.alpha_star)) je["alpha_star"] = detail::rounded(e.alpha_star, precision);
      Json members = Json::array();
      for (auto i : e.J.members()) {
        Json jm;
        jm["hypothesis"] = names[i];
        jm["weight"] = detail::rounded(e.weight[i], precision);
        jm["p_bound"] = detail::rounded(e.p_bound[i], precision);
        jm["z_bound"] = detail::rounded(e.z_bound[i], precision);
        jm["bonferroni_p"] = detail::rounded(e.bonferroni_p[i], precision);
        jm["bonferroni_z"] = detail::rounded(e.bonferroni_z[i], precision);
        // Unrounded bound as text so that re-ingested tables decide exactly
        // like the in-process table.
        jm["p_bound_exact"] = exact(e.p_bound[i]);
        members.push_back(jm);
      }
      je["members"] = members;
      entries.push_back(je);
    }
    doc["entries"] = entries;
    return detail::hashed_json(doc);
  }
  const bool md = f == OutputFormat::markdown;
  std::vector<std::string> header{md ? "Hypothesis set" : "set", md ? "Analysis" : "analysis"};
  const std::string scale = z_scale ? "z" : "p";
  for (const auto& n : names) header.push_back(md ? "Bonferroni " + n : "bonferroni_" + scale + "_" + n);
  for (const auto& n : names) header.push_back(md ? "WPGSD " + n : "wpgsd_" + scale + "_" + n);
  header.push_back("xi");
  std::vector<std::vector<std::string>> rows;
  for (const auto& e : t.entries) {
    std::vector<std::string> row{set_label(e.J, names, md ? " ∩ " : "&"), std::to_string(e.k + 1)};
    for (std::size_t i = 0; i < t.m; ++i) {
      row.push_back(e.J.contains(i) ? fixed(z_scale ? e.bonferroni_z[i] : e.bonferroni_p[i], precision) : "");
    }
    for (std::size_t i = 0; i < t.m; ++i) {
      row.push_back(e.J.contains(i) ? fixed(z_scale ? e.z_bound[i] : e.p_bound[i], precision) : "");
    }
    row.push_back(fixed(e.xi, precision));
    rows.push_back(std::move(row));
  }
  return detail::hashed_text(detail::tabular(f, header, rows));
}

/// Reads a table written by render_bounds in JSON form.
inline BoundaryTable table_from_json(const Json& doc) {
  try {
    BoundaryTable t;
    t.names = doc.at("hypotheses").get<std::vector<std::string>>();
    t.m = t.names.size();
    t.K = doc.at("analyses").get<std::size_t>();
    t.method = parse_method(doc.at("method").get<std::string>());
    auto index_of = [&](const std::string& n) {
      for (std::size_t i = 0; i < t.m; ++i)
        if (t.names[i] == n) return i;
      throw std::invalid_argument("unknown hypothesis '" + n + "' in bounds table");
    };
    for (const auto& je : doc.at("entries")) {
      BoundaryEntry e;
      std::vector<std::size_t> members;
      for (const auto& n : je.at("set")) members.push_back(index_of(n.get<std::string>()));
      e.J = Subset::of(members);
      e.k = je.at("analysis").get<std::size_t>() - 1;
      if (e.k >= t.K) throw std::invalid_argument("analysis out of range in bounds table");
      e.testable = je.at("testable").get<bool>();
      e.weight.assign(t.m, 0.0);
      e.p_bound.assign(t.m, 0.0);
      e.z_bound.assign(t.m, kInf);
      e.bonferroni_p.assign(t.m, 0.0);
      e.bonferroni_z.assign(t.m, kInf);
      auto num = [](const Json& v) { return v.is_null() ? kInf : v.get<double>(); };
      if (je.contains("alpha_cumulative")) e.alpha_cumulative = num(je["alpha_cumulative"]);
      if (je.contains("xi")) e.xi = num(je["xi"]);
      for (const auto& jm : je.at("members")) {
        const auto i = index_of(jm.at("hypothesis").get<std::string>());
        e.weight[i] = num(jm.at("weight"));
        e.p_bound[i] = jm.contains("p_bound_exact") ? parse_exact(jm["p_bound_exact"].get<std::string>())
                                                     : num(jm.at("p_bound"));
        e.z_bound[i] = e.p_bound[i] > 0.0 ? z_from_p(e.p_bound[i]) : kInf;
        if (jm.contains("bonferroni_p")) e.bonferroni_p[i] = num(jm["bonferroni_p"]);
        if (jm.contains("bonferroni_z")) e.bonferroni_z[i] = num(jm["bonferroni_z"]);
      }
      t.entries.push_back(std::move(e));
    }
    t.rebuild_index();
    for (auto J : closed_family(t.m))
      for (std::size_t k = 0; k < t.K; ++k)
        if (!t.find(J, k)) throw std::invalid_argument("bounds table misses " + set_label(J, t.names) + " at analysis " + std::to_string(k + 1));
    return t;
  } catch (const Json::exception& e) {
    throw std::invalid_argument(std::string("malformed bounds table: ") + e.what());
  }
}

inline std::string render_consonance(const std::vector<ConsonanceViolation>& v, const std::vector<std::string>& names,
                                     OutputFormat f, int precision) {
  if (f == OutputFormat::json) {
    Json doc;
    doc["consonant"] = v.empty();
    Json list = Json::array();
    for (const auto& x : v) {
      list.push_back({{"set", member_names(x.J, names)},
                      {"subset", member_names(x.J_sub, names)},
                      {"hypothesis", names.at(x.i)},
                      {"analysis", x.k + 1},
                      {"p_bound_set", detail::rounded(x.p_J, precision)},
                      {"p_bound_subset", detail::rounded(x.p_sub, precision)}});
    }
    doc["violations"] = list;
    return detail::hashed_json(doc);
  }
  const bool md = f == OutputFormat::markdown;
  std::vector<std::vector<std::string>> rows;
  for (const auto& x : v) {
    rows.push_back({set_label(x.J, names, md ? " ∩ " : "&"), set_label(x.J_sub, names, md ? " ∩ " : "&"), names.at(x.i),
                    std::to_string(x.k + 1), fixed(x.p_J, precision), fixed(x.p_sub, precision)});
  }
  return detail::hashed_text(
      detail::tabular(f, {"set", "subset", "hypothesis", "analysis", "p_bound_set", "p_bound_subset"}, rows));
}

/// Per-analysis closed-testing report.
inline std::string render_test(const RejectionState& st, const std::vector<std::string>& names, OutputFormat f,
                               bool shortcut_valid) {
  if (f == OutputFormat::json) {
    Json doc;
    doc["consonant"] = shortcut_valid;
    Json analyses = Json::array();
    for (const auto& r : st.history()) {
      Json ja;
      ja["analysis"] = r.k + 1;
      ja["rejected"] = member_names(r.newly_rejected, names);
      ja["unavailable"] = member_names(r.unavailable, names);
      Json blocking = Json::array();
      for (const auto& [i, sets] : r.blocking) {
        Json sj = Json::array();
        for (auto J : sets) sj.push_back(member_names(J, names));
        blocking.push_back({{"hypothesis", names.at(i)}, {"unrejected_sets", sj}});
      }
      ja["blocking"] = blocking;
      analyses.push_back(ja);
    }
    doc["analyses"] = analyses;
    doc["rejected"] = member_names(st.rejected(), names);
    return detail::hashed_json(doc);
  }
  const bool md = f == OutputFormat::markdown;
  const std::string sep = md ? " ∩ " : "&";
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : st.history()) {
    for (std::size_t i = 0; i < names.size(); ++i) {
      std::string decision, note;
      const int at = st.elementary_rejected_at(i);
      if (at >= 0 && static_cast<std::size_t>(at) < r.k) {
        continue;
      } else if (r.newly_rejected.contains(i)) {
        decision = "rejected";
      } else {
        decision = "not rejected";
        for (const auto& [h, sets] : r.blocking) {
          if (h != i) continue;
          for (auto J : sets) note += (note.empty() ? "" : " ") + set_label(J, names, md ? sep : "&");
        }
      }
      if (r.unavailable.contains(i)) note = "no data" + (note.empty() ? "" : "; " + note);
      rows.push_back({names[i], std::to_string(r.k + 1), decision, note});
    }
  }
  return detail::hashed_text(detail::tabular(f, {"hypothesis", "analysis", "decision", "unrejected_sets"}, rows));
}

inline std::string render_simulation(const SimResult& r, const std::vector<std::string>& names, OutputFormat f,
                                     int precision) {
  auto method_json = [&](const MethodRates& m) {
    Json j;
    for (std::size_t i = 0; i < 3; ++i) {
      j["reject_" + names.at(i)] = {{"rate", detail::rounded(m.reject[i].rate, precision)},
                                    {"se", detail::rounded(m.reject[i].se, precision)}};
    }
    j["reject_any"] = {{"rate", detail::rounded(m.any.rate, precision)}, {"se", detail::rounded(m.any.se, precision)}};
    return j;
  };
  if (f == OutputFormat::json) {
    Json doc;
    doc["replications"] = r.replications;
    doc["redrawn"] = r.redrawn;
    doc["bonferroni"] = method_json(r.bonferroni);
    doc["wpgsd"] = method_json(r.wpgsd);
    return detail::hashed_json(doc);
  }
  std::vector<std::string> header{"method"};
  for (std::size_t i = 0; i < 3; ++i) {
    header.push_back("rej_" + names.at(i));
    header.push_back("se_" + names.at(i));
  }
  header.push_back("rej_any");
  header.push_back("se_any");
  auto row = [&](const std::string& label, const MethodRates& m) {
    std::vector<std::string> out{label};
    for (std::size_t i = 0; i < 3; ++i) {
      out.push_back(fixed(m.reject[i].rate, precision));
      out.push_back(fixed(m.reject[i].se, precision));
    }
    out.push_back(fixed(m.any.rate, precision));
    out.push_back(fixed(m.any.se, precision));
    return out;
  };
  return detail::hashed_text(detail::tabular(f, header, {row("Bonferroni", r.bonferroni), row("WPGSD", r.wpgsd)}));
}

inline std::string render_mvn(const MvnResult& r, OutputFormat f, int precision) {
  if (f == OutputFormat::json) {
    Json doc{{"probability", detail::rounded(r.probability, precision)},
             {"complement", detail::rounded(r.complement, precision)},
             {"error", exact(r.error)},
             {"converged", r.converged},
             {"evaluations", r.evaluations}};
    return detail::hashed_json(doc);
  }
  return detail::hashed_text(
      detail::tabular(f, {"probability", "complement", "error", "converged", "evaluations"},
                         {{fixed(r.probability, precision), fixed(r.complement, precision), exact(r.error),
                           r.converged ? "true" : "false", std::to_string(r.evaluations)}}));
}

}  // namespace wpgsd::format
