#pragma once

#include <cmath>
#include <cstdio>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "esdid/estimate.hpp"
#include "esdid/extensions.hpp"

namespace esdid {

inline constexpr int kSchemaVersion = 1;

namespace detail {

inline std::string num(double v) {
  if (!std::isfinite(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.15g", v);
  return buf;
}

inline std::string num(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

inline nlohmann::json jnum(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }
inline nlohmann::json jnum(const std::optional<double>& v) { return v ? jnum(*v) : nlohmann::json(nullptr); }

inline const char* kind_name(EstimateKind k) {
  switch (k) {
    case EstimateKind::effect: return "effect";
    case EstimateKind::placebo: return "placebo";
    case EstimateKind::average: return "average";
  }
  return "";
}

inline std::string row_label(const EffectEstimate& e) {
  if (e.kind == EstimateKind::average) return "average";
  return std::string(kind_name(e.kind)) + "_" + std::to_string(e.horizon);
}

inline std::vector<const EffectEstimate*> table_rows(const Results& r) {
  std::vector<const EffectEstimate*> rows;
  for (const auto& e : r.reported_effects()) rows.push_back(&e);
  if (r.average) rows.push_back(&*r.average);
  for (const auto& e : r.placebos) rows.push_back(&e);
  return rows;
}

inline double se_or_nan(const EffectEstimate& e) { return e.point ? e.se() : std::numeric_limits<double>::quiet_NaN(); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Results table.

inline std::string results_csv(const Results& r) {
  std::ostringstream os;
  os << "# schema_version=" << kSchemaVersion << '\n';
  os << "estimate,horizon,point,se,ci_low,ci_high,N,switchers,bootstrap_se\n";
  for (const auto* e : detail::table_rows(r)) {
    os << detail::row_label(*e) << ',' << e->horizon << ',' << detail::num(e->point) << ','
       << detail::num(detail::se_or_nan(*e)) << ',' << detail::num(e->point ? e->ci_low : NAN) << ','
       << detail::num(e->point ? e->ci_high : NAN) << ',' << detail::num(e->N) << ',' << e->switchers << ','
       << detail::num(e->bootstrap_se) << '\n';
  }
  return os.str();
}

inline std::string tests_csv(const Results& r) {
  std::ostringstream os;
  os << "# schema_version=" << kSchemaVersion << '\n';
  os << "test,statistic,df,p_value\n";
  auto row = [&](const char* name, const std::optional<WaldResult>& w) {
    if (w) os << name << ',' << detail::num(w->statistic) << ',' << w->df << ',' << detail::num(w->p_value) << '\n';
  };
  row("placebos_jointly_zero", r.placebo_joint);
  row("effects_equal", r.effects_equal);
  return os.str();
}

inline nlohmann::json estimate_json(const EffectEstimate& e) {
  return {{"estimate", detail::row_label(e)},
          {"horizon", e.horizon},
          {"point", detail::jnum(e.point)},
          {"se", detail::jnum(detail::se_or_nan(e))},
          {"ci_low", detail::jnum(e.point ? e.ci_low : NAN)},
          {"ci_high", detail::jnum(e.point ? e.ci_high : NAN)},
          {"N", e.N},
          {"switchers", e.switchers},
          {"bootstrap_se", detail::jnum(e.bootstrap_se)}};
}

inline nlohmann::json results_json(const Results& r) {
  nlohmann::json j;
  j["schema_version"] = kSchemaVersion;
  j["groups"] = r.G;
  j["normalized"] = r.normalized_reported;
  j["analytic_se_advisory"] = r.analytic_se_advisory;
  for (const char* key : {"effects", "placebos"}) j[key] = nlohmann::json::array();
  for (const auto& e : r.reported_effects()) j["effects"].push_back(estimate_json(e));
  for (const auto& e : r.placebos) j["placebos"].push_back(estimate_json(e));
  j["average"] = r.average ? estimate_json(*r.average) : nlohmann::json(nullptr);
  j["dose_abs"] = nlohmann::json::array();
  for (const auto& d : r.dose_abs) j["dose_abs"].push_back(detail::jnum(d));
  auto test = [](const std::optional<WaldResult>& w) -> nlohmann::json {
    if (!w) return nullptr;
    return {{"statistic", detail::jnum(w->statistic)}, {"df", w->df}, {"p_value", detail::jnum(w->p_value)}};
  };
  j["tests"] = {{"placebos_jointly_zero", test(r.placebo_joint)}, {"effects_equal", test(r.effects_equal)}};
  j["warnings"] = r.warnings;
  nlohmann::json fits = nlohmann::json::array();
  for (const auto& f : r.fits) {
    nlohmann::json th = nlohmann::json::object();
    for (int k = 0; k < static_cast<int>(r.control_names.size()) && k < f.theta.size(); ++k)
      th[r.control_names[k]] = f.theta(k);
    fits.push_back({{"baseline", f.d}, {"rows", f.rows}, {"theta", th}, {"dropped", f.dropped}});
  }
  j["control_fits"] = fits;
  return j;
}

inline std::string results_console(const Results& r) {
  std::ostringstream os;
  os << std::left << std::setw(14) << "estimate" << std::right << std::setw(13) << "point" << std::setw(13) << "se"
     << std::setw(13) << "ci_low" << std::setw(13) << "ci_high" << std::setw(12) << "N" << std::setw(10)
     << "switchers" << '\n';
  auto f = [](double v) {
    if (!std::isfinite(v)) return std::string(".");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.5f", v);
    return std::string(buf);
  };
  for (const auto* e : detail::table_rows(r)) {
    os << std::left << std::setw(14) << detail::row_label(*e) << std::right << std::setw(13)
       << (e->point ? f(*e->point) : ".") << std::setw(13) << f(detail::se_or_nan(*e)) << std::setw(13)
       << f(e->point ? e->ci_low : NAN) << std::setw(13) << f(e->point ? e->ci_high : NAN) << std::setw(12)
       << detail::num(e->N) << std::setw(10) << e->switchers << '\n';
    if (e->bootstrap_se) os << std::setw(27) << "bootstrap se " << f(*e->bootstrap_se) << '\n';
  }
  if (r.placebo_joint)
    os << "placebos jointly zero: chi2(" << r.placebo_joint->df << ") = " << f(r.placebo_joint->statistic)
       << ", p = " << f(r.placebo_joint->p_value) << '\n';
  if (r.effects_equal)
    os << "effects equal: chi2(" << r.effects_equal->df << ") = " << f(r.effects_equal->statistic)
       << ", p = " << f(r.effects_equal->p_value) << '\n';
  if (r.analytic_se_advisory) os << "note: analytic standard errors are advisory here; prefer the bootstrap\n";
  for (const auto& w : r.warnings) os << "warning: " << w << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Event-study plot data: placebos at negative horizons, one (0,0) reference row.

struct PlotRow {
  int horizon = 0;
  double estimate = 0.0, se = 0.0, ci_low = 0.0, ci_high = 0.0, N = 0.0;
  int switchers = 0;
};

inline std::vector<PlotRow> plot_rows(const Results& r) {
  std::vector<PlotRow> rows;
  auto push = [&](int h, const EffectEstimate& e) {
    if (!e.point) return;
    rows.push_back({h, *e.point, e.se(), e.ci_low, e.ci_high, e.N, e.switchers});
  };
  for (auto it = r.placebos.rbegin(); it != r.placebos.rend(); ++it) push(-it->horizon, *it);
  rows.push_back({0, 0.0, 0.0, 0.0, 0.0, 0.0, 0});
  for (const auto& e : r.reported_effects()) push(e.horizon, e);
  return rows;
}

inline std::string plot_csv(const Results& r) {
  std::ostringstream os;
  os << "# schema_version=" << kSchemaVersion << '\n';
  os << "horizon,estimate,se,ci_low,ci_high,N,switchers\n";
  for (const auto& p : plot_rows(r))
    os << p.horizon << ',' << detail::num(p.estimate) << ',' << detail::num(p.se) << ',' << detail::num(p.ci_low)
       << ',' << detail::num(p.ci_high) << ',' << detail::num(p.N) << ',' << p.switchers << '\n';
  return os.str();
}

inline std::string plot_svg(const Results& r) {
  const auto rows = plot_rows(r);
  const double W = 640, H = 400, m = 50;
  int hmin = 0, hmax = 0;
  double lo = 0.0, hi = 0.0;
  for (const auto& p : rows) {
    hmin = std::min(hmin, p.horizon);
    hmax = std::max(hmax, p.horizon);
    const double a = std::isfinite(p.ci_low) ? p.ci_low : p.estimate;
    const double b = std::isfinite(p.ci_high) ? p.ci_high : p.estimate;
    lo = std::min({lo, a, p.estimate});
    hi = std::max({hi, b, p.estimate});
  }
  if (hi - lo <= 0.0) hi = lo + 1.0;
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  const int span = std::max(1, hmax - hmin);
  auto X = [&](double h) { return m + (h - hmin) / span * (W - 2 * m); };
  auto Y = [&](double v) { return H - m - (v - lo) / (hi - lo) * (H - 2 * m); };
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  os << "<line x1=\"" << m << "\" y1=\"" << Y(0) << "\" x2=\"" << W - m << "\" y2=\"" << Y(0)
     << "\" stroke=\"#888\" stroke-dasharray=\"4\"/>\n";
  for (const auto& p : rows) {
    if (std::isfinite(p.ci_low) && std::isfinite(p.ci_high))
      os << "<line x1=\"" << X(p.horizon) << "\" y1=\"" << Y(p.ci_low) << "\" x2=\"" << X(p.horizon) << "\" y2=\""
         << Y(p.ci_high) << "\" stroke=\"#1f77b4\"/>\n";
    os << "<circle cx=\"" << X(p.horizon) << "\" cy=\"" << Y(p.estimate) << "\" r=\"4\" fill=\"#1f77b4\"/>\n";
    os << "<text x=\"" << X(p.horizon) << "\" y=\"" << H - m / 2 << "\" font-size=\"12\" text-anchor=\"middle\">"
       << p.horizon << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Diagnostics.

inline std::string influence_csv(const Results& r) {
  std::ostringstream os;
  os << "# schema_version=" << kSchemaVersion << '\n';
  os << "group";
  for (const auto& c : r.influence.columns) os << ',' << c.name << ',' << c.name << "_var";
  os << '\n';
  for (std::size_t g = 0; g < r.influence.groups.size(); ++g) {
    os << r.influence.groups[g];
    for (const auto& c : r.influence.columns) os << ',' << detail::num(c.u[g]) << ',' << detail::num(c.var[g]);
    os << '\n';
  }
  return os.str();
}

inline std::string audit_csv(const AuditLog& log) {
  std::ostringstream os;
  os << "# schema_version=" << kSchemaVersion << '\n';
  os << "group,period,rule,action\n";
  for (const auto& e : log.entries) os << e.group << ',' << e.period << ",\"" << e.rule << "\",\"" << e.action << "\"\n";
  return os.str();
}

// Treatment paths of the switchers behind the last estimated effect, most common first,
// until `coverage` of their weight is accounted for.
inline std::string design_table(const Results& r, double coverage) {
  std::ostringstream os;
  if (!r.diagnostics || r.diagnostics->effect_samples.empty()) return "no effect estimated; no design to report\n";
  const auto& hs = r.diagnostics->effect_samples.back();
  const int l = static_cast<int>(r.diagnostics->effect_samples.size());
  auto paths = report_design_paths(r.diagnostics->design, hs, coverage);
  os << "treatment paths of switchers used for effect " << l << " (baseline, then periods 1.." << l << ")\n";
  os << std::left << std::setw(10) << "share" << std::setw(8) << "groups" << "path\n";
  double cum = 0.0;
  for (const auto& p : paths) {
    cum += p.share;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", p.share);
    os << std::left << std::setw(10) << buf << std::setw(8) << p.groups;
    for (std::size_t i = 0; i < p.path.size(); ++i) os << (i ? "," : "") << fmt_num(p.path[i]);
    os << '\n';
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", cum);
  os << "cumulative share " << buf << '\n';
  return os.str();
}

inline std::string design_csv(const Results& r, double coverage) {
  std::ostringstream os;
  os << "# schema_version=" << kSchemaVersion << '\n';
  os << "share,groups,path\n";
  if (!r.diagnostics || r.diagnostics->effect_samples.empty()) return os.str();
  for (const auto& p : report_design_paths(r.diagnostics->design, r.diagnostics->effect_samples.back(), coverage)) {
    os << detail::num(p.share) << ',' << p.groups << ",\"";
    for (std::size_t i = 0; i < p.path.size(); ++i) os << (i ? "," : "") << fmt_num(p.path[i]);
    os << "\"\n";
  }
  return os.str();
}

inline std::string het_console(const HetReport& rep) {
  std::ostringstream os;
  for (const auto& t : rep.tables) {
    os << "predictors of effect " << t.horizon << " (" << t.observations << " switchers, weighted by N, HC1 se)\n";
    for (const auto& c : t.coefficients) {
      char buf[80];
      std::snprintf(buf, sizeof buf, "  %-16s %12.5f %12.5f\n", c.name.c_str(), c.estimate, c.se);
      os << buf;
    }
    if (t.p_value) {
      char buf[80];
      std::snprintf(buf, sizeof buf, "  joint test: F(%d, %d) = %.4f, p = %.4f\n", t.df1, t.df2, *t.f_stat, *t.p_value);
      os << buf;
    }
  }
  for (const auto& w : rep.warnings) os << "warning: " << w << '\n';
  return os.str();
}

inline nlohmann::json het_json(const HetReport& rep) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& t : rep.tables) {
    nlohmann::json coef = nlohmann::json::array();
    for (const auto& c : t.coefficients) coef.push_back({{"name", c.name}, {"estimate", c.estimate}, {"se", c.se}});
    arr.push_back({{"horizon", t.horizon},
                   {"observations", t.observations},
                   {"coefficients", coef},
                   {"dropped", t.dropped},
                   {"f_stat", detail::jnum(t.f_stat)},
                   {"p_value", detail::jnum(t.p_value)}});
  }
  return {{"tables", arr}, {"warnings", rep.warnings}};
}

}  // namespace esdid
