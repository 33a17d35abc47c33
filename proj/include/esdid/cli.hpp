#pragma once

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "esdid/estimate.hpp"
#include "esdid/extensions.hpp"
#include "esdid/report.hpp"

namespace esdid::cli {

enum ExitCode { ok = 0, usage = 1, input = 2, design = 3 };

struct RunConfig {
  std::string input;
  ColumnBindings columns;
  Options options;
  bool normalized_weights = false;
  std::optional<std::vector<std::string>> effects_equal;
  std::string design;  // "share,console" or "share,path"
  std::string predict_het;  // "p1,p2[:h1,h2]"
  std::optional<int> bootstrap;
  std::uint64_t seed = 1;
  std::string format = "console";
  std::string output, plot, svg, audit, influence;
};

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep))
    if (!cur.empty()) out.push_back(cur);
  return out;
}

inline std::vector<int> parse_horizons(const std::string& s, const char* what) {
  std::vector<int> out;
  for (const auto& tok : split(s, ',')) {
    try {
      std::size_t pos = 0;
      int v = std::stoi(tok, &pos);
      if (pos != tok.size()) throw std::invalid_argument(tok);
      out.push_back(v);
    } catch (const std::exception&) {
      throw UsageError(std::string(what) + ": '" + tok + "' is not a horizon");
    }
  }
  return out;
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot write " + path);
  f << content;
}

// Adds a leading `level` column to a schema-tagged CSV body.
inline std::string with_level(const std::string& csv, const std::string& level, bool header) {
  std::istringstream is(csv);
  std::ostringstream os;
  std::string line;
  bool seen_header = false;
  while (std::getline(is, line)) {
    if (line.rfind("#", 0) == 0) {
      if (header) os << line << '\n';
      continue;
    }
    if (!seen_header) {
      seen_header = true;
      if (header) os << "level," << line << '\n';
      continue;
    }
    os << '"' << level << "\"," << line << '\n';
  }
  return os.str();
}

inline void attach_bootstrap(Results& r, const BootstrapResult& b) {
  std::size_t k = 0;
  auto next = [&]() -> std::optional<double> { return k < b.se.size() ? b.se[k++] : std::nullopt; };
  auto& eff = r.normalized_reported ? r.normalized : r.effects;
  for (auto& e : eff) e.bootstrap_se = next();
  auto avg = next();
  if (r.average) r.average->bootstrap_se = avg;
  for (auto& e : r.placebos) e.bootstrap_se = next();
}

struct Artifact {
  std::string level;  // empty without --by
  int groups = 0;
  std::string diagnostic;
  std::optional<Results> results;
  std::optional<HetReport> het;
};

inline int execute(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  Options opt = cfg.options;
  if (cfg.effects_equal) {
    const auto& v = *cfg.effects_equal;
    if (v.empty() || (v.size() == 1 && v[0] == "all")) opt.effects_equal = std::vector<int>{};
    else {
      std::vector<int> hs;
      for (const auto& s : v)
        for (int h : parse_horizons(s, "effects_equal")) hs.push_back(h);
      opt.effects_equal = hs;
    }
  }
  std::vector<std::string> het_vars;
  std::vector<int> het_horizons;
  if (!cfg.predict_het.empty()) {
    check_predict_het_options(opt);
    auto colon = cfg.predict_het.find(':');
    het_vars = split(cfg.predict_het.substr(0, colon), ',');
    if (het_vars.empty()) throw UsageError("predict_het: no predictor given");
    if (colon != std::string::npos) het_horizons = parse_horizons(cfg.predict_het.substr(colon + 1), "predict_het");
  }
  std::optional<double> design_share;
  std::string design_target;
  if (!cfg.design.empty()) {
    auto parts = split(cfg.design, ',');
    if (parts.size() != 2) throw UsageError("design: expected SHARE,console or SHARE,FILE");
    try {
      design_share = std::stod(parts[0]);
    } catch (const std::exception&) {
      throw UsageError("design: '" + parts[0] + "' is not a share");
    }
    if (!(*design_share > 0.0 && *design_share <= 1.0)) throw UsageError("design: share must be in (0, 1]");
    design_target = parts[1];
  }
  if (cfg.format != "console" && cfg.format != "csv" && cfg.format != "json")
    throw UsageError("format: expected console, csv or json");
  validate(opt);
  if (cfg.bootstrap && *cfg.bootstrap < 2) throw UsageError("bootstrap: at least two replications are needed");

  ColumnBindings cols = cfg.columns;
  cols.controls = opt.controls;
  cols.predictors = het_vars;
  if (cfg.input.empty()) throw UsageError("an input CSV file is required");
  Panel panel = load_panel_csv(cfg.input, cols);

  if (cfg.normalized_weights)
    err << "note: normalized_weights (lag-weight table) is unavailable in this build; option ignored\n";

  auto run_one = [&](const Panel& p) {
    Artifact a;
    auto pr = prepare(p, opt);
    a.results = estimate_prepared(pr, opt);
    if (cfg.bootstrap) {
      auto b = bootstrap_panel(p, opt, *cfg.bootstrap, cfg.seed, point_vector(*a.results).size());
      attach_bootstrap(*a.results, b);
      if (b.skipped > 0)
        a.results->warnings.push_back("bootstrap: " + std::to_string(b.skipped) + " replication(s) not estimable");
    }
    if (!het_vars.empty()) a.het = predict_het(*a.results, pr.panel, het_vars, het_horizons);
    return a;
  };

  std::vector<Artifact> arts;
  if (cols.by) {
    for (auto& lvl : estimate_by(panel, opt)) {
      Artifact a;
      a.level = lvl.level;
      a.groups = lvl.groups;
      a.diagnostic = lvl.diagnostic;
      if (lvl.results) {
        Panel sub;
        sub.T = panel.T;
        sub.period_labels = panel.period_labels;
        sub.control_names = panel.control_names;
        sub.predictor_names = panel.predictor_names;
        for (const auto& g : panel.groups)
          if (g.by == lvl.level) sub.groups.push_back(g);
        auto full = run_one(sub);
        a.results = std::move(full.results);
        a.het = std::move(full.het);
      }
      arts.push_back(std::move(a));
    }
  } else {
    auto a = run_one(panel);
    a.groups = static_cast<int>(panel.groups.size());
    arts.push_back(std::move(a));
  }

  // Console output.
  std::ostringstream console;
  for (const auto& a : arts) {
    if (!a.level.empty()) console << "== by level " << a.level << " (" << a.groups << " groups)\n";
    if (!a.results) {
      console << "not estimated: " << a.diagnostic << "\n";
      continue;
    }
    console << results_console(*a.results);
    if (a.het) console << het_console(*a.het);
    if (design_share && design_target == "console") console << design_table(*a.results, *design_share);
  }

  // Structured results.
  std::string structured;
  if (cfg.format == "json") {
    nlohmann::json j;
    if (cols.by) {
      j["schema_version"] = kSchemaVersion;
      j["levels"] = nlohmann::json::array();
      for (const auto& a : arts) {
        nlohmann::json l{{"level", a.level}, {"groups", a.groups}};
        if (a.results) l["results"] = results_json(*a.results);
        else l["diagnostic"] = a.diagnostic;
        if (a.het) l["predict_het"] = het_json(*a.het);
        j["levels"].push_back(l);
      }
    } else {
      j = results_json(*arts[0].results);
      if (arts[0].het) j["predict_het"] = het_json(*arts[0].het);
    }
    structured = j.dump(2) + "\n";
  } else if (cfg.format == "csv") {
    if (cols.by) {
      bool first = true;
      for (const auto& a : arts)
        if (a.results) {
          structured += with_level(results_csv(*a.results), a.level, first);
          first = false;
        }
    } else {
      structured = results_csv(*arts[0].results);
    }
  }
  if (!cfg.output.empty()) write_file(cfg.output, structured.empty() ? results_csv(*arts[0].results) : structured);
  if (cfg.format == "console" || !cfg.output.empty()) out << console.str();
  else out << structured;

  auto per_level = [&](auto render) {
    std::string s;
    bool first = true;
    for (const auto& a : arts)
      if (a.results) {
        s += cols.by ? with_level(render(*a.results), a.level, first) : render(*a.results);
        first = false;
      }
    return s;
  };
  if (!cfg.plot.empty()) write_file(cfg.plot, per_level([](const Results& r) { return plot_csv(r); }));
  if (!cfg.svg.empty()) {
    for (const auto& a : arts)
      if (a.results) {
        std::string path = cfg.svg;
        if (cols.by) {
          auto dot = path.rfind('.');
          path = dot == std::string::npos ? path + "_" + a.level : path.substr(0, dot) + "_" + a.level + path.substr(dot);
        }
        write_file(path, plot_svg(*a.results));
      }
  }
  if (!cfg.audit.empty()) {
    AuditLog log;
    for (const auto& a : arts)
      if (a.results) log.append(a.results->audit);
    write_file(cfg.audit, audit_csv(log));
  }
  if (!cfg.influence.empty()) write_file(cfg.influence, per_level([](const Results& r) { return influence_csv(r); }));
  if (design_share && design_target != "console")
    write_file(design_target, per_level([&](const Results& r) { return design_csv(r, *design_share); }));
  return ok;
}

inline void build_app(CLI::App& app, RunConfig& cfg, std::string& switchers, bool& conservative,
                      std::vector<std::string>& controls_list, std::string& trends_np, std::string& cluster) {
  auto& o = cfg.options;
  app.add_option("input", cfg.input, "input CSV (header row; empty field = missing)");
  app.add_option("--outcome,-y", cfg.columns.outcome, "outcome column")->capture_default_str();
  app.add_option("--group,-g", cfg.columns.group, "group column")->capture_default_str();
  app.add_option("--time,-t", cfg.columns.time, "period column (integers)")->capture_default_str();
  app.add_option("--treatment,-d", cfg.columns.treatment, "treatment column")->capture_default_str();
  app.add_option("--weight", cfg.columns.weight, "cell weight column (default: each row weighs 1)");
  app.add_option("--effects", o.effects, "number of event-study effects")->capture_default_str();
  app.add_option("--placebos", o.placebos, "number of placebos (at most --effects)")->capture_default_str();
  app.add_flag("--normalized", o.normalized, "report normalized effects (per unit of incremental dose)");
  app.add_flag("--normalized-weights", cfg.normalized_weights, "lag-weight table (unavailable; accepted for compatibility)");
  app.add_option_function<std::vector<std::string>>(
         "--effects-equal", [&cfg](const std::vector<std::string>& v) { cfg.effects_equal = v; },
         "test equality of effects: 'all' (default) or horizons like 1,3")
      ->expected(0, 1);
  app.add_option("--design", cfg.design, "treatment-path table: SHARE,console or SHARE,FILE");
  app.add_option("--controls", controls_list, "control columns, comma separated")->delimiter(',');
  app.add_option("--trends-nonparam", trends_np, "column defining sets of groups with their own trends");
  app.add_flag("--trends-lin", o.trends_lin, "allow group-specific linear trends");
  app.add_option("--continuous", o.continuous, "continuous baseline treatment, polynomial order K");
  app.add_option("--cluster", cluster, "cluster column for the variance");
  app.add_option("--by", cfg.columns.by, "estimate separately by levels of this group-level column");
  app.add_option("--predict-het", cfg.predict_het, "predictors of group effects: p1,p2[:h1,h2]");
  app.add_flag("--same-switchers", o.same_switchers, "keep switchers estimable at all requested effects");
  app.add_flag("--same-switchers-pl", o.same_switchers_pl, "also require all requested placebos");
  app.add_option("--switchers", switchers, "restrict to switchers 'in' or 'out'")
      ->check(CLI::IsMember({"in", "out"}));
  app.add_flag("--dont-drop-larger-lower", o.dont_drop_larger_lower,
               "keep groups whose treatment moves both above and below baseline");
  app.add_flag("--drop-if-d-miss-before-first-switch", conservative,
               "conservative handling of treatments missing before the first switch");
  app.add_flag("--more-granular-demeaning", o.more_granular_demeaning, "demean within full treatment paths");
  app.add_option("--bootstrap", cfg.bootstrap, "bootstrap replications (resampling clusters or groups)");
  app.add_option("--seed", cfg.seed, "bootstrap seed")->capture_default_str();
  app.add_option("--ci-level", o.ci_level, "confidence level")->capture_default_str()->check(CLI::Range(0.5, 0.9999));
  app.add_option("--tolerance", o.tolerance, "treatment comparison tolerance")->capture_default_str();
  app.add_option("--format", cfg.format, "stdout format: console, csv or json")->capture_default_str();
  app.add_option("--output,-o", cfg.output, "write results (format per --format; csv by default)");
  app.add_option("--plot", cfg.plot, "write event-study plot data CSV");
  app.add_option("--svg", cfg.svg, "write a minimal SVG of the event-study series");
  app.add_option("--audit", cfg.audit, "write the data-convention audit log CSV");
  app.add_option("--influence", cfg.influence, "write group-level influence functions CSV");
}

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Heterogeneity-robust event-study difference-in-differences estimator"};
  RunConfig cfg;
  std::string switchers, trends_np, cluster;
  bool conservative = false;
  std::vector<std::string> controls;
  build_app(app, cfg, switchers, conservative, controls, trends_np, cluster);
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return ok;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return usage;
  }
  cfg.options.controls = controls;
  if (switchers == "in") cfg.options.switchers = SwitcherFilter::in;
  if (switchers == "out") cfg.options.switchers = SwitcherFilter::out;
  if (conservative) cfg.options.missing = MissingPolicy::conservative;
  if (!trends_np.empty()) {
    cfg.options.trends_nonparam = true;
    cfg.columns.supergroup = trends_np;
  }
  if (!cluster.empty()) {
    cfg.options.cluster = true;
    cfg.columns.cluster = cluster;
  }
  try {
    return execute(cfg, out, err);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return usage;
  } catch (const DesignRestrictionViolation& e) {
    err << "design restriction: " << e.what() << '\n';
    return design;
  } catch (const InputError& e) {
    err << "input error: " << e.what() << '\n';
    return input;
  } catch (const EstimationError& e) {
    err << "estimation error: " << e.what() << '\n';
    return input;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << '\n';
    return input;
  }
}

}  // namespace esdid::cli
