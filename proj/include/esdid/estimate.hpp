#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "esdid/common.hpp"
#include "esdid/controls_adjustment.hpp"
#include "esdid/design_classifier.hpp"
#include "esdid/inference_tests.hpp"
#include "esdid/influence_variance.hpp"
#include "esdid/panel_ingest.hpp"
#include "esdid/point_estimators.hpp"

namespace esdid {

struct Options {
  int effects = 1;
  int placebos = 0;
  bool normalized = false;
  std::vector<std::string> controls;
  bool trends_nonparam = false;
  bool trends_lin = false;
  std::optional<int> continuous;
  bool cluster = false;
  SwitcherFilter switchers = SwitcherFilter::both;
  bool same_switchers = false;
  bool same_switchers_pl = false;
  bool dont_drop_larger_lower = false;
  MissingPolicy missing = MissingPolicy::liberal;
  bool more_granular_demeaning = false;
  std::optional<std::vector<int>> effects_equal;  // empty vector: all effects
  double tolerance = 0.0;
  double ci_level = 0.95;
  bool compute_variance = true;
};

inline void validate(const Options& o) {
  if (o.effects < 1) throw UsageError("effects: at least one effect must be requested");
  if (o.placebos < 0) throw UsageError("placebos: must be nonnegative");
  if (o.placebos > o.effects)
    throw UsageError("placebos: the number of placebos requested cannot be larger than the number of effects requested");
  if (o.same_switchers_pl && !o.same_switchers)
    throw UsageError("same_switchers_pl: requires same_switchers");
  if (o.continuous && *o.continuous < 1) throw UsageError("continuous: polynomial order must be at least 1");
  if (o.effects_equal)
    for (int h : *o.effects_equal)
      if (h < 1 || h > o.effects) throw UsageError("effects_equal: horizon outside the requested effects");
}

enum class EstimateKind { effect, placebo, average };

struct EffectEstimate {
  EstimateKind kind = EstimateKind::effect;
  int horizon = 0;
  std::optional<double> point;
  double variance = std::numeric_limits<double>::quiet_NaN();
  double N = 0.0;
  int switchers = 0;
  double ci_low = std::numeric_limits<double>::quiet_NaN();
  double ci_high = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> bootstrap_se;

  double se() const { return std::sqrt(variance); }
};

struct InfluenceColumn {
  std::string name;
  std::vector<double> u, var;
};

struct InfluenceTable {
  std::vector<std::string> groups;
  std::vector<InfluenceColumn> columns;

  const InfluenceColumn* find(const std::string& name) const {
    for (const auto& c : columns)
      if (c.name == name) return &c;
    return nullptr;
  }
};

// Group-level effects behind one horizon; switchers-out enter sign-flipped.
struct GroupEffects {
  int horizon = 0;
  std::vector<int> groups;
  std::vector<double> effect, weight;
};

struct Prepared {
  Panel panel;
  Design design;
  std::vector<Series> y;
  ControlPanel x;
  std::vector<std::string> control_names;
  std::vector<std::string> warnings;
  AuditLog audit;
};

struct Diagnostics {
  Design design;
  std::vector<HorizonSample> effect_samples, placebo_samples;
};

struct Results {
  int G = 0;
  std::vector<EffectEstimate> effects, placebos, normalized;
  std::vector<std::optional<double>> dose_abs;
  std::optional<EffectEstimate> average;
  DoseDeltas doses;
  std::optional<WaldResult> effects_equal, placebo_joint;
  InfluenceTable influence;
  std::vector<ResidualizationFit> fits;
  std::vector<std::string> control_names;
  std::vector<GroupEffects> group_effects;
  std::vector<std::string> warnings;
  AuditLog audit;
  bool analytic_se_advisory = false;
  bool normalized_reported = false;
  std::shared_ptr<const Diagnostics> diagnostics;

  const std::vector<EffectEstimate>& reported_effects() const { return normalized_reported ? normalized : effects; }
};

inline Prepared prepare(const Panel& in, const Options& opt) {
  Prepared pr;
  const double tol = opt.tolerance;
  std::vector<int> cidx;
  for (const auto& c : opt.controls) {
    auto it = std::find(in.control_names.begin(), in.control_names.end(), c);
    if (it == in.control_names.end()) throw InputError("control '" + c + "' not present in the data");
    cidx.push_back(static_cast<int>(it - in.control_names.begin()));
  }

  Panel p = apply_missing_treatment_rules(in, opt.missing, pr.audit, tol);
  auto sched = classify(p, tol);
  p = enforce_design_restriction_2(std::move(p), sched, opt.dont_drop_larger_lower, pr.audit, tol);
  sched = classify(p, tol);
  p = drop_switchers_without_first_stage(std::move(p), sched, pr.audit, tol);
  sched = classify(p, tol);
  if (p.groups.empty()) throw EstimationError("no group left after applying the data conventions");

  DesignOptions dopt{opt.trends_nonparam, opt.cluster, opt.more_granular_demeaning, tol};
  std::vector<double> base;
  for (const auto& s : sched) base.push_back(s.d1);
  if (opt.continuous) {
    Design orig = build_design(p, sched, dopt);
    Panel q = p;
    auto dt = continuous_treatment(orig);
    for (std::size_t g = 0; g < q.groups.size(); ++g) q.groups[g].d = dt[g];
    auto qs = classify(q, tol);
    check_design_restriction_1(qs);
    pr.design = build_design(q, qs, dopt, &orig.d, &base);
  } else {
    check_design_restriction_1(sched);
    pr.design = build_design(p, sched, dopt);
  }

  std::set<double> switcher_bases;
  for (const auto& s : pr.design.sched)
    if (s.S != Switch::never) switcher_bases.insert(s.d1);
  int idle = 0;
  for (const auto& s : pr.design.sched)
    if (s.S == Switch::never && !switcher_bases.count(s.d1)) ++idle;
  if (idle > 0)
    pr.warnings.push_back(std::to_string(idle) +
                          " never-switcher(s) have a baseline treatment shared by no switcher and do not contribute");

  const int G = static_cast<int>(p.groups.size());
  pr.y.resize(G);
  pr.x.resize(G);
  for (int g = 0; g < G; ++g) {
    pr.y[g] = p.groups[g].y;
    for (int k : cidx) pr.x[g].push_back(p.groups[g].x[k]);
  }
  pr.control_names = opt.controls;
  if (opt.continuous) append_baseline_polynomial(base, p.T, *opt.continuous, pr.x, pr.control_names);
  if (opt.trends_lin) {
    pr.y = first_difference(pr.y);
    for (auto& xs : pr.x) xs = first_difference(xs);
  }
  pr.panel = std::move(p);
  return pr;
}

namespace detail {

inline EffectEstimate make_estimate(EstimateKind kind, int h, std::optional<double> point, double var, double N,
                                    int count, double level) {
  EffectEstimate e;
  e.kind = kind;
  e.horizon = h;
  e.point = point;
  e.N = N;
  e.switchers = count;
  if (point) {
    e.variance = var;
    if (std::isfinite(var) && var >= 0.0) std::tie(e.ci_low, e.ci_high) = confidence_interval(*point, var, level);
  }
  return e;
}

struct HorizonRun {
  HorizonSample sample;
  HorizonEstimate est;
  SideInfluence side;
  Influence comb;
};

}  // namespace detail

inline Results estimate_prepared(const Prepared& pr, const Options& opt) {
  Results res;
  const Design& des = pr.design;
  const int G = des.G();
  res.G = G;
  res.audit = pr.audit;
  res.warnings = pr.warnings;
  res.control_names = pr.control_names;
  res.analytic_se_advisory = opt.continuous.has_value();
  res.normalized_reported = opt.normalized;
  res.influence.groups = des.ids;
  const bool with_var = opt.compute_variance;

  const bool use_controls = !pr.control_names.empty();
  std::vector<Series> z = pr.y;
  if (use_controls) {
    std::set<double> bases;
    for (const auto& s : des.sched) bases.insert(s.d1);
    for (double d : bases) {
      auto fit = fit_residualization(des, pr.y, pr.x, pr.control_names, d);
      if (fit.rows > 0 && !fit.dropped.empty() && !opt.continuous) {
        std::string names;
        for (const auto& n : fit.dropped) names += (names.empty() ? "" : ", ") + n;
        res.warnings.push_back("controls dropped for collinearity at baseline " + fmt_num(d) + ": " + names);
      }
      res.fits.push_back(std::move(fit));
    }
    z = residualize(des, pr.y, pr.x, res.fits);
  }

  int L_avail = opt.switchers == SwitcherFilter::in    ? des.L_in
                : opt.switchers == SwitcherFilter::out ? des.L_out
                                                       : std::max(des.L_in, des.L_out);
  int L = std::min(opt.effects, L_avail);
  if (L < opt.effects)
    res.warnings.push_back("effects: only " + std::to_string(L) + " effect(s) can be estimated; request truncated");
  if (L < 1) throw EstimationError("no switcher has an estimable effect");
  int P = opt.placebos;
  if (opt.trends_lin && P > 0) {
    --P;
    res.warnings.push_back("trends_lin: one placebo horizon is lost to first-differencing");
  }
  P = std::min(P, L);

  auto mask = switcher_mask(des, opt.switchers);
  if (opt.same_switchers || opt.trends_lin)
    mask = apply_same_switchers(des, z, L, P, opt.same_switchers_pl, mask);

  auto run_horizon = [&](Contrast c, const std::vector<char>& allowed) {
    detail::HorizonRun r;
    r.sample = build_horizon_sample(des, z, c, allowed);
    r.est = aggregate(des, r.sample);
    if (with_var) {
      auto terms = build_terms(des, r.sample);
      r.side = influence_from_terms(des, terms);
      if (use_controls) {
        auto lin = linearize_controls(des, r.sample, terms, pr.x, res.fits);
        adjust_for_controls(des, r.side, lin, res.fits);
      }
      r.comb = combine_sides(r.side, r.est.side[0].mass, r.est.side[1].mass);
    } else {
      for (int s = 0; s < 2; ++s) r.side.u[s].assign(G, 0.0), r.side.var[s].assign(G, 0.0);
      r.comb.u.assign(G, 0.0);
      r.comb.var.assign(G, 0.0);
    }
    return r;
  };

  std::vector<detail::HorizonRun> eff, pl;
  for (int l = 1; l <= L; ++l) eff.push_back(run_horizon({l, false}, mask));
  for (int l = 1; l <= P; ++l) {
    std::vector<char> pmask(G, 0);
    for (int g = 0; g < G; ++g) pmask[g] = eff[l - 1].sample.has(g) ? 1 : 0;
    pl.push_back(run_horizon({l, true}, pmask));
  }

  // Levels effects under linear trends cumulate the first-difference effects.
  auto cumulate = [&](std::vector<detail::HorizonRun>& runs) {
    std::optional<double> acc = 0.0;
    Influence sum;
    sum.u.assign(G, 0.0);
    sum.var.assign(G, 0.0);
    for (auto& r : runs) {
      if (acc && r.est.did) acc = *acc + *r.est.did;
      else acc.reset();
      for (int g = 0; g < G; ++g) {
        sum.u[g] += r.comb.u[g];
        sum.var[g] += r.comb.var[g];
      }
      r.est.did = acc;
      r.comb = sum;
    }
  };
  if (opt.trends_lin) {
    cumulate(eff);
    cumulate(pl);
  }

  auto emit = [&](EstimateKind kind, const std::string& prefix, std::vector<detail::HorizonRun>& runs,
                  std::vector<EffectEstimate>& out) {
    for (std::size_t i = 0; i < runs.size(); ++i) {
      auto& r = runs[i];
      const int h = static_cast<int>(i) + 1;
      double var = with_var && r.est.did ? cluster_variance(des, r.comb.var) : std::numeric_limits<double>::quiet_NaN();
      out.push_back(detail::make_estimate(kind, h, r.est.did, var, r.est.mass, r.est.count, opt.ci_level));
      if (with_var) {
        res.influence.columns.push_back({prefix + std::to_string(h), r.comb.u, r.comb.var});
        if (kind == EstimateKind::effect && !opt.trends_lin) {
          res.influence.columns.push_back({prefix + std::to_string(h) + "_plus", r.side.u[0], r.side.var[0]});
          res.influence.columns.push_back({prefix + std::to_string(h) + "_minus", r.side.u[1], r.side.var[1]});
        }
      }
    }
  };
  emit(EstimateKind::effect, "effect_", eff, res.effects);
  emit(EstimateKind::placebo, "placebo_", pl, res.placebos);

  for (std::size_t i = 0; i < eff.size(); ++i) {
    auto& r = eff[i];
    const int h = static_cast<int>(i) + 1;
    res.dose_abs.push_back(r.est.dose_abs);
    std::optional<double> pt;
    double var = std::numeric_limits<double>::quiet_NaN();
    if (r.est.did && r.est.dose_abs && *r.est.dose_abs != 0.0) {
      const double dd = *r.est.dose_abs;
      pt = *r.est.did / dd;
      var = res.effects[i].variance / (dd * dd);
      if (with_var) res.influence.columns.push_back({"normalized_" + std::to_string(h), scale(r.comb, 1.0 / dd).u,
                                                     scale(r.comb, 1.0 / dd).var});
    }
    res.normalized.push_back(detail::make_estimate(EstimateKind::effect, h, pt, var, r.est.mass, r.est.count, opt.ci_level));

    GroupEffects ge;
    ge.horizon = h;
    for (std::size_t k = 0; k < r.sample.switchers.size() && !opt.trends_lin; ++k) {
      const auto& sw = r.sample.switchers[k];
      ge.groups.push_back(sw.g);
      ge.effect.push_back(sw.side == Side::plus ? r.est.group_did[k] : -r.est.group_did[k]);
      ge.weight.push_back(sw.n);
    }
    res.group_effects.push_back(std::move(ge));
  }

  if (!opt.trends_lin) {
    std::vector<HorizonEstimate> ests;
    std::vector<SideInfluence> sides;
    for (auto& r : eff) {
      ests.push_back(r.est);
      sides.push_back(r.side);
    }
    auto at = average_total_effect(ests);
    res.doses = at.doses;
    double var = std::numeric_limits<double>::quiet_NaN();
    if (at.value && with_var) {
      auto inf = average_influence(sides, at.doses);
      var = cluster_variance(des, inf.var);
      res.influence.columns.push_back({"average", inf.u, inf.var});
    }
    res.average = detail::make_estimate(EstimateKind::average, 0, at.value, var, at.mass, at.count, opt.ci_level);
  }

  if (with_var) {
    const auto& rep = res.reported_effects();
    std::vector<int> hs;
    if (opt.effects_equal) {
      if (opt.effects_equal->empty())
        for (int h = 1; h <= L; ++h) hs.push_back(h);
      else
        for (int h : *opt.effects_equal)
          if (h <= L) hs.push_back(h);
    }
    std::vector<int> ok;
    for (int h : hs)
      if (rep[h - 1].point && res.influence.find((opt.normalized ? "normalized_" : "effect_") + std::to_string(h)))
        ok.push_back(h);
    if (opt.effects_equal && ok.size() >= 2) {
      Eigen::VectorXd b(ok.size());
      std::vector<const std::vector<double>*> cols;
      for (std::size_t i = 0; i < ok.size(); ++i) {
        b(i) = *rep[ok[i] - 1].point;
        cols.push_back(&res.influence.find((opt.normalized ? "normalized_" : "effect_") + std::to_string(ok[i]))->var);
      }
      res.effects_equal = effects_equal_test(b, cluster_covariance(des, cols));
      if (res.effects_equal->rank_deficient)
        res.warnings.push_back("effects_equal: covariance is singular; pseudo-inverse used with reduced degrees of freedom");
    } else if (opt.effects_equal) {
      res.warnings.push_back("effects_equal: fewer than two estimable effects; test not computed");
    }

    std::vector<int> pok;
    for (const auto& e : res.placebos)
      if (e.point) pok.push_back(e.horizon);
    if (pok.size() >= 2) {
      Eigen::VectorXd b(pok.size());
      std::vector<const std::vector<double>*> cols;
      for (std::size_t i = 0; i < pok.size(); ++i) {
        b(i) = *res.placebos[pok[i] - 1].point;
        cols.push_back(&res.influence.find("placebo_" + std::to_string(pok[i]))->var);
      }
      res.placebo_joint = joint_zero_test(b, cluster_covariance(des, cols));
    }
  }

  auto diag = std::make_shared<Diagnostics>();
  diag->design = des;
  for (auto& r : eff) diag->effect_samples.push_back(std::move(r.sample));
  for (auto& r : pl) diag->placebo_samples.push_back(std::move(r.sample));
  res.diagnostics = std::move(diag);
  return res;
}

inline Results estimate(const Panel& in, const Options& opt) {
  validate(opt);
  return estimate_prepared(prepare(in, opt), opt);
}

// Point estimates in a fixed order: effects, average, placebos.
inline std::vector<std::optional<double>> point_vector(const Results& r) {
  std::vector<std::optional<double>> v;
  for (const auto& e : r.reported_effects()) v.push_back(e.point);
  v.push_back(r.average ? r.average->point : std::nullopt);
  for (const auto& e : r.placebos) v.push_back(e.point);
  return v;
}

// Resamples clusters (groups when unclustered) and reruns the point estimation.
inline BootstrapResult bootstrap_panel(const Panel& in, const Options& opt, int B, std::uint64_t seed,
                                       std::size_t expected) {
  std::vector<std::vector<int>> units;
  std::map<std::string, int> idx;
  for (int g = 0; g < static_cast<int>(in.groups.size()); ++g) {
    std::string key = opt.cluster ? in.groups[g].cluster.value_or("") : in.groups[g].id;
    auto [it, fresh] = idx.emplace(key, static_cast<int>(units.size()));
    if (fresh) units.emplace_back();
    units[it->second].push_back(g);
  }
  Options o = opt;
  o.compute_variance = false;
  o.effects_equal.reset();
  auto run = [&](const std::vector<int>& draw) {
    Panel p;
    p.T = in.T;
    p.period_labels = in.period_labels;
    p.control_names = in.control_names;
    p.predictor_names = in.predictor_names;
    for (std::size_t k = 0; k < draw.size(); ++k)
      for (int g : units[draw[k]]) {
        GroupSeries gs = in.groups[g];
        gs.id += "#" + std::to_string(k);
        if (gs.cluster) *gs.cluster += "#" + std::to_string(k);
        p.groups.push_back(std::move(gs));
      }
    auto v = point_vector(estimate(p, o));
    v.resize(expected);
    return v;
  };
  return bootstrap(run, static_cast<int>(units.size()), B, seed);
}

}  // namespace esdid
