#pragma once

// Property checks shared by the unit suite and the acceptance binary. Each
// returns a verdict plus the first discrepancy found.

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "esdid/estimate.hpp"
#include "missing_fixture.hpp"
#include "oracle.hpp"
#include "support.hpp"

namespace esdid::checks {

struct Verdict {
  bool ok = true;
  int cases = 0;
  std::string detail;

  void fail(const std::string& why) {
    if (ok) detail = why;
    ok = false;
  }
};

inline Panel add_random_controls(Panel p, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  p.control_names = {"x1", "x2"};
  for (auto& g : p.groups) {
    g.x.assign(2, Series(p.T + 1));
    const double a = nd(rng);
    for (int t = 1; t <= p.T; ++t) {
      g.x[0][t] = a + 0.5 * t + nd(rng);
      g.x[1][t] = nd(rng);
      if (g.y[t]) *g.y[t] += 0.7 * *g.x[0][t] - 0.4 * *g.x[1][t];
    }
  }
  return p;
}

inline Panel add_random_supergroups(Panel p, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> k(0, 1);
  for (auto& g : p.groups) g.supergroup = k(rng) ? "a" : "b";
  return p;
}

// Binary absorbing adoption, balanced, dyadic weights.
inline Panel staggered_panel(std::mt19937_64& rng, int G = 24, int T = 7) {
  std::uniform_int_distribution<int> fdist(2, T + 2);
  std::uniform_int_distribution<int> ndist(1, 4);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<PanelCell> cells;
  for (int g = 0; g < G; ++g) {
    const int F = fdist(rng);
    const double n = 0.5 * ndist(rng), fe = nd(rng);
    for (int t = 1; t <= T; ++t) {
      PanelCell c;
      c.group = std::to_string(g + 1);
      c.period = t;
      c.n = n;
      c.d = t >= F ? 1.0 : 0.0;
      c.y = fe + 0.2 * t + (t >= F ? 1.0 + 0.1 * (t - F) : 0.0) + nd(rng);
      cells.push_back(c);
    }
  }
  return build_panel(cells);
}

// Outcomes are a group level plus a common period level, both dyadic, so every
// pre-switch difference cancels without rounding. Effects after the switch are
// arbitrary and never enter a placebo.
inline Panel common_trend_panel(std::mt19937_64& rng, int G = 30, int T = 8) {
  std::uniform_int_distribution<int> fdist(2, T + 2), ndist(1, 4), ldist(-40, 40), ddist(1, 2);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> b(T + 1);
  for (int t = 1; t <= T; ++t) b[t] = ldist(rng) / 8.0;
  std::vector<PanelCell> cells;
  for (int g = 0; g < G; ++g) {
    const int F = fdist(rng);
    const double d1 = g % 4 == 0 ? 1.0 : 0.0;
    const double to = d1 == 1.0 ? 0.0 : static_cast<double>(ddist(rng));
    const double n = 0.5 * ndist(rng), a = ldist(rng) / 4.0;
    for (int t = 1; t <= T; ++t) {
      PanelCell c;
      c.group = std::to_string(g + 1);
      c.period = t;
      c.n = n;
      c.d = t >= F ? to : d1;
      c.y = a + b[t] + (t >= F ? nd(rng) : 0.0);
      cells.push_back(c);
    }
  }
  return build_panel(cells);
}

template <class Fn>
bool estimable(Fn&& fn) {
  try {
    fn();
    return true;
  } catch (const DesignRestrictionViolation&) {
  } catch (const EstimationError&) {
  }
  return false;
}

inline std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// Mean of each influence column equals its estimate; placebo switchers are
// drawn from the matching effect switchers.
inline Verdict influence_identities(std::uint64_t seed, int panels, double tol, Verdict* subset = nullptr) {
  Verdict v, sub;
  std::mt19937_64 rng(seed);
  int attempts = 0;
  while (v.cases < panels && attempts < 20 * panels) {
    ++attempts;
    Panel p = fixtures::random_panel(rng);
    Options o;
    o.effects = 3;
    o.placebos = 2;
    const int kind = attempts % 3;
    if (kind == 1) {
      p = add_random_controls(std::move(p), rng);
      o.controls = {"x1", "x2"};
    } else if (kind == 2) {
      p = add_random_supergroups(std::move(p), rng);
      o.trends_nonparam = true;
    }
    Results r;
    if (!estimable([&] { r = estimate(p, o); })) continue;
    ++v.cases;
    auto check = [&](const std::optional<double>& pt, const std::string& col) {
      if (!pt) return;
      const auto* c = r.influence.find(col);
      if (!c) return v.fail("missing influence column " + col);
      const double m = influence_mean(c->u);
      if (!(fixtures::rel_diff(m, *pt) <= tol))
        v.fail("panel " + std::to_string(attempts) + " " + col + ": " + num(m) + " vs " + num(*pt));
    };
    for (std::size_t i = 0; i < r.effects.size(); ++i) {
      check(r.effects[i].point, "effect_" + std::to_string(i + 1));
      check(r.normalized[i].point, "normalized_" + std::to_string(i + 1));
    }
    for (std::size_t i = 0; i < r.placebos.size(); ++i) check(r.placebos[i].point, "placebo_" + std::to_string(i + 1));
    if (r.average) check(r.average->point, "average");

    const auto& dg = *r.diagnostics;
    ++sub.cases;
    for (std::size_t l = 0; l < dg.placebo_samples.size(); ++l)
      for (const auto& sw : dg.placebo_samples[l].switchers)
        if (!dg.effect_samples[l].has(sw.g))
          sub.fail("panel " + std::to_string(attempts) + " placebo " + std::to_string(l + 1) + " switcher " +
                   std::to_string(sw.g) + " absent from effect sample");
  }
  if (v.cases < panels) v.fail("only " + std::to_string(v.cases) + " estimable panels");
  if (subset) *subset = sub;
  return v;
}

// Main pipeline against direct evaluation of the estimator formulas.
inline Verdict oracle_agreement(std::uint64_t seed, int panels, double tol) {
  Verdict v;
  std::mt19937_64 rng(seed);
  int attempts = 0;
  while (v.cases < panels && attempts < 20 * panels) {
    ++attempts;
    Panel p = fixtures::random_panel(rng);
    Options o;
    o.effects = 3;
    o.placebos = 2;
    o.compute_variance = false;
    Prepared pr;
    Results r;
    if (!estimable([&] {
          pr = prepare(p, o);
          r = estimate_prepared(pr, o);
        }))
      continue;
    ++v.cases;
    const int L = static_cast<int>(r.effects.size()), P = static_cast<int>(r.placebos.size());
    auto ref = oracle::evaluate(pr.panel, L, P);
    auto cmp = [&](const std::optional<double>& a, const std::optional<double>& b, const std::string& what) {
      if (a.has_value() != b.has_value()) return v.fail("panel " + std::to_string(attempts) + " " + what + " availability");
      if (a && !(fixtures::rel_diff(*a, *b) <= tol))
        v.fail("panel " + std::to_string(attempts) + " " + what + ": " + num(*a) + " vs " + num(*b));
    };
    for (int l = 1; l <= L; ++l) {
      cmp(r.effects[l - 1].point, ref.did[l - 1], "effect_" + std::to_string(l));
      cmp(r.normalized[l - 1].point, ref.normalized[l - 1], "normalized_" + std::to_string(l));
    }
    for (int l = 1; l <= P; ++l) cmp(r.placebos[l - 1].point, ref.placebo[l - 1], "placebo_" + std::to_string(l));
    cmp(r.average->point, ref.average, "average");
  }
  if (v.cases < panels) v.fail("only " + std::to_string(v.cases) + " estimable panels");
  return v;
}

// se of the normalized effect times the dose equals the se of the raw effect.
inline Verdict normalized_se_identity(std::uint64_t seed, int panels, double tol) {
  Verdict v;
  std::mt19937_64 rng(seed);
  int attempts = 0;
  while (v.cases < panels && attempts < 20 * panels) {
    ++attempts;
    Panel p = fixtures::random_panel(rng);
    Options o;
    o.effects = 3;
    o.placebos = 1;
    Results r;
    if (!estimable([&] { r = estimate(p, o); })) continue;
    ++v.cases;
    for (std::size_t i = 0; i < r.effects.size(); ++i) {
      if (!r.normalized[i].point) continue;
      const double lhs = r.normalized[i].se() * *r.dose_abs[i], rhs = r.effects[i].se();
      if (!(fixtures::rel_diff(lhs, rhs) <= tol))
        v.fail("panel " + std::to_string(attempts) + " horizon " + std::to_string(i + 1) + ": " + num(lhs) + " vs " +
               num(rhs));
    }
  }
  if (v.cases < panels) v.fail("only " + std::to_string(v.cases) + " estimable panels");
  return v;
}

inline Verdict staggered_dose_equals_horizon(std::uint64_t seed, int panels) {
  Verdict v;
  std::mt19937_64 rng(seed);
  int attempts = 0;
  while (v.cases < panels && attempts < 20 * panels) {
    ++attempts;
    Panel p = staggered_panel(rng);
    Options o;
    o.effects = 4;
    Results r;
    if (!estimable([&] { r = estimate(p, o); })) continue;
    ++v.cases;
    for (std::size_t i = 0; i < r.dose_abs.size(); ++i)
      if (r.dose_abs[i] && *r.dose_abs[i] != static_cast<double>(i + 1))
        v.fail("panel " + std::to_string(attempts) + " horizon " + std::to_string(i + 1) + " dose " + num(*r.dose_abs[i]));
  }
  if (v.cases < panels) v.fail("only " + std::to_string(v.cases) + " estimable panels");
  return v;
}

inline void compare_exact(const EffectEstimate& a, const EffectEstimate& b, const std::string& what, Verdict& v) {
  if (a.point.has_value() != b.point.has_value()) return v.fail(what + " availability");
  if (!a.point) return;
  if (*a.point != *b.point) v.fail(what + " point " + num(*a.point) + " vs " + num(*b.point));
  if (!(a.variance == b.variance || (std::isnan(a.variance) && std::isnan(b.variance))))
    v.fail(what + " variance " + num(a.variance) + " vs " + num(b.variance));
}

inline void compare_results_exact(const Results& a, const Results& b, Verdict& v) {
  if (a.effects.size() != b.effects.size() || a.placebos.size() != b.placebos.size())
    return v.fail("different number of estimates");
  for (std::size_t i = 0; i < a.effects.size(); ++i) {
    compare_exact(a.effects[i], b.effects[i], "effect_" + std::to_string(i + 1), v);
    compare_exact(a.normalized[i], b.normalized[i], "normalized_" + std::to_string(i + 1), v);
  }
  for (std::size_t i = 0; i < a.placebos.size(); ++i)
    compare_exact(a.placebos[i], b.placebos[i], "placebo_" + std::to_string(i + 1), v);
  if (a.average.has_value() != b.average.has_value()) return v.fail("average availability");
  if (a.average) compare_exact(*a.average, *b.average, "average", v);
}

enum class Degeneracy { single_supergroup, cluster_per_group };

inline Verdict degeneracy_is_exact(Degeneracy kind, std::uint64_t seed, int panels) {
  Verdict v;
  std::mt19937_64 rng(seed);
  int attempts = 0;
  while (v.cases < panels && attempts < 20 * panels) {
    ++attempts;
    Panel p = fixtures::random_panel(rng);
    Options base;
    base.effects = 3;
    base.placebos = 2;
    Panel q = p;
    Options alt = base;
    for (auto& g : q.groups) {
      if (kind == Degeneracy::single_supergroup) g.supergroup = "all";
      else g.cluster = g.id;
    }
    if (kind == Degeneracy::single_supergroup) alt.trends_nonparam = true;
    else alt.cluster = true;
    Results a, b;
    if (!estimable([&] { a = estimate(p, base); })) continue;
    b = estimate(q, alt);
    ++v.cases;
    Verdict one;
    compare_results_exact(a, b, one);
    if (!one.ok) v.fail("panel " + std::to_string(attempts) + ": " + one.detail);
  }
  if (v.cases < panels) v.fail("only " + std::to_string(v.cases) + " estimable panels");
  return v;
}

inline Verdict common_trend_placebos_zero(std::uint64_t seed, int panels) {
  Verdict v;
  std::mt19937_64 rng(seed);
  int attempts = 0, nonempty = 0;
  while (v.cases < panels && attempts < 20 * panels) {
    ++attempts;
    Panel p = common_trend_panel(rng);
    Options o;
    o.effects = 3;
    o.placebos = 3;
    Results r;
    if (!estimable([&] { r = estimate(p, o); })) continue;
    ++v.cases;
    for (const auto& e : r.placebos)
      if (e.point) {
        ++nonempty;
        if (*e.point != 0.0)
          v.fail("panel " + std::to_string(attempts) + " placebo " + std::to_string(e.horizon) + " = " + num(*e.point));
      }
  }
  if (v.cases < panels) v.fail("only " + std::to_string(v.cases) + " estimable panels");
  if (nonempty == 0) v.fail("no placebo was estimable");
  return v;
}

inline Verdict missing_fixture_golden() {
  Verdict v;
  const auto& cs = fixtures::missing_cases();
  for (auto policy : {MissingPolicy::liberal, MissingPolicy::conservative}) {
    AuditLog log;
    auto out = apply_missing_treatment_rules(fixtures::missing_fixture_panel(), policy, log);
    const bool lib = policy == MissingPolicy::liberal;
    for (std::size_t g = 0; g < cs.size(); ++g) {
      ++v.cases;
      const auto d = fixtures::treatment_string(out.groups[g], 5), y = fixtures::outcome_mask(out.groups[g], 5);
      const auto& wd = lib ? cs[g].d_liberal : cs[g].d_conservative;
      const auto& wy = lib ? cs[g].y_liberal : cs[g].y_conservative;
      if (d != wd || y != wy)
        v.fail(std::string(lib ? "liberal" : "conservative") + " group " + std::to_string(g + 1) + " (" + cs[g].what +
               "): D " + d + " Y " + y + ", expected D " + wd + " Y " + wy);
    }
  }
  return v;
}

}  // namespace esdid::checks
