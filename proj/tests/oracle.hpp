#pragma once

// Direct evaluation of the event-study estimators from their definitions: every
// quantity is recomputed with plain loops over groups, without the sample,
// pool or influence machinery of the library.

#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "esdid/panel_ingest.hpp"

namespace esdid::oracle {

struct GroupFacts {
  bool usable = false;
  double d1 = 0.0;
  int F = 0;   // T + 1 for never-switchers
  int S = 0;   // +1 in, -1 out, 0 never
  int Tg = 0;
};

inline std::vector<GroupFacts> facts(const Panel& p) {
  const int T = p.T;
  std::vector<GroupFacts> f(p.groups.size());
  for (std::size_t g = 0; g < p.groups.size(); ++g) {
    const auto& d = p.groups[g].d;
    int first = 0;
    for (int t = 1; t <= T && !first; ++t)
      if (d[t]) first = t;
    if (!first) continue;
    f[g].usable = true;
    f[g].d1 = *d[first];
    f[g].F = T + 1;
    for (int t = first + 1; t <= T; ++t)
      if (d[t] && *d[t] != f[g].d1) {
        f[g].F = t;
        f[g].S = *d[t] > f[g].d1 ? 1 : -1;
        break;
      }
  }
  for (auto& a : f) {
    if (!a.usable) continue;
    int m = 0;
    for (const auto& b : f)
      if (b.usable && b.d1 == a.d1) m = std::max(m, b.F);
    a.Tg = m - 1;
  }
  return f;
}

struct Result {
  std::vector<std::optional<double>> did, did_plus, did_minus, dose_abs, normalized, placebo;
  std::optional<double> average;
  std::vector<std::set<int>> effect_switchers, placebo_switchers;
};

inline Result evaluate(const Panel& p, int L, int P) {
  const auto f = facts(p);
  const int T = p.T;
  const int G = static_cast<int>(p.groups.size());
  auto Y = [&](int g, int t) -> std::optional<double> {
    if (t < 1 || t > T) return std::nullopt;
    return p.groups[g].y[t];
  };
  auto N = [&](int g, int t) { return p.groups[g].n[t]; };
  auto D = [&](int g, int t) { return p.groups[g].d[t]; };

  Result r;
  std::vector<double> mass1(L + 1, 0.0), mass0(L + 1, 0.0), did1(L + 1, 0.0), did0(L + 1, 0.0);
  std::vector<double> dd1(L + 1, 0.0), dd0(L + 1, 0.0);
  for (int l = 1; l <= L; ++l) {
    std::set<int> members;
    double dabs = 0.0;
    for (int g = 0; g < G; ++g) {
      const auto& a = f[g];
      if (!a.usable || a.S == 0) continue;
      const int t = a.F - 1 + l;
      if (t > a.Tg || t > T) continue;
      if (!Y(g, t) || !Y(g, a.F - 1) || N(g, t) <= 0.0) continue;
      bool dose = true;
      for (int k = a.F; k <= t; ++k) dose = dose && D(g, k).has_value();
      if (!dose) continue;
      double Ng = 0.0, ctrl = 0.0;
      for (int h = 0; h < G; ++h) {
        const auto& b = f[h];
        if (!b.usable || b.d1 != a.d1 || b.F <= t) continue;
        if (!Y(h, t) || !Y(h, t - l) || N(h, t) <= 0.0) continue;
        Ng += N(h, t);
        ctrl += N(h, t) * (*Y(h, t) - *Y(h, t - l));
      }
      if (Ng <= 0.0) continue;
      members.insert(g);
      const double did_g = (*Y(g, t) - *Y(g, a.F - 1)) - ctrl / Ng;
      double cum = 0.0;
      for (int k = a.F; k <= t; ++k) cum += *D(g, k) - a.d1;
      dabs += N(g, t) * std::fabs(cum);
      if (a.S > 0) {
        mass1[l] += N(g, t);
        did1[l] += N(g, t) * did_g;
        dd1[l] += N(g, t) * (*D(g, t) - a.d1);
      } else {
        mass0[l] += N(g, t);
        did0[l] -= N(g, t) * did_g;
        dd0[l] += N(g, t) * (a.d1 - *D(g, t));
      }
    }
    r.effect_switchers.push_back(members);
    const double m = mass1[l] + mass0[l];
    r.did_plus.push_back(mass1[l] > 0 ? std::optional<double>(did1[l] / mass1[l]) : std::nullopt);
    r.did_minus.push_back(mass0[l] > 0 ? std::optional<double>(did0[l] / mass0[l]) : std::nullopt);
    if (m > 0) {
      const double v = (did1[l] + did0[l]) / m;
      r.did.push_back(v);
      r.dose_abs.push_back(dabs / m);
      r.normalized.push_back(dabs > 0 ? std::optional<double>(v / (dabs / m)) : std::nullopt);
    } else {
      r.did.push_back(std::nullopt);
      r.dose_abs.push_back(std::nullopt);
      r.normalized.push_back(std::nullopt);
    }
  }

  // Dose-weighted average over the estimated horizons.
  double tot1 = 0.0, tot0 = 0.0;
  for (int l = 1; l <= L; ++l) {
    tot1 += mass1[l];
    tot0 += mass0[l];
  }
  double num1 = 0.0, den1 = 0.0, num0 = 0.0, den0 = 0.0;
  for (int l = 1; l <= L; ++l) {
    if (mass1[l] > 0) {
      const double w = mass1[l] / tot1;
      num1 += w * did1[l] / mass1[l];
      den1 += w * dd1[l] / mass1[l];
    }
    if (mass0[l] > 0) {
      const double w = mass0[l] / tot0;
      num0 += w * did0[l] / mass0[l];
      den0 += w * dd0[l] / mass0[l];
    }
  }
  const double a = den1 * tot1, b = den0 * tot0;
  if (a + b != 0.0 && (tot1 == 0 || den1 != 0) && (tot0 == 0 || den0 != 0)) {
    const double wp = a / (a + b);
    r.average = (tot1 > 0 ? wp * num1 / den1 : 0.0) + (tot0 > 0 ? (1 - wp) * num0 / den0 : 0.0);
  }

  for (int l = 1; l <= P && l <= L; ++l) {
    std::set<int> members;
    double num = 0.0, mass = 0.0;
    for (int g : r.effect_switchers[l - 1]) {
      const auto& a = f[g];
      const int t = a.F - 1 + l;
      const int pre = a.F - 1 - l;
      if (pre < 1 || !Y(g, pre)) continue;
      double Ng = 0.0, ctrl = 0.0;
      for (int h = 0; h < G; ++h) {
        const auto& b = f[h];
        if (!b.usable || b.d1 != a.d1 || b.F <= t) continue;
        if (!Y(h, t) || !Y(h, a.F - 1) || !Y(h, pre) || N(h, t) <= 0.0) continue;
        Ng += N(h, t);
        ctrl += N(h, t) * (*Y(h, pre) - *Y(h, a.F - 1));
      }
      if (Ng <= 0.0) continue;
      members.insert(g);
      const double v = (*Y(g, pre) - *Y(g, a.F - 1)) - ctrl / Ng;
      num += N(g, t) * (a.S > 0 ? v : -v);
      mass += N(g, t);
    }
    r.placebo_switchers.push_back(members);
    r.placebo.push_back(mass > 0 ? std::optional<double>(num / mass) : std::nullopt);
  }
  return r;
}

}  // namespace esdid::oracle
