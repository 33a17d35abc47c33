#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "esdid/common.hpp"
#include "esdid/design_classifier.hpp"

namespace esdid {

struct SideAggregate {
  std::optional<double> did;
  double mass = 0.0;
  int count = 0;
  std::optional<double> dose_delta;  // average D_{F-1+l} - D_1, sign-aligned with the side
};

struct HorizonEstimate {
  Contrast c;
  SideAggregate side[2];
  std::optional<double> did;
  double mass = 0.0;
  int count = 0;
  std::optional<double> dose_abs;  // average |cumulated dose change|, normalizes effect l
  std::vector<double> group_did;   // raw DID_{g,l}, aligned with sample.switchers
};

// Switcher's outcome change minus the weighted mean change of its not-yet-switched controls.
inline std::optional<double> did_gl(const Design& des, const HorizonSample& hs, int g) {
  if (!hs.has(g)) return std::nullopt;
  const auto& sw = hs.switchers[hs.slot[g]];
  const auto& p = hs.pool(des.key[g], sw.t);
  CompensatedSum ctrl;
  for (std::size_t i = 0; i < p.groups.size(); ++i) ctrl += des.n[p.groups[i]][sw.t] * p.diff[i];
  return sw.diff - ctrl.value() / p.mass;
}

inline HorizonEstimate aggregate(const Design& des, const HorizonSample& hs) {
  HorizonEstimate est;
  est.c = hs.c;
  CompensatedSum did[2], dose[2], dabs;
  est.group_did.reserve(hs.switchers.size());
  for (const auto& sw : hs.switchers) {
    const double v = *did_gl(des, hs, sw.g);
    est.group_did.push_back(v);
    const int s = static_cast<int>(sw.side);
    const double sign = sw.side == Side::plus ? 1.0 : -1.0;
    did[s] += sw.n * sign * v;
    const auto& sc = des.sched[sw.g];
    const double base = des.dose_base[sw.g];
    dose[s] += sw.n * sign * (*des.dose[sw.g][sw.t] - base);
    CompensatedSum cum;
    for (int k = sc.F; k <= sw.t; ++k) cum += *des.dose[sw.g][k] - base;
    dabs += sw.n * std::fabs(cum.value());
  }
  CompensatedSum num, mass;
  for (int s = 0; s < 2; ++s) {
    auto& sa = est.side[s];
    sa.mass = hs.mass[s];
    sa.count = hs.count[s];
    if (sa.mass > 0.0) {
      sa.did = did[s].value() / sa.mass;
      sa.dose_delta = dose[s].value() / sa.mass;
      num += sa.mass * *sa.did;
      mass += sa.mass;
    }
  }
  est.mass = mass.value();
  est.count = hs.count[0] + hs.count[1];
  if (est.mass > 0.0) {
    est.did = num.value() / est.mass;
    est.dose_abs = dabs.value() / est.mass;
  }
  return est;
}

// Horizon weights and the dose-weighted average of effects per unit of treatment.
struct DoseDeltas {
  std::vector<double> w_plus_l, w_minus_l;
  std::vector<double> delta_plus_l, delta_minus_l, delta_l;
  double denom_plus = 0.0, denom_minus = 0.0;
  double w_plus = 1.0;
};

struct AverageTotal {
  std::optional<double> value, plus, minus;
  DoseDeltas doses;
  double mass = 0.0;
  int count = 0;
};

inline AverageTotal average_total_effect(const std::vector<HorizonEstimate>& effects) {
  AverageTotal out;
  auto& dd = out.doses;
  const std::size_t L = effects.size();
  dd.w_plus_l.assign(L, 0.0);
  dd.w_minus_l.assign(L, 0.0);
  dd.delta_plus_l.assign(L, 0.0);
  dd.delta_minus_l.assign(L, 0.0);
  dd.delta_l.assign(L, 0.0);
  CompensatedSum tot[2];
  for (const auto& e : effects)
    for (int s = 0; s < 2; ++s)
      if (e.side[s].did) tot[s] += e.side[s].mass;
  const double total[2] = {tot[0].value(), tot[1].value()};
  CompensatedSum num[2], den[2];
  for (std::size_t l = 0; l < L; ++l) {
    const auto& e = effects[l];
    dd.delta_l[l] = e.dose_abs.value_or(0.0);
    for (int s = 0; s < 2; ++s) {
      if (!e.side[s].did) continue;
      const double w = e.side[s].mass / total[s];
      (s == 0 ? dd.w_plus_l : dd.w_minus_l)[l] = w;
      (s == 0 ? dd.delta_plus_l : dd.delta_minus_l)[l] = *e.side[s].dose_delta;
      num[s] += w * *e.side[s].did;
      den[s] += w * *e.side[s].dose_delta;
    }
    out.mass = std::max(out.mass, e.mass);
    out.count = std::max(out.count, e.count);
  }
  dd.denom_plus = den[0].value();
  dd.denom_minus = den[1].value();
  if (total[0] > 0.0 && dd.denom_plus != 0.0) out.plus = num[0].value() / dd.denom_plus;
  if (total[1] > 0.0 && dd.denom_minus != 0.0) out.minus = num[1].value() / dd.denom_minus;
  const double a = total[0] > 0.0 ? dd.denom_plus * total[0] : 0.0;
  const double b = total[1] > 0.0 ? dd.denom_minus * total[1] : 0.0;
  if (a + b == 0.0) return out;
  dd.w_plus = a / (a + b);
  if ((total[0] > 0.0 && !out.plus) || (total[1] > 0.0 && !out.minus)) return out;
  out.value = (out.plus ? dd.w_plus * *out.plus : 0.0) + (out.minus ? (1.0 - dd.w_plus) * *out.minus : 0.0);
  return out;
}

inline std::optional<double> normalize(const HorizonEstimate& e) {
  if (!e.did || !e.dose_abs || *e.dose_abs == 0.0) return std::nullopt;
  return *e.did / *e.dose_abs;
}

// First difference of every series; period 1 becomes missing.
inline std::vector<Series> first_difference(const std::vector<Series>& z) {
  std::vector<Series> out(z.size());
  for (std::size_t g = 0; g < z.size(); ++g) {
    out[g].assign(z[g].size(), std::nullopt);
    for (std::size_t t = 2; t < z[g].size(); ++t)
      if (z[g][t] && z[g][t - 1]) out[g][t] = *z[g][t] - *z[g][t - 1];
  }
  return out;
}

}  // namespace esdid
