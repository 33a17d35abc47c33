#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "esdid/common.hpp"
#include "esdid/design_classifier.hpp"
#include "esdid/point_estimators.hpp"

namespace esdid {

// Demeaning target and small-sample inflation for one set.
struct DemeanStat {
  double ehat = 0.0;
  double dof = 1.0;
  int size = 0;  // groups, or distinct clusters when clustering
};

// One additive piece of a side's influence variable: coef * (difference of g at t).
// Switcher pieces have coef > 0; control pieces carry the minus sign.
struct Term {
  int g = 0;
  int t = 0;
  double coef = 0.0;
  double diff = 0.0;
  int stat = 0;
  bool switcher = false;
};

struct SideTerms {
  std::vector<Term> terms;
  std::vector<DemeanStat> stats;
};

struct HorizonTerms {
  SideTerms side[2];
};

namespace detail {

inline int distinct(std::vector<int> v) {
  std::sort(v.begin(), v.end());
  return static_cast<int>(std::unique(v.begin(), v.end()) - v.begin());
}

struct Members {
  std::vector<int> clusters;
  CompensatedSum wsum, wdiff;
  void add(int cluster, double n, double diff) {
    clusters.push_back(cluster);
    wsum += n;
    wdiff += n * diff;
  }
};

inline DemeanStat stat_of(const Members& m, int count) {
  DemeanStat s;
  s.size = count;
  s.ehat = m.wdiff.value() / m.wsum.value();
  s.dof = std::sqrt(static_cast<double>(count) / (count - 1));
  return s;
}

}  // namespace detail

inline HorizonTerms build_terms(const Design& des, const HorizonSample& hs) {
  HorizonTerms out;
  const int T = des.T;
  for (int s = 0; s < 2; ++s) {
    if (hs.mass[s] <= 0.0) continue;
    auto& st = out.side[s];
    const double side_mass = hs.mass[s];

    // Same-side switchers by (class, t), used when a set must be widened.
    std::map<std::pair<int, int>, detail::Members> sw_at;
    std::map<std::vector<double>, detail::Members> cohorts;
    std::vector<std::vector<double>> cohort_key(hs.switchers.size());
    for (std::size_t i = 0; i < hs.switchers.size(); ++i) {
      const auto& sw = hs.switchers[i];
      if (static_cast<int>(sw.side) != s) continue;
      const auto& sc = des.sched[sw.g];
      sw_at[{des.key[sw.g], sw.t}].add(des.cluster[sw.g], sw.n, sw.diff);
      std::vector<double> k{static_cast<double>(des.key[sw.g]), static_cast<double>(sc.F)};
      const int last = des.granular ? sw.t : sc.F;
      for (int u = sc.F; u <= last; ++u) k.push_back(*des.d[sw.g][u]);
      cohorts[k].add(des.cluster[sw.g], sw.n, sw.diff);
      cohort_key[i] = std::move(k);
    }

    // Pooled not-yet-switchers plus same-side switchers at (class, t).
    auto widened = [&](int key, int t) {
      const auto& p = hs.pool(key, t);
      const auto& sm = sw_at.at({key, t});
      std::vector<int> cl = sm.clusters;
      for (int g : p.groups) cl.push_back(des.cluster[g]);
      const int n = detail::distinct(cl);
      DemeanStat d;
      d.size = n;
      if (n > 1) {
        d.ehat = (p.mean * p.mass + sm.wdiff.value()) / (p.mass + sm.wsum.value());
        d.dof = std::sqrt(static_cast<double>(n) / (n - 1));
      } else if (!des.clustered) {
        throw std::logic_error("demeaning set with a single group outside clustering");
      }
      return d;
    };

    std::map<std::vector<double>, int> cohort_stat;
    for (std::size_t i = 0; i < hs.switchers.size(); ++i) {
      const auto& sw = hs.switchers[i];
      if (static_cast<int>(sw.side) != s) continue;
      auto it = cohort_stat.find(cohort_key[i]);
      if (it == cohort_stat.end()) {
        const auto& cm = cohorts.at(cohort_key[i]);
        const int n = detail::distinct(cm.clusters);
        st.stats.push_back(n > 1 ? detail::stat_of(cm, n) : widened(des.key[sw.g], sw.t));
        it = cohort_stat.emplace(cohort_key[i], static_cast<int>(st.stats.size()) - 1).first;
      }
      st.terms.push_back({sw.g, sw.t, sw.n / side_mass, sw.diff, it->second, true});
    }

    for (int key = 0; key < des.n_keys; ++key)
      for (int t = 1; t <= T; ++t) {
        const auto& p = hs.pool(key, t);
        if (p.sw_mass[s] <= 0.0) continue;
        std::vector<int> cl;
        cl.reserve(p.groups.size());
        for (int g : p.groups) cl.push_back(des.cluster[g]);
        const int n = detail::distinct(cl);
        DemeanStat d;
        if (n > 1) {
          d.size = n;
          d.ehat = p.mean;
          d.dof = std::sqrt(static_cast<double>(n) / (n - 1));
        } else {
          d = widened(key, t);
        }
        st.stats.push_back(d);
        const int idx = static_cast<int>(st.stats.size()) - 1;
        const double factor = p.sw_mass[s] / (p.mass * side_mass);
        for (std::size_t i = 0; i < p.groups.size(); ++i) {
          const int g = p.groups[i];
          st.terms.push_back({g, t, -des.n[g][t] * factor, p.diff[i], idx, false});
        }
      }
  }
  return out;
}

// Per-side influence variables; the minus side is sign-flipped so that both
// average to their side's effect.
struct SideInfluence {
  std::vector<double> u[2], var[2];
};

inline SideInfluence influence_from_terms(const Design& des, const HorizonTerms& ht) {
  const int G = des.G();
  SideInfluence out;
  for (int s = 0; s < 2; ++s) {
    std::vector<CompensatedSum> u(G), v(G);
    for (const auto& tm : ht.side[s].terms) {
      const auto& st = ht.side[s].stats[tm.stat];
      u[tm.g] += tm.coef * tm.diff;
      v[tm.g] += tm.coef * st.dof * (tm.diff - st.ehat);
    }
    const double scale = (s == 0 ? 1.0 : -1.0) * G;
    out.u[s].resize(G);
    out.var[s].resize(G);
    for (int g = 0; g < G; ++g) {
      out.u[s][g] = scale * u[g].value();
      out.var[s][g] = scale * v[g].value();
    }
  }
  return out;
}

struct Influence {
  std::vector<double> u, var;
};

inline Influence combine_sides(const SideInfluence& si, double mass_plus, double mass_minus) {
  Influence out;
  const std::size_t G = si.u[0].size();
  out.u.assign(G, 0.0);
  out.var.assign(G, 0.0);
  const double tot = mass_plus + mass_minus;
  if (tot <= 0.0) return out;
  const double a = mass_plus / tot, b = mass_minus / tot;
  for (std::size_t g = 0; g < G; ++g) {
    out.u[g] = a * si.u[0][g] + b * si.u[1][g];
    out.var[g] = a * si.var[0][g] + b * si.var[1][g];
  }
  return out;
}

inline Influence scale(const Influence& in, double k) {
  Influence out = in;
  for (auto& v : out.u) v *= k;
  for (auto& v : out.var) v *= k;
  return out;
}

// Sum within cluster, square, sum across clusters, divide by G^2.
inline double cluster_variance(const Design& des, const std::vector<double>& uvar) {
  std::vector<CompensatedSum> by(des.n_clusters);
  for (int g = 0; g < des.G(); ++g) by[des.cluster[g]] += uvar[g];
  CompensatedSum ss;
  for (const auto& c : by) ss += c.value() * c.value();
  const double G = des.G();
  return ss.value() / (G * G);
}

inline Eigen::MatrixXd cluster_covariance(const Design& des, const std::vector<const std::vector<double>*>& cols) {
  const int k = static_cast<int>(cols.size());
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(des.n_clusters, k);
  for (int j = 0; j < k; ++j)
    for (int g = 0; g < des.G(); ++g) sums(des.cluster[g], j) += (*cols[j])[g];
  const double G = des.G();
  return sums.transpose() * sums / (G * G);
}

// Mean of an influence column; should reproduce its point estimate.
inline double influence_mean(const std::vector<double>& u) {
  CompensatedSum s;
  for (double v : u) s += v;
  return s.value() / static_cast<double>(u.size());
}

// Average-total-effect influence built from per-horizon side influences.
inline Influence average_influence(const std::vector<SideInfluence>& per_l, const DoseDeltas& dd) {
  const std::size_t G = per_l.empty() ? 0 : per_l.front().u[0].size();
  Influence out;
  out.u.assign(G, 0.0);
  out.var.assign(G, 0.0);
  for (std::size_t g = 0; g < G; ++g) {
    CompensatedSum up, um, vp, vm;
    for (std::size_t l = 0; l < per_l.size(); ++l) {
      up += dd.w_plus_l[l] * per_l[l].u[0][g];
      vp += dd.w_plus_l[l] * per_l[l].var[0][g];
      um += dd.w_minus_l[l] * per_l[l].u[1][g];
      vm += dd.w_minus_l[l] * per_l[l].var[1][g];
    }
    double p = dd.denom_plus != 0.0 ? up.value() / dd.denom_plus : 0.0;
    double m = dd.denom_minus != 0.0 ? um.value() / dd.denom_minus : 0.0;
    double pv = dd.denom_plus != 0.0 ? vp.value() / dd.denom_plus : 0.0;
    double mv = dd.denom_minus != 0.0 ? vm.value() / dd.denom_minus : 0.0;
    out.u[g] = dd.w_plus * p + (1.0 - dd.w_plus) * m;
    out.var[g] = dd.w_plus * pv + (1.0 - dd.w_plus) * mv;
  }
  return out;
}

}  // namespace esdid
