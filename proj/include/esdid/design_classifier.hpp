#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "esdid/common.hpp"
#include "esdid/panel_ingest.hpp"

namespace esdid {

struct GroupSchedule {
  std::string group_id;
  bool has_treatment = false;
  double d1 = 0.0;
  int FD = 0;  // first period with an observed treatment
  int F = 0;   // first period whose treatment differs from baseline; T+1 if none
  Switch S = Switch::never;
  int Tg = 0;
  int supergroup = 0;
  std::vector<double> path;  // treatments from F onward; empty for never-switchers
};

inline std::vector<GroupSchedule> classify(const Panel& panel, double tol = 0.0) {
  std::vector<GroupSchedule> out;
  out.reserve(panel.groups.size());
  const int T = panel.T;
  for (const auto& g : panel.groups) {
    GroupSchedule s;
    s.group_id = g.id;
    s.F = T + 1;
    for (int t = 1; t <= T; ++t)
      if (g.d[t]) {
        s.FD = t;
        break;
      }
    if (s.FD) {
      s.has_treatment = true;
      s.d1 = *g.d[s.FD];
      for (int t = s.FD + 1; t <= T; ++t)
        if (g.d[t] && !same_value(*g.d[t], s.d1, tol)) {
          s.F = t;
          s.S = *g.d[t] > s.d1 ? Switch::in : Switch::out;
          break;
        }
      if (s.S != Switch::never)
        for (int t = s.F; t <= T; ++t)
          if (g.d[t]) s.path.push_back(*g.d[t]);
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline void check_design_restriction_1(const std::vector<GroupSchedule>& sched) {
  std::map<double, std::set<int>> dates;
  std::map<double, int> counts;
  for (const auto& s : sched)
    if (s.has_treatment) {
      dates[s.d1].insert(s.F);
      counts[s.d1]++;
    }
  for (const auto& kv : dates)
    if (kv.second.size() > 1) return;
  bool shared = std::any_of(counts.begin(), counts.end(), [](const auto& kv) { return kv.second > 1; });
  if (!shared)
    throw DesignRestrictionViolation(
        "no two groups share the same baseline treatment; consider the continuous option");
  throw DesignRestrictionViolation(
      "no heterogeneity in the date of first treatment change among groups with the same baseline "
      "treatment; consider the continuous option");
}

// Drops every cell from the first period at which the group has been both strictly
// above and strictly below its baseline treatment.
inline Panel enforce_design_restriction_2(Panel panel, const std::vector<GroupSchedule>& sched,
                                          bool dont_drop_larger_lower, AuditLog& log, double tol = 0.0) {
  if (dont_drop_larger_lower) return panel;
  for (std::size_t i = 0; i < panel.groups.size(); ++i) {
    const auto& s = sched[i];
    auto& g = panel.groups[i];
    if (!s.has_treatment) continue;
    bool above = false, below = false;
    for (int t = s.FD; t <= panel.T; ++t) {
      if (g.d[t] && !same_value(*g.d[t], s.d1, tol)) {
        if (*g.d[t] > s.d1) above = true;
        if (*g.d[t] < s.d1) below = true;
      }
      if (above && below) {
        for (int u = t; u <= panel.T; ++u) {
          bool had = g.y[u] || g.d[u];
          g.drop_cell(u);
          if (had) log.add(g.id, panel.label(u), "treatment both above and below baseline", "dropped");
        }
        break;
      }
    }
  }
  return panel;
}

// Switchers whose post-switch average treatment equals the baseline have no first stage.
inline Panel drop_switchers_without_first_stage(Panel panel, const std::vector<GroupSchedule>& sched,
                                                AuditLog& log, double tol = 0.0) {
  std::vector<GroupSeries> kept;
  kept.reserve(panel.groups.size());
  for (std::size_t i = 0; i < panel.groups.size(); ++i) {
    const auto& s = sched[i];
    auto& g = panel.groups[i];
    if (!s.has_treatment) {
      log.add(g.id, 0, "group without any observed treatment", "group dropped");
      continue;
    }
    if (s.S != Switch::never) {
      CompensatedSum sum;
      int cnt = 0;
      for (int t = s.F; t <= panel.T; ++t)
        if (g.d[t]) {
          sum += *g.d[t];
          ++cnt;
        }
      if (cnt > 0 && same_value(sum.value() / cnt, s.d1, tol)) {
        log.add(g.id, 0, "post-switch average treatment equals baseline", "group dropped");
        continue;
      }
    }
    kept.push_back(std::move(g));
  }
  panel.groups = std::move(kept);
  return panel;
}

// ---------------------------------------------------------------------------
// Estimation design.

struct DesignOptions {
  bool supergroups = false;
  bool clustered = false;
  bool granular = false;
  double tol = 0.0;
};

struct Design {
  int T = 0;
  std::vector<std::string> ids;
  std::vector<GroupSchedule> sched;
  std::vector<Series> d;        // treatment defining switch dates and cohorts
  std::vector<Series> dose;     // treatment entering dose quantities
  std::vector<double> dose_base;
  std::vector<std::vector<double>> n;
  std::vector<int> key;         // (baseline, supergroup) class
  std::vector<int> cluster;
  int n_keys = 0;
  int n_clusters = 0;
  bool clustered = false;
  bool granular = false;
  int L_in = 0, L_out = 0;

  int G() const { return static_cast<int>(ids.size()); }
};

// Assigns classes and T_g. `dose` overrides the dose treatment (continuous mode).
inline Design build_design(const Panel& panel, std::vector<GroupSchedule> sched, const DesignOptions& opt,
                           const std::vector<Series>* dose = nullptr,
                           const std::vector<double>* dose_base = nullptr) {
  Design des;
  des.T = panel.T;
  des.clustered = opt.clustered;
  des.granular = opt.granular;
  const int G = static_cast<int>(panel.groups.size());
  std::map<std::string, int> sg_index, cl_index;
  std::map<std::pair<double, int>, int> key_index;
  for (int g = 0; g < G; ++g) {
    const auto& gs = panel.groups[g];
    des.ids.push_back(gs.id);
    int sg = 0;
    if (opt.supergroups) {
      std::string v = gs.supergroup.value_or("");
      auto [it, fresh] = sg_index.emplace(v, static_cast<int>(sg_index.size()));
      (void)fresh;
      sg = it->second;
    }
    sched[g].supergroup = sg;
    auto [kit, kf] = key_index.emplace(std::make_pair(sched[g].d1, sg), static_cast<int>(key_index.size()));
    (void)kf;
    des.key.push_back(kit->second);
    int cl = g;
    if (opt.clustered) {
      if (!gs.cluster) throw InputError("group " + gs.id + " has no cluster value");
      auto [cit, cf] = cl_index.emplace(*gs.cluster, static_cast<int>(cl_index.size()));
      (void)cf;
      cl = cit->second;
    }
    des.cluster.push_back(cl);
    des.d.push_back(gs.d);
    des.n.push_back(gs.n);
  }
  des.n_keys = static_cast<int>(key_index.size());
  des.n_clusters = opt.clustered ? static_cast<int>(cl_index.size()) : G;
  if (dose) {
    des.dose = *dose;
    des.dose_base = *dose_base;
  } else {
    des.dose = des.d;
    for (const auto& s : sched) des.dose_base.push_back(s.d1);
  }

  std::vector<int> last(des.n_keys, 0);
  for (int g = 0; g < G; ++g) last[des.key[g]] = std::max(last[des.key[g]], sched[g].F - 1);
  for (int g = 0; g < G; ++g) {
    auto& s = sched[g];
    s.Tg = last[des.key[g]];
    if (s.S == Switch::never || s.F > s.Tg) continue;
    int L = s.Tg - s.F + 1;
    if (s.S == Switch::in) des.L_in = std::max(des.L_in, L);
    else des.L_out = std::max(des.L_out, L);
  }
  des.sched = std::move(sched);
  return des;
}

struct ControlMass {
  std::string group_id;
  int period = 0;
  double Ng_t = 0.0;
};

struct HorizonInfo {
  std::vector<ControlMass> masses;
  int L_u = 0, L_a = 0;
  std::vector<std::string> dropped;  // switchers with no control mass at some needed period
};

// Plain control masses N^g_t (outcome-weight of not-yet-switchers sharing g's class),
// for every switcher and every t in [F, T_g].
inline HorizonInfo compute_horizons_and_masses(const Design& des) {
  HorizonInfo info;
  info.L_u = des.L_in;
  info.L_a = des.L_out;
  const int G = des.G();
  std::vector<std::vector<double>> mass(des.n_keys, std::vector<double>(des.T + 2, 0.0));
  for (int g = 0; g < G; ++g)
    for (int t = 1; t <= des.T; ++t)
      if (des.sched[g].F > t) mass[des.key[g]][t] += des.n[g][t];
  for (int g = 0; g < G; ++g) {
    const auto& s = des.sched[g];
    if (s.S == Switch::never) continue;
    bool dropped = s.F > s.Tg;
    for (int t = s.F; t <= std::min(s.Tg, des.T); ++t) {
      double m = mass[des.key[g]][t];
      info.masses.push_back({s.group_id, t, m});
      if (m <= 0.0) dropped = true;
    }
    if (dropped) info.dropped.push_back(s.group_id);
  }
  return info;
}

// ---------------------------------------------------------------------------
// One comparison horizon: effect l compares t = F-1+l with t-l;
// placebo l compares t-2l with t-l, anchored at the same t.

struct Contrast {
  int l = 1;
  bool placebo = false;

  std::optional<double> diff(const Series& z, int t) const {
    if (t - l < 1 || t >= static_cast<int>(z.size())) return std::nullopt;
    const auto& a = z[t];
    const auto& b = z[t - l];
    if (!a || !b) return std::nullopt;
    if (!placebo) return *a - *b;
    if (t - 2 * l < 1) return std::nullopt;
    const auto& c = z[t - 2 * l];
    if (!c) return std::nullopt;
    return *c - *b;
  }
};

// Not-yet-switchers of one class at one period with a usable difference.
struct Pool {
  std::vector<int> groups;
  std::vector<double> diff;
  double mass = 0.0;
  double mean = 0.0;
  double sw_mass[2] = {0.0, 0.0};
};

struct SwitcherCell {
  int g = 0;
  int t = 0;
  double n = 0.0;
  double diff = 0.0;
  Side side = Side::plus;
};

struct HorizonSample {
  Contrast c;
  int T = 0;
  std::vector<Pool> pools;  // [key * (T + 1) + t]
  std::vector<SwitcherCell> switchers;  // ascending group order
  std::vector<int> slot;                // group -> index in switchers, or -1
  double mass[2] = {0.0, 0.0};
  int count[2] = {0, 0};

  const Pool& pool(int key, int t) const { return pools[static_cast<std::size_t>(key) * (T + 1) + t]; }
  bool has(int g) const { return slot[g] >= 0; }
  bool empty() const { return switchers.empty(); }
};

inline HorizonSample build_horizon_sample(const Design& des, const std::vector<Series>& z, Contrast c,
                                          const std::vector<char>& allowed) {
  HorizonSample hs;
  hs.c = c;
  hs.T = des.T;
  const int G = des.G(), T = des.T;
  hs.pools.assign(static_cast<std::size_t>(des.n_keys) * (T + 1), Pool{});
  hs.slot.assign(G, -1);
  std::vector<CompensatedSum> m(hs.pools.size()), wd(hs.pools.size());
  for (int g = 0; g < G; ++g) {
    const int F = des.sched[g].F;
    for (int t = c.l + 1; t <= T && t < F; ++t) {
      if (des.n[g][t] <= 0.0) continue;
      auto v = c.diff(z[g], t);
      if (!v) continue;
      std::size_t k = static_cast<std::size_t>(des.key[g]) * (T + 1) + t;
      hs.pools[k].groups.push_back(g);
      hs.pools[k].diff.push_back(*v);
      m[k] += des.n[g][t];
      wd[k] += des.n[g][t] * *v;
    }
  }
  for (std::size_t k = 0; k < hs.pools.size(); ++k) {
    hs.pools[k].mass = m[k].value();
    if (hs.pools[k].mass > 0.0) hs.pools[k].mean = wd[k].value() / hs.pools[k].mass;
  }

  CompensatedSum side_mass[2];
  for (int g = 0; g < G; ++g) {
    const auto& s = des.sched[g];
    if (s.S == Switch::never || !allowed[g]) continue;
    const int t = s.F - 1 + c.l;
    if (t > s.Tg || t > T || des.n[g][t] <= 0.0) continue;
    auto v = c.diff(z[g], t);
    if (!v) continue;
    auto& p = hs.pools[static_cast<std::size_t>(des.key[g]) * (T + 1) + t];
    if (p.mass <= 0.0) continue;
    bool dose_ok = true;
    for (int k = s.F; k <= t; ++k)
      if (!des.dose[g][k]) dose_ok = false;
    if (!dose_ok) continue;
    SwitcherCell cell{g, t, des.n[g][t], *v, s.S == Switch::in ? Side::plus : Side::minus};
    const int si = static_cast<int>(cell.side);
    p.sw_mass[si] += cell.n;
    side_mass[si] += cell.n;
    hs.count[si]++;
    hs.slot[g] = static_cast<int>(hs.switchers.size());
    hs.switchers.push_back(cell);
  }
  hs.mass[0] = side_mass[0].value();
  hs.mass[1] = side_mass[1].value();
  return hs;
}

enum class SwitcherFilter { both, in, out };

inline std::vector<char> switcher_mask(const Design& des, SwitcherFilter f) {
  std::vector<char> m(des.G(), 1);
  for (int g = 0; g < des.G(); ++g) {
    const auto S = des.sched[g].S;
    if (f == SwitcherFilter::in && S == Switch::out) m[g] = 0;
    if (f == SwitcherFilter::out && S == Switch::in) m[g] = 0;
  }
  return m;
}

// Keeps only switchers estimable at every effect horizon (and every placebo if asked).
inline std::vector<char> apply_same_switchers(const Design& des, const std::vector<Series>& z, int effects,
                                              int placebos, bool same_switchers_pl, std::vector<char> mask) {
  for (int l = 1; l <= effects; ++l) {
    auto hs = build_horizon_sample(des, z, {l, false}, mask);
    for (int g = 0; g < des.G(); ++g)
      if (des.sched[g].S != Switch::never && !hs.has(g)) mask[g] = 0;
  }
  if (same_switchers_pl)
    for (int l = 1; l <= placebos; ++l) {
      auto hs = build_horizon_sample(des, z, {l, true}, mask);
      for (int g = 0; g < des.G(); ++g)
        if (des.sched[g].S != Switch::never && !hs.has(g)) mask[g] = 0;
    }
  int left = 0;
  for (int g = 0; g < des.G(); ++g)
    if (des.sched[g].S != Switch::never && mask[g]) ++left;
  if (left == 0)
    throw EstimationError("no switcher is estimable at all requested horizons (same_switchers)");
  return mask;
}

struct DesignPath {
  std::vector<double> path;
  double share = 0.0;
  int groups = 0;
};

// Distinct (D1, D_F, ..., D_{F-1+l}) paths among switchers contributing to effect l.
inline std::vector<DesignPath> report_design_paths(const Design& des, const HorizonSample& hs, double coverage) {
  std::map<std::vector<std::string>, DesignPath> acc;
  CompensatedSum total;
  for (const auto& sw : hs.switchers) {
    const auto& s = des.sched[sw.g];
    DesignPath p;
    p.path.push_back(des.dose_base[sw.g]);
    for (int t = s.F; t <= sw.t; ++t) p.path.push_back(*des.dose[sw.g][t]);
    std::vector<std::string> key;
    for (double v : p.path) key.push_back(fmt_num(v));
    auto& slot = acc[key];
    if (slot.path.empty()) slot.path = p.path;
    slot.share += sw.n;
    slot.groups++;
    total += sw.n;
  }
  std::vector<DesignPath> out;
  for (auto& [k, p] : acc) {
    (void)k;
    p.share /= total.value();
    out.push_back(p);
  }
  std::stable_sort(out.begin(), out.end(), [](const DesignPath& a, const DesignPath& b) { return a.share > b.share; });
  double cum = 0.0;
  std::size_t keep = 0;
  while (keep < out.size()) {
    cum += out[keep++].share;
    if (cum >= coverage - 1e-12) break;
  }
  out.resize(keep);
  return out;
}

}  // namespace esdid
