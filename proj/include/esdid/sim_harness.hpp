#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <nlohmann/json.hpp>

#include "esdid/estimate.hpp"
#include "esdid/inference_tests.hpp"
#include "esdid/panel_ingest.hpp"

namespace esdid::sim {

// Seed panel standing in for a real dataset: treatments, period-one outcomes, and
// the first-difference rows that replications resample.
struct BasePanel {
  std::string name;
  int G = 0, T = 0;
  long long first_label = 1;
  std::vector<std::vector<double>> d_staggered, d_raw;  // [g][t], t = 1..T
  std::vector<double> y1;
  std::vector<std::vector<double>> eps;  // [g][t], t = 2..T used
  std::vector<std::vector<double>> hours, married;
  std::vector<int> educ;
  std::vector<std::vector<char>> y_missing, d_missing;
  double wage_sd = 0.0, hours_mean = 0.0, dy_variance = 0.0;
};

namespace detail {

inline double mixture(std::mt19937_64& rng, double mean, double sd1, double sd2, double p2) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> nd(0.0, 1.0);
  return mean + (u(rng) < p2 ? sd2 : sd1) * nd(rng);
}

inline void finish_moments(BasePanel& b) {
  CompensatedSum s, ss, h, dy, dyy;
  int n = 0, nh = 0;
  for (int g = 0; g < b.G; ++g) {
    double y = b.y1[g];
    for (int t = 1; t <= b.T; ++t) {
      if (t > 1) y += b.eps[g][t];
      s += y;
      ss += y * y;
      ++n;
      if (!b.hours.empty()) {
        h += b.hours[g][t];
        ++nh;
      }
    }
    dy += b.eps[g][2];
    dyy += b.eps[g][2] * b.eps[g][2];
  }
  const double m = s.value() / n;
  b.wage_sd = std::sqrt((ss.value() - n * m * m) / (n - 1));
  b.hours_mean = nh ? h.value() / nh : 0.0;
  const double md = dy.value() / b.G;
  b.dy_variance = (dyy.value() - b.G * md * md) / (b.G - 1);
}

inline std::vector<double> staggered_from(const std::vector<double>& raw, int T) {
  std::vector<double> d(T + 1, 0.0);
  int F = T + 1;
  for (int t = 2; t <= T; ++t)
    if (raw[t] != raw[1]) {
      F = t;
      break;
    }
  for (int t = 1; t <= T; ++t) d[t] = t >= F ? 1.0 : 0.0;
  return d;
}

}  // namespace detail

// 545 workers over 8 years: union-status chain, log-wage levels, hours, marriage, education.
inline BasePanel base_panel_a() {
  BasePanel b;
  b.name = "A";
  b.G = 545;
  b.T = 8;
  b.first_label = 1980;
  std::mt19937_64 rng(545008);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int g = 0; g < b.G; ++g) {
    std::vector<double> raw(b.T + 1, 0.0);
    raw[1] = u(rng) < 0.25 ? 1.0 : 0.0;
    for (int t = 2; t <= b.T; ++t) {
      const double p_flip = raw[t - 1] > 0 ? 0.22 : 0.07;
      raw[t] = u(rng) < p_flip ? 1.0 - raw[t - 1] : raw[t - 1];
    }
    b.d_raw.push_back(raw);
    b.d_staggered.push_back(detail::staggered_from(raw, b.T));
    int F = b.T + 1;
    for (int t = 2; t <= b.T; ++t)
      if (raw[t] != raw[1]) {
        F = t;
        break;
      }
    const double r = u(rng);
    b.educ.push_back(r < 0.3 ? 1 : r < 0.75 ? 2 : 3);
    // Log wage = person effect + random-walk component + transitory mixture noise;
    // the shock pool is its first difference, so changes mean-revert.
    const double a = 1.05 + 0.12 * b.educ.back() + 0.4 * nd(rng);
    std::vector<double> lvl(b.T + 1, 0.0), e(b.T + 1, 0.0);
    double perm = 0.0;
    for (int t = 1; t <= b.T; ++t) {
      if (t > 1) perm += 0.06 + 0.08 * nd(rng);
      lvl[t] = a + perm + detail::mixture(rng, 0.0, 0.2, 0.6, 0.1);
      if (t > 1) e[t] = lvl[t] - lvl[t - 1];
    }
    b.y1.push_back(lvl[1]);
    b.eps.push_back(e);
    // Marriage and hours move around the union switch, so switchers and
    // not-yet-switchers have different control trends.
    std::vector<double> m(b.T + 1, 0.0), h(b.T + 1, 0.0);
    m[1] = u(rng) < 0.2 ? 1.0 : 0.0;
    const double hg = std::max(400.0, 2190.0 + 420.0 * nd(rng));
    for (int t = 1; t <= b.T; ++t) {
      if (t > 1) {
        const bool near = F <= b.T && t >= F - 2 && t <= F;
        const double up = near ? 0.35 : 0.05;
        m[t] = m[t - 1] > 0 ? (u(rng) < 0.03 ? 0.0 : 1.0) : (u(rng) < up ? 1.0 : 0.0);
      }
      h[t] = std::max(0.0, hg + 330.0 * nd(rng) + (F <= b.T && t >= F - 1 ? 160.0 : 0.0));
    }
    b.married.push_back(m);
    b.hours.push_back(h);
  }
  b.y_missing.assign(b.G, std::vector<char>(b.T + 1, 0));
  b.d_missing = b.y_missing;
  detail::finish_moments(b);
  return b;
}

// 40 states over 1956..1986, absorbing binary adoption. `one_per_cohort` recodes
// the timing so each year from 1957 on has exactly one adopter.
inline BasePanel base_panel_b(bool one_per_cohort) {
  BasePanel b;
  b.name = one_per_cohort ? "B1" : "B";
  b.G = 40;
  b.T = 31;
  b.first_label = 1956;
  std::mt19937_64 rng(1956031);
  std::normal_distribution<double> nd(0.0, 1.0);
  // Published counts cover 25 of the 30 adopters; five extra adoptions fill the gap.
  const std::vector<std::pair<int, int>> counts = {{1969, 1}, {1970, 3}, {1971, 7}, {1972, 2}, {1973, 9},
                                                   {1974, 2}, {1975, 2}, {1976, 1}, {1977, 2}, {1985, 1}};
  std::vector<int> years;
  if (one_per_cohort) {
    for (int y = 1957; y <= 1986; ++y) years.push_back(y);
  } else {
    for (auto [y, c] : counts)
      for (int k = 0; k < c; ++k) years.push_back(y);
  }
  std::vector<int> order(b.G);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> adopt(b.G, 0);
  for (std::size_t k = 0; k < years.size(); ++k) adopt[order[k]] = years[k];
  for (int g = 0; g < b.G; ++g) {
    std::vector<double> d(b.T + 1, 0.0);
    for (int t = 1; t <= b.T; ++t) d[t] = adopt[g] && 1955 + t >= adopt[g] ? 1.0 : 0.0;
    b.d_raw.push_back(d);
    b.d_staggered.push_back(d);
    b.y1.push_back(std::max(0.5, 4.2 + 1.6 * nd(rng)));
    std::vector<double> e(b.T + 1, 0.0);
    for (int t = 2; t <= b.T; ++t) e[t] = detail::mixture(rng, 0.05, 0.22, 0.7, 0.12);
    b.eps.push_back(e);
    b.educ.push_back(1);
  }
  b.y_missing.assign(b.G, std::vector<char>(b.T + 1, 0));
  b.d_missing = b.y_missing;
  detail::finish_moments(b);
  return b;
}

// 1195 counties over 8 elections: discrete treatment capped at 4 that changes at
// most once, with 321 cells missing either the outcome or the treatment.
inline BasePanel base_panel_c() {
  BasePanel b;
  b.name = "C";
  b.G = 1195;
  b.T = 8;
  b.first_label = 1900;
  std::mt19937_64 rng(1195008);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> nd(0.0, 1.0);
  const double cdf[5] = {0.17, 0.52, 0.76, 0.88, 1.0};
  for (int g = 0; g < b.G; ++g) {
    const double r = u(rng);
    int d1 = 0;
    while (r > cdf[d1]) ++d1;
    std::vector<double> d(b.T + 1, d1);
    for (int t = 2; t <= b.T; ++t)
      if (u(rng) < 0.055) {
        int to = d1 + (u(rng) < 0.6 ? 1 : -1);
        if (to < 0) to = 1;
        if (to > 4) to = 3;
        for (int k = t; k <= b.T; ++k) d[k] = to;
        break;
      }
    b.d_raw.push_back(d);
    b.d_staggered.push_back(d);
    b.y1.push_back(0.62 + 0.14 * nd(rng));
    std::vector<double> e(b.T + 1, 0.0);
    for (int t = 2; t <= b.T; ++t) e[t] = detail::mixture(rng, 0.0, 0.055, 0.16, 0.1);
    b.eps.push_back(e);
    b.educ.push_back(1);
  }
  b.y_missing.assign(b.G, std::vector<char>(b.T + 1, 0));
  b.d_missing = b.y_missing;
  int placed = 0;
  while (placed < 321) {
    const int g = std::uniform_int_distribution<int>(0, b.G - 1)(rng);
    const int t = std::uniform_int_distribution<int>(1, b.T)(rng);
    if (b.y_missing[g][t] || b.d_missing[g][t]) continue;
    (u(rng) < 0.5 ? b.y_missing : b.d_missing)[g][t] = 1;
    ++placed;
  }
  detail::finish_moments(b);
  return b;
}

inline const BasePanel& base_panel(const std::string& name) {
  static const BasePanel a = base_panel_a(), b = base_panel_b(false), b1 = base_panel_b(true), c = base_panel_c();
  if (name == "A") return a;
  if (name == "B") return b;
  if (name == "B1") return b1;
  if (name == "C") return c;
  throw UsageError("unknown base panel '" + name + "' (expected A, B, B1 or C)");
}

enum class Trend { quadratic, quadratic_educ, quadratic_linear_quintile, cluster_ar1 };
enum class EffectKind { none, change, level };
enum class ClusterScale { automatic, variance, sd };

struct DgpSpec {
  std::string name;
  std::string base = "A";
  bool non_staggered = false;
  Trend trend = Trend::quadratic;
  EffectKind effect = EffectKind::none;
  double tau = 0.0;
  bool controls_effect = false;
  int subsample = 0;  // 0 keeps every group; otherwise half switchers, half never-switchers
  ClusterScale cluster_scale = ClusterScale::automatic;
  Options options;
  int reps = 500;
  std::uint64_t seed = 1;
};

inline Trend parse_trend(const std::string& s) {
  if (s == "quadratic") return Trend::quadratic;
  if (s == "quadratic_educ") return Trend::quadratic_educ;
  if (s == "quadratic_linear_quintile") return Trend::quadratic_linear_quintile;
  if (s == "cluster_ar1") return Trend::cluster_ar1;
  throw UsageError("unknown trend '" + s + "'");
}

inline DgpSpec spec_from_json(const nlohmann::json& j) {
  DgpSpec s;
  s.name = j.value("name", "spec");
  s.base = j.value("base", "A");
  s.non_staggered = j.value("design", "staggered") == "non_staggered";
  s.trend = parse_trend(j.value("trend", "quadratic"));
  if (j.contains("effect")) {
    const auto& e = j["effect"];
    const std::string k = e.value("type", "none");
    s.effect = k == "none" ? EffectKind::none : k == "change" ? EffectKind::change : k == "level" ? EffectKind::level
               : throw UsageError("unknown effect type '" + k + "'");
    s.tau = e.value("tau", 0.0);
  }
  s.controls_effect = j.value("controls_effect", false);
  s.subsample = j.value("subsample", 0);
  const std::string cs = j.value("cluster_scale", "auto");
  s.cluster_scale = cs == "variance" ? ClusterScale::variance : cs == "sd" ? ClusterScale::sd : ClusterScale::automatic;
  s.reps = j.value("reps", 500);
  s.seed = j.value("seed", 1ULL);
  Options o;
  o.effects = 3;
  o.placebos = 3;
  if (j.contains("options")) {
    const auto& oj = j["options"];
    o.effects = oj.value("effects", 3);
    o.placebos = oj.value("placebos", 3);
    o.normalized = oj.value("normalized", false);
    o.controls = oj.value("controls", std::vector<std::string>{});
    o.trends_nonparam = oj.value("trends_nonparam", false);
    o.trends_lin = oj.value("trends_lin", false);
    o.cluster = oj.value("cluster", false);
    o.more_granular_demeaning = oj.value("more_granular_demeaning", false);
    if (oj.value("effects_equal", false)) o.effects_equal = std::vector<int>{};
  }
  s.options = o;
  return s;
}

struct ClusterLayout {
  std::vector<int> workers;  // base indices, ordered by period-one outcome
  int clusters = 0, size = 0;
};

inline ClusterLayout cluster_layout(const BasePanel& b) {
  ClusterLayout c;
  std::vector<int> idx(b.G);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int x, int y) { return b.y1[x] < b.y1[y]; });
  c.size = 10;
  c.clusters = std::min(50, b.G / c.size);
  idx.resize(static_cast<std::size_t>(c.clusters) * c.size);
  c.workers = idx;
  return c;
}

// Status-quo outcomes, observed outcomes and the design for one replication.
struct Draw {
  std::vector<int> members;  // base indices
  std::vector<int> cluster;  // per member, -1 when unclustered
  std::vector<std::vector<double>> y0, effect;  // [member][t]
};

inline double cluster_shock_sd(const BasePanel& b, ClusterScale s) {
  return s == ClusterScale::variance ? b.dy_variance : std::sqrt(b.dy_variance);
}

inline double icc_of_means(const Draw& dr, const BasePanel& b);

inline ClusterScale resolve_cluster_scale(const DgpSpec& spec);

inline Draw draw(const DgpSpec& spec, std::uint64_t rep, ClusterScale scale) {
  const BasePanel& b = base_panel(spec.base);
  std::mt19937_64 rng(stream_seed(spec.seed, rep));
  std::uniform_int_distribution<int> pick(0, b.G - 1);
  std::normal_distribution<double> nd(0.0, 1.0);
  const auto& D = spec.non_staggered ? b.d_raw : b.d_staggered;
  Draw dr;
  const int T = b.T;

  if (spec.trend == Trend::cluster_ar1) {
    auto lay = cluster_layout(b);
    dr.members = lay.workers;
    std::uniform_int_distribution<int> cpick(0, lay.clusters - 1);
    const double sd = cluster_shock_sd(b, scale);
    for (int c = 0; c < lay.clusters; ++c) {
      const int src = cpick(rng);
      std::vector<double> eta(T + 1, 0.0);
      eta[1] = sd * nd(rng);
      for (int t = 2; t <= T; ++t) eta[t] = (eta[t - 1] + sd * nd(rng)) / std::sqrt(2.0);
      for (int i = 0; i < lay.size; ++i) {
        const int g = lay.workers[c * lay.size + i];
        const int from = lay.workers[src * lay.size + i];
        std::vector<double> y(T + 1, 0.0);
        double acc = b.y1[g];
        for (int t = 1; t <= T; ++t) {
          if (t > 1) acc += b.eps[from][t];
          y[t] = acc + t * t + eta[t];
        }
        dr.y0.push_back(y);
        dr.cluster.push_back(c);
      }
    }
  } else {
    if (spec.subsample > 0) {
      std::vector<int> sw, ns;
      for (int g = 0; g < b.G; ++g) {
        bool changes = false;
        for (int t = 2; t <= T; ++t) changes = changes || D[g][t] != D[g][1];
        (changes ? sw : ns).push_back(g);
      }
      const int half = spec.subsample / 2;
      std::shuffle(sw.begin(), sw.end(), rng);
      std::shuffle(ns.begin(), ns.end(), rng);
      for (int k = 0; k < half && k < static_cast<int>(sw.size()); ++k) dr.members.push_back(sw[k]);
      for (int k = 0; k < spec.subsample - half && k < static_cast<int>(ns.size()); ++k) dr.members.push_back(ns[k]);
      std::sort(dr.members.begin(), dr.members.end());
    } else {
      dr.members.resize(b.G);
      std::iota(dr.members.begin(), dr.members.end(), 0);
    }
    std::vector<double> cuts;
    if (spec.trend == Trend::quadratic_linear_quintile) {
      std::vector<double> v = b.y1;
      std::sort(v.begin(), v.end());
      for (int k = 1; k <= 5; ++k) {
        // k-th quintile of period-one outcomes; the fifth is the maximum.
        const double q = k / 5.0 * (v.size() - 1);
        const std::size_t lo = static_cast<std::size_t>(std::floor(q));
        const std::size_t hi = std::min(v.size() - 1, lo + 1);
        cuts.push_back(v[lo] + (q - lo) * (v[hi] - v[lo]));
      }
    }
    for (int g : dr.members) {
      const int from = pick(rng);
      double trend_g = 0.0;
      for (double c : cuts) trend_g += b.y1[g] > c ? 1.0 : 0.0;
      std::vector<double> y(T + 1, 0.0);
      double acc = b.y1[g];
      for (int t = 1; t <= T; ++t) {
        if (t > 1) acc += b.eps[from][t];
        const double tt = static_cast<double>(t) * t;
        double v = acc;
        switch (spec.trend) {
          case Trend::quadratic: v += tt; break;
          case Trend::quadratic_educ: v += tt * b.educ[g]; break;
          case Trend::quadratic_linear_quintile: v += tt + t * trend_g; break;
          case Trend::cluster_ar1: break;
        }
        y[t] = v;
      }
      dr.y0.push_back(y);
      dr.cluster.push_back(-1);
    }
  }

  for (std::size_t i = 0; i < dr.members.size(); ++i) {
    const int g = dr.members[i];
    std::vector<double> e(T + 1, 0.0);
    for (int t = 1; t <= T; ++t) {
      if (spec.controls_effect)
        dr.y0[i][t] += b.wage_sd / b.hours_mean * b.hours[g][t] + 2.0 * b.wage_sd * b.married[g][t];
      if (spec.effect == EffectKind::change) e[t] = spec.tau * (D[g][t] - D[g][1]);
      if (spec.effect == EffectKind::level) e[t] = spec.tau * D[g][t];
    }
    dr.effect.push_back(e);
  }
  return dr;
}

// `part`: 0 observed outcome, 1 status-quo outcome, 2 effect term only.
inline Panel to_panel(const DgpSpec& spec, const Draw& dr, int part = 0) {
  const BasePanel& b = base_panel(spec.base);
  const auto& D = spec.non_staggered ? b.d_raw : b.d_staggered;
  std::vector<PanelCell> cells;
  cells.reserve(dr.members.size() * b.T);
  const bool has_x = !b.hours.empty();
  for (std::size_t i = 0; i < dr.members.size(); ++i) {
    const int g = dr.members[i];
    for (int t = 1; t <= b.T; ++t) {
      PanelCell c;
      c.group = std::to_string(i + 1);
      c.period = b.first_label + t - 1;
      c.n = 1.0;
      if (!b.d_missing[g][t]) c.d = D[g][t];
      if (!b.y_missing[g][t]) {
        const double y0 = dr.y0[i][t], e = dr.effect[i][t];
        c.y = part == 0 ? y0 + e : part == 1 ? y0 : e;
      }
      if (has_x) c.x = {b.hours[g][t], b.married[g][t]};
      c.supergroup = std::to_string(b.educ[g]);
      if (dr.cluster[i] >= 0) c.cluster = std::to_string(dr.cluster[i] + 1);
      cells.push_back(std::move(c));
    }
  }
  return has_x ? build_panel(cells, {"hours", "married"}) : build_panel(cells);
}

inline Panel generate(const DgpSpec& spec, std::uint64_t rep) {
  return to_panel(spec, draw(spec, rep, resolve_cluster_scale(spec)));
}

// One-way ANOVA intra-cluster correlation of workers' time-averaged status-quo outcome.
inline double icc_of_means(const Draw& dr, const BasePanel& b) {
  std::map<int, std::vector<double>> by;
  for (std::size_t i = 0; i < dr.members.size(); ++i) {
    double m = 0.0;
    for (int t = 1; t <= b.T; ++t) m += dr.y0[i][t];
    by[dr.cluster[i]].push_back(m / b.T);
  }
  const int k = static_cast<int>(by.begin()->second.size());
  const int C = static_cast<int>(by.size());
  double grand = 0.0;
  for (const auto& [c, v] : by)
    for (double x : v) grand += x;
  grand /= C * k;
  double ssb = 0.0, ssw = 0.0;
  for (const auto& [c, v] : by) {
    double mc = std::accumulate(v.begin(), v.end(), 0.0) / k;
    ssb += k * (mc - grand) * (mc - grand);
    for (double x : v) ssw += (x - mc) * (x - mc);
  }
  const double msb = ssb / (C - 1), msw = ssw / (C * (k - 1));
  return (msb - msw) / (msb + (k - 1) * msw);
}

inline double mean_icc(const DgpSpec& spec, ClusterScale scale, int reps = 200) {
  const BasePanel& b = base_panel(spec.base);
  double s = 0.0;
  for (int r = 0; r < reps; ++r) s += icc_of_means(draw(spec, 1000000 + r, scale), b);
  return s / reps;
}

inline constexpr double kTargetIcc = 0.827;

// Picks whichever reading of the AR(1) innovation scale lands closer to the target ICC.
inline ClusterScale resolve_cluster_scale(const DgpSpec& spec) {
  if (spec.cluster_scale != ClusterScale::automatic || spec.trend != Trend::cluster_ar1) return spec.cluster_scale;
  static std::map<std::string, ClusterScale> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  const std::string key = spec.base + "/" + std::to_string(spec.seed);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  const double iv = mean_icc(spec, ClusterScale::variance), is = mean_icc(spec, ClusterScale::sd);
  auto pick = std::fabs(iv - kTargetIcc) <= std::fabs(is - kTargetIcc) ? ClusterScale::variance : ClusterScale::sd;
  cache[key] = pick;
  return pick;
}

// ---------------------------------------------------------------------------
// Grid runner.

struct CellStats {
  std::string label;
  int valid = 0, covered = 0;
  CompensatedSum est, est_sq, truth, se;

  double coverage() const { return valid ? static_cast<double>(covered) / valid : std::nan(""); }
  double coverage_mc_se() const {
    const double p = coverage();
    return valid ? std::sqrt(p * (1.0 - p) / valid) : std::nan("");
  }
  double mean() const { return valid ? est.value() / valid : std::nan(""); }
  double mean_truth() const { return valid ? truth.value() / valid : std::nan(""); }
  double mean_mc_se() const {
    if (valid < 2) return std::nan("");
    const double m = mean();
    return std::sqrt(std::max(0.0, (est_sq.value() - valid * m * m) / (valid - 1)) / valid);
  }
  double mean_se() const { return valid ? se.value() / valid : std::nan(""); }
  // z multiplier that would give the observed coverage, relative to the nominal one.
  double implied_ci_ratio() const {
    const double p = coverage();
    if (!(p > 0.0 && p < 1.0)) return std::nan("");
    boost::math::normal n;
    return boost::math::quantile(n, 0.5 + p / 2.0) / boost::math::quantile(n, 0.975);
  }
};

struct RateStats {
  int valid = 0, rejected = 0;
  double rate() const { return valid ? static_cast<double>(rejected) / valid : std::nan(""); }
  double mc_se() const {
    const double p = rate();
    return valid ? std::sqrt(p * (1.0 - p) / valid) : std::nan("");
  }
};

struct GridReport {
  std::string name;
  int reps = 0, failures = 0;
  std::vector<CellStats> cells;  // effects, average, placebos
  RateStats placebo_test, equal_effects_test;
  std::vector<std::string> failure_messages;
};

struct RepOutcome {
  bool ok = false;
  std::string error;
  std::vector<std::optional<double>> est, var, truth;
  std::optional<double> placebo_p, equal_p;
};

inline RepOutcome run_replication(const DgpSpec& spec, std::uint64_t rep, ClusterScale scale) {
  RepOutcome out;
  const int L = spec.options.effects, P = spec.options.placebos;
  const std::size_t k = static_cast<std::size_t>(L + 1 + P);
  out.est.assign(k, std::nullopt);
  out.var.assign(k, std::nullopt);
  out.truth.assign(k, 0.0);
  try {
    const Draw dr = draw(spec, rep, scale);
    Options o = spec.options;
    auto r = estimate(to_panel(spec, dr, 0), o);
    const auto& eff = r.reported_effects();
    for (int l = 0; l < L && l < static_cast<int>(eff.size()); ++l)
      if (eff[l].point) out.est[l] = eff[l].point, out.var[l] = eff[l].variance;
    if (r.average && r.average->point) out.est[L] = r.average->point, out.var[L] = r.average->variance;
    for (int l = 0; l < P && l < static_cast<int>(r.placebos.size()); ++l)
      if (r.placebos[l].point) out.est[L + 1 + l] = r.placebos[l].point, out.var[L + 1 + l] = r.placebos[l].variance;
    if (r.placebo_joint) out.placebo_p = r.placebo_joint->p_value;
    if (r.effects_equal) out.equal_p = r.effects_equal->p_value;
    if (spec.effect != EffectKind::none) {
      o.compute_variance = false;
      o.effects_equal.reset();
      auto t = estimate(to_panel(spec, dr, 2), o);
      const auto& te = t.reported_effects();
      for (int l = 0; l < L; ++l) out.truth[l] = l < static_cast<int>(te.size()) ? te[l].point : std::nullopt;
      out.truth[L] = t.average ? t.average->point : std::nullopt;
      // Placebos of the effect-only outcome are zero by construction.
    }
    out.ok = true;
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  return out;
}

inline GridReport run_spec(const DgpSpec& spec, int reps) {
  if (reps < 1) throw UsageError("reps must be positive");
  const ClusterScale scale = resolve_cluster_scale(spec);
  std::vector<RepOutcome> outs(reps);
  parallel_for(static_cast<std::size_t>(reps), [&](std::size_t i) { outs[i] = run_replication(spec, i, scale); });
  GridReport rep;
  rep.name = spec.name;
  rep.reps = reps;
  const int L = spec.options.effects, P = spec.options.placebos;
  auto add = [&](std::string label) {
    rep.cells.emplace_back();
    rep.cells.back().label = std::move(label);
  };
  for (int l = 1; l <= L; ++l) add("effect_" + std::to_string(l));
  add("average");
  for (int l = 1; l <= P; ++l) add("placebo_" + std::to_string(l));
  const double z = boost::math::quantile(boost::math::normal(), 0.975);
  for (const auto& o : outs) {
    if (!o.ok) {
      ++rep.failures;
      if (rep.failure_messages.size() < 5) rep.failure_messages.push_back(o.error);
      continue;
    }
    for (std::size_t j = 0; j < rep.cells.size(); ++j) {
      if (!o.est[j] || !o.var[j] || !o.truth[j] || !std::isfinite(*o.var[j])) continue;
      auto& c = rep.cells[j];
      const double se = std::sqrt(*o.var[j]);
      c.valid++;
      c.covered += std::fabs(*o.est[j] - *o.truth[j]) <= z * se;
      c.est += *o.est[j];
      c.est_sq += *o.est[j] * *o.est[j];
      c.truth += *o.truth[j];
      c.se += se;
    }
    if (o.placebo_p) {
      rep.placebo_test.valid++;
      rep.placebo_test.rejected += *o.placebo_p < 0.05;
    }
    if (o.equal_p) {
      rep.equal_effects_test.valid++;
      rep.equal_effects_test.rejected += *o.equal_p < 0.05;
    }
  }
  return rep;
}

inline std::string format_report(const std::vector<GridReport>& reps) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << std::left << std::setw(34) << "spec";
  const char* heads[] = {"DID_1", "DID_2", "DID_3", "delta", "pl_1", "pl_2", "pl_3"};
  for (const char* h : heads) os << std::right << std::setw(16) << h;
  os << std::setw(16) << "F placebo" << std::setw(16) << "F equal" << std::setw(8) << "fail" << '\n';
  auto cell = [&](double v, double se) {
    std::ostringstream c;
    c << std::fixed << std::setprecision(4);
    if (std::isnan(v)) c << "";
    else c << v << " (" << std::setprecision(3) << se << ")";
    os << std::right << std::setw(16) << c.str();
  };
  for (const auto& r : reps) {
    os << std::left << std::setw(34) << r.name;
    for (const auto& c : r.cells) cell(c.coverage(), c.coverage_mc_se());
    for (std::size_t k = r.cells.size(); k < 7; ++k) cell(std::nan(""), 0.0);
    cell(r.placebo_test.rate(), r.placebo_test.mc_se());
    cell(r.equal_effects_test.rate(), r.equal_effects_test.mc_se());
    os << std::right << std::setw(8) << r.failures << '\n';
  }
  return os.str();
}

inline std::string report_csv(const std::vector<GridReport>& reps) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "spec,cell,valid,coverage,coverage_mc_se,mean_estimate,mean_estimate_mc_se,mean_truth,mean_se,implied_ci_ratio\n";
  for (const auto& r : reps) {
    std::string name = "\"";
    for (char ch : r.name) name += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    name += '"';
    for (const auto& c : r.cells)
      os << name << ',' << c.label << ',' << c.valid << ',' << c.coverage() << ',' << c.coverage_mc_se() << ','
         << c.mean() << ',' << c.mean_mc_se() << ',' << c.mean_truth() << ',' << c.mean_se() << ','
         << c.implied_ci_ratio() << '\n';
    os << name << ",placebo_joint_test," << r.placebo_test.valid << ',' << r.placebo_test.rate() << ','
       << r.placebo_test.mc_se() << ",,,,,\n";
    os << name << ",equal_effects_test," << r.equal_effects_test.valid << ',' << r.equal_effects_test.rate() << ','
       << r.equal_effects_test.mc_se() << ",,,,,\n";
    os << name << ",failures," << r.failures << ",,,,,,,\n";
  }
  return os.str();
}

}  // namespace esdid::sim
