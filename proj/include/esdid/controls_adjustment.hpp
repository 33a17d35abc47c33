#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "esdid/common.hpp"
#include "esdid/design_classifier.hpp"
#include "esdid/influence_variance.hpp"

namespace esdid {

// Per-group control series: x[g][k][t].
using ControlPanel = std::vector<std::vector<Series>>;

// Greedy pivoted Cholesky: indices of a maximal well-conditioned column subset.
inline std::vector<int> independent_columns(const Eigen::MatrixXd& A, double rel_tol = 1e-12) {
  const int k = static_cast<int>(A.rows());
  std::vector<int> kept;
  if (k == 0) return kept;
  const double maxdiag = A.diagonal().maxCoeff();
  if (!(maxdiag > 0.0)) return kept;
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(k, k);
  std::vector<double> resid(k);
  for (int i = 0; i < k; ++i) resid[i] = A(i, i);
  std::vector<char> used(k, 0);
  for (int step = 0; step < k; ++step) {
    int best = -1;
    for (int i = 0; i < k; ++i)
      if (!used[i] && (best < 0 || resid[i] > resid[best])) best = i;
    if (best < 0 || resid[best] <= rel_tol * maxdiag) break;
    used[best] = 1;
    const int c = static_cast<int>(kept.size());
    const double piv = std::sqrt(resid[best]);
    for (int i = 0; i < k; ++i) {
      if (used[i] && i != best) continue;
      double v = A(i, best);
      for (int j = 0; j < c; ++j) v -= L(i, j) * L(best, j);
      L(i, c) = v / piv;
    }
    for (int i = 0; i < k; ++i)
      if (!used[i]) resid[i] -= L(i, c) * L(i, c);
    kept.push_back(best);
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

struct ResidualizationFit {
  double d = 0.0;
  int Td = 0;
  std::vector<int> kept;             // indices into the control list
  std::vector<std::string> dropped;  // collinear or constant controls
  Eigen::VectorXd theta;             // full length, zero for dropped columns
  int cells_per_sg = 0;
  std::vector<std::optional<double>> gamma;  // period (x supergroup) fixed effects, see cell()
  int cell(int supergroup, int t) const { return supergroup * cells_per_sg + t; }
  Eigen::MatrixXd Den;               // kept x kept
  Eigen::MatrixXd Den_inv;
  double Nc = 0.0;
  int rows = 0;
  // Group-level pieces of the coefficient's linearization (kept coordinates):
  // A_g = Den^{-1} (G/Nc) sum_t N dXdot dY, B_g the residual-leg analogue.
  std::map<int, Eigen::VectorXd> A, B;
  Eigen::VectorXd theta_kept;
};

inline std::optional<Eigen::VectorXd> delta_x(const std::vector<Series>& xs, int t) {
  Eigen::VectorXd v(xs.size());
  for (std::size_t k = 0; k < xs.size(); ++k) {
    if (!xs[k][t] || !xs[k][t - 1]) return std::nullopt;
    v(k) = *xs[k][t] - *xs[k][t - 1];
  }
  return v;
}

// Weighted OLS of the outcome change on control changes and period effects, over
// not-yet-switched cells of groups with baseline d. The coefficient pools
// supergroups; the period effects are supergroup-specific when supergroups are on.
inline ResidualizationFit fit_residualization(const Design& des, const std::vector<Series>& y, const ControlPanel& x,
                                              const std::vector<std::string>& names, double d) {
  ResidualizationFit fit;
  fit.d = d;
  const int G = des.G(), T = des.T;
  const int K = static_cast<int>(names.size());
  fit.theta = Eigen::VectorXd::Zero(K);
  int n_sg = 1;
  for (int g = 0; g < G; ++g) {
    n_sg = std::max(n_sg, des.sched[g].supergroup + 1);
    if (des.sched[g].d1 == d) fit.Td = std::max(fit.Td, des.sched[g].F - 1);
  }
  fit.cells_per_sg = T + 1;
  const int C = n_sg * (T + 1);
  fit.gamma.assign(C, std::nullopt);

  struct Row {
    int g, t, c;
    double n, dy;
    Eigen::VectorXd dx;
  };
  std::vector<Row> rows;
  for (int g = 0; g < G; ++g) {
    const auto& s = des.sched[g];
    if (s.d1 != d) continue;
    for (int t = 2; t <= std::min(s.F - 1, fit.Td); ++t) {
      if (des.n[g][t] <= 0.0 || !y[g][t] || !y[g][t - 1]) continue;
      auto dx = delta_x(x[g], t);
      if (!dx) continue;
      rows.push_back({g, t, fit.cell(s.supergroup, t), des.n[g][t], *y[g][t] - *y[g][t - 1], *dx});
    }
  }
  fit.rows = static_cast<int>(rows.size());
  if (rows.empty()) {
    fit.dropped = names;
    return fit;
  }

  std::vector<CompensatedSum> wt(C), wy(C);
  std::vector<Eigen::VectorXd> wx(C, Eigen::VectorXd::Zero(K));
  std::vector<std::vector<int>> clusters_at(C);
  for (const auto& r : rows) {
    wt[r.c] += r.n;
    wy[r.c] += r.n * r.dy;
    wx[r.c] += r.n * r.dx;
    clusters_at[r.c].push_back(des.cluster[r.g]);
  }
  std::vector<Eigen::VectorXd> mx(C);
  std::vector<double> my(C, 0.0);
  std::vector<int> nt(C, 0);
  for (int c = 0; c < C; ++c) {
    if (wt[c].value() <= 0.0) continue;
    mx[c] = wx[c] / wt[c].value();
    my[c] = wy[c].value() / wt[c].value();
    nt[c] = detail::distinct(clusters_at[c]);
  }

  CompensatedSum nc;
  Eigen::MatrixXd den = Eigen::MatrixXd::Zero(K, K);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(K);
  for (const auto& r : rows) {
    Eigen::VectorXd dd = r.dx - mx[r.c];
    nc += r.n;
    den.noalias() += r.n * dd * dd.transpose();
    rhs.noalias() += r.n * dd * r.dy;
  }
  fit.Nc = nc.value();
  den /= fit.Nc;
  rhs /= fit.Nc;

  fit.kept = independent_columns(den);
  for (int k = 0; k < K; ++k)
    if (std::find(fit.kept.begin(), fit.kept.end(), k) == fit.kept.end()) fit.dropped.push_back(names[k]);
  const int q = static_cast<int>(fit.kept.size());
  fit.Den.resize(q, q);
  Eigen::VectorXd r(q);
  for (int i = 0; i < q; ++i) {
    r(i) = rhs(fit.kept[i]);
    for (int j = 0; j < q; ++j) fit.Den(i, j) = den(fit.kept[i], fit.kept[j]);
  }
  fit.theta_kept = Eigen::VectorXd::Zero(q);
  if (q > 0) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(fit.Den);
    fit.Den_inv = ldlt.solve(Eigen::MatrixXd::Identity(q, q));
    fit.theta_kept = ldlt.solve(r);
  }
  for (int i = 0; i < q; ++i) fit.theta(fit.kept[i]) = fit.theta_kept(i);
  for (int c = 0; c < C; ++c)
    if (wt[c].value() > 0.0) fit.gamma[c] = my[c] - mx[c].dot(fit.theta);

  // Linearization pieces, accumulated per group.
  const double scale = static_cast<double>(G) / fit.Nc;
  for (const auto& row : rows) {
    if (des.sched[row.g].F < 3) continue;
    Eigen::VectorXd dd(q);
    for (int i = 0; i < q; ++i) dd(i) = row.dx(fit.kept[i]) - mx[row.c](fit.kept[i]);
    const int n = nt[row.c];
    const double ehat = n >= 2 ? *fit.gamma[row.c] + row.dx.dot(fit.theta) : 0.0;
    const double dof = n >= 2 ? std::sqrt(static_cast<double>(n) / (n - 1)) : 1.0;
    auto& a = fit.A.try_emplace(row.g, Eigen::VectorXd::Zero(q)).first->second;
    auto& b = fit.B.try_emplace(row.g, Eigen::VectorXd::Zero(q)).first->second;
    a.noalias() += row.n * dd * row.dy;
    b.noalias() += row.n * dd * (dof * (row.dy - ehat));
  }
  if (q > 0)
    for (auto* m : {&fit.A, &fit.B})
      for (auto& [g, v] : *m) v = fit.Den_inv * v * scale;
  return fit;
}

// Outcome net of fitted control contributions; missing where any control is.
inline std::vector<Series> residualize(const Design& des, const std::vector<Series>& y, const ControlPanel& x,
                                       const std::vector<ResidualizationFit>& fits) {
  std::vector<Series> out(y.size());
  for (int g = 0; g < des.G(); ++g) {
    const ResidualizationFit* fit = nullptr;
    for (const auto& f : fits)
      if (f.d == des.sched[g].d1) fit = &f;
    out[g].assign(y[g].size(), std::nullopt);
    for (int t = 1; t <= des.T; ++t) {
      if (!y[g][t]) continue;
      CompensatedSum v;
      v += *y[g][t];
      bool ok = true;
      for (std::size_t k = 0; k < x[g].size(); ++k) {
        if (!x[g][k][t]) {
          ok = false;
          break;
        }
        if (fit) v += -fit->theta(static_cast<Eigen::Index>(k)) * *x[g][k][t];
      }
      if (ok) out[g][t] = v.value();
    }
  }
  return out;
}

// Switcher-minus-control average of control changes, per baseline value and side,
// plus the group-level pieces whose mean reproduces it.
struct ControlLinearization {
  // M[s][fit index] in kept coordinates of that fit
  std::vector<Eigen::VectorXd> M[2];
  // m[s][fit index][g]
  std::vector<std::vector<Eigen::VectorXd>> m[2];
};

inline ControlLinearization linearize_controls(const Design& des, const HorizonSample& hs, const HorizonTerms& ht,
                                               const ControlPanel& x, const std::vector<ResidualizationFit>& fits) {
  ControlLinearization lin;
  const int G = des.G();
  for (int s = 0; s < 2; ++s) {
    lin.M[s].resize(fits.size());
    lin.m[s].resize(fits.size());
    for (std::size_t f = 0; f < fits.size(); ++f) {
      const int q = static_cast<int>(fits[f].kept.size());
      lin.M[s][f] = Eigen::VectorXd::Zero(q);
      lin.m[s][f].assign(G, Eigen::VectorXd::Zero(q));
    }
    for (const auto& tm : ht.side[s].terms) {
      std::size_t f = 0;
      while (f < fits.size() && fits[f].d != des.sched[tm.g].d1) ++f;
      if (f == fits.size()) continue;
      const auto& kept = fits[f].kept;
      for (std::size_t i = 0; i < kept.size(); ++i) {
        auto v = hs.c.diff(x[tm.g][kept[i]], tm.t);
        if (!v) throw std::logic_error("control change missing where residualized outcome exists");
        lin.m[s][f][tm.g](static_cast<Eigen::Index>(i)) += tm.coef * *v;
      }
    }
    for (std::size_t f = 0; f < fits.size(); ++f)
      for (int g = 0; g < G; ++g) {
        lin.M[s][f] += lin.m[s][f][g];
        lin.m[s][f][g] *= G;
      }
  }
  return lin;
}

// Adds the coefficient-estimation noise to side influences:
// U+ -= sum_d M+_d V_d, U- += sum_d M-_d V_d, and the residual-leg analogue.
inline void adjust_for_controls(const Design& des, SideInfluence& si, const ControlLinearization& lin,
                                const std::vector<ResidualizationFit>& fits) {
  const int G = des.G();
  for (int s = 0; s < 2; ++s) {
    const double sign = s == 0 ? -1.0 : 1.0;
    for (std::size_t f = 0; f < fits.size(); ++f) {
      const auto& fit = fits[f];
      if (fit.kept.empty()) continue;
      const auto& M = lin.M[s][f];
      const double mtheta = M.dot(fit.theta_kept);
      // The coefficient constant cancels in U - E(U), so the variance leg omits it.
      for (int g = 0; g < G; ++g) {
        double a = -mtheta, b = 0.0;
        if (auto it = fit.A.find(g); it != fit.A.end()) a += M.dot(it->second);
        if (auto it = fit.B.find(g); it != fit.B.end()) b += M.dot(it->second);
        si.u[s][g] += sign * a;
        si.var[s][g] += sign * b;
      }
    }
  }
}

// D~ = +1 / -1 from the switch onward for switchers in / out, 0 before.
inline std::vector<Series> continuous_treatment(const Design& des_orig) {
  std::vector<Series> out(des_orig.G());
  for (int g = 0; g < des_orig.G(); ++g) {
    const auto& s = des_orig.sched[g];
    out[g].assign(des_orig.T + 1, std::nullopt);
    for (int t = 1; t <= des_orig.T; ++t) {
      if (!des_orig.d[g][t]) continue;
      double v = 0.0;
      if (s.S == Switch::in && t >= s.F) v = 1.0;
      if (s.S == Switch::out && t >= s.F) v = -1.0;
      out[g][t] = v;
    }
  }
  return out;
}

// Baseline polynomial times post-period indicators, appended to user controls.
inline void append_baseline_polynomial(const std::vector<double>& base, int T, int K, ControlPanel& x,
                                       std::vector<std::string>& names) {
  for (int k = 0; k <= K; ++k)
    for (int tp = 1; tp <= T; ++tp) {
      names.push_back("baseline^" + std::to_string(k) + "*post" + std::to_string(tp));
      for (std::size_t g = 0; g < x.size(); ++g) {
        Series s(T + 1);
        const double p = std::pow(base[g], k);
        for (int t = 1; t <= T; ++t) s[t] = t >= tp ? p : 0.0;
        x[g].push_back(std::move(s));
      }
    }
}

}  // namespace esdid
