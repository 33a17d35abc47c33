#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/fisher_f.hpp>

#include "esdid/estimate.hpp"

namespace esdid {

// ---------------------------------------------------------------------------
// Split-sample estimation.

struct ByLevel {
  std::string level;
  int groups = 0;
  std::optional<Results> results;
  std::string diagnostic;  // set when the level could not be estimated
};

// Full, independent estimation on each level of a group-level key, in level order.
inline std::vector<ByLevel> estimate_by(const Panel& in, const Options& opt) {
  validate(opt);
  std::map<std::string, std::vector<int>> levels;
  for (int g = 0; g < static_cast<int>(in.groups.size()); ++g) {
    const auto& v = in.groups[g].by;
    if (!v) throw InputError("by variable missing for group " + in.groups[g].id);
    levels[*v].push_back(g);
  }
  std::vector<ByLevel> out;
  std::vector<Panel> parts;
  for (const auto& [lvl, gs] : levels) {
    Panel p;
    p.T = in.T;
    p.period_labels = in.period_labels;
    p.control_names = in.control_names;
    p.predictor_names = in.predictor_names;
    for (int g : gs) p.groups.push_back(in.groups[g]);
    ByLevel b;
    b.level = lvl;
    b.groups = static_cast<int>(gs.size());
    out.push_back(std::move(b));
    parts.push_back(std::move(p));
  }
  parallel_for(out.size(), [&](std::size_t i) {
    bool any_switcher = false;
    for (const auto& s : classify(parts[i], opt.tolerance)) any_switcher = any_switcher || s.S != Switch::never;
    if (!any_switcher) {
      out[i].diagnostic = "no switcher in this level";
      return;
    }
    try {
      out[i].results = estimate_prepared(prepare(parts[i], opt), opt);
    } catch (const EstimationError& e) {
      out[i].diagnostic = e.what();
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Regressing group-level effects on time-invariant predictors.

struct HetCoefficient {
  std::string name;
  double estimate = 0.0, se = 0.0;
};

struct HetTable {
  int horizon = 0;
  int observations = 0;
  std::vector<HetCoefficient> coefficients;  // intercept first
  std::vector<std::string> dropped;
  std::optional<double> f_stat, p_value;     // all predictor coefficients zero
  int df1 = 0, df2 = 0;
};

struct HetReport {
  std::vector<HetTable> tables;
  std::vector<std::string> warnings;
};

inline void check_predict_het_options(const Options& o) {
  if (o.normalized) throw UsageError("predict_het: cannot be combined with normalized");
  if (!o.controls.empty()) throw UsageError("predict_het: cannot be combined with controls");
}

// Weighted least squares with weights N_g, intercept plus predictors, HC1 standard errors.
// `panel` is the estimation panel (Prepared::panel) whose group order the results index.
inline HetReport predict_het(const Results& res, const Panel& panel, const std::vector<std::string>& predictors,
                             std::vector<int> horizons = {}) {
  HetReport rep;
  std::vector<int> pidx;
  for (const auto& p : predictors) {
    auto it = std::find(panel.predictor_names.begin(), panel.predictor_names.end(), p);
    if (it == panel.predictor_names.end()) throw InputError("predictor '" + p + "' not present in the data");
    pidx.push_back(static_cast<int>(it - panel.predictor_names.begin()));
  }
  if (horizons.empty())
    for (const auto& ge : res.group_effects) horizons.push_back(ge.horizon);
  std::sort(horizons.begin(), horizons.end());
  horizons.erase(std::unique(horizons.begin(), horizons.end()), horizons.end());

  for (int h : horizons) {
    if (h < 1 || h > static_cast<int>(res.group_effects.size())) {
      rep.warnings.push_back("predict_het: horizon " + std::to_string(h) + " not estimated; skipped");
      continue;
    }
    const auto& ge = res.group_effects[h - 1];
    std::vector<double> y, w;
    std::vector<std::vector<double>> z;
    for (std::size_t k = 0; k < ge.groups.size(); ++k) {
      const auto& gs = panel.groups[ge.groups[k]];
      std::vector<double> row{1.0};
      bool ok = ge.weight[k] > 0.0;
      for (int j : pidx) {
        if (!gs.predictors[j]) ok = false;
        else row.push_back(*gs.predictors[j]);
      }
      if (!ok) continue;
      y.push_back(ge.effect[k]);
      w.push_back(ge.weight[k]);
      z.push_back(std::move(row));
    }
    const int n = static_cast<int>(y.size());
    const int p = 1 + static_cast<int>(pidx.size());
    HetTable tab;
    tab.horizon = h;
    tab.observations = n;

    // Keep columns in order unless nearly spanned by earlier ones (weighted metric).
    std::vector<int> kept;
    std::vector<Eigen::VectorXd> basis;
    for (int c = 0; c < p; ++c) {
      Eigen::VectorXd v(n);
      for (int i = 0; i < n; ++i) v(i) = std::sqrt(w[i]) * z[i][c];
      const double norm0 = v.squaredNorm();
      for (const auto& q : basis) v -= q.dot(v) * q;
      if (norm0 > 0.0 && v.squaredNorm() > 1e-12 * norm0) {
        basis.push_back(v / v.norm());
        kept.push_back(c);
      } else if (c > 0) {
        tab.dropped.push_back(predictors[c - 1]);
      }
    }
    const int k = static_cast<int>(kept.size());
    if (n < k + 1 || k == 0) {
      rep.warnings.push_back("predict_het: horizon " + std::to_string(h) + " has " + std::to_string(n) +
                             " switcher(s), too few for " + std::to_string(k) + " coefficient(s); skipped");
      continue;
    }
    for (const auto& d : tab.dropped)
      rep.warnings.push_back("predict_het: horizon " + std::to_string(h) + ": " + d + " dropped for collinearity");

    Eigen::MatrixXd X(n, k);
    Eigen::VectorXd Y(n), W(n);
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < k; ++c) X(i, c) = z[i][kept[c]];
      Y(i) = y[i];
      W(i) = w[i];
    }
    const Eigen::MatrixXd XtWX = X.transpose() * W.asDiagonal() * X;
    const Eigen::MatrixXd bread = XtWX.ldlt().solve(Eigen::MatrixXd::Identity(k, k));
    const Eigen::VectorXd beta = bread * (X.transpose() * W.asDiagonal() * Y);
    const Eigen::VectorXd e = Y - X * beta;
    Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(k, k);
    for (int i = 0; i < n; ++i) {
      const double s = W(i) * e(i);
      meat.noalias() += (s * s) * X.row(i).transpose() * X.row(i);
    }
    const Eigen::MatrixXd V = bread * meat * bread * (static_cast<double>(n) / (n - k));
    for (int c = 0; c < k; ++c)
      tab.coefficients.push_back({kept[c] == 0 ? "intercept" : predictors[kept[c] - 1], beta(c), std::sqrt(V(c, c))});

    const int q = k - 1;
    if (q >= 1 && kept[0] == 0) {
      Eigen::VectorXd b = beta.tail(q);
      auto [Vi, rank] = symmetric_pinv(V.bottomRightCorner(q, q));
      if (rank > 0) {
        const double F = b.dot(Vi * b) / rank;
        tab.f_stat = F;
        tab.df1 = rank;
        tab.df2 = n - k;
        boost::math::fisher_f dist(rank, n - k);
        tab.p_value = std::isfinite(F) ? boost::math::cdf(boost::math::complement(dist, F)) : 0.0;
      }
    }
    rep.tables.push_back(std::move(tab));
  }
  return rep;
}

}  // namespace esdid
